#pragma once

#include <cstdint>

#include "crosswise/nn/model.hpp"

namespace crosswise::nn {

struct AdamWHyper {
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <class S>
struct AdamWState {
  ModelParams<S> m, v;
  std::int64_t step = 0;

  static AdamWState zeros_like(const ModelParams<S>& p);
};

/// Decoupled weight decay (theta *= 1 - lr*wd) followed by the bias-corrected
/// Adam update. Throws std::invalid_argument on a non-finite gradient; the
/// parameters are untouched in that case.
template <class S>
void adamw_step(ModelParams<S>& params, ModelParams<S>& grads, AdamWState<S>& state,
                const AdamWHyper& hyper);

/// Global L2 norm over every tensor.
template <class S>
double global_norm(ModelParams<S>& grads);

/// Rescales all gradients by max_norm/norm when the global norm exceeds
/// max_norm. Returns the norm before clipping.
template <class S>
double clip_gradients(ModelParams<S>& grads, double max_norm = 1.0);

template <class S>
void zero_grads(ModelParams<S>& grads);

/// Halves the learning rate after `patience` consecutive epochs without an
/// absolute improvement larger than `threshold` over the best validation
/// loss; the counter resets after each reduction.
class PlateauScheduler {
 public:
  struct Options {
    double initial_lr = 2.5e-4;
    double factor = 0.5;
    int patience = 2;
    double threshold = 1e-4;
    double min_lr = 1e-6;
  };

  PlateauScheduler() : PlateauScheduler(Options{}) {}
  explicit PlateauScheduler(const Options& o) : opt_(o), lr_(o.initial_lr) {}

  /// Feed one epoch's validation loss; returns the learning rate to use next.
  double step(double val_loss);
  double lr() const { return lr_; }
  double best() const { return best_; }
  int reductions() const { return reductions_; }

 private:
  Options opt_;
  double lr_;
  double best_ = 1e300;
  int bad_epochs_ = 0;
  int reductions_ = 0;
};

}  // namespace crosswise::nn
