#include "crosswise/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crosswise::nn {

template <class S>
AdamWState<S> AdamWState<S>::zeros_like(const ModelParams<S>& p) {
  AdamWState st;
  st.m = ModelParams<S>::zeros(p.config);
  st.v = ModelParams<S>::zeros(p.config);
  return st;
}

template <class S>
void adamw_step(ModelParams<S>& params, ModelParams<S>& grads, AdamWState<S>& state,
                const AdamWHyper& h) {
  auto pt = params.tensors();
  auto gt = grads.tensors();
  auto mt = state.m.tensors();
  auto vt = state.v.tensors();
  for (const auto& g : gt)
    if (!g.flat().allFinite()) throw std::invalid_argument("non-finite gradient in " + g.name);

  ++state.step;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const S decay = static_cast<S>(1.0 - h.lr * h.weight_decay);
  const S b1 = static_cast<S>(h.beta1), b2 = static_cast<S>(h.beta2);
  const S step_size = static_cast<S>(h.lr / bc1);
  const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
  const S eps = static_cast<S>(h.eps);
  for (std::size_t i = 0; i < pt.size(); ++i) {
    auto p = pt[i].flat().array();
    auto g = gt[i].flat().array();
    auto m = mt[i].flat().array();
    auto v = vt[i].flat().array();
    p *= decay;
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.square();
    p -= step_size * m / (v.sqrt() * inv_sqrt_bc2 + eps);
  }
}

template <class S>
double global_norm(ModelParams<S>& grads) {
  double sq = 0.0;
  for (const auto& t : grads.tensors()) sq += t.flat().template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

template <class S>
double clip_gradients(ModelParams<S>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const S scale = static_cast<S>(max_norm / norm);
    for (auto& t : grads.tensors()) t.flat() *= scale;
  }
  return norm;
}

template <class S>
void zero_grads(ModelParams<S>& grads) {
  for (auto& t : grads.tensors()) t.flat().setZero();
}

double PlateauScheduler::step(double val_loss) {
  if (val_loss < best_ - opt_.threshold) {
    best_ = val_loss;
    bad_epochs_ = 0;
  } else if (++bad_epochs_ >= opt_.patience) {
    const double next = std::max(lr_ * opt_.factor, opt_.min_lr);
    if (next < lr_) ++reductions_;
    lr_ = next;
    bad_epochs_ = 0;
  }
  return lr_;
}

#define CROSSWISE_OPTIM_INSTANTIATE(S)                                                        \
  template struct AdamWState<S>;                                                              \
  template void adamw_step(ModelParams<S>&, ModelParams<S>&, AdamWState<S>&, const AdamWHyper&); \
  template double global_norm(ModelParams<S>&);                                               \
  template double clip_gradients(ModelParams<S>&, double);                                    \
  template void zero_grads(ModelParams<S>&);

CROSSWISE_OPTIM_INSTANTIATE(float)
CROSSWISE_OPTIM_INSTANTIATE(double)

}  // namespace crosswise::nn
