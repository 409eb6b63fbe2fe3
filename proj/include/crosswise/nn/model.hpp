#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crosswise/feat.hpp"
#include "crosswise/rng.hpp"

namespace crosswise::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;
template <class S>
using ColVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class Mode { Train, Infer };
enum class Pooling { Mean, Last };

const char* to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);

struct ModelConfig {
  int d_in = kFeatureDim;
  int d_h = 256;  // GRU width and attention model width
  int n_heads = 2;
  int d_ff = 512;
  int d_fc = 64;
  double dropout = 0.5;
  Pooling pooling = Pooling::Mean;
  double ln_eps = 1e-5;

  int head_width() const { return d_h / n_heads; }
  /// Throws std::invalid_argument, e.g. when d_h is not divisible by n_heads.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Row-vector convention throughout: activations are (rows x features) and a
// layer computes X * W + b, so W is (fan_in x fan_out).

template <class S>
struct GruLayerParams {
  Mat<S> W_z, W_r, W_h;  // d_in x d_h
  Mat<S> U_z, U_r, U_h;  // d_h x d_h
  RowVec<S> b_z, b_r, b_h;
};

template <class S>
struct AttentionParams {
  Mat<S> W_Q, W_K, W_V, W_O;  // d_h x d_h, heads are column slices
  Mat<S> W_1;                 // d_h x d_ff
  RowVec<S> b_1;
  Mat<S> W_2;  // d_ff x d_h
  RowVec<S> b_2;
  RowVec<S> ln1_g, ln1_b, ln2_g, ln2_b;
};

template <class S>
struct HeadParams {
  Mat<S> W_fc1;  // d_h x d_fc
  RowVec<S> b_fc1;
  Mat<S> W_fc2;  // d_fc x 1
  RowVec<S> b_fc2;
};

/// Contiguous view of one named tensor; data is column-major.
template <class S>
struct TensorView {
  std::string name;
  S* data;
  Eigen::Index rows, cols;

  Eigen::Map<ColVec<S>> flat() const { return {data, rows * cols}; }
  Eigen::Index size() const { return rows * cols; }
};

template <class S>
struct ModelParams {
  static constexpr int kVersion = 1;

  ModelConfig config;
  std::array<GruLayerParams<S>, 2> gru;
  AttentionParams<S> attn;
  HeadParams<S> head;
  std::string layout_hash = feature_layout_hash();

  /// All tensors zero-initialized with the configured shapes (LayerNorm gains
  /// included).
  static ModelParams zeros(const ModelConfig& cfg);
  /// Xavier-uniform weights, zero biases, unit LayerNorm gains.
  static ModelParams xavier(const ModelConfig& cfg, std::uint64_t seed);

  /// Fixed-order list of every learnable tensor.
  std::vector<TensorView<S>> tensors();
  std::size_t parameter_count() const;

  template <class T>
  ModelParams<T> cast() const;
};

/// Result of one GRU step with the gate activations.
template <class S>
struct GruStep {
  RowVec<S> z, r, h_tilde, h;
};

/// h_t from x_t and h_{t-1} (both row vectors). Throws on shape mismatch.
template <class S>
GruStep<S> gru_cell(const RowVec<S>& x, const RowVec<S>& h_prev, const GruLayerParams<S>& p);

/// Everything the backward pass needs. Activations use a time-major layout:
/// row t*B + b holds sample b at step t.
template <class S>
struct ForwardCache {
  int batch = 0, steps = 0;
  Mode mode = Mode::Infer;
  Mat<S> x;
  struct Gru {
    Mat<S> input, z, r, h_tilde, h;
  };
  std::array<Gru, 2> gru;
  Mat<S> mask_gru;  // empty in infer mode
  Mat<S> q, k, v;
  std::vector<Mat<S>> probs;  // softmax matrices, index b * n_heads + head
  Mat<S> concat, attn_out, mask_attn, y1, n1_hat;
  ColVec<S> n1_inv_std;
  Mat<S> n1, ff_pre, ff_act, ff_out, mask_ff, y2, n2_hat;
  ColVec<S> n2_inv_std;
  Mat<S> encoded, pooled, fc_pre, fc_act, mask_fc;
  ColVec<S> logits, prob;
};

/// Stacks windows into the time-major (T*B x d_in) input layout.
template <class S>
Mat<S> stack_windows(std::span<const WindowMatrix* const> windows);

/// Two GRU layers over a time-major input; returns the top layer's states.
template <class S>
Mat<S> gru_forward(const Mat<S>& x, int batch, const ModelParams<S>& p, Mode mode, Rng* rng,
                   ForwardCache<S>& cache);

/// One encoder block: multi-head self-attention, residual + LayerNorm,
/// ReLU feed-forward, residual + LayerNorm.
template <class S>
Mat<S> attention_encoder(const Mat<S>& h, int batch, const ModelParams<S>& p, Mode mode, Rng* rng,
                         ForwardCache<S>& cache);

/// Full forward pass; returns p_B per sample. `rng` draws dropout masks and
/// is only used in train mode.
template <class S>
ColVec<S> forward(const Mat<S>& x, int batch, const ModelParams<S>& p, Mode mode, Rng* rng,
                  ForwardCache<S>& cache);

/// Mean binary cross-entropy over the batch, computed from the logits.
template <class S>
S bce_loss(const ColVec<S>& logits, const ColVec<S>& y);

/// Accumulates dL/dtheta of the mean BCE into `grads` (which must be shaped
/// like the parameters) and returns the loss.
template <class S>
S backward(const ForwardCache<S>& cache, const ModelParams<S>& p, const ColVec<S>& y,
           ModelParams<S>& grads);

struct Prediction {
  int track_id = 0;
  double p_b = 0.5;
  Crosswalk label = Crosswalk::A;
  std::int64_t end_frame_idx = 0;
};

/// Throws std::invalid_argument when the weights were trained on a different
/// feature layout than this build produces.
template <class S>
void check_layout(const ModelParams<S>& p, const std::string& producer_hash = feature_layout_hash());

/// Inference-mode batch prediction.
template <class S>
std::vector<Prediction> predict(std::span<const FeatureWindow> windows, const ModelParams<S>& p);
template <class S>
Prediction predict(const FeatureWindow& window, const ModelParams<S>& p);

#define CROSSWISE_NN_EXTERN(S)                                                                   \
  extern template struct ModelParams<S>;                                                         \
  extern template GruStep<S> gru_cell(const RowVec<S>&, const RowVec<S>&, const GruLayerParams<S>&); \
  extern template Mat<S> stack_windows(std::span<const WindowMatrix* const>);                   \
  extern template Mat<S> gru_forward(const Mat<S>&, int, const ModelParams<S>&, Mode, Rng*,      \
                                     ForwardCache<S>&);                                          \
  extern template Mat<S> attention_encoder(const Mat<S>&, int, const ModelParams<S>&, Mode, Rng*, \
                                           ForwardCache<S>&);                                    \
  extern template ColVec<S> forward(const Mat<S>&, int, const ModelParams<S>&, Mode, Rng*,       \
                                    ForwardCache<S>&);                                           \
  extern template S bce_loss(const ColVec<S>&, const ColVec<S>&);                                \
  extern template S backward(const ForwardCache<S>&, const ModelParams<S>&, const ColVec<S>&,    \
                             ModelParams<S>&);                                                   \
  extern template void check_layout(const ModelParams<S>&, const std::string&);                  \
  extern template std::vector<Prediction> predict(std::span<const FeatureWindow>,                \
                                                  const ModelParams<S>&);                        \
  extern template Prediction predict(const FeatureWindow&, const ModelParams<S>&);

CROSSWISE_NN_EXTERN(float)
CROSSWISE_NN_EXTERN(double)
#undef CROSSWISE_NN_EXTERN

template <class S>
template <class T>
ModelParams<T> ModelParams<S>::cast() const {
  ModelParams<T> out;
  out.config = config;
  out.layout_hash = layout_hash;
  for (int l = 0; l < 2; ++l) {
    const auto& a = gru[l];
    auto& b = out.gru[l];
    b.W_z = a.W_z.template cast<T>(), b.W_r = a.W_r.template cast<T>(), b.W_h = a.W_h.template cast<T>();
    b.U_z = a.U_z.template cast<T>(), b.U_r = a.U_r.template cast<T>(), b.U_h = a.U_h.template cast<T>();
    b.b_z = a.b_z.template cast<T>(), b.b_r = a.b_r.template cast<T>(), b.b_h = a.b_h.template cast<T>();
  }
  const auto& a = attn;
  auto& b = out.attn;
  b.W_Q = a.W_Q.template cast<T>(), b.W_K = a.W_K.template cast<T>();
  b.W_V = a.W_V.template cast<T>(), b.W_O = a.W_O.template cast<T>();
  b.W_1 = a.W_1.template cast<T>(), b.b_1 = a.b_1.template cast<T>();
  b.W_2 = a.W_2.template cast<T>(), b.b_2 = a.b_2.template cast<T>();
  b.ln1_g = a.ln1_g.template cast<T>(), b.ln1_b = a.ln1_b.template cast<T>();
  b.ln2_g = a.ln2_g.template cast<T>(), b.ln2_b = a.ln2_b.template cast<T>();
  out.head.W_fc1 = head.W_fc1.template cast<T>(), out.head.b_fc1 = head.b_fc1.template cast<T>();
  out.head.W_fc2 = head.W_fc2.template cast<T>(), out.head.b_fc2 = head.b_fc2.template cast<T>();
  return out;
}

}  // namespace crosswise::nn
