#include "crosswise/nn/model.hpp"

#include <cmath>
#include <stdexcept>

namespace crosswise::nn {

namespace {

template <class S>
Mat<S> sigmoid(const Mat<S>& a) {
  return (S(1) / (S(1) + (-a.array()).exp())).matrix();
}

template <class S>
Mat<S> relu(const Mat<S>& a) {
  return a.cwiseMax(S(0));
}

template <class S>
Mat<S> relu_grad(const Mat<S>& dy, const Mat<S>& pre) {
  return (pre.array() > S(0)).select(dy, S(0));
}

/// Inverted-dropout mask: entries are 0 or 1/(1-rate).
template <class S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Mat<S> m(rows, cols);
  const double keep = 1.0 - rate;
  const S scale = static_cast<S>(1.0 / keep);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < keep ? scale : S(0);
  return m;
}

template <class S>
bool use_dropout(const ModelConfig& cfg, Mode mode, Rng* rng) {
  return mode == Mode::Train && cfg.dropout > 0.0 && rng != nullptr;
}

template <class S>
void layer_norm(const Mat<S>& x, const RowVec<S>& g, const RowVec<S>& b, S eps, Mat<S>& y,
                Mat<S>& xhat, ColVec<S>& inv_std) {
  const ColVec<S> mu = x.rowwise().mean();
  xhat = x.colwise() - mu;
  const ColVec<S> var = xhat.array().square().rowwise().mean();
  inv_std = (var.array() + eps).rsqrt();
  xhat = (xhat.array().colwise() * inv_std.array()).matrix();
  y = ((xhat.array().rowwise() * g.array()).rowwise() + b.array()).matrix();
}

template <class S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const ColVec<S>& inv_std,
                           const RowVec<S>& g, RowVec<S>& dg, RowVec<S>& db) {
  dg += dy.cwiseProduct(xhat).colwise().sum();
  db += dy.colwise().sum();
  const Mat<S> dxhat = (dy.array().rowwise() * g.array()).matrix();
  const ColVec<S> m1 = dxhat.rowwise().mean();
  const ColVec<S> m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
  Mat<S> dx = dxhat.colwise() - m1;
  dx -= (xhat.array().colwise() * m2.array()).matrix();
  return (dx.array().colwise() * inv_std.array()).matrix();
}

template <class S>
void softmax_rows(Mat<S>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const S mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
}

template <class S>
void gru_layer_forward(const Mat<S>& in, int batch, int steps, const GruLayerParams<S>& p,
                       typename ForwardCache<S>::Gru& c) {
  const Eigen::Index dh = p.U_z.rows();
  c.input = in;
  Mat<S> xz = in * p.W_z, xr = in * p.W_r, xh = in * p.W_h;
  xz.rowwise() += p.b_z;
  xr.rowwise() += p.b_r;
  xh.rowwise() += p.b_h;
  c.z.resize(in.rows(), dh);
  c.r.resize(in.rows(), dh);
  c.h_tilde.resize(in.rows(), dh);
  c.h.resize(in.rows(), dh);
  Mat<S> h_prev = Mat<S>::Zero(batch, dh);
  for (int t = 0; t < steps; ++t) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(t) * batch;
    const Mat<S> z = sigmoid<S>(xz.middleRows(r0, batch) + h_prev * p.U_z);
    const Mat<S> r = sigmoid<S>(xr.middleRows(r0, batch) + h_prev * p.U_r);
    const Mat<S> ht = (xh.middleRows(r0, batch) + r.cwiseProduct(h_prev) * p.U_h).array().tanh().matrix();
    Mat<S> h = ((S(1) - z.array()) * h_prev.array() + z.array() * ht.array()).matrix();
    c.z.middleRows(r0, batch) = z;
    c.r.middleRows(r0, batch) = r;
    c.h_tilde.middleRows(r0, batch) = ht;
    c.h.middleRows(r0, batch) = h;
    h_prev = std::move(h);
  }
}

/// Backpropagation through time for one layer. Returns dL/d(input) when
/// `want_input_grad`, else an empty matrix.
template <class S>
Mat<S> gru_layer_backward(const typename ForwardCache<S>::Gru& c, int batch, int steps,
                          const GruLayerParams<S>& p, const Mat<S>& dh_out, GruLayerParams<S>& g,
                          bool want_input_grad) {
  const Eigen::Index dh = p.U_z.rows();
  Mat<S> da_z(c.h.rows(), dh), da_r(c.h.rows(), dh), da_h(c.h.rows(), dh);
  Mat<S> dh_next = Mat<S>::Zero(batch, dh);
  const Mat<S> zero = Mat<S>::Zero(batch, dh);
  for (int t = steps - 1; t >= 0; --t) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(t) * batch;
    const auto h_prev = t > 0 ? c.h.middleRows(r0 - batch, batch) : zero.middleRows(0, batch);
    const auto z = c.z.middleRows(r0, batch).array();
    const auto r = c.r.middleRows(r0, batch).array();
    const auto ht = c.h_tilde.middleRows(r0, batch).array();
    const Mat<S> dh = dh_out.middleRows(r0, batch) + dh_next;

    const Mat<S> az = (dh.array() * (ht - h_prev.array()) * z * (S(1) - z)).matrix();
    const Mat<S> ah = (dh.array() * z * (S(1) - ht.square())).matrix();
    const Mat<S> dc = ah * p.U_h.transpose();
    const Mat<S> ar = (dc.array() * h_prev.array() * r * (S(1) - r)).matrix();

    g.U_h.noalias() += (r * h_prev.array()).matrix().transpose() * ah;
    g.U_z.noalias() += h_prev.transpose() * az;
    g.U_r.noalias() += h_prev.transpose() * ar;

    dh_next = (dh.array() * (S(1) - z) + dc.array() * r).matrix();
    dh_next.noalias() += az * p.U_z.transpose();
    dh_next.noalias() += ar * p.U_r.transpose();

    da_z.middleRows(r0, batch) = az;
    da_r.middleRows(r0, batch) = ar;
    da_h.middleRows(r0, batch) = ah;
  }
  g.W_z.noalias() += c.input.transpose() * da_z;
  g.W_r.noalias() += c.input.transpose() * da_r;
  g.W_h.noalias() += c.input.transpose() * da_h;
  g.b_z += da_z.colwise().sum();
  g.b_r += da_r.colwise().sum();
  g.b_h += da_h.colwise().sum();
  if (!want_input_grad) return {};
  Mat<S> d_in = da_z * p.W_z.transpose();
  d_in.noalias() += da_r * p.W_r.transpose();
  d_in.noalias() += da_h * p.W_h.transpose();
  return d_in;
}

template <class S>
void check_input(const Mat<S>& x, int batch, const ModelConfig& cfg) {
  if (batch <= 0 || x.rows() % batch != 0 || x.rows() == 0)
    throw std::invalid_argument("input rows must be a positive multiple of the batch size");
  if (x.cols() != cfg.d_in)
    throw std::invalid_argument("input width " + std::to_string(x.cols()) + " != d_in " +
                                std::to_string(cfg.d_in));
}

template <class S>
void init_shapes(ModelParams<S>& p, const ModelConfig& cfg) {
  const int din = cfg.d_in, dh = cfg.d_h;
  for (int l = 0; l < 2; ++l) {
    auto& g = p.gru[l];
    const int in = l == 0 ? din : dh;
    g.W_z = g.W_r = g.W_h = Mat<S>::Zero(in, dh);
    g.U_z = g.U_r = g.U_h = Mat<S>::Zero(dh, dh);
    g.b_z = g.b_r = g.b_h = RowVec<S>::Zero(dh);
  }
  auto& a = p.attn;
  a.W_Q = a.W_K = a.W_V = a.W_O = Mat<S>::Zero(dh, dh);
  a.W_1 = Mat<S>::Zero(dh, cfg.d_ff);
  a.b_1 = RowVec<S>::Zero(cfg.d_ff);
  a.W_2 = Mat<S>::Zero(cfg.d_ff, dh);
  a.b_2 = RowVec<S>::Zero(dh);
  a.ln1_g = a.ln1_b = a.ln2_g = a.ln2_b = RowVec<S>::Zero(dh);
  p.head.W_fc1 = Mat<S>::Zero(dh, cfg.d_fc);
  p.head.b_fc1 = RowVec<S>::Zero(cfg.d_fc);
  p.head.W_fc2 = Mat<S>::Zero(cfg.d_fc, 1);
  p.head.b_fc2 = RowVec<S>::Zero(1);
}

}  // namespace

const char* to_string(Pooling p) { return p == Pooling::Mean ? "mean" : "last"; }

Pooling pooling_from_string(const std::string& s) {
  if (s == "mean") return Pooling::Mean;
  if (s == "last") return Pooling::Last;
  throw std::invalid_argument("pooling must be \"mean\" or \"last\"");
}

void ModelConfig::validate() const {
  if (d_in <= 0 || d_h <= 0 || d_ff <= 0 || d_fc <= 0 || n_heads <= 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (d_h % n_heads != 0)
    throw std::invalid_argument("d_h (" + std::to_string(d_h) + ") not divisible by n_heads (" +
                                std::to_string(n_heads) + ")");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0,1)");
}

template <class S>
ModelParams<S> ModelParams<S>::zeros(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  init_shapes(p, cfg);
  return p;
}

template <class S>
ModelParams<S> ModelParams<S>::xavier(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = zeros(cfg);
  Rng rng(seed);
  for (auto& t : p.tensors()) {
    const bool is_gain = t.name.ends_with("_g");
    const bool is_bias = t.rows == 1 && !is_gain;
    if (is_gain) {
      t.flat().setOnes();
    } else if (!is_bias) {
      const double limit = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(rng.uniform(-limit, limit));
    }
  }
  return p;
}

template <class S>
std::vector<TensorView<S>> ModelParams<S>::tensors() {
  std::vector<TensorView<S>> out;
  auto add = [&](std::string name, auto& m) { out.push_back({std::move(name), m.data(), m.rows(), m.cols()}); };
  for (int l = 0; l < 2; ++l) {
    const std::string pre = "gru" + std::to_string(l) + ".";
    auto& g = gru[l];
    add(pre + "W_z", g.W_z), add(pre + "W_r", g.W_r), add(pre + "W_h", g.W_h);
    add(pre + "U_z", g.U_z), add(pre + "U_r", g.U_r), add(pre + "U_h", g.U_h);
    add(pre + "b_z", g.b_z), add(pre + "b_r", g.b_r), add(pre + "b_h", g.b_h);
  }
  add("attn.W_Q", attn.W_Q), add("attn.W_K", attn.W_K), add("attn.W_V", attn.W_V);
  add("attn.W_O", attn.W_O);
  add("attn.W_1", attn.W_1), add("attn.b_1", attn.b_1);
  add("attn.W_2", attn.W_2), add("attn.b_2", attn.b_2);
  add("attn.ln1_g", attn.ln1_g), add("attn.ln1_b", attn.ln1_b);
  add("attn.ln2_g", attn.ln2_g), add("attn.ln2_b", attn.ln2_b);
  add("head.W_fc1", head.W_fc1), add("head.b_fc1", head.b_fc1);
  add("head.W_fc2", head.W_fc2), add("head.b_fc2", head.b_fc2);
  return out;
}

template <class S>
std::size_t ModelParams<S>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : const_cast<ModelParams*>(this)->tensors()) n += static_cast<std::size_t>(t.size());
  return n;
}

template <class S>
GruStep<S> gru_cell(const RowVec<S>& x, const RowVec<S>& h_prev, const GruLayerParams<S>& p) {
  if (x.size() != p.W_z.rows() || h_prev.size() != p.U_z.rows())
    throw std::invalid_argument("gru_cell: shape mismatch");
  GruStep<S> s;
  s.z = sigmoid<S>(x * p.W_z + h_prev * p.U_z + p.b_z);
  s.r = sigmoid<S>(x * p.W_r + h_prev * p.U_r + p.b_r);
  s.h_tilde = (x * p.W_h + s.r.cwiseProduct(h_prev) * p.U_h + p.b_h).array().tanh().matrix();
  s.h = ((S(1) - s.z.array()) * h_prev.array() + s.z.array() * s.h_tilde.array()).matrix();
  return s;
}

template <class S>
Mat<S> stack_windows(std::span<const WindowMatrix* const> windows) {
  const int batch = static_cast<int>(windows.size());
  Mat<S> x(static_cast<Eigen::Index>(kWindowSteps) * batch, kFeatureDim);
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < kWindowSteps; ++t)
      x.row(static_cast<Eigen::Index>(t) * batch + b) = windows[b]->row(t).template cast<S>();
  return x;
}

template <class S>
Mat<S> gru_forward(const Mat<S>& x, int batch, const ModelParams<S>& p, Mode mode, Rng* rng,
                   ForwardCache<S>& cache) {
  check_input(x, batch, p.config);
  const int steps = static_cast<int>(x.rows() / batch);
  cache.batch = batch;
  cache.steps = steps;
  cache.mode = mode;
  cache.x = x;
  gru_layer_forward<S>(x, batch, steps, p.gru[0], cache.gru[0]);
  if (use_dropout<S>(p.config, mode, rng)) {
    cache.mask_gru = dropout_mask<S>(x.rows(), p.config.d_h, p.config.dropout, *rng);
    gru_layer_forward<S>(cache.gru[0].h.cwiseProduct(cache.mask_gru), batch, steps, p.gru[1], cache.gru[1]);
  } else {
    cache.mask_gru.resize(0, 0);
    gru_layer_forward<S>(cache.gru[0].h, batch, steps, p.gru[1], cache.gru[1]);
  }
  return cache.gru[1].h;
}

template <class S>
Mat<S> attention_encoder(const Mat<S>& h, int batch, const ModelParams<S>& p, Mode mode, Rng* rng,
                         ForwardCache<S>& cache) {
  const ModelConfig& cfg = p.config;
  if (h.cols() != cfg.d_h || h.rows() % batch != 0)
    throw std::invalid_argument("attention_encoder: shape mismatch");
  const int steps = static_cast<int>(h.rows() / batch);
  const int heads = cfg.n_heads, dk = cfg.head_width();
  const S scale = S(1) / std::sqrt(static_cast<S>(dk));
  const auto& a = p.attn;
  const bool drop = use_dropout<S>(cfg, mode, rng);

  cache.q.noalias() = h * a.W_Q;
  cache.k.noalias() = h * a.W_K;
  cache.v.noalias() = h * a.W_V;
  cache.concat.resize(h.rows(), cfg.d_h);
  cache.probs.resize(static_cast<std::size_t>(batch) * heads);
  for (int b = 0; b < batch; ++b) {
    const auto rows = Eigen::seqN(b, steps, batch);
    for (int hd = 0; hd < heads; ++hd) {
      const auto cols = Eigen::seqN(hd * dk, dk);
      const Mat<S> qb = cache.q(rows, cols);
      const Mat<S> kb = cache.k(rows, cols);
      Mat<S> s = (qb * kb.transpose()) * scale;
      softmax_rows(s);
      cache.concat(rows, cols) = s * Mat<S>(cache.v(rows, cols));
      cache.probs[static_cast<std::size_t>(b) * heads + hd] = std::move(s);
    }
  }
  cache.attn_out.noalias() = cache.concat * a.W_O;
  if (drop) {
    cache.mask_attn = dropout_mask<S>(h.rows(), cfg.d_h, cfg.dropout, *rng);
    cache.y1 = h + cache.attn_out.cwiseProduct(cache.mask_attn);
  } else {
    cache.mask_attn.resize(0, 0);
    cache.y1 = h + cache.attn_out;
  }
  const S eps = static_cast<S>(cfg.ln_eps);
  layer_norm<S>(cache.y1, a.ln1_g, a.ln1_b, eps, cache.n1, cache.n1_hat, cache.n1_inv_std);

  cache.ff_pre.noalias() = cache.n1 * a.W_1;
  cache.ff_pre.rowwise() += a.b_1;
  cache.ff_act = relu<S>(cache.ff_pre);
  cache.ff_out.noalias() = cache.ff_act * a.W_2;
  cache.ff_out.rowwise() += a.b_2;
  if (drop) {
    cache.mask_ff = dropout_mask<S>(h.rows(), cfg.d_h, cfg.dropout, *rng);
    cache.y2 = cache.n1 + cache.ff_out.cwiseProduct(cache.mask_ff);
  } else {
    cache.mask_ff.resize(0, 0);
    cache.y2 = cache.n1 + cache.ff_out;
  }
  layer_norm<S>(cache.y2, a.ln2_g, a.ln2_b, eps, cache.encoded, cache.n2_hat, cache.n2_inv_std);
  return cache.encoded;
}

template <class S>
ColVec<S> forward(const Mat<S>& x, int batch, const ModelParams<S>& p, Mode mode, Rng* rng,
                  ForwardCache<S>& cache) {
  const Mat<S> h = gru_forward(x, batch, p, mode, rng, cache);
  attention_encoder(h, batch, p, mode, rng, cache);
  const int steps = cache.steps;
  const ModelConfig& cfg = p.config;
  if (cfg.pooling == Pooling::Mean) {
    cache.pooled = Mat<S>::Zero(batch, cfg.d_h);
    for (int t = 0; t < steps; ++t)
      cache.pooled += cache.encoded.middleRows(static_cast<Eigen::Index>(t) * batch, batch);
    cache.pooled /= static_cast<S>(steps);
  } else {
    cache.pooled = cache.encoded.middleRows(static_cast<Eigen::Index>(steps - 1) * batch, batch);
  }
  cache.fc_pre.noalias() = cache.pooled * p.head.W_fc1;
  cache.fc_pre.rowwise() += p.head.b_fc1;
  cache.fc_act = relu<S>(cache.fc_pre);
  Mat<S> logits;
  if (use_dropout<S>(cfg, mode, rng)) {
    cache.mask_fc = dropout_mask<S>(batch, cfg.d_fc, cfg.dropout, *rng);
    logits = cache.fc_act.cwiseProduct(cache.mask_fc) * p.head.W_fc2;
  } else {
    cache.mask_fc.resize(0, 0);
    logits = cache.fc_act * p.head.W_fc2;
  }
  logits.array() += p.head.b_fc2(0);
  cache.logits = logits.col(0);
  cache.prob = (S(1) / (S(1) + (-cache.logits.array()).exp())).matrix();
  return cache.prob;
}

template <class S>
S bce_loss(const ColVec<S>& logits, const ColVec<S>& y) {
  // softplus(l) - y*l, stable for large |l|.
  const auto l = logits.array();
  const auto per = l.cwiseMax(S(0)) - l * y.array() + (S(1) + (-l.abs()).exp()).log();
  return per.mean();
}

template <class S>
S backward(const ForwardCache<S>& c, const ModelParams<S>& p, const ColVec<S>& y, ModelParams<S>& g) {
  const ModelConfig& cfg = p.config;
  const int batch = c.batch, steps = c.steps;
  if (y.size() != batch) throw std::invalid_argument("backward: label count != batch");
  const S loss = bce_loss<S>(c.logits, y);

  // Head.
  const ColVec<S> dlogit = (c.prob - y) / static_cast<S>(batch);
  const Mat<S> fc_in = c.mask_fc.size() ? Mat<S>(c.fc_act.cwiseProduct(c.mask_fc)) : c.fc_act;
  g.head.W_fc2.noalias() += fc_in.transpose() * dlogit;
  g.head.b_fc2(0) += dlogit.sum();
  Mat<S> dfc = dlogit * p.head.W_fc2.transpose();
  if (c.mask_fc.size()) dfc = dfc.cwiseProduct(c.mask_fc);
  const Mat<S> dfc_pre = relu_grad<S>(dfc, c.fc_pre);
  g.head.W_fc1.noalias() += c.pooled.transpose() * dfc_pre;
  g.head.b_fc1 += dfc_pre.colwise().sum();
  const Mat<S> dpooled = dfc_pre * p.head.W_fc1.transpose();

  Mat<S> dencoded = Mat<S>::Zero(c.encoded.rows(), c.encoded.cols());
  if (cfg.pooling == Pooling::Mean) {
    for (int t = 0; t < steps; ++t)
      dencoded.middleRows(static_cast<Eigen::Index>(t) * batch, batch) = dpooled / static_cast<S>(steps);
  } else {
    dencoded.middleRows(static_cast<Eigen::Index>(steps - 1) * batch, batch) = dpooled;
  }

  // Encoder block.
  auto& ga = g.attn;
  const auto& a = p.attn;
  const Mat<S> dy2 = layer_norm_backward<S>(dencoded, c.n2_hat, c.n2_inv_std, a.ln2_g, ga.ln2_g, ga.ln2_b);
  Mat<S> dn1 = dy2;
  const Mat<S> dff_out = c.mask_ff.size() ? Mat<S>(dy2.cwiseProduct(c.mask_ff)) : dy2;
  ga.W_2.noalias() += c.ff_act.transpose() * dff_out;
  ga.b_2 += dff_out.colwise().sum();
  const Mat<S> dff_pre = relu_grad<S>(Mat<S>(dff_out * a.W_2.transpose()), c.ff_pre);
  ga.W_1.noalias() += c.n1.transpose() * dff_pre;
  ga.b_1 += dff_pre.colwise().sum();
  dn1.noalias() += dff_pre * a.W_1.transpose();
  const Mat<S> dy1 = layer_norm_backward<S>(dn1, c.n1_hat, c.n1_inv_std, a.ln1_g, ga.ln1_g, ga.ln1_b);

  Mat<S> dh = dy1;
  const Mat<S> dattn = c.mask_attn.size() ? Mat<S>(dy1.cwiseProduct(c.mask_attn)) : dy1;
  const Mat<S>& h = c.gru[1].h;
  ga.W_O.noalias() += c.concat.transpose() * dattn;
  const Mat<S> dconcat = dattn * a.W_O.transpose();

  const int heads = cfg.n_heads, dk = cfg.head_width();
  const S scale = S(1) / std::sqrt(static_cast<S>(dk));
  Mat<S> dq(h.rows(), cfg.d_h), dk_(h.rows(), cfg.d_h), dv(h.rows(), cfg.d_h);
  for (int b = 0; b < batch; ++b) {
    const auto rows = Eigen::seqN(b, steps, batch);
    for (int hd = 0; hd < heads; ++hd) {
      const auto cols = Eigen::seqN(hd * dk, dk);
      const Mat<S>& P = c.probs[static_cast<std::size_t>(b) * heads + hd];
      const Mat<S> dO = dconcat(rows, cols);
      const Mat<S> vb = c.v(rows, cols);
      const Mat<S> dP = dO * vb.transpose();
      dv(rows, cols) = P.transpose() * dO;
      const ColVec<S> inner = dP.cwiseProduct(P).rowwise().sum();
      const Mat<S> dS = (P.array() * (dP.colwise() - inner).array()).matrix() * scale;
      dq(rows, cols) = dS * Mat<S>(c.k(rows, cols));
      dk_(rows, cols) = dS.transpose() * Mat<S>(c.q(rows, cols));
    }
  }
  ga.W_Q.noalias() += h.transpose() * dq;
  ga.W_K.noalias() += h.transpose() * dk_;
  ga.W_V.noalias() += h.transpose() * dv;
  dh.noalias() += dq * a.W_Q.transpose();
  dh.noalias() += dk_ * a.W_K.transpose();
  dh.noalias() += dv * a.W_V.transpose();

  // GRU stack.
  Mat<S> dh1 = gru_layer_backward<S>(c.gru[1], batch, steps, p.gru[1], dh, g.gru[1], true);
  if (c.mask_gru.size()) dh1 = dh1.cwiseProduct(c.mask_gru);
  gru_layer_backward<S>(c.gru[0], batch, steps, p.gru[0], dh1, g.gru[0], false);
  return loss;
}

template <class S>
void check_layout(const ModelParams<S>& p, const std::string& producer_hash) {
  if (p.layout_hash != producer_hash)
    throw std::invalid_argument("feature layout hash mismatch: weights " + p.layout_hash +
                                ", features " + producer_hash);
}

template <class S>
std::vector<Prediction> predict(std::span<const FeatureWindow> windows, const ModelParams<S>& p) {
  check_layout(p);
  std::vector<Prediction> out;
  if (windows.empty()) return out;
  std::vector<const WindowMatrix*> ptrs;
  ptrs.reserve(windows.size());
  for (const auto& w : windows) ptrs.push_back(&w.x);
  ForwardCache<S> cache;
  const ColVec<S> prob = forward<S>(stack_windows<S>(ptrs), static_cast<int>(ptrs.size()), p,
                                    Mode::Infer, nullptr, cache);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    Prediction pr;
    pr.track_id = windows[i].track_id;
    pr.end_frame_idx = windows[i].end_frame_idx;
    pr.p_b = static_cast<double>(prob(static_cast<Eigen::Index>(i)));
    pr.label = pr.p_b < 0.5 ? Crosswalk::A : Crosswalk::B;
    out.push_back(pr);
  }
  return out;
}

template <class S>
Prediction predict(const FeatureWindow& window, const ModelParams<S>& p) {
  return predict<S>(std::span<const FeatureWindow>(&window, 1), p).front();
}

#define CROSSWISE_NN_INSTANTIATE(S)                                                             \
  template struct ModelParams<S>;                                                               \
  template GruStep<S> gru_cell(const RowVec<S>&, const RowVec<S>&, const GruLayerParams<S>&);   \
  template Mat<S> stack_windows(std::span<const WindowMatrix* const>);                          \
  template Mat<S> gru_forward(const Mat<S>&, int, const ModelParams<S>&, Mode, Rng*,            \
                              ForwardCache<S>&);                                                \
  template Mat<S> attention_encoder(const Mat<S>&, int, const ModelParams<S>&, Mode, Rng*,      \
                                    ForwardCache<S>&);                                          \
  template ColVec<S> forward(const Mat<S>&, int, const ModelParams<S>&, Mode, Rng*,             \
                             ForwardCache<S>&);                                                 \
  template S bce_loss(const ColVec<S>&, const ColVec<S>&);                                      \
  template S backward(const ForwardCache<S>&, const ModelParams<S>&, const ColVec<S>&,          \
                      ModelParams<S>&);                                                         \
  template void check_layout(const ModelParams<S>&, const std::string&);                        \
  template std::vector<Prediction> predict(std::span<const FeatureWindow>, const ModelParams<S>&); \
  template Prediction predict(const FeatureWindow&, const ModelParams<S>&);

CROSSWISE_NN_INSTANTIATE(float)
CROSSWISE_NN_INSTANTIATE(double)

}  // namespace crosswise::nn
