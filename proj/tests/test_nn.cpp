#include <doctest.h>

#include <cmath>

#include "crosswise/nn/model.hpp"
#include "gradcheck.hpp"
#include "oracle.hpp"

using namespace crosswise;
using namespace crosswise::nn;

namespace {

ModelConfig small_config(int heads = 2) {
  ModelConfig c;
  c.d_h = 8;
  c.n_heads = heads;
  c.d_ff = 12;
  c.d_fc = 6;
  return c;
}

WindowMatrix random_window(Rng& rng) {
  WindowMatrix w;
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1);
  return w;
}

double max_abs_diff(const oracle::Vec& a, const RowVec<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b(static_cast<Eigen::Index>(i))));
  return m;
}

}  // namespace

TEST_CASE("gru_cell matches the element-wise equations") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto p = oracle::random_params(ModelConfig{}, seed);
    Rng rng(seed);
    RowVec<double> x(kFeatureDim), h(256);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : h) v = rng.uniform(-1, 1);
    const GruStep<double> got = gru_cell<double>(x, h, p.gru[0]);
    const auto want = oracle::gru_cell({x.begin(), x.end()}, {h.begin(), h.end()}, p.gru[0]);
    CHECK(max_abs_diff(want.z, got.z) <= 1e-10);
    CHECK(max_abs_diff(want.r, got.r) <= 1e-10);
    CHECK(max_abs_diff(want.h_tilde, got.h_tilde) <= 1e-10);
    CHECK(max_abs_diff(want.h, got.h) <= 1e-10);
  }
}

TEST_CASE("gru_cell rejects mismatched shapes") {
  const auto p = ModelParams<double>::xavier(ModelConfig{}, 1);
  CHECK_THROWS_AS(gru_cell<double>(RowVec<double>::Zero(3), RowVec<double>::Zero(256), p.gru[0]), std::invalid_argument);
}

TEST_CASE("update gate extremes") {
  // z -> 0 keeps the previous state, z -> 1 takes the candidate.
  auto p = ModelParams<double>::zeros(small_config());
  RowVec<double> x = RowVec<double>::Ones(kFeatureDim), h = RowVec<double>::Constant(8, 0.3);
  p.gru[0].b_z.setConstant(-50);
  CHECK((gru_cell<double>(x, h, p.gru[0]).h - h).norm() < 1e-12);
  p.gru[0].b_z.setConstant(50);
  p.gru[0].b_h.setConstant(0.7);
  CHECK((gru_cell<double>(x, h, p.gru[0]).h.array() - std::tanh(0.7)).abs().maxCoeff() < 1e-12);
}

TEST_CASE("attention encoder matches the element-wise equations") {
  for (int heads : {1, 2, 4}) {
    ModelConfig cfg;
    cfg.n_heads = heads;
    const auto p = oracle::random_params(cfg, 100 + heads);
    Rng rng(heads);
    const int batch = 3;
    Mat<double> h(kWindowSteps * batch, cfg.d_h);
    for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = rng.uniform(-1, 1);
    ForwardCache<double> cache;
    cache.batch = batch;
    cache.steps = kWindowSteps;
    const Mat<double> got = attention_encoder<double>(h, batch, p, Mode::Infer, nullptr, cache);
    for (int b = 0; b < batch; ++b) {
      oracle::Rows H;
      for (int t = 0; t < kWindowSteps; ++t) {
        const auto row = h.row(t * batch + b);
        H.push_back({row.begin(), row.end()});
      }
      const auto want = oracle::attention_encoder(H, p);
      for (int t = 0; t < kWindowSteps; ++t)
        CHECK(max_abs_diff(want[t], got.row(t * batch + b)) <= 1e-10);
    }
  }
}

TEST_CASE("single-step attention returns the value projection") {
  const auto p = oracle::random_params(ModelConfig{}, 9);
  Rng rng(9);
  Mat<double> h(1, 256);
  for (auto& v : h.reshaped()) v = rng.uniform(-1, 1);
  ForwardCache<double> cache;
  attention_encoder<double>(h, 1, p, Mode::Infer, nullptr, cache);
  for (const auto& pr : cache.probs) CHECK(pr(0, 0) == 1.0);
  CHECK((cache.concat - h * p.attn.W_V).norm() < 1e-12);
}

TEST_CASE("attention rows are probability distributions") {
  const auto p = ModelParams<double>::xavier(ModelConfig{}, 4);
  Rng rng(4);
  std::vector<WindowMatrix> ws{random_window(rng), random_window(rng)};
  std::vector<const WindowMatrix*> ptrs{&ws[0], &ws[1]};
  ForwardCache<double> c;
  forward<double>(stack_windows<double>(ptrs), 2, p, Mode::Infer, nullptr, c);
  REQUIRE(c.probs.size() == 2u * 2u);
  for (const auto& pr : c.probs) {
    CHECK((pr.array() >= 0).all());
    CHECK((pr.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("full forward matches the element-wise model") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (Pooling pool : {Pooling::Mean, Pooling::Last}) {
      ModelConfig cfg;
      cfg.pooling = pool;
      const auto p = oracle::random_params(cfg, seed);
      Rng rng(seed * 3);
      FeatureWindow w;
      w.x = random_window(rng);
      const double got = predict<double>(w, p).p_b;
      CHECK(std::abs(got - oracle::forward(w.x, p)) <= 1e-10);
    }
  }
}

TEST_CASE("batched forward equals per-sample forward") {
  const auto p = oracle::random_params(ModelConfig{}, 21);
  Rng rng(21);
  std::vector<FeatureWindow> ws(7);
  for (auto& w : ws) w.x = random_window(rng);
  const auto batch = predict<double>(ws, p);
  for (std::size_t i = 0; i < ws.size(); ++i) CHECK(std::abs(batch[i].p_b - predict<double>(ws[i], p).p_b) < 1e-12);
}

TEST_CASE("zero parameters predict one half") {
  const auto p = ModelParams<float>::zeros(ModelConfig{});
  FeatureWindow w;
  w.x.setConstant(0.3);
  const Prediction pr = predict<float>(w, p);
  CHECK(pr.p_b == 0.5);
  CHECK(pr.label == Crosswalk::B);  // p >= 0.5 is B
}

TEST_CASE("dropout only acts in train mode with an rng") {
  const auto p = ModelParams<double>::xavier(ModelConfig{}, 2);
  Rng data(2);
  std::vector<WindowMatrix> ws{random_window(data)};
  std::vector<const WindowMatrix*> ptrs{&ws[0]};
  const Mat<double> x = stack_windows<double>(ptrs);
  ForwardCache<double> c1, c2, c3;
  const double infer = forward<double>(x, 1, p, Mode::Infer, nullptr, c1)(0);
  Rng r1(5);
  CHECK(forward<double>(x, 1, p, Mode::Infer, &r1, c2)(0) == infer);
  CHECK(forward<double>(x, 1, p, Mode::Train, nullptr, c2)(0) == infer);
  Rng r2(5), r3(5);
  const double a = forward<double>(x, 1, p, Mode::Train, &r2, c2)(0);
  const double b = forward<double>(x, 1, p, Mode::Train, &r3, c3)(0);
  CHECK(a == b);
  CHECK(a != infer);
  // Inverted dropout: kept entries are scaled by 1/(1-rate).
  for (Eigen::Index i = 0; i < c2.mask_fc.size(); ++i) {
    const double m = c2.mask_fc.data()[i];
    CHECK((m == 0.0 || m == 2.0));
  }
}

TEST_CASE("bce loss is stable for large logits") {
  ColVec<double> l(4), y(4);
  l << 800, -800, 0, 3;
  y << 1, 0, 1, 0;
  const double loss = bce_loss<double>(l, y);
  CHECK(std::isfinite(loss));
  const double want = (0 + 0 + std::log(2.0) + (3 + std::log1p(std::exp(-3.0)))) / 4;
  CHECK(loss == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("gradients agree with central differences on a small model") {
  for (int heads : {1, 2}) {
    const auto r = gradcheck::run(small_config(heads), 7 + heads, 3, 12);
    INFO("worst: " << r.worst);
    CHECK(r.max_rel_err <= 1e-4);
    CHECK(r.tensors.size() == ModelParams<double>::zeros(small_config(heads)).tensors().size());
  }
}

TEST_CASE("gradients with last-step pooling") {
  auto cfg = small_config();
  cfg.pooling = Pooling::Last;
  const auto r = gradcheck::run(cfg, 3, 2, 8);
  INFO("worst: " << r.worst);
  CHECK(r.max_rel_err <= 1e-4);
}

TEST_CASE("backward accumulates") {
  const auto cfg = small_config();
  const auto p = ModelParams<double>::xavier(cfg, 1);
  Rng rng(1);
  std::vector<WindowMatrix> ws{random_window(rng)};
  std::vector<const WindowMatrix*> ptrs{&ws[0]};
  ColVec<double> y(1);
  y << 1;
  ForwardCache<double> c;
  forward<double>(stack_windows<double>(ptrs), 1, p, Mode::Infer, nullptr, c);
  auto g1 = ModelParams<double>::zeros(cfg), g2 = ModelParams<double>::zeros(cfg);
  backward<double>(c, p, y, g1);
  backward<double>(c, p, y, g2);
  backward<double>(c, p, y, g2);
  auto t1 = g1.tensors(), t2 = g2.tensors();
  for (std::size_t k = 0; k < t1.size(); ++k) CHECK((t2[k].flat() - 2 * t1[k].flat()).norm() < 1e-12);
}

TEST_CASE("parameter count") {
  const ModelConfig c;
  const std::size_t gru0 = 3 * (16 * 256 + 256 * 256 + 256);
  const std::size_t gru1 = 3 * (256 * 256 + 256 * 256 + 256);
  const std::size_t attn = 4 * 256 * 256 + 256 * 512 + 512 + 512 * 256 + 256 + 4 * 256;
  const std::size_t head = 256 * 64 + 64 + 64 + 1;
  CHECK(ModelParams<float>::zeros(c).parameter_count() == gru0 + gru1 + attn + head);
}

TEST_CASE("config validation and layout check") {
  ModelConfig c;
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  auto p = ModelParams<float>::zeros(ModelConfig{});
  CHECK_NOTHROW(check_layout(p));
  p.layout_hash = "0000000000000000";
  CHECK_THROWS_AS(check_layout(p), std::invalid_argument);
  FeatureWindow w;
  CHECK_THROWS_AS(predict<float>(w, p), std::invalid_argument);
}

TEST_CASE("xavier init bounds, zero biases, unit gains") {
  const ModelConfig cfg;
  auto p = ModelParams<double>::xavier(cfg, 3);
  const double bound = std::sqrt(6.0 / (256 + 256));
  CHECK(p.attn.W_Q.cwiseAbs().maxCoeff() <= bound);
  CHECK(p.attn.W_Q.cwiseAbs().maxCoeff() > 0.9 * bound);
  CHECK(p.gru[0].b_z.isZero());
  CHECK(p.attn.ln1_g.isOnes());
  CHECK(p.attn.ln1_b.isZero());
  const auto q = ModelParams<double>::xavier(cfg, 3);
  CHECK(p.attn.W_Q == q.attn.W_Q);
}
