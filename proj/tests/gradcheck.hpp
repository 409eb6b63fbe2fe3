#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "crosswise/nn/model.hpp"
#include "crosswise/nn/optim.hpp"

namespace gradcheck {

struct Result {
  double max_rel_err = 0.0;
  std::string worst;
  int checked = 0;
  std::set<std::string> tensors;
};

/// Analytic backward against central differences in 64-bit, train mode with
/// dropout. The dropout rng is re-seeded for every loss evaluation so all
/// evaluations share one mask set. Relative error is |a - n| / max(|a|, |n|,
/// floor); the floor keeps near-zero gradients from dividing by roundoff.
inline Result run(const crosswise::nn::ModelConfig& cfg, std::uint64_t seed, int batch, int per_tensor,
                  double eps = 1e-5, double floor = 1e-6) {
  using namespace crosswise;
  using namespace crosswise::nn;
  auto params = ModelParams<double>::xavier(cfg, seed);
  Rng data_rng(seed + 17);
  for (auto& t : params.tensors())
    if (t.rows == 1)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] += data_rng.uniform(-0.2, 0.2);

  std::vector<WindowMatrix> windows(static_cast<std::size_t>(batch));
  for (auto& w : windows)
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = data_rng.uniform(-1.0, 1.0);
  std::vector<const WindowMatrix*> ptrs;
  for (const auto& w : windows) ptrs.push_back(&w);
  const Mat<double> x = stack_windows<double>(ptrs);
  ColVec<double> y(batch);
  for (int b = 0; b < batch; ++b) y(b) = static_cast<double>(b % 2);

  const std::uint64_t mask_seed = seed * 31 + 5;
  auto loss_at = [&](const ModelParams<double>& p) {
    Rng rng(mask_seed);
    ForwardCache<double> c;
    forward<double>(x, batch, p, Mode::Train, &rng, c);
    return bce_loss<double>(c.logits, y);
  };

  auto grads = ModelParams<double>::zeros(cfg);
  {
    Rng rng(mask_seed);
    ForwardCache<double> c;
    forward<double>(x, batch, params, Mode::Train, &rng, c);
    backward<double>(c, params, y, grads);
  }

  Result res;
  auto pt = params.tensors();
  auto gt = grads.tensors();
  Rng pick(seed + 99);
  for (std::size_t k = 0; k < pt.size(); ++k) {
    const int n = std::min<int>(per_tensor, static_cast<int>(pt[k].size()));
    for (int s = 0; s < n; ++s) {
      const auto i = static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(pt[k].size())));
      double& theta = pt[k].data[i];
      const double saved = theta;
      theta = saved + eps;
      const double lp = loss_at(params);
      theta = saved - eps;
      const double lm = loss_at(params);
      theta = saved;
      const double numeric = (lp - lm) / (2 * eps);
      const double analytic = gt[k].data[i];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = pt[k].name + "[" + std::to_string(i) + "]";
      }
      ++res.checked;
      res.tensors.insert(pt[k].name);
    }
  }
  return res;
}

}  // namespace gradcheck
