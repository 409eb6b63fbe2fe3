#include "crosswise/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "crosswise/rng.hpp"

namespace crosswise::eval {

using nlohmann::json;

namespace {

constexpr double kTrackMatchGatePx = 60.0;
constexpr std::size_t kEvalChunk = 512;

class Fnv {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= c[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  template <class T>
  void value(const T& v) {
    bytes(&v, sizeof v);
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json metrics_json(const Metrics& m) {
  return {{"accuracy", m.accuracy}, {"precision", opt(m.precision)}, {"recall", opt(m.recall)},
          {"f1", opt(m.f1)}};
}

template <class S>
nn::ColVec<S> batch_labels(const Dataset& ds, std::span<const std::size_t> idx) {
  nn::ColVec<S> y(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) y(static_cast<Eigen::Index>(i)) = static_cast<S>(ds.items[idx[i]].label);
  return y;
}

template <class S>
nn::Mat<S> batch_inputs(const std::vector<WindowMatrix>& masked, std::span<const std::size_t> idx) {
  std::vector<const WindowMatrix*> ptrs;
  ptrs.reserve(idx.size());
  for (std::size_t i : idx) ptrs.push_back(&masked[i]);
  return nn::stack_windows<S>(ptrs);
}

std::vector<WindowMatrix> masked_windows(const Dataset& ds, GroupMask groups) {
  std::vector<WindowMatrix> out;
  out.reserve(ds.items.size());
  for (const auto& it : ds.items) {
    out.push_back(it.window.x);
    apply_group_mask(out.back(), groups);
  }
  return out;
}

/// Mean BCE and probabilities over `idx` in inference mode.
template <class S>
double infer_loss(const std::vector<WindowMatrix>& masked, const Dataset& ds, std::span<const std::size_t> idx,
                  const nn::ModelParams<S>& p, std::vector<double>* probs) {
  double total = 0.0;
  nn::ForwardCache<S> cache;
  for (std::size_t off = 0; off < idx.size(); off += kEvalChunk) {
    const auto chunk = idx.subspan(off, std::min(kEvalChunk, idx.size() - off));
    const int b = static_cast<int>(chunk.size());
    nn::forward<S>(batch_inputs<S>(masked, chunk), b, p, nn::Mode::Infer, nullptr, cache);
    total += static_cast<double>(nn::bce_loss<S>(cache.logits, batch_labels<S>(ds, chunk))) * b;
    if (probs)
      for (int i = 0; i < b; ++i) probs->push_back(static_cast<double>(cache.prob(i)));
  }
  return idx.empty() ? 0.0 : total / static_cast<double>(idx.size());
}

ConfusionCounts counts_for(const Dataset& ds, std::span<const std::size_t> idx, const std::vector<double>& probs) {
  std::vector<int> labels;
  labels.reserve(idx.size());
  for (std::size_t i : idx) labels.push_back(ds.items[i].label);
  return confusion(probs, labels);
}

template <class S>
ExperimentRow run_config(const Dataset& ds, const Split& split, const TrainConfig& cfg, const std::string& name) {
  auto res = train<S>(ds, split, cfg);
  res.row.name = name;
  return res.row;
}

ExperimentRow run_any(const Dataset& ds, const Split& split, const TrainConfig& cfg, const std::string& name) {
  return cfg.precision == Precision::F32 ? run_config<float>(ds, split, cfg, name)
                                         : run_config<double>(ds, split, cfg, name);
}

}  // namespace

Metrics metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw std::invalid_argument("metrics of an empty confusion matrix");
  Metrics m;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (c.tp + c.fp > 0) m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (m.precision && m.recall && *m.precision + *m.recall > 0.0)
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  return m;
}

ConfusionCounts confusion(std::span<const double> p_b, std::span<const int> labels) {
  if (p_b.size() != labels.size()) throw std::invalid_argument("confusion: size mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < p_b.size(); ++i) {
    const bool pred_b = p_b[i] >= 0.5;
    const bool is_b = labels[i] == 1;
    if (pred_b && is_b) ++c.tp;
    else if (!pred_b && !is_b) ++c.tn;
    else if (pred_b) ++c.fp;
    else ++c.fn;
  }
  return c;
}

std::string Dataset::hash() const {
  Fnv f;
  for (const auto& it : items) {
    f.bytes(it.window.x.data(), sizeof(double) * it.window.x.size());
    f.value(it.label);
    f.value(it.vru_id);
    f.value(it.window.track_id);
    f.value(it.window.end_frame_idx);
  }
  return f.hex();
}

std::size_t Dataset::count_label(int label) const {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [&](const auto& it) { return it.label == label; }));
}

Dataset build_dataset(const std::vector<FrameRecord>& frames, const std::vector<VruTruth>& truth,
                      const IntersectionGeometry& g) {
  FeatureStage stage(g);
  std::map<int, int> track_to_vru;
  Dataset ds;
  auto position = [](const VruTruth& t, std::int64_t f) {
    const auto k = f - t.spawn_frame;
    if (!t.path.empty() && k >= 0 && k < static_cast<std::int64_t>(t.path.size())) return t.path[k];
    return t.spawn_xy;
  };
  for (const auto& rec : frames) {
    auto out = stage.process(rec);
    for (const Track& t : stage.tracker().tracks()) {
      if (t.first_seen != rec.frame_idx) continue;
      double best = std::numeric_limits<double>::infinity();
      int best_id = -1;
      for (const auto& v : truth) {
        if (rec.frame_idx < v.spawn_frame || rec.frame_idx > v.end_frame) continue;
        const double d = (position(v, rec.frame_idx) - t.history.front().center).norm();
        if (d < best) best = d, best_id = v.id;
      }
      if (best_id >= 0 && best <= kTrackMatchGatePx) track_to_vru[t.track_id] = best_id;
    }
    for (auto& w : out.windows) {
      auto it = track_to_vru.find(w.track_id);
      if (it == track_to_vru.end()) continue;
      const auto vt = std::find_if(truth.begin(), truth.end(), [&](const VruTruth& v) { return v.id == it->second; });
      ds.items.push_back({std::move(w), vt->label == Crosswalk::B ? 1 : 0, it->second});
    }
  }
  return ds;
}

Split split_by_track(const Dataset& ds, std::uint64_t seed, double train_frac, double val_frac) {
  std::vector<int> ids;
  for (const auto& it : ds.items) ids.push_back(it.vru_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Rng rng(seed);
  rng.shuffle(ids.begin(), ids.end());
  const auto n = static_cast<double>(ids.size());
  const auto n_train = static_cast<std::size_t>(std::lround(train_frac * n));
  const auto n_val = static_cast<std::size_t>(std::lround(val_frac * n));
  std::map<int, int> which;
  for (std::size_t i = 0; i < ids.size(); ++i) which[ids[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  Split s;
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    switch (which[ds.items[i].vru_id]) {
      case 0: s.train.push_back(i); break;
      case 1: s.val.push_back(i); break;
      default: s.test.push_back(i); break;
    }
  }
  if (s.train.empty() || s.val.empty() || s.test.empty())
    throw std::invalid_argument("dataset too small: a train/val/test split is empty");
  return s;
}

TrainConfig parse_train_config(const std::string& json_text) {
  TrainConfig c;
  try {
    const json j = json::parse(json_text);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.adam.lr = j.value("lr", c.adam.lr);
    c.adam.weight_decay = j.value("weight_decay", c.adam.weight_decay);
    c.adam.beta1 = j.value("beta1", c.adam.beta1);
    c.adam.beta2 = j.value("beta2", c.adam.beta2);
    c.adam.eps = j.value("eps", c.adam.eps);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.plateau.patience = j.value("plateau_patience", c.plateau.patience);
    c.plateau.threshold = j.value("plateau_threshold", c.plateau.threshold);
    c.plateau.min_lr = j.value("min_lr", c.plateau.min_lr);
    c.seed = j.value("seed", c.seed);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    if (j.contains("groups")) c.groups = parse_groups(j.at("groups").get<std::string>());
    if (j.contains("precision")) {
      const auto p = j.at("precision").get<std::string>();
      if (p == "f32") c.precision = Precision::F32;
      else if (p == "f64") c.precision = Precision::F64;
      else throw std::invalid_argument("precision must be f32 or f64");
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      c.model.d_h = m.value("d_h", c.model.d_h);
      c.model.n_heads = m.value("n_heads", c.model.n_heads);
      c.model.d_ff = m.value("d_ff", c.model.d_ff);
      c.model.d_fc = m.value("d_fc", c.model.d_fc);
      c.model.dropout = m.value("dropout", c.model.dropout);
      if (m.contains("pooling")) c.model.pooling = nn::pooling_from_string(m.at("pooling").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  c.plateau.initial_lr = c.adam.lr;
  c.model.validate();
  if (c.epochs <= 0 || c.batch_size <= 0) throw std::invalid_argument("epochs and batch_size must be positive");
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open train config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string ExperimentReport::to_json(bool include_timing) const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    json row = {{"name", r.name},
                {"metrics", metrics_json(r.test)},
                {"counts", {{"tp", r.counts.tp}, {"tn", r.counts.tn}, {"fp", r.counts.fp}, {"fn", r.counts.fn}}},
                {"epochs_run", r.epochs_run},
                {"best_val_loss", r.best_val_loss},
                {"n_params", r.n_params},
                {"n_train", r.n_train},
                {"n_val", r.n_val},
                {"n_test", r.n_test}};
    if (include_timing) row["wall_clock_s"] = r.wall_clock_s;
    rows_j.push_back(std::move(row));
  }
  json ref_j = json::array();
  for (const auto& p : reference)
    ref_j.push_back({{"name", p.name},
                       {"source", "published, private dataset"},
                       {"accuracy", p.accuracy},
                       {"precision", p.precision},
                       {"recall", p.recall},
                       {"f1", p.f1}});
  json j;
  j["kind"] = kind;
  j["seed"] = seed;
  j["dataset_hash"] = dataset_hash;
  j["positive_class"] = "B";
  j["synthetic"] = std::move(rows_j);
  j["reference"] = std::move(ref_j);
  return j.dump(2);
}

template <class S>
ConfusionCounts evaluate(const Dataset& ds, std::span<const std::size_t> idx, const nn::ModelParams<S>& params,
                         GroupMask groups) {
  const auto masked = masked_windows(ds, groups);
  std::vector<double> probs;
  infer_loss<S>(masked, ds, idx, params, &probs);
  return counts_for(ds, idx, probs);
}

template <class S>
TrainResult<S> train(const Dataset& ds, const Split& split, const TrainConfig& cfg) {
  if (split.train.empty() || split.val.empty() || split.test.empty())
    throw std::invalid_argument("train: empty split");
  const auto t0 = std::chrono::steady_clock::now();
  const auto masked = masked_windows(ds, cfg.groups);

  TrainResult<S> res;
  nn::ModelParams<S> params = nn::ModelParams<S>::xavier(cfg.model, cfg.seed);
  nn::ModelParams<S> grads = nn::ModelParams<S>::zeros(cfg.model);
  auto state = nn::AdamWState<S>::zeros_like(params);
  auto plateau_opts = cfg.plateau;
  plateau_opts.initial_lr = cfg.adam.lr;
  nn::PlateauScheduler sched(plateau_opts);
  nn::AdamWHyper hyper = cfg.adam;
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);

  std::vector<std::size_t> order = split.train;
  nn::ModelParams<S> best = params;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  nn::ForwardCache<S> cache;
  int epoch = 0;
  for (epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double train_loss = 0.0;
    for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(cfg.batch_size)) {
      const std::span<const std::size_t> batch(order.data() + off,
                                               std::min<std::size_t>(cfg.batch_size, order.size() - off));
      const int b = static_cast<int>(batch.size());
      nn::forward<S>(batch_inputs<S>(masked, batch), b, params, nn::Mode::Train, &rng, cache);
      nn::zero_grads(grads);
      train_loss += static_cast<double>(nn::backward<S>(cache, params, batch_labels<S>(ds, batch), grads)) * b;
      nn::clip_gradients(grads, cfg.clip_norm);
      hyper.lr = sched.lr();
      nn::adamw_step(params, grads, state, hyper);
    }
    train_loss /= static_cast<double>(order.size());

    std::vector<double> val_probs;
    const double val_loss = infer_loss<S>(masked, ds, split.val, params, &val_probs);
    const Metrics vm = metrics(counts_for(ds, split.val, val_probs));
    res.history.push_back({epoch, train_loss, val_loss, vm.accuracy, sched.lr()});
    sched.step(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      best = params;
      since_best = 0;
    } else if (cfg.early_stop_patience > 0 && ++since_best >= cfg.early_stop_patience) {
      break;
    }
  }

  std::vector<double> test_probs;
  infer_loss<S>(masked, ds, split.test, best, &test_probs);
  res.row.counts = counts_for(ds, split.test, test_probs);
  res.row.test = metrics(res.row.counts);
  res.row.epochs_run = std::min(epoch, cfg.epochs);
  res.row.best_val_loss = best_val;
  res.row.n_params = best.parameter_count();
  res.row.n_train = split.train.size();
  res.row.n_val = split.val.size();
  res.row.n_test = split.test.size();
  res.row.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.params = std::move(best);
  return res;
}

ExperimentReport ablation(const Dataset& ds, const TrainConfig& base, std::vector<GroupMask> configs) {
  if (configs.empty())
    configs = {parse_groups("L"), parse_groups("LM"), parse_groups("LMG"), parse_groups("LMGP")};
  for (GroupMask m : configs)
    if (m == 0) throw std::invalid_argument("ablation: empty feature group set");
  const Split split = split_by_track(ds, base.seed);
  ExperimentReport rep;
  rep.kind = "ablation";
  rep.seed = base.seed;
  rep.dataset_hash = ds.hash();
  for (GroupMask m : configs) {
    TrainConfig c = base;
    c.groups = m;
    rep.rows.push_back(run_any(ds, split, c, groups_to_string(m)));
  }
  rep.reference = reference_ablation_rows();
  return rep;
}

ExperimentReport head_sweep(const Dataset& ds, const TrainConfig& base, std::vector<int> heads) {
  const Split split = split_by_track(ds, base.seed);
  ExperimentReport rep;
  rep.kind = "head_sweep";
  rep.seed = base.seed;
  rep.dataset_hash = ds.hash();
  for (int h : heads) {
    TrainConfig c = base;
    c.model.n_heads = h;
    c.model.validate();
    rep.rows.push_back(run_any(ds, split, c, "heads=" + std::to_string(h)));
  }
  rep.reference = reference_head_rows();
  return rep;
}

std::vector<ReferenceRow> reference_head_rows() {
  return {{"heads=1", 0.9627, 0.9518, 0.9763, 0.9639},
          {"heads=2", 0.9645, 0.9638, 0.9668, 0.9653},
          {"heads=4", 0.9628, 0.9592, 0.9682, 0.9637}};
}

std::vector<ReferenceRow> reference_ablation_rows() {
  return {{"L", 0.9272, 0.9379, 0.9179, 0.9278},
          {"L+M", 0.9298, 0.9333, 0.9288, 0.9310},
          {"L+M+G", 0.9328, 0.9449, 0.9291, 0.9369},
          {"L+M+G+P", 0.9645, 0.9638, 0.9668, 0.9653}};
}

template TrainResult<float> train(const Dataset&, const Split&, const TrainConfig&);
template TrainResult<double> train(const Dataset&, const Split&, const TrainConfig&);
template ConfusionCounts evaluate(const Dataset&, std::span<const std::size_t>, const nn::ModelParams<float>&, GroupMask);
template ConfusionCounts evaluate(const Dataset&, std::span<const std::size_t>, const nn::ModelParams<double>&, GroupMask);

}  // namespace crosswise::eval
