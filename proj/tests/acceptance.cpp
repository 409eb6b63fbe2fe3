// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "crosswise/eval.hpp"
#include "crosswise/nn/serialize.hpp"
#include "crosswise/pipeline.hpp"
#include "gradcheck.hpp"
#include "oracle.hpp"

using namespace crosswise;

namespace {

// Tolerances and budgets.
constexpr double kGradRelTol = 1e-4;
constexpr int kGradMinParams = 200;
constexpr double kGradMaxSeconds = 60.0;
constexpr double kOracleTol = 1e-10;
constexpr int kOracleSeeds = 100;
constexpr int kConfusionTrials = 20;
constexpr double kCleanMinAccuracy = 0.99;
constexpr int kCleanMaxEpochs = 50;
constexpr double kCleanMaxSeconds = 600.0;
constexpr double kNoisyMinAccuracy = 0.90;
constexpr int kNoisyEpochs = 20;
constexpr int kNoisyEarlyStop = 4;
constexpr double kAblationMinGap = 0.02;
constexpr double kMinFps = 33.0;
constexpr double kMaxForwardP50Ms = 5.0;
constexpr double kMinPositiveLeadShare = 0.95;
constexpr double kTrackMatchGatePx = 60.0;
constexpr int kLeadTimeVrus = 300;
constexpr std::uint64_t kLeadTimeSeed = 101;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string config_path(const char* name) { return std::string(CROSSWISE_CONFIG_DIR) + "/" + name; }

WindowMatrix random_window(Rng& rng) {
  WindowMatrix w;
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1);
  return w;
}

// Shared noisy-benchmark state, trained once by criterion 5 and reused.
struct NoisyModels {
  eval::Dataset ds;
  eval::TrainResult<float> full;
  eval::ExperimentRow l, lmg;
  bool ready = false;
};

NoisyModels& noisy() {
  static NoisyModels m;
  if (m.ready) return m;
  const auto g = default_geometry();
  const auto sc = generate_scenario(load_scenario_spec(config_path("scenario_noisy.json")), g);
  m.ds = eval::build_dataset(sc.frames, sc.truth, g);
  auto cfg = eval::load_train_config(config_path("train.json"));
  cfg.epochs = kNoisyEpochs;
  cfg.early_stop_patience = kNoisyEarlyStop;
  const auto split = eval::split_by_track(m.ds, cfg.seed);
  m.full = eval::train<float>(m.ds, split, cfg);
  cfg.groups = parse_groups("L");
  m.l = eval::train<float>(m.ds, split, cfg).row;
  cfg.groups = parse_groups("LMG");
  m.lmg = eval::train<float>(m.ds, split, cfg).row;
  m.ready = true;
  return m;
}

Verdict gradient_check() {
  const auto t0 = Clock::now();
  const nn::ModelConfig cfg;
  const auto n_tensors = static_cast<int>(nn::ModelParams<double>::zeros(cfg).tensors().size());
  // Single-element tensors contribute one sample, so oversample the rest.
  const int per_tensor = kGradMinParams / n_tensors + 3;
  const auto r = gradcheck::run(cfg, 1, 2, per_tensor);
  const double s = seconds_since(t0);
  const bool ok = r.max_rel_err <= kGradRelTol && r.checked >= kGradMinParams &&
                  static_cast<int>(r.tensors.size()) == n_tensors && s < kGradMaxSeconds;
  return {ok, fmt("max rel err %.3g over %d params in %d/%d tensors (worst %s), %.1f s", r.max_rel_err, r.checked,
                  static_cast<int>(r.tensors.size()), n_tensors, r.worst.c_str(), s)};
}

Verdict oracle_forward() {
  double worst_gru = 0, worst_attn = 0, worst_forward = 0;
  for (int seed = 1; seed <= kOracleSeeds; ++seed) {
    nn::ModelConfig cfg;
    cfg.n_heads = std::array{1, 2, 4}[seed % 3];
    cfg.pooling = seed % 2 ? nn::Pooling::Mean : nn::Pooling::Last;
    const auto p = oracle::random_params(cfg, static_cast<std::uint64_t>(seed));
    Rng rng(static_cast<std::uint64_t>(seed) + 1000);
    FeatureWindow w;
    w.x = random_window(rng);
    worst_forward = std::max(worst_forward, std::abs(nn::predict<double>(w, p).p_b - oracle::forward(w.x, p)));

    const int layer = seed % 2;
    const int d_in = layer == 0 ? kFeatureDim : cfg.d_h;
    nn::RowVec<double> x(d_in), h(cfg.d_h);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : h) v = rng.uniform(-1, 1);
    const auto want = oracle::gru_cell({x.begin(), x.end()}, {h.begin(), h.end()}, p.gru[layer]);
    const auto got = nn::gru_cell<double>(x, h, p.gru[layer]);
    for (int i = 0; i < cfg.d_h; ++i) worst_gru = std::max(worst_gru, std::abs(want.h[i] - got.h(i)));

    const int batch = 2;
    nn::Mat<double> hs(kWindowSteps * batch, cfg.d_h);
    for (auto& v : hs.reshaped()) v = rng.uniform(-1, 1);
    nn::ForwardCache<double> cache;
    cache.batch = batch;
    cache.steps = kWindowSteps;
    const nn::Mat<double> enc = nn::attention_encoder<double>(hs, batch, p, nn::Mode::Infer, nullptr, cache);
    for (int b = 0; b < batch; ++b) {
      oracle::Rows rows;
      for (int t = 0; t < kWindowSteps; ++t) {
        const auto r = hs.row(t * batch + b);
        rows.push_back({r.begin(), r.end()});
      }
      const auto out = oracle::attention_encoder(rows, p);
      for (int t = 0; t < kWindowSteps; ++t)
        for (int i = 0; i < cfg.d_h; ++i)
          worst_attn = std::max(worst_attn, std::abs(out[t][i] - enc(t * batch + b, i)));
    }
  }
  const bool ok = worst_gru <= kOracleTol && worst_attn <= kOracleTol && worst_forward <= kOracleTol;
  return {ok, fmt("max abs diff over %d seeds: gru_cell %.3g, attention_encoder %.3g, full forward %.3g",
                  kOracleSeeds, worst_gru, worst_attn, worst_forward)};
}

Verdict confusion_metrics() {
  Rng rng(2024);
  int bad = 0;
  for (int i = 0; i < kConfusionTrials; ++i) {
    // Rebuild the counts from raw predictions so confusion() is covered too.
    std::vector<double> p;
    std::vector<int> y;
    const int n = 1 + static_cast<int>(rng.uniform(0, 200));
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (int k = 0; k < n; ++k) {
      const double prob = rng.uniform(0, 1);
      const int label = rng.uniform(0, 1) < 0.5 ? 1 : 0;
      p.push_back(prob);
      y.push_back(label);
      const bool pos = prob >= 0.5;
      (pos ? (label ? tp : fp) : (label ? fn : tn)) += 1;
    }
    const auto c = eval::confusion(p, y);
    const auto m = eval::metrics(c);
    bool ok = c == eval::ConfusionCounts{tp, tn, fp, fn};
    ok &= m.accuracy == static_cast<double>(tp + tn) / static_cast<double>(n);
    ok &= (tp + fp == 0) ? !m.precision : (m.precision && *m.precision == static_cast<double>(tp) / (tp + fp));
    ok &= (tp + fn == 0) ? !m.recall : (m.recall && *m.recall == static_cast<double>(tp) / (tp + fn));
    if (tp > 0) {
      const double harmonic = 2 * *m.precision * *m.recall / (*m.precision + *m.recall);
      ok &= m.f1 && std::abs(*m.f1 - harmonic) <= 1e-12 &&
            std::abs(*m.f1 - static_cast<double>(2 * tp) / (2 * tp + fp + fn)) <= 1e-12;
    }
    bad += !ok;
  }
  return {bad == 0, fmt("%d/%d random matrices consistent", kConfusionTrials - bad, kConfusionTrials)};
}

Verdict window_counts() {
  int bad = 0;
  for (int n = 0; n <= 40; ++n) {
    WindowAssembler wa;
    int windows = 0;
    for (int i = 0; i < n; ++i) windows += wa.push(StepFeatures::Constant(i), 1, i).has_value();
    bad += windows != std::max(0, n - 4);
  }
  const auto g = default_geometry();
  FeatureStage st(g);
  std::vector<std::int64_t> ends;
  for (std::int64_t f = 1; f <= 64; ++f) {
    FrameRecord r;
    r.frame_idx = f;
    r.ts_ms = frame_to_ms(f, g.fps);
    r.detections.push_back({{540, 275, 20, 50}, VruClass::Pedestrian, 0.9});
    for (const auto& w : st.process(r).windows) ends.push_back(w.end_frame_idx);
  }
  const bool e2e = ends == std::vector<std::int64_t>{50, 60};
  std::string got;
  for (auto e : ends) got += std::to_string(e) + " ";
  return {bad == 0 && e2e, fmt("%d step counts off; end-to-end window ends: %s", bad, got.c_str())};
}

Verdict training_accuracy() {
  const auto g = default_geometry();
  const auto t0 = Clock::now();
  const auto sc = generate_scenario(load_scenario_spec(config_path("scenario_clean.json")), g);
  const auto ds = eval::build_dataset(sc.frames, sc.truth, g);
  auto cfg = eval::load_train_config(config_path("train.json"));
  cfg.epochs = kCleanMaxEpochs;
  cfg.early_stop_patience = kNoisyEarlyStop;
  const auto clean = eval::train<float>(ds, eval::split_by_track(ds, cfg.seed), cfg);
  const double clean_s = seconds_since(t0);

  const auto& nm = noisy();
  const double clean_acc = clean.row.test.accuracy, noisy_acc = nm.full.row.test.accuracy;
  const bool ok = clean_acc >= kCleanMinAccuracy && clean.row.epochs_run <= kCleanMaxEpochs &&
                  clean_s < kCleanMaxSeconds && noisy_acc >= kNoisyMinAccuracy;
  return {ok, fmt("clean %zu VRUs: acc %.4f after %d epochs in %.0f s; noisy %zu windows: acc %.4f after %d epochs",
                  sc.truth.size(), clean_acc, clean.row.epochs_run, clean_s, nm.ds.items.size(), noisy_acc,
                  nm.full.row.epochs_run)};
}

Verdict ablation_gap() {
  const auto& nm = noisy();
  const double full = nm.full.row.test.accuracy, l = nm.l.test.accuracy, lmg = nm.lmg.test.accuracy;
  return {full - l >= kAblationMinGap && full >= lmg,
          fmt("acc L %.4f, L+M+G %.4f, L+M+G+P %.4f (gap %.4f)", l, lmg, full, full - l)};
}

Verdict throughput() {
  BenchOptions opt;
  opt.scaling = false;
  const auto r = bench(default_geometry(), noisy().full.params, opt);
  return {r.fps >= kMinFps && r.forward_p50_ms <= kMaxForwardP50Ms,
          fmt("%.1f fps over %lld frames with up to %d tracks; forward p50 %.3f ms, p99 %.3f ms", r.fps,
              static_cast<long long>(r.frames), r.max_concurrent, r.forward_p50_ms, r.forward_p99_ms)};
}

Verdict determinism() {
  const auto g = default_geometry();
  auto spec = load_scenario_spec(config_path("scenario_noisy.json"));
  spec.n_vrus = 30;
  const auto sc = generate_scenario(spec, g);
  const auto ds = eval::build_dataset(sc.frames, sc.truth, g);
  auto cfg = eval::load_train_config(config_path("train.json"));
  cfg.epochs = 2;
  const auto split = eval::split_by_track(ds, cfg.seed);
  const std::string w1 = nn::weights_to_json(eval::train<float>(ds, split, cfg).params);
  const std::string w2 = nn::weights_to_json(eval::train<float>(ds, split, cfg).params);
  const auto loaded = nn::weights_from_json<float>(w1);
  const bool round_trip = nn::weights_to_json(loaded) == w1;

  std::ostringstream stream;
  write_stream(stream, sc.frames);
  auto predict_file = [&] {
    std::istringstream in(stream.str());
    std::ostringstream out;
    run(g, loaded, {&in, &out});
    return out.str();
  };
  const std::string p1 = predict_file(), p2 = predict_file();
  return {w1 == w2 && round_trip && p1 == p2 && !p1.empty(),
          fmt("weights %s (%zu bytes), round trip %s, predictions %s (%zu bytes)", w1 == w2 ? "identical" : "differ",
              w1.size(), round_trip ? "identical" : "differs", p1 == p2 ? "identical" : "differ", p1.size())};
}

Verdict pose_freeze_and_lead_time() {
  const auto g = default_geometry();
  auto spec = load_scenario_spec(config_path("scenario_noisy.json"));
  spec.n_vrus = kLeadTimeVrus;
  spec.seed = kLeadTimeSeed;
  const auto sc = generate_scenario(spec, g);

  Pipeline pl(g, noisy().full.params);
  std::map<int, int> vru_of;  // track id -> VRU id
  std::map<int, I2VAlert> first_predicted;
  std::int64_t crossing_frames = 0, merged_in_crossing = 0;
  for (const auto& rec : sc.frames) {
    const auto r = pl.step(rec);
    for (const auto& a : r.alerts)
      if (!a.fast_path) first_predicted.try_emplace(a.track_id, a);
    for (const auto& t : pl.stage().tracker().tracks()) {
      if (t.zone.type == ZoneType::Crossing && t.last_seen == rec.frame_idx) {
        ++crossing_frames;
        merged_in_crossing += t.pose_frame == rec.frame_idx;
      }
      if (vru_of.count(t.track_id) || t.first_seen != rec.frame_idx) continue;
      double best = kTrackMatchGatePx;
      for (const auto& v : sc.truth) {
        const std::int64_t k = t.first_seen - v.spawn_frame;
        if (k < 0 || k >= static_cast<std::int64_t>(v.path.size())) continue;
        const double d = (v.path[static_cast<std::size_t>(k)] - t.history.front().center).norm();
        if (d <= best) best = d, vru_of[t.track_id] = v.id;
      }
    }
  }

  int correct = 0, positive = 0;
  for (const auto& [track, alert] : first_predicted) {
    auto it = vru_of.find(track);
    if (it == vru_of.end()) continue;
    const auto& truth = sc.truth[static_cast<std::size_t>(it->second)];
    if (alert.crosswalk != truth.label) continue;
    ++correct;
    positive += truth.cross_ts_ms - alert.ts_ms > 0;
  }
  const double share = correct ? static_cast<double>(positive) / correct : 0.0;
  const bool ok = merged_in_crossing == 0 && crossing_frames > 0 && correct > 0 && share >= kMinPositiveLeadShare;
  return {ok, fmt("pose merges in crossing zones: %lld of %lld track-frames; positive lead time for %d/%d correctly "
                  "alerted tracks (%.3f)",
                  static_cast<long long>(merged_in_crossing), static_cast<long long>(crossing_frames), positive,
                  correct, share)};
}

Verdict plateau_schedule() {
  nn::PlateauScheduler s;
  bool ok = s.lr() == 2.5e-4;
  ok &= s.step(0.5) == 2.5e-4;
  ok &= s.step(0.5) == 2.5e-4;
  const double halved = s.step(0.5);
  ok &= halved == 1.25e-4;
  double lowest = halved;
  for (int i = 0; i < 100; ++i) lowest = std::min(lowest, s.step(0.5));
  ok &= lowest == 1e-6 && s.lr() == 1e-6;
  return {ok, fmt("lr after two flat epochs %.3g, after 100 more %.3g", halved, lowest)};
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Verdict()>>> criteria{
      {1, gradient_check},   {2, oracle_forward}, {3, confusion_metrics},         {4, window_counts},
      {5, training_accuracy}, {6, ablation_gap},  {7, throughput},                {8, determinism},
      {9, pose_freeze_and_lead_time},            {10, plateau_schedule}};
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("criterion %2d: %s  %s [%.1f s]\n", id, v.pass ? "PASS" : "FAIL", v.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed;
}
