#include "crosswise/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace crosswise {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double prob_of(const nn::Prediction& p, Crosswalk c) { return c == Crosswalk::B ? p.p_b : 1.0 - p.p_b; }

unsigned bit(TrackState s) { return 1u << static_cast<unsigned>(s); }

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

}  // namespace

const char* to_string(TrackState s) {
  switch (s) {
    case TrackState::Idle: return "idle";
    case TrackState::Observing: return "observing";
    case TrackState::Predicted: return "predicted";
    case TrackState::Crossing: return "crossing";
    case TrackState::Done: return "done";
  }
  return "?";
}

std::string alert_to_json(const I2VAlert& a) {
  const char label[2] = {to_char(a.crosswalk), '\0'};
  json j = {{"schema", I2VAlert::kSchema},
            {"msg_type", I2VAlert::kMsgType},
            {"track_id", a.track_id},
            {"crosswalk", label},
            {"prob", a.prob},
            {"ts_ms", a.ts_ms},
            {"frame_idx", a.frame_idx},
            {"vru_class", to_string(a.vru_class)}};
  return j.dump();
}

std::string prediction_to_json(const nn::Prediction& p) {
  const char label[2] = {to_char(p.label), '\0'};
  json j = {{"track", p.track_id}, {"frame", p.end_frame_idx}, {"p_b", p.p_b}, {"label", label}};
  return j.dump();
}

Pipeline::Pipeline(const IntersectionGeometry& g, nn::ModelParams<float> weights)
    : geometry_(g), weights_(std::move(weights)), stage_(geometry_) {
  geometry_.validate();
  nn::check_layout(weights_);
}

TrackState Pipeline::state(int track_id) const {
  auto it = states_.find(track_id);
  return it == states_.end() ? TrackState::Idle : it->second;
}

std::size_t Pipeline::count_in(TrackState s) const {
  return static_cast<std::size_t>(
      std::count_if(states_.begin(), states_.end(), [&](const auto& kv) { return kv.second == s; }));
}

std::size_t Pipeline::count_reached(TrackState s) const {
  return static_cast<std::size_t>(
      std::count_if(reached_.begin(), reached_.end(), [&](const auto& kv) { return (kv.second & bit(s)) != 0; }));
}

void Pipeline::transition(int id, TrackState to, std::int64_t frame, StepResult& out) {
  TrackState& cur = states_[id];
  if (cur == to) return;
  out.deltas.push_back({id, cur, to, frame});
  cur = to;
  reached_[id] |= bit(to);
}

void Pipeline::maybe_alert(const Track& t, Crosswalk label, double prob, bool fast, const FrameRecord& rec,
                           StepResult& out) {
  if (!alerted_.insert({t.track_id, label}).second) return;
  I2VAlert a;
  a.track_id = t.track_id;
  a.crosswalk = label;
  a.prob = prob;
  a.ts_ms = rec.ts_ms;
  a.frame_idx = rec.frame_idx;
  a.vru_class = t.cls;
  a.fast_path = fast;
  out.alerts.push_back(a);
}

StepResult Pipeline::step(const FrameRecord& rec) {
  if (last_frame_ && rec.frame_idx <= *last_frame_)
    throw std::invalid_argument("out-of-order frame " + std::to_string(rec.frame_idx) + " after " +
                                std::to_string(*last_frame_));
  last_frame_ = rec.frame_idx;
  const std::int64_t f = rec.frame_idx;

  StepResult out;
  FeatureStage::Output so = stage_.process(rec);
  for (const Track& t : so.retired) {
    transition(t.track_id, TrackState::Done, f, out);
    latest_.erase(t.track_id);
  }

  for (const Track& t : stage_.tracker().tracks()) {
    if (!states_.count(t.track_id)) {
      states_[t.track_id] = TrackState::Idle;
      reached_[t.track_id] = bit(TrackState::Idle);
    }
    const TrackState cur = states_[t.track_id];
    if (cur == TrackState::Crossing) continue;
    if (stage_.crossed(t.track_id)) {
      transition(t.track_id, TrackState::Crossing, f, out);
      continue;
    }
    const bool pre_crossing = t.zone.type == ZoneType::Waiting || t.zone.type == ZoneType::StartCrossing;
    if (cur == TrackState::Idle && t.last_seen == f && pre_crossing)
      transition(t.track_id, TrackState::Observing, f, out);
  }

  if (!so.windows.empty()) {
    out.predictions = nn::predict<float>(so.windows, weights_);
    for (const auto& p : out.predictions) {
      latest_[p.track_id] = p;
      transition(p.track_id, TrackState::Predicted, f, out);
      if (std::abs(p.p_b - 0.5) >= kAlertMargin)
        maybe_alert(*stage_.tracker().find(p.track_id), p.label, prob_of(p, p.label), false, rec, out);
    }
  }
  out.windows = std::move(so.windows);

  // Presence in a start-crossing zone implies imminent crossing of that
  // zone's crosswalk, prediction or not.
  for (const Track& t : stage_.tracker().tracks()) {
    if (t.last_seen != f || t.zone.type != ZoneType::StartCrossing) continue;
    if (states_[t.track_id] == TrackState::Crossing) continue;
    const auto label = geometry_.label_of(t.zone);
    if (!label) continue;
    auto it = latest_.find(t.track_id);
    const double prob = it == latest_.end() ? 1.0 : prob_of(it->second, *label);
    maybe_alert(t, *label, prob, true, rec, out);
  }
  return out;
}

std::string RunSummary::to_json() const {
  json j = {{"frames", frames},
            {"tracks", tracks},
            {"tracks_observed", tracks_observed},
            {"tracks_predicted", tracks_predicted},
            {"tracks_crossing", tracks_crossing},
            {"windows", windows},
            {"predictions", predictions},
            {"alerts", alerts},
            {"alerts_undelivered", alerts_undelivered},
            {"mean_frame_latency_ms", mean_frame_latency_ms},
            {"max_frame_latency_ms", max_frame_latency_ms}};
  return j.dump(2);
}

RunSummary run(const IntersectionGeometry& g, const nn::ModelParams<float>& weights, const RunIo& io) {
  if (!io.in || !io.predictions) throw std::invalid_argument("run: input and prediction streams are required");
  Pipeline p(g, weights);
  RecordReader reader(*io.in);
  RunSummary s;
  double total_ms = 0.0;
  FrameRecord rec;
  while (reader.next(rec)) {
    const auto t0 = Clock::now();
    StepResult r = p.step(rec);
    const double ms = ms_since(t0);
    total_ms += ms;
    s.max_frame_latency_ms = std::max(s.max_frame_latency_ms, ms);
    ++s.frames;
    for (const auto& pr : r.predictions) *io.predictions << prediction_to_json(pr) << '\n';
    if (io.features)
      for (const auto& w : r.windows) *io.features << window_to_json(w) << '\n';
    for (const auto& a : r.alerts) {
      if (io.alerts && !io.alerts->send(alert_to_json(a))) ++s.alerts_undelivered;
      if (io.alert_log) io.alert_log->push_back(a);
    }
    s.windows += r.windows.size();
    s.predictions += r.predictions.size();
    s.alerts += r.alerts.size();
  }
  io.predictions->flush();
  s.tracks = p.tracks_seen();
  s.tracks_observed = p.count_reached(TrackState::Observing);
  s.tracks_predicted = p.count_reached(TrackState::Predicted);
  s.tracks_crossing = p.count_reached(TrackState::Crossing);
  s.mean_frame_latency_ms = s.frames > 0 ? total_ms / static_cast<double>(s.frames) : 0.0;
  return s;
}

std::string BenchReport::to_json() const {
  json curve = json::array();
  for (const auto& pt : scaling) curve.push_back({{"max_tracks", pt.max_tracks}, {"fps", pt.fps}});
  json j = {{"frames", frames},
            {"max_concurrent", max_concurrent},
            {"fps", fps},
            {"forward_p50_ms", forward_p50_ms},
            {"forward_p99_ms", forward_p99_ms},
            {"forward_samples", forward_samples},
            {"scaling", std::move(curve)},
            {"reference", {{"fps", kReferenceFps}, {"forward_ms", kReferenceForwardMs},
                           {"note", "published figures, different hardware"}}}};
  return j.dump(2);
}

Scenario bench_scenario(const IntersectionGeometry& g, std::int64_t frames, int max_tracks, std::uint64_t seed) {
  if (frames <= 0 || max_tracks <= 0) throw std::invalid_argument("bench: frames and max_tracks must be positive");
  ScenarioSpec spec;
  spec.class_mix = dataset_class_mix();
  spec.keypoint_sigma = 2.0;
  spec.dropout = 0.05;
  spec.seed = seed;
  spec.max_concurrent = max_tracks;
  // A VRU occupies the scene for roughly 10 s.
  spec.n_vrus = static_cast<int>(frames * max_tracks / (10 * g.fps)) + max_tracks + 1;
  for (;;) {
    Scenario sc = generate_scenario(spec, g);
    if (static_cast<std::int64_t>(sc.frames.size()) >= frames) {
      sc.frames.resize(static_cast<std::size_t>(frames));
      return sc;
    }
    spec.n_vrus *= 2;
  }
}

namespace {

struct Timed {
  double fps = 0;
  std::vector<FeatureWindow> windows;
};

Timed time_stream(const IntersectionGeometry& g, const nn::ModelParams<float>& w, const std::vector<FrameRecord>& frames) {
  Pipeline p(g, w);
  Timed t;
  const auto t0 = Clock::now();
  for (const auto& rec : frames) {
    auto r = p.step(rec);
    for (auto& win : r.windows) t.windows.push_back(std::move(win));
  }
  const double s = ms_since(t0) / 1000.0;
  t.fps = s > 0 ? static_cast<double>(frames.size()) / s : 0.0;
  return t;
}

}  // namespace

BenchReport bench(const IntersectionGeometry& g, const nn::ModelParams<float>& weights, const BenchOptions& opt) {
  BenchReport rep;
  const Scenario sc = bench_scenario(g, opt.frames, opt.max_tracks, opt.seed);
  rep.frames = static_cast<std::int64_t>(sc.frames.size());
  rep.max_concurrent = opt.max_tracks;

  // Warm-up: touch every weight once and fault in allocations.
  {
    FeatureWindow w;
    for (int i = 0; i < 20; ++i) (void)nn::predict<float>(w, weights);
  }
  Timed main = time_stream(g, weights, sc.frames);
  rep.fps = main.fps;

  if (main.windows.empty()) main.windows.emplace_back();
  std::vector<double> lat;
  lat.reserve(static_cast<std::size_t>(opt.forward_samples));
  for (int i = 0; i < opt.forward_samples; ++i) {
    const auto& w = main.windows[static_cast<std::size_t>(i) % main.windows.size()];
    const auto t0 = Clock::now();
    const auto pr = nn::predict<float>(w, weights);
    lat.push_back(ms_since(t0));
    if (!std::isfinite(pr.p_b)) throw std::runtime_error("bench: non-finite prediction");
  }
  rep.forward_samples = opt.forward_samples;
  rep.forward_p50_ms = percentile(lat, 0.50);
  rep.forward_p99_ms = percentile(lat, 0.99);

  if (opt.scaling) {
    const std::int64_t n = std::min<std::int64_t>(opt.frames, 1000);
    for (int k = 1; k <= opt.max_tracks; ++k) {
      const Scenario s = bench_scenario(g, n, k, opt.seed + static_cast<std::uint64_t>(k));
      rep.scaling.push_back({k, time_stream(g, weights, s.frames).fps});
    }
  }
  return rep;
}

}  // namespace crosswise
