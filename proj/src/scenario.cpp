#include "crosswise/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "crosswise/rng.hpp"

namespace crosswise {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

struct ClassShape {
  double width_m, height_m, speed_mps;
};

// Bounding-box size and approach speed per VRU class.
constexpr ClassShape kShapes[kNumVruClasses] = {
    {0.6, 1.7, 1.3},  // pedestrian
    {0.8, 1.8, 2.0},  // cyclist
    {0.7, 1.7, 2.2},  // scooter
    {0.7, 1.8, 2.6},  // e_scooter
    {0.9, 1.3, 1.0},  // e_wheelchair
};

double wrap_angle(double a) { return std::remainder(a, 2.0 * kPi); }

double bearing(const Point& from, const Point& to) {
  const Point d = to - from;
  return std::atan2(d.y(), d.x());
}

Point unit(double angle) { return {std::cos(angle), std::sin(angle)}; }

/// Largest-remainder apportionment of n items over the given shares.
std::vector<int> apportion(int n, const std::array<double, kNumVruClasses>& shares) {
  std::vector<int> counts(kNumVruClasses);
  std::vector<std::pair<double, int>> rem;
  int used = 0;
  for (int i = 0; i < kNumVruClasses; ++i) {
    const double exact = shares[i] * n;
    counts[i] = static_cast<int>(std::floor(exact));
    used += counts[i];
    rem.emplace_back(exact - counts[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (int k = 0; used < n; ++k, ++used) ++counts[rem[k % rem.size()].second];
  return counts;
}

struct PoseState {
  Point center;
  double body = 0.0;  // facing direction of the torso, image-plane radians
  double face = 0.0;  // direction from shoulder midpoint to nose
};

PoseDetection make_pose(const PoseState& s, double w, double h) {
  PoseDetection pose;
  pose.bbox = {s.center.x() - 0.5 * w, s.center.y() - 0.5 * h, w, h};
  const double top = pose.bbox.y;
  const double cx = s.center.x();
  const Point mid{cx, top + 0.25 * h};
  const Point side{std::sin(s.body), -std::cos(s.body)};
  const double half_span = 0.175 * w;
  const Point fwd = unit(s.face);
  const Point face_side{std::sin(s.face), -std::cos(s.face)};

  auto set = [&](int k, const Point& p) { pose.keypoints[k] = {p.x(), p.y(), 1.0}; };
  const Point nose = mid + 0.13 * h * fwd;
  set(kNose, nose);
  set(kLeftEye, mid + 0.15 * h * fwd + 0.05 * w * face_side);
  set(kRightEye, mid + 0.15 * h * fwd - 0.05 * w * face_side);
  set(kLeftEar, mid + 0.10 * h * fwd + 0.10 * w * face_side);
  set(kRightEar, mid + 0.10 * h * fwd - 0.10 * w * face_side);
  set(kLeftShoulder, mid + half_span * side);
  set(kRightShoulder, mid - half_span * side);
  const double lx = cx - 0.22 * w, rx = cx + 0.22 * w;
  set(kLeftElbow, {lx, top + 0.40 * h});
  set(kRightElbow, {rx, top + 0.40 * h});
  set(kLeftWrist, {lx, top + 0.52 * h});
  set(kRightWrist, {rx, top + 0.52 * h});
  const double lh = cx - 0.12 * w, rh = cx + 0.12 * w;
  set(kLeftHip, {lh, top + 0.55 * h});
  set(kRightHip, {rh, top + 0.55 * h});
  set(kLeftKnee, {lh, top + 0.75 * h});
  set(kRightKnee, {rh, top + 0.75 * h});
  set(kLeftAnkle, {lh, top + 0.95 * h});
  set(kRightAnkle, {rh, top + 0.95 * h});
  return pose;
}

struct Actor {
  VruTruth truth;
  std::vector<PoseState> states;
  double w = 0, h = 0;
};

/// Dwell with idle sway while turning toward the labeled entry, then walk
/// through the entry into the crosswalk and vanish one second later.
Actor build_actor(int id, VruClass cls, Crosswalk label, std::int64_t spawn, const Point& anchor,
                  const IntersectionGeometry& g, double ppm, Rng& rng, const ScenarioSpec& spec) {
  Actor a;
  a.truth.id = id;
  a.truth.cls = cls;
  a.truth.label = label;
  a.truth.spawn_frame = spawn;
  a.truth.spawn_xy = anchor;
  const ClassShape& shape = kShapes[static_cast<int>(cls)];
  a.w = shape.width_m * ppm;
  a.h = shape.height_m * ppm;

  const Point entry = g.entry(label);
  const double sep = std::abs(wrap_angle(bearing(anchor, g.entry_a) - bearing(anchor, g.entry_b)));
  const int dwell = static_cast<int>(std::lround(rng.uniform(spec.min_dwell_s, spec.max_dwell_s) * g.fps));
  const double body_off0 = rng.uniform(-0.3, 0.3) * sep;
  const double face_off0 = rng.uniform(-0.2, 0.2) * sep;
  const double sway_amp = 0.05 * sep;
  const double sway_period = rng.uniform(2.0, 4.0) * g.fps;
  const double sway_phase = rng.uniform(0.0, 2.0 * kPi);
  const double px_period = rng.uniform(3.0, 5.0) * g.fps, py_period = rng.uniform(3.0, 5.0) * g.fps;
  const double px_phase = rng.uniform(0.0, 2.0 * kPi), py_phase = rng.uniform(0.0, 2.0 * kPi);

  for (int k = 0; k < dwell; ++k) {
    const Point p = anchor + Point{2.0 * std::sin(2 * kPi * k / px_period + px_phase),
                                   2.0 * std::sin(2 * kPi * k / py_period + py_phase)};
    const double turn = std::clamp((k - 0.6 * dwell) / (0.4 * dwell), 0.0, 1.0);
    const double look = std::clamp((k - 0.4 * dwell) / (0.6 * dwell), 0.0, 1.0);
    const double sway = sway_amp * std::sin(2 * kPi * k / sway_period + sway_phase);
    const double body = bearing(p, entry) + (body_off0 + sway) * (1.0 - turn);
    const double face = body + face_off0 * (1.0 - look);
    a.states.push_back({p, wrap_angle(body), wrap_angle(face)});
  }

  const LabeledPolygon* zone = nullptr;
  for (const auto& z : g.crossing_zones)
    if (z.label == label) {
      zone = &z;
      break;
    }
  const Point deep = polygon_centroid(zone->polygon);
  const double speed = shape.speed_mps * ppm / g.fps;
  std::vector<Point> waypoints{entry, deep};
  Point pos = a.states.back().center;
  std::size_t wp = 0;
  int frames_in_crossing = 0;
  const std::size_t max_steps = 100000;
  for (std::size_t step = 0; step < max_steps; ++step) {
    double budget = speed;
    Point dir{0, 0};
    while (budget > 0.0 && wp < waypoints.size()) {
      const Point d = waypoints[wp] - pos;
      const double dist = d.norm();
      if (dist <= budget) {
        pos = waypoints[wp];
        budget -= dist;
        if (dist > 0) dir = d / dist;
        ++wp;
      } else {
        dir = d / dist;
        pos += budget * dir;
        budget = 0.0;
      }
    }
    if (wp >= waypoints.size()) dir = (deep - entry).normalized();
    const double heading = std::atan2(dir.y(), dir.x());
    a.states.push_back({pos, heading, heading});
    const ZoneKind zk = classify_point(pos, g);
    if (zk.type == ZoneType::Crossing && g.label_of(zk) == label) {
      if (frames_in_crossing == 0)
        a.truth.cross_frame = spawn + static_cast<std::int64_t>(a.states.size()) - 1;
      if (++frames_in_crossing >= g.fps) break;
    }
    if (wp >= waypoints.size() && frames_in_crossing == 0)
      throw std::logic_error("simulated walk ended outside the labeled crosswalk");
  }
  a.truth.end_frame = spawn + static_cast<std::int64_t>(a.states.size()) - 1;
  a.truth.cross_ts_ms = frame_to_ms(a.truth.cross_frame, g.fps);
  a.truth.path.reserve(a.states.size());
  for (const auto& s : a.states) a.truth.path.push_back(s.center);
  return a;
}

}  // namespace

const char* to_string(Condition c) {
  switch (c) {
    case Condition::Day: return "day";
    case Condition::Night: return "night";
    case Condition::Rain: return "rain";
  }
  return "?";
}

Condition condition_from_string(const std::string& s) {
  if (s == "day") return Condition::Day;
  if (s == "night") return Condition::Night;
  if (s == "rain") return Condition::Rain;
  throw std::invalid_argument("unknown condition \"" + s + "\"");
}

double ScenarioSpec::effective_sigma() const {
  switch (condition) {
    case Condition::Night: return keypoint_sigma * 2.0;
    case Condition::Rain: return keypoint_sigma * 1.5;
    default: return keypoint_sigma;
  }
}

double ScenarioSpec::effective_dropout() const {
  return condition == Condition::Day ? dropout : std::min(dropout + 0.05, 0.999);
}

void ScenarioSpec::validate() const {
  if (n_vrus <= 0) throw std::invalid_argument("n_vrus must be positive");
  double sum = 0.0;
  for (double p : class_mix) {
    if (p < 0.0) throw std::invalid_argument("class mix entries must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("class mix must sum to 1");
  if (!labels.empty() && static_cast<int>(labels.size()) != n_vrus)
    throw std::invalid_argument("labels must have n_vrus entries");
  if (keypoint_sigma < 0.0) throw std::invalid_argument("keypoint sigma must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0,1)");
  if (max_concurrent <= 0) throw std::invalid_argument("max_concurrent must be positive");
  if (!(min_dwell_s > 0.0) || max_dwell_s < min_dwell_s)
    throw std::invalid_argument("dwell range invalid");
}

std::array<double, kNumVruClasses> dataset_class_mix() {
  return {0.596, 0.156, 0.156, 0.046, 0.046};
}

std::int64_t frame_to_ms(std::int64_t frame_idx, int fps) { return frame_idx * 1000 / fps; }

Scenario generate_scenario(const ScenarioSpec& spec, const IntersectionGeometry& g) {
  spec.validate();
  g.validate();
  const double ppm = g.px_per_meter.value_or(30.0);
  Rng rng(spec.seed);

  std::vector<Crosswalk> labels = spec.labels;
  if (labels.empty()) {
    for (int i = 0; i < spec.n_vrus; ++i) labels.push_back(i < spec.n_vrus / 2 ? Crosswalk::A : Crosswalk::B);
    rng.shuffle(labels.begin(), labels.end());
  }
  std::vector<VruClass> classes;
  const auto counts = apportion(spec.n_vrus, spec.class_mix);
  for (int c = 0; c < kNumVruClasses; ++c)
    for (int k = 0; k < counts[c]; ++k) classes.push_back(static_cast<VruClass>(c));
  rng.shuffle(classes.begin(), classes.end());

  const Polygon& wait = g.waiting_areas.front().polygon;
  double x0 = wait[0].x(), x1 = x0, y0 = wait[0].y(), y1 = y0;
  for (const auto& p : wait) {
    x0 = std::min(x0, p.x()), x1 = std::max(x1, p.x());
    y0 = std::min(y0, p.y()), y1 = std::max(y1, p.y());
  }
  const double margin = 0.8 * ppm;
  const double min_sep = 1.2 * ppm;

  std::vector<Actor> actors;
  std::int64_t next_spawn = 0;
  for (int i = 0; i < spec.n_vrus; ++i) {
    // Respect the concurrency cap: wait until enough earlier actors ended.
    std::vector<std::int64_t> ends;
    for (const auto& a : actors)
      if (a.truth.end_frame >= next_spawn) ends.push_back(a.truth.end_frame);
    if (static_cast<int>(ends.size()) >= spec.max_concurrent) {
      std::sort(ends.begin(), ends.end());
      next_spawn = ends[ends.size() - spec.max_concurrent] + 1;
    }
    const std::int64_t spawn = next_spawn;
    const Crosswalk label = labels[i];

    Point anchor{0, 0};
    for (int attempt = 0; attempt < 50; ++attempt) {
      anchor = {rng.uniform(x0 + margin, x1 - margin), rng.uniform(y0 + margin, y1 - margin)};
      if (rng.bernoulli(0.5)) anchor += rng.uniform(0.0, 0.4) * (g.entry(label) - anchor);
      if (!point_in_polygon(anchor, wait)) continue;
      bool clear = true;
      for (const auto& a : actors) {
        const std::int64_t k = spawn - a.truth.spawn_frame;
        if (k < 0 || k >= static_cast<std::int64_t>(a.states.size())) continue;
        if ((a.states[k].center - anchor).norm() < min_sep ||
            (a.truth.spawn_xy - anchor).norm() < min_sep) {
          clear = false;
          break;
        }
      }
      if (clear) break;
    }
    actors.push_back(build_actor(i, classes[i], label, spawn, anchor, g, ppm, rng, spec));
    next_spawn = spawn + static_cast<std::int64_t>(std::lround(rng.uniform(0.5, 1.5) * g.fps));
  }

  std::int64_t last = 0;
  for (const auto& a : actors) last = std::max(last, a.truth.end_frame);

  const double sigma = spec.effective_sigma();
  const double drop = spec.effective_dropout();
  Scenario sc;
  sc.frames.resize(static_cast<std::size_t>(last + 1));
  for (std::int64_t f = 0; f <= last; ++f) {
    sc.frames[f].frame_idx = f;
    sc.frames[f].ts_ms = frame_to_ms(f, g.fps);
  }
  for (std::int64_t f = 0; f <= last; ++f) {
    FrameRecord& rec = sc.frames[f];
    for (const auto& a : actors) {
      const std::int64_t k = f - a.truth.spawn_frame;
      if (k < 0 || k >= static_cast<std::int64_t>(a.states.size())) continue;
      const PoseState& s = a.states[k];
      const Rect bbox{s.center.x() - 0.5 * a.w, s.center.y() - 0.5 * a.h, a.w, a.h};
      const double conf = rng.uniform(0.55, 0.95);
      if (!rng.bernoulli(drop)) rec.detections.push_back({bbox, a.truth.cls, conf});

      const bool pose_dropped = rng.bernoulli(drop);
      const Point crop_center = full_to_crop(s.center, g);
      if (pose_dropped || crop_center.x() < 0 || crop_center.y() < 0 ||
          crop_center.x() > g.crop_rect.w || crop_center.y() > g.crop_rect.h)
        continue;
      PoseDetection pose = make_pose(s, a.w, a.h);
      for (auto& kp : pose.keypoints) {
        kp.x += sigma * rng.normal();
        kp.y += sigma * rng.normal();
        kp.conf = rng.uniform(0.6, 1.0);
      }
      rec.crop_poses.push_back(pose.translated({-g.crop_rect.x, -g.crop_rect.y}));
    }
  }
  for (auto& a : actors) sc.truth.push_back(std::move(a.truth));
  return sc;
}

ScenarioSpec parse_scenario_spec(const std::string& json_text) {
  ScenarioSpec s;
  try {
    const json j = json::parse(json_text);
    s.n_vrus = j.at("n_vrus").get<int>();
    if (j.contains("class_mix")) {
      const auto& m = j.at("class_mix");
      if (m.is_string() && m.get<std::string>() == "dataset") {
        s.class_mix = dataset_class_mix();
      } else {
        s.class_mix.fill(0.0);
        for (auto it = m.begin(); it != m.end(); ++it)
          s.class_mix[static_cast<int>(vru_class_from_string(it.key()))] = it.value().get<double>();
      }
    }
    if (j.contains("labels"))
      for (const auto& l : j.at("labels")) s.labels.push_back(crosswalk_from_string(l.get<std::string>()));
    s.keypoint_sigma = j.value("sigma", s.keypoint_sigma);
    s.dropout = j.value("dropout", s.dropout);
    if (j.contains("condition")) s.condition = condition_from_string(j.at("condition").get<std::string>());
    s.seed = j.value("seed", s.seed);
    s.max_concurrent = j.value("max_concurrent", s.max_concurrent);
    s.min_dwell_s = j.value("min_dwell_s", s.min_dwell_s);
    s.max_dwell_s = j.value("max_dwell_s", s.max_dwell_s);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scenario spec: ") + e.what());
  }
  s.validate();
  return s;
}

ScenarioSpec load_scenario_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario spec " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario_spec(ss.str());
}

std::string truth_to_json(const std::vector<VruTruth>& truth, int fps) {
  json arr = json::array();
  for (const auto& t : truth)
    arr.push_back({{"id", t.id},
                   {"label", std::string(1, to_char(t.label))},
                   {"class", to_string(t.cls)},
                   {"spawn_frame", t.spawn_frame},
                   {"spawn_xy", {t.spawn_xy.x(), t.spawn_xy.y()}},
                   {"cross_frame", t.cross_frame},
                   {"cross_ts_ms", t.cross_ts_ms},
                   {"end_frame", t.end_frame}});
  json j;
  j["fps"] = fps;
  j["vrus"] = std::move(arr);
  return j.dump(1);
}

std::vector<VruTruth> parse_truth(const std::string& json_text) {
  std::vector<VruTruth> out;
  try {
    const json j = json::parse(json_text);
    for (const auto& v : j.at("vrus")) {
      VruTruth t;
      t.id = v.at("id").get<int>();
      t.label = crosswalk_from_string(v.at("label").get<std::string>());
      t.cls = vru_class_from_string(v.at("class").get<std::string>());
      t.spawn_frame = v.at("spawn_frame").get<std::int64_t>();
      t.spawn_xy = {v.at("spawn_xy").at(0).get<double>(), v.at("spawn_xy").at(1).get<double>()};
      t.cross_frame = v.at("cross_frame").get<std::int64_t>();
      t.cross_ts_ms = v.at("cross_ts_ms").get<std::int64_t>();
      t.end_frame = v.at("end_frame").get<std::int64_t>();
      out.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("labels file: ") + e.what());
  }
  return out;
}

std::vector<VruTruth> load_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open labels file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_truth(ss.str());
}

}  // namespace crosswise
