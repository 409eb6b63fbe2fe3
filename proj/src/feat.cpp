#include "crosswise/feat.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace crosswise {

namespace {

constexpr double kMinDisplacementPx = 1.0;
constexpr double kNearZero = 1e-9;

constexpr const char* kLayoutDescription =
    "crosswise-features/1;d=16;T=5;step=10;"
    "0:center_x/W;1:center_y/H;2:zone_waiting;3:zone_start;4:zone_crossing;"
    "5:speed(m/s|px/s/diag);6:heading_sin;7:heading_cos;"
    "8:dist_entry_a/diag;9:dist_entry_b/diag;10:waiting_area/frame_area;"
    "11:body_sin;12:body_cos;13:face_sin;14:face_cos;15:shoulder/bbox_h";

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool usable(const Keypoint& k) { return k.conf >= kKeypointConfGate; }

/// Mean of (sin, cos) pairs re-projected to the unit circle, (0,0) when the
/// mean vector vanishes.
std::pair<double, double> mean_direction(double sum_sin, double sum_cos) {
  const double n = std::hypot(sum_sin, sum_cos);
  if (n < kNearZero) return {0.0, 0.0};
  return {sum_sin / n, sum_cos / n};
}

int zone_category(const StepFeatures& v) {
  if (v[slot::kZoneCrossing] > 0.5) return 3;
  if (v[slot::kZoneStart] > 0.5) return 2;
  if (v[slot::kZoneWaiting] > 0.5) return 1;
  return 0;
}

}  // namespace

const std::string& feature_layout_hash() {
  static const std::string hash = fnv1a_hex(kLayoutDescription);
  return hash;
}

MotionFeatures motion_features(const std::deque<TrackSample>& history, const IntersectionGeometry& g) {
  MotionFeatures m;
  if (history.size() < 2) return m;
  const TrackSample& last = history.back();
  const TrackSample* ref = &history.front();
  for (const auto& s : history)
    if (s.frame_idx >= last.frame_idx - kFramesPerStep) {
      ref = &s;
      break;
    }
  const double frames = static_cast<double>(last.frame_idx - ref->frame_idx);
  if (frames <= 0) return m;
  const Point d = last.center - ref->center;
  const double px_per_s = d.norm() * g.fps / frames;
  m.speed = g.px_per_meter ? px_per_s / *g.px_per_meter : px_per_s / g.frame_diagonal();
  if (d.norm() >= kMinDisplacementPx) {
    const double theta = std::atan2(d.y(), d.x());
    m.heading_sin = std::sin(theta);
    m.heading_cos = std::cos(theta);
  }
  return m;
}

PoseFeatures pose_features(const PoseDetection& pose) {
  PoseFeatures f;
  const Keypoint& ls = pose.keypoints[kLeftShoulder];
  const Keypoint& rs = pose.keypoints[kRightShoulder];
  if (!usable(ls) || !usable(rs)) return f;
  f.valid = true;
  const Point seg = rs.pos() - ls.pos();
  f.shoulder_dist = seg.norm();
  const Keypoint& nose = pose.keypoints[kNose];
  if (!usable(nose)) return f;
  const Point mid = 0.5 * (ls.pos() + rs.pos());
  const Point to_nose = nose.pos() - mid;
  if (to_nose.norm() < kNearZero) return f;

  Point normal{-seg.y(), seg.x()};
  const double side = normal.dot(to_nose);
  if (f.shoulder_dist >= kNearZero && std::abs(side) > kNearZero) {
    if (side < 0) normal = -normal;
    const double body = std::atan2(normal.y(), normal.x());
    f.body_sin = std::sin(body);
    f.body_cos = std::cos(body);
  }
  const double face = std::atan2(to_nose.y(), to_nose.x());
  f.face_sin = std::sin(face);
  f.face_cos = std::cos(face);
  return f;
}

GeometricFeatures geometric_features(const Point& center, const IntersectionGeometry& g) {
  GeometricFeatures f;
  const double diag = g.frame_diagonal();
  f.dist_a = (center - g.entry_a).norm() / diag;
  f.dist_b = (center - g.entry_b).norm() / diag;
  const LabeledPolygon* area = nullptr;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& w : g.waiting_areas) {
    if (point_in_polygon(center, w.polygon)) {
      area = &w;
      break;
    }
    const double d = (polygon_centroid(w.polygon) - center).norm();
    if (d < best) best = d, area = &w;
  }
  f.compactness = polygon_area(area->polygon) / (g.frame_width * g.frame_height);
  return f;
}

FrameFeatures frame_features(const Track& t, const IntersectionGeometry& g, bool pose_this_frame) {
  FrameFeatures out;
  StepFeatures& v = out.v;
  const Point c = t.latest().center;
  v[slot::kCenterX] = c.x() / g.frame_width;
  v[slot::kCenterY] = c.y() / g.frame_height;
  switch (t.zone.type) {
    case ZoneType::Waiting: v[slot::kZoneWaiting] = 1; break;
    case ZoneType::StartCrossing: v[slot::kZoneStart] = 1; break;
    case ZoneType::Crossing: v[slot::kZoneCrossing] = 1; break;
    default: break;
  }
  const MotionFeatures m = motion_features(t.history, g);
  v[slot::kSpeed] = m.speed;
  v[slot::kHeadingSin] = m.heading_sin;
  v[slot::kHeadingCos] = m.heading_cos;
  const GeometricFeatures geo = geometric_features(c, g);
  v[slot::kDistA] = geo.dist_a;
  v[slot::kDistB] = geo.dist_b;
  v[slot::kCompactness] = geo.compactness;
  if (pose_this_frame && t.pose_latest) {
    const PoseFeatures p = pose_features(*t.pose_latest);
    if (p.valid) {
      out.has_pose = true;
      v[slot::kBodySin] = p.body_sin;
      v[slot::kBodyCos] = p.body_cos;
      v[slot::kFaceSin] = p.face_sin;
      v[slot::kFaceCos] = p.face_cos;
      v[slot::kShoulder] = p.shoulder_dist / t.pose_latest->bbox.h;
    }
  }
  return out;
}

StepFeatures temporal_filter(std::span<const FrameFeatures> frames) {
  if (frames.empty()) throw std::invalid_argument("temporal_filter needs at least one frame");
  StepFeatures out = StepFeatures::Zero();
  std::array<int, 4> zone_counts{};
  double hs = 0, hc = 0, bs = 0, bc = 0, fs = 0, fc = 0, shoulder = 0;
  int n_pose = 0;
  for (const auto& f : frames) {
    for (int s : {slot::kCenterX, slot::kCenterY, slot::kSpeed, slot::kDistA, slot::kDistB,
                  slot::kCompactness})
      out[s] += f.v[s];
    ++zone_counts[zone_category(f.v)];
    hs += f.v[slot::kHeadingSin];
    hc += f.v[slot::kHeadingCos];
    if (f.has_pose) {
      ++n_pose;
      bs += f.v[slot::kBodySin];
      bc += f.v[slot::kBodyCos];
      fs += f.v[slot::kFaceSin];
      fc += f.v[slot::kFaceCos];
      shoulder += f.v[slot::kShoulder];
    }
  }
  const double n = static_cast<double>(frames.size());
  for (int s : {slot::kCenterX, slot::kCenterY, slot::kSpeed, slot::kDistA, slot::kDistB,
                slot::kCompactness})
    out[s] /= n;

  int mode = 0;
  for (int k = 1; k < 4; ++k)
    if (zone_counts[k] >= zone_counts[mode]) mode = k;
  if (mode > 0) out[slot::kZoneWaiting + mode - 1] = 1.0;

  std::tie(out[slot::kHeadingSin], out[slot::kHeadingCos]) = mean_direction(hs, hc);
  if (n_pose > 0) {
    std::tie(out[slot::kBodySin], out[slot::kBodyCos]) = mean_direction(bs, bc);
    std::tie(out[slot::kFaceSin], out[slot::kFaceCos]) = mean_direction(fs, fc);
    out[slot::kShoulder] = shoulder / n_pose;
  }
  return out;
}

std::optional<FeatureWindow> WindowAssembler::push(const StepFeatures& step, int track_id,
                                                   std::int64_t frame_idx) {
  if (stopped_) return std::nullopt;
  ++seen_;
  steps_.push_back(step);
  if (steps_.size() > kWindowSteps) steps_.pop_front();
  if (steps_.size() < kWindowSteps) return std::nullopt;
  FeatureWindow w;
  for (int r = 0; r < kWindowSteps; ++r) w.x.row(r) = steps_[r].transpose();
  w.track_id = track_id;
  w.end_frame_idx = frame_idx;
  return w;
}

GroupMask parse_groups(const std::string& s) {
  GroupMask m = 0;
  for (char c : s) {
    switch (c) {
      case 'L': m |= static_cast<unsigned>(FeatureGroup::L); break;
      case 'M': m |= static_cast<unsigned>(FeatureGroup::M); break;
      case 'G': m |= static_cast<unsigned>(FeatureGroup::G); break;
      case 'P': m |= static_cast<unsigned>(FeatureGroup::P); break;
      case '+': case ' ': break;
      default: throw std::invalid_argument(std::string("unknown feature group '") + c + "'");
    }
  }
  if (m == 0) throw std::invalid_argument("feature group set is empty");
  return m;
}

std::string groups_to_string(GroupMask m) {
  std::string out;
  const char names[] = {'L', 'M', 'G', 'P'};
  for (int i = 0; i < 4; ++i)
    if (m & (1u << i)) {
      if (!out.empty()) out += '+';
      out += names[i];
    }
  return out;
}

void apply_group_mask(WindowMatrix& x, GroupMask keep) {
  struct Range {
    FeatureGroup g;
    int first, last;
  };
  constexpr Range ranges[] = {{FeatureGroup::L, 0, 4}, {FeatureGroup::M, 5, 7},
                              {FeatureGroup::G, 8, 10}, {FeatureGroup::P, 11, 15}};
  for (const auto& r : ranges)
    if (!(keep & static_cast<unsigned>(r.g))) x.middleCols(r.first, r.last - r.first + 1).setZero();
}

FeatureStage::Output FeatureStage::process(const FrameRecord& rec) {
  Output out;
  const std::int64_t f = rec.frame_idx;
  out.retired = tracker_.associate(rec.detections, f);
  for (const auto& t : out.retired) state_.erase(t.track_id);
  tracker_.merge_pose(rec.crop_poses, f);

  for (const Track& t : tracker_.tracks()) {
    TrackFeatureState& st = state_[t.track_id];
    if (st.crossed) continue;
    const bool seen_now = t.last_seen == f;
    if (seen_now && t.zone.type == ZoneType::Crossing) {
      st.crossed = true;
      st.assembler.stop();
      st.segment.clear();
      continue;
    }
    const bool pre_crossing =
        t.zone.type == ZoneType::Waiting || t.zone.type == ZoneType::StartCrossing;
    if (seen_now && pre_crossing) {
      if (!st.observing) {
        st.observing = true;
        st.obs_start = f;
      }
      st.segment.push_back(frame_features(t, geometry_, t.pose_frame == f));
    }
    if (st.observing && (f - st.obs_start + 1) % kFramesPerStep == 0) {
      if (!st.segment.empty()) {
        const StepFeatures step = temporal_filter(st.segment);
        st.segment.clear();
        if (auto w = st.assembler.push(step, t.track_id, f)) out.windows.push_back(std::move(*w));
      }
    }
  }
  return out;
}

bool FeatureStage::crossed(int track_id) const {
  auto it = state_.find(track_id);
  return it != state_.end() && it->second.crossed;
}

std::string window_to_json(const FeatureWindow& w) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < kWindowSteps; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < kFeatureDim; ++c) row.push_back(w.x(r, c));
    rows.push_back(std::move(row));
  }
  nlohmann::json j;
  j["track"] = w.track_id;
  j["frame"] = w.end_frame_idx;
  j["layout_hash"] = feature_layout_hash();
  j["x"] = std::move(rows);
  return j.dump();
}

}  // namespace crosswise
