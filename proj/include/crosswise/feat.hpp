#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crosswise/geom.hpp"
#include "crosswise/ingest.hpp"
#include "crosswise/track.hpp"

namespace crosswise {

inline constexpr int kFeatureDim = 16;
inline constexpr int kWindowSteps = 5;
inline constexpr int kFramesPerStep = 10;

/// Slot layout of one feature step. Frozen: the layout hash below is stored
/// in every weight file.
namespace slot {
inline constexpr int kCenterX = 0, kCenterY = 1;
inline constexpr int kZoneWaiting = 2, kZoneStart = 3, kZoneCrossing = 4;
inline constexpr int kSpeed = 5, kHeadingSin = 6, kHeadingCos = 7;
inline constexpr int kDistA = 8, kDistB = 9, kCompactness = 10;
inline constexpr int kBodySin = 11, kBodyCos = 12, kFaceSin = 13, kFaceCos = 14;
inline constexpr int kShoulder = 15;
}  // namespace slot

using StepFeatures = Eigen::Matrix<double, kFeatureDim, 1>;
using WindowMatrix = Eigen::Matrix<double, kWindowSteps, kFeatureDim, Eigen::RowMajor>;

/// Hex FNV-1a digest of the slot layout description.
const std::string& feature_layout_hash();

struct FeatureWindow {
  WindowMatrix x = WindowMatrix::Zero();  // rows oldest -> newest
  int track_id = 0;
  std::int64_t end_frame_idx = 0;
};

struct MotionFeatures {
  double speed = 0.0;
  double heading_sin = 0.0, heading_cos = 0.0;
};

/// Displacement over the most recent 10-frame span of the history. Speed is
/// in m/s when the geometry has a pixel scale, else px/s over the frame
/// diagonal.
MotionFeatures motion_features(const std::deque<TrackSample>& history, const IntersectionGeometry& g);

struct PoseFeatures {
  double body_sin = 0, body_cos = 0;
  double face_sin = 0, face_cos = 0;
  double shoulder_dist = 0;  // px
  bool valid = false;
};

inline constexpr double kKeypointConfGate = 0.3;

/// Body angle is the shoulder-segment normal on the nose side; face angle is
/// the direction from the shoulder midpoint to the nose.
PoseFeatures pose_features(const PoseDetection& pose);

struct GeometricFeatures {
  double dist_a = 0, dist_b = 0, compactness = 0;
};

GeometricFeatures geometric_features(const Point& center, const IntersectionGeometry& g);

/// One frame's raw vector plus whether the pose slots were observed.
struct FrameFeatures {
  StepFeatures v = StepFeatures::Zero();
  bool has_pose = false;
};

FrameFeatures frame_features(const Track& t, const IntersectionGeometry& g, bool pose_this_frame);

/// Averages 1..10 frame vectors into one step. Throws std::invalid_argument
/// for an empty span.
StepFeatures temporal_filter(std::span<const FrameFeatures> frames);

/// Sliding 5-step window per track, one-step stride.
class WindowAssembler {
 public:
  std::optional<FeatureWindow> push(const StepFeatures& step, int track_id, std::int64_t frame_idx);
  void stop() { stopped_ = true; }
  bool stopped() const { return stopped_; }
  std::size_t steps_seen() const { return seen_; }

 private:
  std::deque<StepFeatures> steps_;
  std::size_t seen_ = 0;
  bool stopped_ = false;
};

enum class FeatureGroup : unsigned { L = 1, M = 2, G = 4, P = 8 };
using GroupMask = unsigned;
inline constexpr GroupMask kAllGroups = 0xF;

/// Parses strings like "LMGP" or "L+M"; throws on empty or unknown groups.
GroupMask parse_groups(const std::string& s);
std::string groups_to_string(GroupMask m);
/// Zeroes every slot whose group is not in `keep`.
void apply_group_mask(WindowMatrix& x, GroupMask keep);

/// Tracking + per-track feature accumulation for one stream. Windows come
/// out at every 10-frame boundary counted from the first frame a track is
/// seen in a waiting or start-crossing zone; a track stops producing windows
/// once it enters a crossing zone.
class FeatureStage {
 public:
  explicit FeatureStage(const IntersectionGeometry& g) : geometry_(g), tracker_(g) {}

  struct Output {
    std::vector<FeatureWindow> windows;
    std::vector<Track> retired;
  };

  Output process(const FrameRecord& rec);

  const Tracker& tracker() const { return tracker_; }
  const IntersectionGeometry& geometry() const { return geometry_; }
  bool crossed(int track_id) const;

 private:
  struct TrackFeatureState {
    bool observing = false;
    std::int64_t obs_start = 0;
    bool crossed = false;
    std::vector<FrameFeatures> segment;
    WindowAssembler assembler;
  };

  const IntersectionGeometry& geometry_;
  Tracker tracker_;
  std::map<int, TrackFeatureState> state_;
};

std::string window_to_json(const FeatureWindow& w);

}  // namespace crosswise
