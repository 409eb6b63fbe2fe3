#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "crosswise/geom.hpp"
#include "crosswise/ingest.hpp"

namespace crosswise {

struct TrackSample {
  std::int64_t frame_idx = 0;
  Point center{0, 0};
  Rect bbox;
};

struct Track {
  static constexpr std::size_t kHistoryCapacity = 64;

  int track_id = 0;
  VruClass cls = VruClass::Pedestrian;
  std::deque<TrackSample> history;  // oldest first, at most kHistoryCapacity
  std::int64_t first_seen = 0;
  std::int64_t last_seen = 0;
  ZoneKind zone;
  /// Latest merged pose, full-frame coordinates.
  std::optional<PoseDetection> pose_latest;
  std::int64_t pose_frame = -1;

  const TrackSample& latest() const { return history.back(); }
  /// Constant-velocity extrapolation of the center to `frame_idx` from the
  /// last two history samples; the last center when only one exists.
  Point predicted_center(std::int64_t frame_idx) const;
  void push(const TrackSample& s);
};

/// Greedy IoU tracker with a constant-velocity distance gate. Stands in for a
/// full observation-centric tracker; the interface allows swapping one in.
class Tracker {
 public:
  static constexpr double kIouThreshold = 0.3;
  static constexpr double kCenterGate = 0.5;  // x max(w, h) of the track box
  static constexpr double kPoseGate = 0.75;   // x max(w, h) of the track box

  explicit Tracker(const IntersectionGeometry& g) : geometry_(g) {}

  /// Matches one frame of detections. Returns tracks retired by this call
  /// (unseen for more than 2*fps frames).
  std::vector<Track> associate(const std::vector<Detection>& dets, std::int64_t frame_idx);

  /// Attaches crop-frame poses to Waiting/StartCrossing tracks, nearest
  /// center first, at most one pose per track and one track per pose. Ties
  /// go to the lower track id. Returns the number of poses attached.
  int merge_pose(const std::vector<PoseDetection>& crop_poses, std::int64_t frame_idx);

  const std::vector<Track>& tracks() const { return tracks_; }
  const Track* find(int track_id) const;
  int next_id() const { return next_id_; }

 private:
  const IntersectionGeometry& geometry_;
  std::vector<Track> tracks_;  // ascending track_id
  int next_id_ = 1;
};

}  // namespace crosswise
