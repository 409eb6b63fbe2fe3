#include "crosswise/track.hpp"

#include <algorithm>
#include <tuple>

namespace crosswise {

Point Track::predicted_center(std::int64_t frame_idx) const {
  const TrackSample& last = history.back();
  if (history.size() < 2) return last.center;
  const TrackSample& prev = history[history.size() - 2];
  const double dt = static_cast<double>(last.frame_idx - prev.frame_idx);
  if (dt <= 0) return last.center;
  const Point vel = (last.center - prev.center) / dt;
  return last.center + vel * static_cast<double>(frame_idx - last.frame_idx);
}

void Track::push(const TrackSample& s) {
  history.push_back(s);
  while (history.size() > kHistoryCapacity) history.pop_front();
  last_seen = s.frame_idx;
}

std::vector<Track> Tracker::associate(const std::vector<Detection>& dets, std::int64_t frame_idx) {
  const std::size_t nt = tracks_.size();
  std::vector<char> track_used(nt, 0), det_used(dets.size(), 0);

  auto apply = [&](std::size_t ti, std::size_t di) {
    Track& t = tracks_[ti];
    const Rect& b = dets[di].bbox;
    t.push({frame_idx, b.center(), b});
    t.cls = dets[di].cls;
    t.zone = classify_point(b.center(), geometry_);
    track_used[ti] = det_used[di] = 1;
  };

  // Stage 1: greedy on descending IoU.
  std::vector<std::tuple<double, int, std::size_t, std::size_t>> pairs;
  for (std::size_t ti = 0; ti < nt; ++ti)
    for (std::size_t di = 0; di < dets.size(); ++di) {
      const double v = iou(tracks_[ti].latest().bbox, dets[di].bbox);
      if (v >= kIouThreshold) pairs.emplace_back(-v, tracks_[ti].track_id, di, ti);
    }
  std::sort(pairs.begin(), pairs.end());
  for (const auto& [neg_iou, id, di, ti] : pairs)
    if (!track_used[ti] && !det_used[di]) apply(ti, di);

  // Stage 2: constant-velocity center gate for what IoU left over.
  std::vector<std::tuple<double, int, std::size_t, std::size_t>> gated;
  for (std::size_t ti = 0; ti < nt; ++ti) {
    if (track_used[ti]) continue;
    const Track& t = tracks_[ti];
    const Point pred = t.predicted_center(frame_idx);
    const double gate = kCenterGate * std::max(t.latest().bbox.w, t.latest().bbox.h);
    for (std::size_t di = 0; di < dets.size(); ++di) {
      if (det_used[di]) continue;
      const double d = (dets[di].bbox.center() - pred).norm();
      if (d <= gate) gated.emplace_back(d, t.track_id, di, ti);
    }
  }
  std::sort(gated.begin(), gated.end());
  for (const auto& [dist, id, di, ti] : gated)
    if (!track_used[ti] && !det_used[di]) apply(ti, di);

  for (std::size_t di = 0; di < dets.size(); ++di) {
    if (det_used[di]) continue;
    Track t;
    t.track_id = next_id_++;
    t.cls = dets[di].cls;
    t.first_seen = frame_idx;
    t.push({frame_idx, dets[di].bbox.center(), dets[di].bbox});
    t.zone = classify_point(dets[di].bbox.center(), geometry_);
    tracks_.push_back(std::move(t));
  }

  std::vector<Track> retired;
  const std::int64_t horizon = 2 * static_cast<std::int64_t>(geometry_.fps);
  auto keep_end = std::stable_partition(tracks_.begin(), tracks_.end(), [&](const Track& t) {
    return frame_idx - t.last_seen <= horizon;
  });
  std::move(keep_end, tracks_.end(), std::back_inserter(retired));
  tracks_.erase(keep_end, tracks_.end());
  return retired;
}

int Tracker::merge_pose(const std::vector<PoseDetection>& crop_poses, std::int64_t frame_idx) {
  struct Candidate {
    double dist;
    int track_id;
    std::size_t pose, track;
    bool operator<(const Candidate& o) const {
      return std::tie(dist, track_id, pose) < std::tie(o.dist, o.track_id, o.pose);
    }
  };
  std::vector<PoseDetection> full;
  std::vector<char> valid;
  for (const auto& p : crop_poses) {
    try {
      crop_to_full(p.bbox.center(), geometry_);
      full.push_back(p.translated({geometry_.crop_rect.x, geometry_.crop_rect.y}));
      valid.push_back(1);
    } catch (const std::out_of_range&) {
      full.push_back(p);
      valid.push_back(0);
    }
  }
  std::vector<Candidate> cands;
  for (std::size_t ti = 0; ti < tracks_.size(); ++ti) {
    const Track& t = tracks_[ti];
    if (t.zone.type != ZoneType::Waiting && t.zone.type != ZoneType::StartCrossing) continue;
    const double gate = kPoseGate * std::max(t.latest().bbox.w, t.latest().bbox.h);
    for (std::size_t pi = 0; pi < full.size(); ++pi) {
      if (!valid[pi]) continue;
      const double d = (full[pi].bbox.center() - t.latest().center).norm();
      if (d <= gate) cands.push_back({d, t.track_id, pi, ti});
    }
  }
  std::sort(cands.begin(), cands.end());
  std::vector<char> pose_used(full.size(), 0), track_used(tracks_.size(), 0);
  int attached = 0;
  for (const auto& c : cands) {
    if (pose_used[c.pose] || track_used[c.track]) continue;
    pose_used[c.pose] = track_used[c.track] = 1;
    tracks_[c.track].pose_latest = full[c.pose];
    tracks_[c.track].pose_frame = frame_idx;
    ++attached;
  }
  return attached;
}

const Track* Tracker::find(int track_id) const {
  auto it = std::lower_bound(tracks_.begin(), tracks_.end(), track_id,
                             [](const Track& t, int id) { return t.track_id < id; });
  return it != tracks_.end() && it->track_id == track_id ? &*it : nullptr;
}

}  // namespace crosswise
