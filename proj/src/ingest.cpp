#include "crosswise/ingest.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

namespace crosswise {

using nlohmann::json;

namespace {

constexpr const char* kClassNames[kNumVruClasses] = {"pedestrian", "cyclist", "scooter",
                                                     "e_scooter", "e_wheelchair"};

Rect rect_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("bbox must be [x,y,w,h]");
  Rect r{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!(r.w > 0.0) || !(r.h > 0.0)) throw std::invalid_argument("bbox width and height must be positive");
  return r;
}

void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(what) + " must be in [0,1]");
}

}  // namespace

const char* to_string(VruClass c) { return kClassNames[static_cast<int>(c)]; }

VruClass vru_class_from_string(const std::string& s) {
  for (int i = 0; i < kNumVruClasses; ++i)
    if (s == kClassNames[i]) return static_cast<VruClass>(i);
  throw std::invalid_argument("unknown VRU class \"" + s + "\"");
}

PoseDetection PoseDetection::translated(const Point& offset) const {
  PoseDetection out = *this;
  out.bbox.x += offset.x();
  out.bbox.y += offset.y();
  for (auto& kp : out.keypoints) {
    kp.x += offset.x();
    kp.y += offset.y();
  }
  return out;
}

FrameRecord parse_record(const std::string& line) {
  FrameRecord rec;
  try {
    const json j = json::parse(line);
    rec.frame_idx = j.at("frame").get<std::int64_t>();
    rec.ts_ms = j.at("ts_ms").get<std::int64_t>();
    if (rec.frame_idx < 0 || rec.ts_ms < 0)
      throw std::invalid_argument("frame and ts_ms must be non-negative");
    for (const auto& d : j.value("dets", json::array())) {
      Detection det;
      det.bbox = rect_from_json(d.at("bbox"));
      det.cls = vru_class_from_string(d.at("class").get<std::string>());
      det.conf = d.at("conf").get<double>();
      check_unit(det.conf, "detection conf");
      rec.detections.push_back(det);
    }
    for (const auto& p : j.value("poses", json::array())) {
      PoseDetection pose;
      pose.bbox = rect_from_json(p.at("bbox"));
      const auto& kps = p.at("kps");
      if (!kps.is_array() || kps.size() != kNumKeypoints)
        throw std::invalid_argument("pose needs exactly 17 keypoints, got " +
                                    std::to_string(kps.is_array() ? kps.size() : 0));
      for (int k = 0; k < kNumKeypoints; ++k) {
        const auto& kp = kps[k];
        if (!kp.is_array() || kp.size() != 3) throw std::invalid_argument("keypoint must be [x,y,c]");
        pose.keypoints[k] = {kp[0].get<double>(), kp[1].get<double>(), kp[2].get<double>()};
        check_unit(pose.keypoints[k].conf, "keypoint conf");
      }
      rec.crop_poses.push_back(pose);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(e.what());
  }
  return rec;
}

std::string format_record(const FrameRecord& rec) {
  json dets = json::array();
  for (const auto& d : rec.detections)
    dets.push_back({{"bbox", {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h}},
                    {"class", to_string(d.cls)},
                    {"conf", d.conf}});
  json poses = json::array();
  for (const auto& p : rec.crop_poses) {
    json kps = json::array();
    for (const auto& kp : p.keypoints) kps.push_back({kp.x, kp.y, kp.conf});
    poses.push_back({{"bbox", {p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h}}, {"kps", kps}});
  }
  json j;
  j["frame"] = rec.frame_idx;
  j["ts_ms"] = rec.ts_ms;
  j["dets"] = std::move(dets);
  j["poses"] = std::move(poses);
  return j.dump();
}

bool RecordReader::next(FrameRecord& out) {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    FrameRecord rec;
    try {
      rec = parse_record(line);
    } catch (const std::invalid_argument& e) {
      throw StreamError(line_no_, e.what());
    }
    if (have_prev_ && rec.frame_idx <= prev_frame_)
      throw StreamError(line_no_, "frame index " + std::to_string(rec.frame_idx) +
                                      " not strictly increasing");
    if (have_prev_ && rec.ts_ms < prev_ts_) throw StreamError(line_no_, "ts_ms decreased");
    have_prev_ = true;
    prev_frame_ = rec.frame_idx;
    prev_ts_ = rec.ts_ms;
    out = std::move(rec);
    return true;
  }
  return false;
}

std::vector<FrameRecord> read_stream(std::istream& in) {
  std::vector<FrameRecord> out;
  RecordReader reader(in);
  FrameRecord rec;
  while (reader.next(rec)) out.push_back(std::move(rec));
  return out;
}

std::vector<FrameRecord> read_stream(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_stream(in);
}

void write_stream(std::ostream& out, const std::vector<FrameRecord>& records) {
  for (const auto& r : records) out << format_record(r) << '\n';
}

void write_stream(const std::string& path, const std::vector<FrameRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_stream(out, records);
}

}  // namespace crosswise
