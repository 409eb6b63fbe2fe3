#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "crosswise/geom.hpp"

namespace crosswise {

enum class VruClass { Pedestrian = 0, Cyclist, Scooter, EScooter, EWheelchair };
inline constexpr int kNumVruClasses = 5;

const char* to_string(VruClass c);
VruClass vru_class_from_string(const std::string& s);

struct Detection {
  Rect bbox;  // full frame
  VruClass cls = VruClass::Pedestrian;
  double conf = 1.0;

  bool operator==(const Detection&) const = default;
};

struct Keypoint {
  double x = 0, y = 0, conf = 0;

  Point pos() const { return {x, y}; }
  bool operator==(const Keypoint&) const = default;
};

inline constexpr int kNumKeypoints = 17;

/// COCO keypoint order.
enum Kp : int {
  kNose = 0, kLeftEye, kRightEye, kLeftEar, kRightEar,
  kLeftShoulder, kRightShoulder, kLeftElbow, kRightElbow,
  kLeftWrist, kRightWrist, kLeftHip, kRightHip,
  kLeftKnee, kRightKnee, kLeftAnkle, kRightAnkle
};

/// Pose estimator output. Coordinates are in whichever frame the producer
/// used: crop frame when ingested, full frame after merging.
struct PoseDetection {
  Rect bbox;
  std::array<Keypoint, kNumKeypoints> keypoints{};

  /// Shifts the box and every keypoint by `offset`.
  PoseDetection translated(const Point& offset) const;
  bool operator==(const PoseDetection&) const = default;
};

struct FrameRecord {
  std::int64_t frame_idx = 0;
  std::int64_t ts_ms = 0;
  std::vector<Detection> detections;
  std::vector<PoseDetection> crop_poses;

  bool operator==(const FrameRecord&) const = default;
};

/// Malformed input stream; `line()` is 1-based.
class StreamError : public std::runtime_error {
 public:
  StreamError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Parses and validates one JSON line. Throws std::invalid_argument.
FrameRecord parse_record(const std::string& line);
std::string format_record(const FrameRecord& rec);

/// Incremental line-delimited reader enforcing stream ordering.
class RecordReader {
 public:
  explicit RecordReader(std::istream& in) : in_(in) {}

  /// False at end of stream. Throws StreamError on malformed or
  /// out-of-order records.
  bool next(FrameRecord& out);

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
  bool have_prev_ = false;
  std::int64_t prev_frame_ = 0;
  std::int64_t prev_ts_ = 0;
};

std::vector<FrameRecord> read_stream(std::istream& in);
std::vector<FrameRecord> read_stream(const std::string& path);
void write_stream(std::ostream& out, const std::vector<FrameRecord>& records);
void write_stream(const std::string& path, const std::vector<FrameRecord>& records);

}  // namespace crosswise
