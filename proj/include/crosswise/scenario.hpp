#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crosswise/geom.hpp"
#include "crosswise/ingest.hpp"

namespace crosswise {

enum class Condition { Day, Night, Rain };

const char* to_string(Condition c);
Condition condition_from_string(const std::string& s);

/// Synthetic scenario parameters. Noise knobs are the clear-day values; the
/// condition scales them (night: sigma x2, rain: sigma x1.5, both +0.05 dropout).
struct ScenarioSpec {
  int n_vrus = 1;
  std::array<double, kNumVruClasses> class_mix{1.0, 0.0, 0.0, 0.0, 0.0};
  /// Per-VRU crosswalk; when empty labels are split 50/50 and shuffled.
  std::vector<Crosswalk> labels;
  double keypoint_sigma = 0.0;
  double dropout = 0.0;
  Condition condition = Condition::Day;
  std::uint64_t seed = 1;
  int max_concurrent = 5;
  double min_dwell_s = 4.0;
  double max_dwell_s = 8.0;

  double effective_sigma() const;
  double effective_dropout() const;
  void validate() const;
};

/// Class mix of the full dataset summary: 59.6% pedestrians, 31.2%
/// non-motorized (split evenly between cyclist and scooter), 9.2% electric
/// mobility (split evenly between e-scooter and e-wheelchair).
std::array<double, kNumVruClasses> dataset_class_mix();

/// Ground truth for one simulated VRU.
struct VruTruth {
  int id = 0;
  Crosswalk label = Crosswalk::A;
  VruClass cls = VruClass::Pedestrian;
  std::int64_t spawn_frame = 0;
  Point spawn_xy{0, 0};
  /// First frame whose bbox center lies in the labeled crossing zone.
  std::int64_t cross_frame = 0;
  std::int64_t cross_ts_ms = 0;
  std::int64_t end_frame = 0;
  /// Bbox centers from spawn_frame to end_frame inclusive, one per frame.
  std::vector<Point> path;
};

struct Scenario {
  std::vector<FrameRecord> frames;
  std::vector<VruTruth> truth;
};

/// Deterministic given (spec, geometry). Throws std::invalid_argument when
/// the geometry lacks labeled crosswalks or the scenario spec is invalid.
Scenario generate_scenario(const ScenarioSpec& spec, const IntersectionGeometry& g);

std::int64_t frame_to_ms(std::int64_t frame_idx, int fps);

ScenarioSpec parse_scenario_spec(const std::string& json_text);
ScenarioSpec load_scenario_spec(const std::string& path);

/// Labels file: {"fps":..,"vrus":[{"id","label","class","spawn_frame",
/// "spawn_xy","cross_frame","cross_ts_ms","end_frame"}]}. Paths are not
/// persisted.
std::string truth_to_json(const std::vector<VruTruth>& truth, int fps);
std::vector<VruTruth> parse_truth(const std::string& json_text);
std::vector<VruTruth> load_truth(const std::string& path);

}  // namespace crosswise
