#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "crosswise/feat.hpp"
#include "crosswise/geom.hpp"
#include "crosswise/ingest.hpp"
#include "crosswise/nn/model.hpp"
#include "crosswise/scenario.hpp"

namespace crosswise {

// Per-track monitoring state. Forward order is Idle -> Observing -> Predicted
// -> Crossing -> Done; Observing may jump straight to Crossing and any state
// goes to Done on retirement.
enum class TrackState { Idle, Observing, Predicted, Crossing, Done };

const char* to_string(TrackState s);

struct StateDelta {
  int track_id = 0;
  TrackState from = TrackState::Idle, to = TrackState::Idle;
  std::int64_t frame_idx = 0;
};

struct I2VAlert {
  static constexpr const char* kMsgType = "VRU_CROSSING_ALERT";
  static constexpr const char* kSchema = "crosswise/1";

  int track_id = 0;
  Crosswalk crosswalk = Crosswalk::A;
  double prob = 0.0;  // probability of `crosswalk`
  std::int64_t ts_ms = 0;
  std::int64_t frame_idx = 0;
  VruClass vru_class = VruClass::Pedestrian;
  bool fast_path = false;  // fired by start-crossing entry, not a prediction

  bool operator==(const I2VAlert&) const = default;
};

/// One datagram payload.
std::string alert_to_json(const I2VAlert& a);
std::string prediction_to_json(const nn::Prediction& p);

struct StepResult {
  std::vector<FeatureWindow> windows;
  std::vector<nn::Prediction> predictions;
  std::vector<I2VAlert> alerts;
  std::vector<StateDelta> deltas;
};

/// Streaming engine: tracking, zone-gated pose merge, features, inference,
/// state machine and alert policy. Single-threaded and deterministic; a
/// frame produces at most one window per track, so inference never queues.
class Pipeline {
 public:
  static constexpr double kAlertMargin = 0.2;

  /// Throws std::invalid_argument when the weights' layout hash differs from
  /// this build's feature layout or the geometry is invalid.
  Pipeline(const IntersectionGeometry& g, nn::ModelParams<float> weights);
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  /// Throws std::invalid_argument when frame_idx does not increase.
  StepResult step(const FrameRecord& rec);

  /// Idle for unknown ids; retired tracks stay Done.
  TrackState state(int track_id) const;
  const FeatureStage& stage() const { return stage_; }
  const IntersectionGeometry& geometry() const { return geometry_; }
  std::size_t tracks_seen() const { return states_.size(); }
  std::size_t count_in(TrackState s) const;
  /// Tracks that reached the given state at least once.
  std::size_t count_reached(TrackState s) const;

 private:
  void transition(int id, TrackState to, std::int64_t frame, StepResult& out);
  void maybe_alert(const Track& t, Crosswalk label, double prob, bool fast, const FrameRecord& rec,
                   StepResult& out);

  IntersectionGeometry geometry_;
  nn::ModelParams<float> weights_;
  FeatureStage stage_;
  std::map<int, TrackState> states_;
  std::map<int, unsigned> reached_;  // bit per TrackState
  std::map<int, nn::Prediction> latest_;
  std::set<std::pair<int, Crosswalk>> alerted_;
  std::optional<std::int64_t> last_frame_;
};

/// Destination for alert datagrams.
class AlertSink {
 public:
  virtual ~AlertSink() = default;
  /// Returns false when delivery failed after retries; never blocks long.
  virtual bool send(const std::string& payload) = 0;
};

/// Fire-and-forget UDP sink. Each send is attempted up to kAttempts times;
/// a final failure is logged to stderr and reported, never thrown.
class UdpAlertSink : public AlertSink {
 public:
  static constexpr int kAttempts = 3;

  /// `endpoint` is "host:port". Throws std::invalid_argument when it cannot
  /// be parsed or resolved.
  explicit UdpAlertSink(const std::string& endpoint);
  ~UdpAlertSink() override;
  UdpAlertSink(const UdpAlertSink&) = delete;
  UdpAlertSink& operator=(const UdpAlertSink&) = delete;

  bool send(const std::string& payload) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::pair<std::string, int> parse_endpoint(const std::string& endpoint);

struct RunSummary {
  std::int64_t frames = 0;
  std::size_t tracks = 0, tracks_observed = 0, tracks_predicted = 0, tracks_crossing = 0;
  std::size_t windows = 0, predictions = 0, alerts = 0, alerts_undelivered = 0;
  double mean_frame_latency_ms = 0, max_frame_latency_ms = 0;

  std::string to_json() const;
};

struct RunIo {
  std::istream* in = nullptr;
  std::ostream* predictions = nullptr;
  AlertSink* alerts = nullptr;      // optional
  std::ostream* features = nullptr;  // optional window dump
  std::vector<I2VAlert>* alert_log = nullptr;  // optional, for callers that inspect alerts
};

/// Consumes `io.in` to exhaustion. Stream errors propagate as StreamError.
RunSummary run(const IntersectionGeometry& g, const nn::ModelParams<float>& weights, const RunIo& io);

struct ScalingPoint {
  int max_tracks = 0;
  double fps = 0;
};

struct BenchReport {
  std::int64_t frames = 0;
  int max_concurrent = 0;
  double fps = 0;
  double forward_p50_ms = 0, forward_p99_ms = 0;
  int forward_samples = 0;
  std::vector<ScalingPoint> scaling;

  static constexpr double kReferenceFps = 33.0;
  static constexpr double kReferenceForwardMs = 0.78;

  std::string to_json() const;
};

struct BenchOptions {
  std::int64_t frames = 3000;
  int max_tracks = 10;
  int forward_samples = 2000;
  std::uint64_t seed = 11;
  bool scaling = true;
};

/// End-to-end frames/second on a generated stream with at most
/// `max_tracks` concurrent VRUs, single-window forward latency percentiles
/// and, optionally, throughput for 1..max_tracks concurrent tracks.
BenchReport bench(const IntersectionGeometry& g, const nn::ModelParams<float>& weights, const BenchOptions& opt);

/// Scenario of at least `frames` frames with up to `max_tracks` concurrent
/// VRUs under the noisy benchmark settings, truncated to `frames`.
Scenario bench_scenario(const IntersectionGeometry& g, std::int64_t frames, int max_tracks, std::uint64_t seed);

}  // namespace crosswise
