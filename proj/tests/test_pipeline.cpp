#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <json.hpp>
#include <map>
#include <sstream>

#include "crosswise/pipeline.hpp"

using namespace crosswise;

namespace {

// All-zero weights with a bias on the output logit: every window predicts
// the same probability of crosswalk B.
nn::ModelParams<float> constant_weights(float logit) {
  auto p = nn::ModelParams<float>::zeros(nn::ModelConfig{});
  p.head.b_fc2(0) = logit;
  return p;
}

Scenario one_vru(Crosswalk label) {
  ScenarioSpec s;
  s.n_vrus = 1;
  s.labels = {label};
  s.seed = 5;
  return generate_scenario(s, default_geometry());
}

FrameRecord frame(std::int64_t f, double cx, double cy) {
  FrameRecord r;
  r.frame_idx = f;
  r.ts_ms = f * 50;
  r.detections.push_back({{cx - 10, cy - 25, 20, 50}, VruClass::Cyclist, 0.9});
  return r;
}

}  // namespace

TEST_CASE("state machine walks forward and alerts once per label") {
  const auto sc = one_vru(Crosswalk::A);
  Pipeline pl(default_geometry(), constant_weights(2.0f));  // p_B = 0.88
  std::vector<StateDelta> deltas;
  std::vector<I2VAlert> alerts;
  std::size_t predictions = 0;
  for (const auto& rec : sc.frames) {
    auto r = pl.step(rec);
    deltas.insert(deltas.end(), r.deltas.begin(), r.deltas.end());
    alerts.insert(alerts.end(), r.alerts.begin(), r.alerts.end());
    predictions += r.predictions.size();
  }
  // Flush retirement with empty frames.
  const int fps = default_geometry().fps;
  for (std::int64_t f = 1; f <= 3 * fps; ++f) {
    FrameRecord empty;
    empty.frame_idx = sc.frames.back().frame_idx + f;
    for (const auto& d : pl.step(empty).deltas) deltas.push_back(d);
  }

  REQUIRE(predictions > 0);
  std::vector<TrackState> path;
  for (const auto& d : deltas) {
    CHECK(d.track_id == deltas.front().track_id);
    CHECK(static_cast<int>(d.to) > static_cast<int>(d.from));
    path.push_back(d.to);
  }
  CHECK(path == std::vector<TrackState>{TrackState::Observing, TrackState::Predicted, TrackState::Crossing,
                                        TrackState::Done});

  // A confident B prediction, then the fast path for the entered crosswalk A.
  REQUIRE(alerts.size() == 2);
  CHECK(alerts[0].crosswalk == Crosswalk::B);
  CHECK_FALSE(alerts[0].fast_path);
  CHECK(alerts[0].prob == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
  CHECK(alerts[1].crosswalk == Crosswalk::A);
  CHECK(alerts[1].fast_path);
  CHECK(alerts[1].prob == doctest::Approx(1.0 - alerts[0].prob));
  CHECK(alerts[0].frame_idx < sc.truth[0].cross_frame);
  CHECK(alerts[0].frame_idx < alerts[1].frame_idx);
  CHECK(alerts[1].frame_idx <= sc.truth[0].cross_frame);
  CHECK(alerts[0].vru_class == sc.truth[0].cls);
  CHECK(pl.count_reached(TrackState::Crossing) == 1);
  CHECK(pl.count_in(TrackState::Done) == 1);
}

TEST_CASE("uncertain predictions do not alert") {
  const auto sc = one_vru(Crosswalk::B);
  Pipeline pl(default_geometry(), constant_weights(0.5f));  // p_B = 0.62
  std::vector<I2VAlert> alerts;
  for (const auto& rec : sc.frames)
    for (const auto& a : pl.step(rec).alerts) alerts.push_back(a);
  // Only the fast path fires, with the latest prediction's probability.
  REQUIRE(alerts.size() == 1);
  CHECK(alerts[0].fast_path);
  CHECK(alerts[0].crosswalk == Crosswalk::B);
  CHECK(alerts[0].prob == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))));
}

TEST_CASE("a track outside the monitored zones stays idle") {
  Pipeline pl(default_geometry(), constant_weights(3.0f));
  std::size_t n = 0;
  for (std::int64_t f = 0; f < 200; ++f) {
    const auto r = pl.step(frame(f, 100, 100));
    n += r.windows.size() + r.predictions.size() + r.alerts.size() + r.deltas.size();
  }
  CHECK(n == 0);
  CHECK(pl.tracks_seen() == 1);
  CHECK(pl.state(1) == TrackState::Idle);
  CHECK(pl.state(99) == TrackState::Idle);
}

TEST_CASE("direct entry into a crossing zone skips prediction") {
  Pipeline pl(default_geometry(), constant_weights(3.0f));
  std::vector<StateDelta> deltas;
  std::vector<I2VAlert> alerts;
  for (std::int64_t f = 0; f < 30; ++f) {
    auto r = pl.step(frame(f, 690 + 2 * f, 300));  // starts in the start-crossing zone
    deltas.insert(deltas.end(), r.deltas.begin(), r.deltas.end());
    alerts.insert(alerts.end(), r.alerts.begin(), r.alerts.end());
  }
  REQUIRE(deltas.size() >= 1);
  CHECK(deltas[0].to == TrackState::Observing);
  for (const auto& d : deltas) CHECK(d.to != TrackState::Predicted);
  REQUIRE(alerts.size() == 1);
  CHECK(alerts[0].fast_path);
  CHECK(alerts[0].prob == 1.0);  // no prediction yet
}

TEST_CASE("frames must increase") {
  Pipeline pl(default_geometry(), constant_weights(0));
  pl.step(frame(5, 100, 100));
  CHECK_THROWS_AS(pl.step(frame(5, 100, 100)), std::invalid_argument);
  CHECK_THROWS_AS(pl.step(frame(4, 100, 100)), std::invalid_argument);
}

TEST_CASE("weights from another feature layout are refused") {
  auto w = constant_weights(0);
  w.layout_hash = "0123456789abcdef";
  CHECK_THROWS_AS(Pipeline(default_geometry(), w), std::invalid_argument);
}

TEST_CASE("alert payload") {
  I2VAlert a;
  a.track_id = 7;
  a.crosswalk = Crosswalk::B;
  a.prob = 0.75;
  a.ts_ms = 1234;
  a.frame_idx = 25;
  a.vru_class = VruClass::EScooter;
  const auto j = nlohmann::json::parse(alert_to_json(a));
  CHECK(j["schema"] == "crosswise/1");
  CHECK(j["msg_type"] == "VRU_CROSSING_ALERT");
  CHECK(j["track_id"] == 7);
  CHECK(j["crosswalk"] == "B");
  CHECK(j["prob"] == 0.75);
  CHECK(j["ts_ms"] == 1234);
  CHECK(j["vru_class"] == to_string(VruClass::EScooter));
}

TEST_CASE("endpoint parsing") {
  CHECK(parse_endpoint("127.0.0.1:9000") == std::pair<std::string, int>{"127.0.0.1", 9000});
  CHECK(parse_endpoint("[::1]:53") == std::pair<std::string, int>{"::1", 53});
  CHECK(parse_endpoint("rsu.local:65535").second == 65535);
  CHECK_THROWS_AS(parse_endpoint("127.0.0.1"), std::invalid_argument);
  CHECK_THROWS_AS(parse_endpoint("127.0.0.1:0"), std::invalid_argument);
  CHECK_THROWS_AS(parse_endpoint("127.0.0.1:70000"), std::invalid_argument);
  CHECK_THROWS_AS(parse_endpoint(":9000"), std::invalid_argument);
  CHECK_THROWS_AS(parse_endpoint("h:9x"), std::invalid_argument);
}

TEST_CASE("udp sink delivers a datagram on loopback") {
  const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  socklen_t len = sizeof addr;
  REQUIRE(::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0);
  const int port = ntohs(addr.sin_port);

  UdpAlertSink sink("127.0.0.1:" + std::to_string(port));
  CHECK(sink.send("{\"x\":1}"));
  char buf[64] = {};
  const auto n = ::recv(fd, buf, sizeof buf, 0);
  ::close(fd);
  CHECK(std::string(buf, n > 0 ? static_cast<std::size_t>(n) : 0) == "{\"x\":1}");
}

TEST_CASE("run over an empty stream") {
  std::istringstream in;
  std::ostringstream preds;
  const auto s = run(default_geometry(), constant_weights(0), {&in, &preds});
  CHECK(s.frames == 0);
  CHECK(s.tracks == 0);
  CHECK(s.alerts == 0);
  CHECK(preds.str().empty());
  CHECK(nlohmann::json::parse(s.to_json())["frames"] == 0);
}

TEST_CASE("run is deterministic and writes one line per prediction") {
  ScenarioSpec spec;
  spec.n_vrus = 6;
  spec.keypoint_sigma = 2.0;
  spec.dropout = 0.05;
  spec.seed = 8;
  const auto sc = generate_scenario(spec, default_geometry());
  std::ostringstream stream;
  write_stream(stream, sc.frames);
  const auto w = nn::ModelParams<float>::xavier(nn::ModelConfig{}, 3);

  auto once = [&](std::string& preds, std::vector<I2VAlert>& alerts) {
    std::istringstream in(stream.str());
    std::ostringstream out;
    RunIo io{&in, &out};
    io.alert_log = &alerts;
    const auto s = run(default_geometry(), w, io);
    preds = out.str();
    return s;
  };
  std::string p1, p2;
  std::vector<I2VAlert> a1, a2;
  const auto s1 = once(p1, a1);
  once(p2, a2);
  CHECK(p1 == p2);
  CHECK(a1 == a2);
  CHECK(s1.frames == static_cast<std::int64_t>(sc.frames.size()));
  CHECK(s1.predictions == s1.windows);
  CHECK(static_cast<std::size_t>(std::count(p1.begin(), p1.end(), '\n')) == s1.predictions);
  CHECK(s1.alerts == a1.size());
  std::map<std::pair<int, Crosswalk>, int> per;
  for (const auto& a : a1) CHECK(++per[{a.track_id, a.crosswalk}] == 1);
}
