#include <chrono>
#include <cmath>
#include <future>
#include <numbers>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <gtest/gtest.h>

#include "teleop/bridge.hpp"
#include "teleop/runner.hpp"

using namespace teleop;
namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;
using tcp = net::ip::tcp;

namespace {

Scenario from_text(const std::string& text) {
  auto r = validate(text);
  if (!r.ok()) throw ScenarioError(r.errors);
  return *r.scenario;
}

/// Minimal synchronous cockpit stand-in.
class Client {
 public:
  explicit Client(std::uint16_t port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    // The bridge may still be starting up; retry briefly.
    for (int attempt = 0;; ++attempt) {
      try {
        net::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
        ws_.next_layer().set_option(tcp::no_delay(true));
        break;
      } catch (const boost::system::system_error&) {
        if (attempt > 100) throw;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
    }
    ws_.handshake("127.0.0.1", "/");
    ws_.text(true);
  }

  void send(const std::string& text) { ws_.write(net::buffer(text)); }

  /// Next text frame, or empty once the server closes.
  std::string receive() {
    beast::flat_buffer buf;
    beast::error_code ec;
    ws_.read(buf, ec);
    if (ec) return {};
    return beast::buffers_to_string(buf.data());
  }

  void close() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }

 private:
  net::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

const char* kLive = R"(
name: bridge
duration_s: 1.5
mode: realtime
vehicle: {telemetry_period_us: 50000}
uplink: {base_delay_us: 20000}
downlink: {base_delay_us: 20000}
operator: {kind: live}
)";

}  // namespace

TEST(Bridge, NeedsRealtimeMode) {
  auto sc = from_text("duration_s: 1\n");
  EXPECT_THROW(Bridge b(sc), BridgeError);
}

TEST(Bridge, BusyPortIsAnError) {
  auto sc = from_text(kLive);
  Bridge first(sc);
  BridgeOptions opt;
  opt.port = first.port();
  EXPECT_THROW(Bridge second(sc, opt), BridgeError);
}

TEST(Bridge, FailsafeEngagesWithNoClient) {
  auto sc = from_text(kLive);
  Bridge bridge(sc);
  bridge.run();
  const auto& s = bridge.session();
  EXPECT_TRUE(s.finished());
  EXPECT_EQ(bridge.connections(), 0u);
  ASSERT_FALSE(s.trajectory().empty());
  const auto& last = s.trajectory().back();
  EXPECT_TRUE(last.failsafe);
  EXPECT_EQ(last.applied.throttle, 0.0);
  EXPECT_GT(last.applied.brake, 0.9);  // 1.5 s silence: ramp at 1.0
  EXPECT_TRUE(s.vehicle().failsafe_active(s.end_us()));
}

TEST(Bridge, ServesTelemetryFramesAndSummaries) {
  auto sc = from_text(kLive);
  Bridge bridge(sc);
  std::thread engine([&] { bridge.run(); });
  Client client(bridge.port());
  std::set<std::string> kinds;
  std::optional<nlohmann::json> summary;
  for (;;) {
    const auto text = client.receive();
    if (text.empty()) break;
    const auto j = nlohmann::json::parse(text);
    kinds.insert(j["kind"].get<std::string>());
    if (j["kind"] == "summary") summary = j;
    if (j["kind"] == "telemetry") {
      EXPECT_NO_THROW(decode_as<Telemetry>(text));
    }
    if (j["kind"] == "frame-meta") {
      EXPECT_NO_THROW(decode_as<FrameMeta>(text));
    }
  }
  engine.join();
  EXPECT_TRUE(kinds.contains("telemetry"));
  EXPECT_TRUE(kinds.contains("frame-meta"));
  EXPECT_TRUE(kinds.contains("summary"));
  ASSERT_TRUE(summary);
  EXPECT_TRUE(summary->contains("rtt"));
  EXPECT_TRUE(summary->contains("g2g"));
  EXPECT_EQ((*summary)["window_us"], 5'000'000);
}

TEST(Bridge, OutOfRangeSteeringIsRejected) {
  auto sc = from_text(kLive);
  Bridge bridge(sc);
  std::thread engine([&] { bridge.run(); });
  {
    Client client(bridge.port());
    client.send(encode(TeleopCommand{1, 0, 0.3, 0.1, 0}));
    client.send(R"({"kind":"command","seq":2,"ts_us":1,"steering":2.0,"throttle":0,"brake":0})");
    client.send("{not json");
    client.close();
  }
  engine.join();
  const auto& s = bridge.session();
  EXPECT_EQ(s.rejected_count(), 2u);
  ASSERT_EQ(s.commands().size(), 1u);
  EXPECT_EQ(s.commands()[0].cmd.steering, 0.3);
  ASSERT_TRUE(s.vehicle().state().last_cmd);
  EXPECT_EQ(s.vehicle().state().last_cmd->seq, 1u);
}

// A scripted client steers a 0.2 Hz sine through a 40 ms uplink. The live
// estimate must match the headless run of the same scenario within one grid
// step, and replaying the recorded inbound stream must reproduce the live
// trajectory exactly.
TEST(Bridge, ScriptedSineMatchesHeadlessRun) {
  auto sc = from_text(R"(
name: bridge_sine
duration_s: 12
mode: realtime
vehicle: {tau_steer_s: 0.2}
uplink: {base_delay_us: 40000}
downlink: {base_delay_us: 40000}
video: {enabled: false}
operator: {kind: sine, amplitude: 0.5, frequency_hz: 0.2, throttle: 0.2}
analysis: {lag_window_us: 1000000}
)");
  Bridge bridge(sc);
  std::thread engine([&] { bridge.run(); });
  {
    Client client(bridge.port());
    const auto start = std::chrono::steady_clock::now();
    const auto end = start + std::chrono::microseconds(sc.duration_us());
    for (std::uint64_t seq = 1;; ++seq) {
      const auto at = start + std::chrono::milliseconds(10 * (seq - 1));
      if (at >= end) break;
      std::this_thread::sleep_until(at);
      const Micros t = static_cast<Micros>(10'000 * (seq - 1));
      const Controls c = sc.op.at(t);
      client.send(encode(TeleopCommand{seq, t, c.steering, c.throttle, c.brake}));
    }
    client.close();
  }
  engine.join();

  const auto& live = bridge.session();
  EXPECT_EQ(live.rejected_count(), 0u);
  const auto live_summary = summarize(collect(live), run_info(sc));
  ASSERT_TRUE(live_summary["steering_lag"].contains("lag_us")) << live_summary.dump();

  Scenario headless = sc;
  headless.mode = RunMode::virtual_clock;
  Session scripted(headless);
  ScriptedOperator op(headless.op);
  while (!op.done(scripted.end_us())) {
    const Micros t = op.next_send_us();
    scripted.submit_command(op.next_command(), t);
  }
  scripted.advance_to(scripted.end_us());
  const auto headless_summary = summarize(collect(scripted), run_info(headless));
  ASSERT_TRUE(headless_summary["steering_lag"].contains("lag_us"));

  const auto& a = live_summary["steering_lag"];
  const auto& b = headless_summary["steering_lag"];
  EXPECT_LE(std::abs(a["lag_us"].get<Micros>() - b["lag_us"].get<Micros>()),
            std::max(a["grid_us"].get<Micros>(), b["grid_us"].get<Micros>()))
      << "live " << a.dump() << " headless " << b.dump();

  Scenario replay_sc = sc;
  replay_sc.op.kind = OperatorScript::Kind::live;
  Session replayed(replay_sc);
  replay(replayed, live.inbound_log());
  ASSERT_EQ(replayed.trajectory().size(), live.trajectory().size());
  for (std::size_t i = 0; i < live.trajectory().size(); ++i) {
    const auto& x = live.trajectory()[i];
    const auto& y = replayed.trajectory()[i];
    ASSERT_EQ(x.t_us, y.t_us);
    ASSERT_EQ(x.x_m, y.x_m) << i;
    ASSERT_EQ(x.y_m, y.y_m) << i;
    ASSERT_EQ(x.steering_norm, y.steering_norm) << i;
    ASSERT_EQ(x.speed_mps, y.speed_mps) << i;
  }
}
