#include "teleop/vehicle.hpp"

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "teleop/rng.hpp"

namespace teleop {
namespace {

TEST(Actuator, FixedPoint) {
  for (double dt : {1e-4, 0.01, 0.5, 3.0}) {
    EXPECT_DOUBLE_EQ(actuator_step(0.5, 0.5, dt, 0.25), 0.5);
    EXPECT_DOUBLE_EQ(actuator_step(0.5, 0.5, dt, 0.25, Discretization::exact), 0.5);
  }
}

TEST(Actuator, ExactStepResponseAtTau) {
  double theta = 0.0;
  for (int i = 0; i < 250; ++i) {
    theta = actuator_step(theta, 1.0, 0.001, 0.25, Discretization::exact);
  }
  EXPECT_NEAR(theta, testing::first_order_step(0.25, 0.25), 1e-9);
  EXPECT_NEAR(theta, 0.6321, 1e-4);
}

TEST(Actuator, EulerTracksAnalyticSolution) {
  double euler = 0.0, exact = 0.0, max_diff = 0.0;
  for (int i = 1; i <= 1000; ++i) {
    euler = actuator_step(euler, 1.0, 0.001, 0.25);
    exact = actuator_step(exact, 1.0, 0.001, 0.25, Discretization::exact);
    const double analytic = testing::first_order_step(i * 0.001, 0.25);
    EXPECT_NEAR(exact, analytic, 1e-12);
    max_diff = std::max(max_diff, std::abs(euler - exact));
  }
  EXPECT_LT(max_diff, 1e-3);
}

TEST(Actuator, Errors) {
  EXPECT_THROW(actuator_step(0, 1, 0.0, 0.25), std::invalid_argument);
  EXPECT_THROW(actuator_step(0, 1, 0.01, -1.0), std::invalid_argument);
}

TEST(Actuator, MonotoneAndStable) {
  Rng rng(17);
  for (int i = 0; i < 5000; ++i) {
    const double theta = rng.uniform(-1, 1);
    const double u = rng.uniform(-1, 1);
    const double tau = rng.uniform(0.01, 1.0);
    const double dt_euler = rng.uniform(1e-4, tau);  // dt <= tau
    const double dt_any = rng.uniform(1e-4, 5.0);
    const double e = actuator_step(theta, u, dt_euler, tau);
    const double x = actuator_step(theta, u, dt_any, tau, Discretization::exact);
    if (u > theta) {
      EXPECT_GT(e, theta);
      EXPECT_GT(x, theta);
    } else if (u < theta) {
      EXPECT_LT(e, theta);
      EXPECT_LT(x, theta);
    }
    EXPECT_LE(std::abs(e - u), std::abs(theta - u) + 1e-15);
    EXPECT_LE(std::abs(x - u), std::abs(theta - u) + 1e-15);
  }
}

VehicleParams coasting() {
  VehicleParams p;
  p.drag_per_s = 0.0;
  return p;
}

TEST(Dynamics, StraightLine) {
  VehicleState s;
  s.speed_mps = 5.0;
  const auto p = coasting();
  for (int i = 0; i < 1000; ++i) s = dynamics_step(s, p, 0.001, {});
  EXPECT_NEAR(s.x_m, 5.0, 1e-12);
  EXPECT_EQ(s.y_m, 0.0);
  EXPECT_EQ(s.heading_rad, 0.0);
  EXPECT_EQ(s.speed_mps, 5.0);
}

TEST(Dynamics, StraightLineAtAngleMatchesClosedForm) {
  VehicleState s;
  s.speed_mps = 7.0;
  s.heading_rad = 0.7;
  const auto p = coasting();
  for (int i = 1; i <= 500; ++i) {
    s = dynamics_step(s, p, 0.01, {});
    const double d = 7.0 * 0.01 * i;
    EXPECT_NEAR(s.x_m, d * std::cos(0.7), 1e-12);
    EXPECT_NEAR(s.y_m, d * std::sin(0.7), 1e-12);
  }
}

TEST(Dynamics, StationaryVehicleDoesNotMove) {
  VehicleState s;
  s.steering_norm = 0.8;
  s.heading_rad = 0.3;
  const auto p = coasting();
  for (int i = 0; i < 100; ++i) s = dynamics_step(s, p, 0.01, {0.8, 0.0, 0.0});
  EXPECT_EQ(s.x_m, 0.0);
  EXPECT_EQ(s.y_m, 0.0);
  EXPECT_EQ(s.heading_rad, 0.3);
}

// tan(delta) = L / 10 gives a 10 m turning circle.
TEST(Dynamics, CircleOfRadiusTen) {
  auto p = coasting();
  VehicleState s;
  s.speed_mps = 5.0;
  s.steering_norm = std::atan(p.wheelbase_m / 10.0) / p.max_steer_rad;
  const double dt = 0.001;
  const double half_arc = std::numbers::pi * 10.0;
  const int half_steps = static_cast<int>(std::round(half_arc / (5.0 * dt)));
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < 2 * half_steps; ++i) {
    if (i == half_steps) {
      EXPECT_NEAR(s.heading_rad, std::numbers::pi, 1e-3);
    }
    pts.emplace_back(s.x_m, s.y_m);
    s = dynamics_step(s, p, dt, {});
  }
  double cx = 0, cy = 0;
  for (auto [x, y] : pts) {
    cx += x;
    cy += y;
  }
  cx /= pts.size();
  cy /= pts.size();
  for (auto [x, y] : pts) {
    EXPECT_NEAR(std::hypot(x - cx, y - cy), 10.0, 10.0 * 1e-3);
  }
}

TEST(Dynamics, LongitudinalLaw) {
  VehicleParams p;
  VehicleState s;
  s = dynamics_step(s, p, 0.1, {0.0, 1.0, 0.0});
  EXPECT_NEAR(s.speed_mps, 0.25, 1e-12);
  s.speed_mps = 10.0;
  s = dynamics_step(s, p, 0.1, {0.0, 0.0, 1.0});
  EXPECT_NEAR(s.speed_mps, 10.0 - (5.0 + 0.5) * 0.1, 1e-12);
  s.speed_mps = 0.1;
  s = dynamics_step(s, p, 1.0, {0.0, 0.0, 1.0});
  EXPECT_EQ(s.speed_mps, 0.0);
  s.speed_mps = p.max_speed_mps;
  s = dynamics_step(s, p, 1.0, {0.0, 1.0, 0.0});
  EXPECT_EQ(s.speed_mps, p.max_speed_mps);
}

std::string cmd(std::uint64_t seq, Micros ts, double steering = 0.0,
                double throttle = 0.0, double brake = 0.0) {
  return encode(TeleopCommand{seq, ts, steering, throttle, brake});
}

TEST(AgentTick, CommandWaitsForNextTick) {
  VehicleAgent agent(VehicleParams{});
  agent.tick(0, {});
  const InboundRecord in{cmd(1, 0), 3'000};
  agent.tick(10'000, std::span(&in, 1));
  ASSERT_EQ(agent.processed().size(), 1u);
  EXPECT_EQ(agent.processed()[0].processed_us - agent.processed()[0].arrival_us, 7'000);
}

TEST(AgentTick, LatestSeqWins) {
  VehicleAgent agent(VehicleParams{});
  const std::vector<InboundRecord> in{{cmd(5, 0, 0.5), 1}, {cmd(4, 0, -0.5), 2}};
  agent.tick(10'000, in);
  EXPECT_EQ(agent.state().last_cmd->seq, 5u);
  EXPECT_EQ(agent.stale_count(), 1u);
  // A stale command in a later tick is discarded too.
  const InboundRecord old{cmd(3, 0), 10'500};
  agent.tick(20'000, std::span(&old, 1));
  EXPECT_EQ(agent.state().last_cmd->seq, 5u);
  EXPECT_EQ(agent.stale_count(), 2u);
}

TEST(AgentTick, MalformedRecordsAreCountedAndSkipped) {
  VehicleAgent agent(VehicleParams{});
  const std::vector<InboundRecord> in{{"garbage", 1},
                                      {R"({"kind":"command","seq":1})", 2},
                                      {cmd(2, 0, 0.25), 3}};
  agent.tick(10'000, in);
  EXPECT_EQ(agent.malformed_count(), 2u);
  EXPECT_EQ(agent.state().last_cmd->seq, 2u);
}

TEST(AgentTick, TelemetryEchoesLastCommand) {
  VehicleParams p;
  p.telemetry_period_us = 50'000;
  VehicleAgent agent(p);
  auto t0 = agent.tick(0, {});
  ASSERT_EQ(t0.size(), 1u);
  EXPECT_EQ(t0[0].echo_seq, 0u);
  EXPECT_EQ(t0[0].echo_ts_us, 0);
  EXPECT_EQ(t0[0].seq, 1u);

  const InboundRecord in{cmd(9, 12'345, 1.0), 20'000};
  std::vector<Telemetry> all;
  for (Micros t = 10'000; t <= 100'000; t += 10'000) {
    auto out = agent.tick(t, t == 20'000 ? std::span(&in, 1) : std::span<const InboundRecord>{});
    all.insert(all.end(), out.begin(), out.end());
  }
  ASSERT_EQ(all.size(), 2u);  // at 50 ms and 100 ms
  EXPECT_EQ(all[0].ts_us, 50'000);
  EXPECT_EQ(all[0].seq, 2u);
  EXPECT_EQ(all[0].echo_seq, 9u);
  EXPECT_EQ(all[0].echo_ts_us, 12'345);
  EXPECT_GT(all[1].steering_pos, all[0].steering_pos);
}

// Oracle: arrival phase uniform within the tick -> mean wait = tick / 2.
TEST(AgentTick, UniformArrivalsWaitHalfATickOnAverage) {
  VehicleAgent agent(VehicleParams{});
  Rng rng(2024);
  const Micros tick = 10'000;
  const int n = 10'000;
  for (int k = 0; k < n; ++k) {
    const Micros arrival = k * tick + rng.uniform_int(1, tick);
    const InboundRecord in{cmd(k + 1, k * tick), arrival};
    agent.tick((k + 1) * tick, std::span(&in, 1));
  }
  ASSERT_EQ(agent.processed().size(), static_cast<std::size_t>(n));
  double sum = 0;
  for (const auto& p : agent.processed()) {
    const Micros wait = p.processed_us - p.arrival_us;
    ASSERT_GE(wait, 0);
    ASSERT_LT(wait, tick);
    sum += static_cast<double>(wait);
  }
  EXPECT_NEAR(sum / n, 5'000.0, 100.0);
}

TEST(Failsafe, Thresholds) {
  VehicleAgent agent(VehicleParams{});
  const InboundRecord in{cmd(1, 0, 0.3, 0.6, 0.0), 0};
  agent.tick(0, std::span(&in, 1));
  EXPECT_EQ(agent.failsafe(499'000), (Controls{0.3, 0.6, 0.0}));
  EXPECT_FALSE(agent.failsafe_active(499'000));
  const auto c600 = agent.failsafe(600'000);
  EXPECT_EQ(c600.throttle, 0.0);
  EXPECT_EQ(c600.steering, 0.3);
  EXPECT_NEAR(c600.brake, 0.1, 1e-12);
  EXPECT_EQ(agent.failsafe(1'500'000).brake, 1.0);
  EXPECT_EQ(agent.failsafe(9'000'000).brake, 1.0);
}

TEST(Failsafe, EngagesWithoutAnyCommand) {
  VehicleAgent agent(VehicleParams{});
  for (Micros t = 0; t <= 700'000; t += 10'000) agent.tick(t, {});
  EXPECT_TRUE(agent.failsafe_active(700'000));
  EXPECT_GT(agent.failsafe(700'000).brake, 0.0);
}

}  // namespace
}  // namespace teleop
