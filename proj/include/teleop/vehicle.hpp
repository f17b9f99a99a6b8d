#pragma once

// Remote-vehicle agent: fixed-rate command loop, first-order steering
// actuator, kinematic bicycle surrogate and telemetry with timestamp echo.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "teleop/messages.hpp"

namespace teleop {

enum class Discretization {
  euler,  // theta + (dt/tau)(u - theta)
  exact,  // theta + (1 - exp(-dt/tau))(u - theta)
};

/// One step of the first-order steering lag, clamped to [-1, 1].
inline double actuator_step(double theta, double u, double dt_s, double tau_s,
                            Discretization method = Discretization::euler) {
  if (!(dt_s > 0.0)) throw std::invalid_argument("actuator_step: dt_s must be > 0");
  if (!(tau_s > 0.0)) throw std::invalid_argument("actuator_step: tau_s must be > 0");
  const double gain = method == Discretization::exact
                          ? -std::expm1(-dt_s / tau_s)
                          : dt_s / tau_s;
  return std::clamp(theta + gain * (u - theta), -1.0, 1.0);
}

struct VehicleParams {
  double wheelbase_m = 2.57;
  double tau_steer_s = 0.2;
  double max_steer_rad = 0.6;
  double max_speed_mps = 20.0;
  Micros tick_period_us = 10'000;       // 100 Hz command loop
  Micros telemetry_period_us = 50'000;  // 20 Hz
  Micros cmd_timeout_us = 500'000;
  Micros brake_ramp_us = 1'000'000;
  double accel_max_mps2 = 2.5;
  double brake_max_mps2 = 5.0;
  double drag_per_s = 0.05;
  Discretization steer_discretization = Discretization::exact;
};

inline std::vector<std::string> check(const VehicleParams& p) {
  std::vector<std::string> errors;
  auto positive = [&](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      errors.push_back(std::string(name) + ": must be > 0");
    }
  };
  auto non_negative = [&](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      errors.push_back(std::string(name) + ": must be >= 0");
    }
  };
  positive(p.wheelbase_m, "wheelbase_m");
  positive(p.tau_steer_s, "tau_steer_s");
  positive(p.max_steer_rad, "max_steer_rad");
  positive(p.max_speed_mps, "max_speed_mps");
  positive(static_cast<double>(p.tick_period_us), "tick_period_us");
  positive(static_cast<double>(p.telemetry_period_us), "telemetry_period_us");
  positive(static_cast<double>(p.cmd_timeout_us), "cmd_timeout_us");
  positive(static_cast<double>(p.brake_ramp_us), "brake_ramp_us");
  non_negative(p.accel_max_mps2, "accel_max_mps2");
  non_negative(p.brake_max_mps2, "brake_max_mps2");
  non_negative(p.drag_per_s, "drag_per_s");
  if (p.max_steer_rad >= std::numbers::pi / 2) {
    errors.push_back("max_steer_rad: must be < pi/2");
  }
  return errors;
}

/// Normalized driver inputs actually applied to the plant.
struct Controls {
  double steering = 0.0;
  double throttle = 0.0;
  double brake = 0.0;

  friend bool operator==(const Controls&, const Controls&) = default;
};

struct VehicleState {
  double x_m = 0.0;
  double y_m = 0.0;
  double heading_rad = 0.0;
  double speed_mps = 0.0;
  double steering_norm = 0.0;
  std::optional<TeleopCommand> last_cmd;
};

/// Kinematic bicycle step. Position integrates with the pre-step heading and
/// speed; speed follows v' = v + (a*throttle - b*brake - c*v) dt.
inline VehicleState dynamics_step(const VehicleState& state,
                                  const VehicleParams& params, double dt_s,
                                  const Controls& applied) {
  VehicleState next = state;
  const double delta = state.steering_norm * params.max_steer_rad;
  const double v = state.speed_mps;
  next.heading_rad = state.heading_rad + (v / params.wheelbase_m) * std::tan(delta) * dt_s;
  next.x_m = state.x_m + v * std::cos(state.heading_rad) * dt_s;
  next.y_m = state.y_m + v * std::sin(state.heading_rad) * dt_s;
  const double accel = params.accel_max_mps2 * applied.throttle -
                       params.brake_max_mps2 * applied.brake -
                       params.drag_per_s * v;
  next.speed_mps = std::clamp(v + accel * dt_s, 0.0, params.max_speed_mps);
  return next;
}

/// An inbound transport record and the time it reached the vehicle.
struct InboundRecord {
  std::string record;
  Micros arrival_us = 0;
};

struct ProcessedCommand {
  std::uint64_t seq = 0;
  Micros arrival_us = 0;
  Micros processed_us = 0;
};

class VehicleAgent {
 public:
  explicit VehicleAgent(VehicleParams params, VehicleState initial = {},
                        Micros start_us = 0)
      : params_(params), state_(std::move(initial)), last_rx_us_(start_us),
        next_telemetry_us_(start_us) {
    if (auto errors = check(params_); !errors.empty()) {
      throw std::invalid_argument("invalid vehicle params: " + errors.front());
    }
  }

  /// Effective controls at now_us. Without a command for cmd_timeout_us the
  /// throttle is cut and the brake ramps to 1 over brake_ramp_us; steering
  /// holds.
  Controls failsafe(Micros now_us) const {
    Controls c;
    if (state_.last_cmd) {
      c = {state_.last_cmd->steering, state_.last_cmd->throttle,
           state_.last_cmd->brake};
    }
    const Micros silence = now_us - last_rx_us_;
    if (silence > params_.cmd_timeout_us) {
      const double ramp =
          static_cast<double>(silence - params_.cmd_timeout_us) /
          static_cast<double>(params_.brake_ramp_us);
      c.throttle = 0.0;
      c.brake = std::max(c.brake, std::min(ramp, 1.0));
    }
    return c;
  }

  bool failsafe_active(Micros now_us) const {
    return now_us - last_rx_us_ > params_.cmd_timeout_us;
  }

  /// One loop iteration: take the freshest inbound command, advance actuator
  /// and dynamics by one tick period, and emit telemetry when due.
  std::vector<Telemetry> tick(Micros now_us, std::span<const InboundRecord> inbound) {
    std::optional<TeleopCommand> freshest;
    Micros freshest_arrival = 0;
    for (const auto& in : inbound) {
      TeleopCommand cmd;
      try {
        cmd = decode_as<TeleopCommand>(in.record);
      } catch (const MessageError&) {
        ++malformed_;
        continue;
      }
      const std::uint64_t floor_seq =
          freshest ? freshest->seq
                   : (state_.last_cmd ? state_.last_cmd->seq : 0);
      if (cmd.seq <= floor_seq) {
        ++stale_;
        continue;
      }
      if (freshest) ++stale_;  // superseded within this tick
      freshest = cmd;
      freshest_arrival = in.arrival_us;
    }
    if (freshest) {
      state_.last_cmd = *freshest;
      last_rx_us_ = now_us;
      processed_.push_back({freshest->seq, freshest_arrival, now_us});
    }

    const Controls applied = failsafe(now_us);
    const double dt_s = static_cast<double>(params_.tick_period_us) * 1e-6;
    state_.steering_norm =
        actuator_step(state_.steering_norm, applied.steering, dt_s,
                      params_.tau_steer_s, params_.steer_discretization);
    state_ = dynamics_step(state_, params_, dt_s, applied);

    std::vector<Telemetry> out;
    if (now_us >= next_telemetry_us_) {
      Telemetry t;
      t.seq = next_telemetry_seq_++;
      t.ts_us = now_us;
      t.speed_mps = state_.speed_mps;
      t.steering_pos = state_.steering_norm;
      if (state_.last_cmd) {
        t.echo_seq = state_.last_cmd->seq;
        t.echo_ts_us = state_.last_cmd->ts_us;
      }
      out.push_back(t);
      while (next_telemetry_us_ <= now_us) next_telemetry_us_ += params_.telemetry_period_us;
    }
    return out;
  }

  const VehicleState& state() const { return state_; }
  const VehicleParams& params() const { return params_; }
  const std::vector<ProcessedCommand>& processed() const { return processed_; }
  std::size_t malformed_count() const { return malformed_; }
  std::size_t stale_count() const { return stale_; }

 private:
  VehicleParams params_;
  VehicleState state_;
  Micros last_rx_us_;
  Micros next_telemetry_us_;
  std::uint64_t next_telemetry_seq_ = 1;
  std::vector<ProcessedCommand> processed_;
  std::size_t malformed_ = 0;
  std::size_t stale_ = 0;
};

}  // namespace teleop
