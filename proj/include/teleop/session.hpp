#pragma once

// Discrete-event engine shared by headless runs, replays and the live bridge.
// The operator side calls advance_to(t) and then submit_command(text, t);
// everything else (uplink, vehicle ticks, downlink, video displays) happens
// inside advance_to in time order. At equal times downlink deliveries come
// first, then the vehicle tick, then frame displays.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "teleop/messages.hpp"
#include "teleop/metrics.hpp"
#include "teleop/netem.hpp"
#include "teleop/rng.hpp"
#include "teleop/scenario.hpp"
#include "teleop/vehicle.hpp"
#include "teleop/videopath.hpp"

namespace teleop {

/// Random stream ids under the scenario seed.
namespace streams {
inline constexpr std::uint64_t uplink = 1;
inline constexpr std::uint64_t downlink = 2;
inline constexpr std::uint64_t video = 3;
inline constexpr std::uint64_t scene = 4;
}  // namespace streams

struct CommandRecord {
  TeleopCommand cmd;
  Micros submit_us = 0;  // session clock
};

struct TelemetryRecord {
  Telemetry t;
  Micros recv_us = 0;
};

struct TrajectoryRecord {
  Micros t_us = 0;
  double x_m = 0.0;
  double y_m = 0.0;
  double heading_rad = 0.0;
  double speed_mps = 0.0;
  double steering_norm = 0.0;
  Controls applied;
  bool failsafe = false;
};

struct ChannelStats {
  std::string name;
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
};

/// An inbound operator record as it reached the session, kept for replay.
struct InboundLogEntry {
  Micros t_us = 0;
  std::string text;
};

inline ChannelSpec seeded(ChannelSpec spec, std::uint64_t scenario_seed) {
  if (spec.seed == 0) spec.seed = scenario_seed;
  return spec;
}

class Session {
 public:
  using Outbound = std::function<void(const std::string&)>;

  explicit Session(const Scenario& sc)
      : sc_(sc),
        end_us_(sc.duration_us()),
        uplink_(seeded(sc.uplink, sc.seed), streams::uplink),
        downlink_(seeded(sc.downlink, sc.seed), streams::downlink),
        vehicle_(sc.vehicle, {}, 0) {
    if (sc.video_enabled) {
      ChannelSpec net = seeded(sc.video.net_channel, sc.seed);
      EmulatedChannel<std::string> video_net(net, streams::video);
      Rng scene(sc.seed, streams::scene);
      const auto events = uniform_frame_events(sc.video.fps, 0, end_us_, scene);
      frames_ = pipeline_run(sc.video, events, video_net);
      video_stats_ = {"video", video_net.sent(), video_net.delivered(), video_net.dropped()};
      std::stable_sort(frames_.begin(), frames_.end(),
                       [](const VideoFrameRecord& a, const VideoFrameRecord& b) {
                         return a.display_us < b.display_us;
                       });
    }
  }

  void on_outbound(Outbound cb) { outbound_ = std::move(cb); }

  Micros now() const { return now_; }
  Micros end_us() const { return end_us_; }
  bool finished() const { return now_ >= end_us_; }

  /// Processes every event with time <= now_us (clamped to the scenario end).
  void advance_to(Micros now_us) {
    now_us = std::min(now_us, end_us_);
    if (now_us < now_) throw std::logic_error("Session::advance_to: time went backwards");
    constexpr Micros never = std::numeric_limits<Micros>::max();
    for (;;) {
      const Micros t_down = downlink_.next_delivery_time().value_or(never);
      const Micros t_disp =
          next_frame_ < frames_.size() ? frames_[next_frame_].display_us : never;
      const Micros t = std::min({t_down, next_tick_us_, t_disp});
      if (t > now_us) break;
      if (t == t_down) {
        for (auto& d : downlink_.poll(t)) receive_telemetry(d.payload, t);
      } else if (t == next_tick_us_) {
        vehicle_tick(t);
      } else {
        display_frame(frames_[next_frame_++]);
      }
    }
    now_ = now_us;
  }

  /// Accepts one operator record at now_us. Malformed, out-of-range and
  /// out-of-order commands are rejected and counted; nothing else changes.
  bool submit_command(std::string_view text, Micros now_us) {
    advance_to(now_us);
    inbound_log_.push_back({now_, std::string(text)});
    TeleopCommand cmd;
    try {
      cmd = decode_as<TeleopCommand>(text);
    } catch (const MessageError&) {
      ++rejected_;
      return false;
    }
    if (!order_.accept(cmd)) {
      ++rejected_;
      return false;
    }
    commands_.push_back({cmd, now_});
    submit_time_.emplace(cmd.seq, now_);
    uplink_.send(std::string(text), now_);
    return true;
  }

  const Scenario& scenario() const { return sc_; }
  const VehicleAgent& vehicle() const { return vehicle_; }
  const std::vector<CommandRecord>& commands() const { return commands_; }
  const std::vector<TelemetryRecord>& telemetry() const { return telemetry_; }
  const std::vector<TrajectoryRecord>& trajectory() const { return trajectory_; }
  const std::vector<InboundLogEntry>& inbound_log() const { return inbound_log_; }
  const RttCollector& rtt() const { return rtt_; }
  std::size_t rejected_count() const { return rejected_; }

  /// Frames whose display time has been reached.
  std::vector<VideoFrameRecord> displayed_frames() const {
    std::vector<VideoFrameRecord> out(frames_.begin(),
                                      frames_.begin() + static_cast<std::ptrdiff_t>(next_frame_));
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      return std::tie(a.frame_id, a.event_time_us) < std::tie(b.frame_id, b.event_time_us);
    });
    return out;
  }

  std::vector<ChannelStats> channel_stats() const {
    std::vector<ChannelStats> out{
        {"uplink", uplink_.sent(), uplink_.delivered(), uplink_.dropped()},
        {"downlink", downlink_.sent(), downlink_.delivered(), downlink_.dropped()}};
    if (sc_.video_enabled) out.push_back(video_stats_);
    return out;
  }

 private:
  void receive_telemetry(const std::string& text, Micros t) {
    Telemetry tel = decode_as<Telemetry>(text);
    telemetry_.push_back({tel, t});
    // RTT on the session clock: the echo names the command, the submit time
    // comes from our own log. Scripted operators stamp ts_us with the same
    // clock, live clients may not.
    if (tel.has_echo()) {
      if (auto it = submit_time_.find(tel.echo_seq); it != submit_time_.end()) {
        Telemetry local = tel;
        local.echo_ts_us = it->second;
        rtt_.add(local, t);
      }
    }
    if (outbound_) outbound_(text);
  }

  void vehicle_tick(Micros t) {
    std::vector<InboundRecord> inbound;
    for (auto& d : uplink_.poll(t)) {
      inbound.push_back({std::move(d.payload), d.info.delivery_time_us});
    }
    for (const auto& tel : vehicle_.tick(t, inbound)) {
      downlink_.send(encode(tel), t);
    }
    const auto& s = vehicle_.state();
    trajectory_.push_back({t, s.x_m, s.y_m, s.heading_rad, s.speed_mps, s.steering_norm,
                           vehicle_.failsafe(t), vehicle_.failsafe_active(t)});
    next_tick_us_ = t + sc_.vehicle.tick_period_us;
  }

  void display_frame(const VideoFrameRecord& r) {
    if (outbound_) {
      outbound_(encode(FrameMeta{r.frame_id, r.event_time_us, r.display_us, r.g2g_us}));
    }
  }

  Scenario sc_;
  Micros end_us_;
  Micros now_ = 0;
  Micros next_tick_us_ = 0;
  EmulatedChannel<std::string> uplink_;
  EmulatedChannel<std::string> downlink_;
  VehicleAgent vehicle_;
  std::vector<VideoFrameRecord> frames_;  // by display time
  std::size_t next_frame_ = 0;
  ChannelStats video_stats_;
  Outbound outbound_;
  StreamValidator order_;
  std::unordered_map<std::uint64_t, Micros> submit_time_;
  std::vector<CommandRecord> commands_;
  std::vector<TelemetryRecord> telemetry_;
  std::vector<TrajectoryRecord> trajectory_;
  std::vector<InboundLogEntry> inbound_log_;
  RttCollector rtt_;
  std::size_t rejected_ = 0;
};

/// Drives a session with the scenario's scripted operator. Commands go out
/// at k * period for every k with k * period < duration, up to max_commands.
class ScriptedOperator {
 public:
  explicit ScriptedOperator(const OperatorScript& script) : script_(script) {}

  bool done(Micros end_us) const {
    return next_send_us() >= end_us ||
           (script_.max_commands > 0 && k_ >= script_.max_commands);
  }

  Micros next_send_us() const { return static_cast<Micros>(k_) * script_.period_us(); }

  std::string next_command() {
    const Micros t = next_send_us();
    const Controls c = script_.at(t);
    ++k_;
    return encode(TeleopCommand{k_, t, c.steering, c.throttle, c.brake});
  }

 private:
  OperatorScript script_;
  std::uint64_t k_ = 0;
};

/// Feeds logged inbound records back through a fresh session.
inline void replay(Session& session, const std::vector<InboundLogEntry>& inbound) {
  for (const auto& e : inbound) session.submit_command(e.text, e.t_us);
  session.advance_to(session.end_us());
}

}  // namespace teleop
