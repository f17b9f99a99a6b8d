#pragma once

// Command and telemetry wire messages.
//
// Every message travels as one UTF-8 JSON object per transport record, tagged
// by a "kind" field. Field order in the encoded text is fixed, so identical
// messages always encode to identical bytes.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

#include <nlohmann/json.hpp>

namespace teleop {

/// Microseconds on some actor's clock. All timestamps in the project use it.
using Micros = std::int64_t;

struct TeleopCommand {
  std::uint64_t seq = 1;
  Micros ts_us = 0;
  double steering = 0.0;  // [-1, 1]
  double throttle = 0.0;  // [0, 1]
  double brake = 0.0;     // [0, 1]

  friend bool operator==(const TeleopCommand&, const TeleopCommand&) = default;
};

/// Vehicle status. echo_seq == 0 && echo_ts_us == 0 means no command has been
/// processed yet.
struct Telemetry {
  std::uint64_t seq = 1;
  Micros ts_us = 0;
  double speed_mps = 0.0;
  double steering_pos = 0.0;
  Micros echo_ts_us = 0;
  std::uint64_t echo_seq = 0;

  bool has_echo() const { return echo_seq != 0; }

  friend bool operator==(const Telemetry&, const Telemetry&) = default;
};

/// Per-frame glass-to-glass sample pushed to live clients.
struct FrameMeta {
  std::uint64_t frame_id = 0;
  Micros event_us = 0;
  Micros display_us = 0;
  Micros g2g_us = 0;

  friend bool operator==(const FrameMeta&, const FrameMeta&) = default;
};

enum class MessageKind { command, telemetry, frame_meta };

inline std::string_view to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::command: return "command";
    case MessageKind::telemetry: return "telemetry";
    case MessageKind::frame_meta: return "frame-meta";
  }
  return "unknown";
}

using Message = std::variant<TeleopCommand, Telemetry, FrameMeta>;

enum class MessageErrc { malformed, missing_field, wrong_kind, out_of_range };

class MessageError : public std::runtime_error {
 public:
  MessageError(MessageErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  MessageErrc code() const noexcept { return code_; }

 private:
  MessageErrc code_;
};

namespace detail {

inline void require_range(double value, double lo, double hi,
                          std::string_view field) {
  // Written so that NaN fails the check.
  if (!(value >= lo && value <= hi)) {
    throw MessageError(MessageErrc::out_of_range,
                       std::string(field) + " out of range: " +
                           std::to_string(value));
  }
}

inline void check_seq(std::uint64_t seq, std::string_view field) {
  if (seq == 0) {
    throw MessageError(MessageErrc::out_of_range,
                       std::string(field) + " must start at 1");
  }
}

inline void check_ts(Micros ts, std::string_view field) {
  if (ts < 0) {
    throw MessageError(MessageErrc::out_of_range,
                       std::string(field) + " must be non-negative");
  }
}

inline const nlohmann::json& field(const nlohmann::json& obj,
                                   std::string_view name) {
  auto it = obj.find(name);
  if (it == obj.end()) {
    throw MessageError(MessageErrc::missing_field,
                       "missing field: " + std::string(name));
  }
  return *it;
}

inline std::uint64_t get_count(const nlohmann::json& obj,
                               std::string_view name) {
  const auto& v = field(obj, name);
  if (!v.is_number_unsigned() &&
      !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw MessageError(MessageErrc::malformed,
                       std::string(name) + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline Micros get_micros(const nlohmann::json& obj, std::string_view name) {
  const auto& v = field(obj, name);
  if (!v.is_number_integer()) {
    throw MessageError(MessageErrc::malformed,
                       std::string(name) + " must be an integer");
  }
  return v.get<Micros>();
}

inline double get_real(const nlohmann::json& obj, std::string_view name) {
  const auto& v = field(obj, name);
  if (!v.is_number()) {
    throw MessageError(MessageErrc::malformed,
                       std::string(name) + " must be a number");
  }
  return v.get<double>();
}

}  // namespace detail

/// Throws MessageError(out_of_range) if the command breaks a field invariant.
inline void validate(const TeleopCommand& cmd) {
  detail::check_seq(cmd.seq, "seq");
  detail::check_ts(cmd.ts_us, "ts_us");
  detail::require_range(cmd.steering, -1.0, 1.0, "steering");
  detail::require_range(cmd.throttle, 0.0, 1.0, "throttle");
  detail::require_range(cmd.brake, 0.0, 1.0, "brake");
}

inline void validate(const Telemetry& t) {
  detail::check_seq(t.seq, "seq");
  detail::check_ts(t.ts_us, "ts_us");
  detail::require_range(t.steering_pos, -1.0, 1.0, "steering_pos");
  if (!(t.speed_mps >= 0.0) || !std::isfinite(t.speed_mps)) {
    throw MessageError(MessageErrc::out_of_range,
                       "speed_mps must be finite and non-negative");
  }
  detail::check_ts(t.echo_ts_us, "echo_ts_us");
  if (t.echo_seq == 0 && t.echo_ts_us != 0) {
    throw MessageError(MessageErrc::out_of_range,
                       "echo_ts_us must be 0 when echo_seq is 0");
  }
}

inline void validate(const FrameMeta& f) {
  detail::check_ts(f.event_us, "event_us");
  if (f.display_us < f.event_us || f.g2g_us != f.display_us - f.event_us) {
    throw MessageError(MessageErrc::out_of_range,
                       "g2g_us must equal display_us - event_us");
  }
}

inline nlohmann::ordered_json to_json(const TeleopCommand& cmd) {
  validate(cmd);
  nlohmann::ordered_json j;
  j["kind"] = to_string(MessageKind::command);
  j["seq"] = cmd.seq;
  j["ts_us"] = cmd.ts_us;
  j["steering"] = cmd.steering;
  j["throttle"] = cmd.throttle;
  j["brake"] = cmd.brake;
  return j;
}

inline nlohmann::ordered_json to_json(const Telemetry& t) {
  validate(t);
  nlohmann::ordered_json j;
  j["kind"] = to_string(MessageKind::telemetry);
  j["seq"] = t.seq;
  j["ts_us"] = t.ts_us;
  j["speed_mps"] = t.speed_mps;
  j["steering_pos"] = t.steering_pos;
  j["echo_ts_us"] = t.echo_ts_us;
  j["echo_seq"] = t.echo_seq;
  return j;
}

inline nlohmann::ordered_json to_json(const FrameMeta& f) {
  validate(f);
  nlohmann::ordered_json j;
  j["kind"] = to_string(MessageKind::frame_meta);
  j["frame_id"] = f.frame_id;
  j["event_us"] = f.event_us;
  j["display_us"] = f.display_us;
  j["g2g_us"] = f.g2g_us;
  return j;
}

/// Canonical text encoding. Rejects messages that violate their invariants.
template <class Msg>
std::string encode(const Msg& msg) {
  return to_json(msg).dump();
}

inline std::string encode(const Message& msg) {
  return std::visit([](const auto& m) { return encode(m); }, msg);
}

namespace detail {

inline TeleopCommand command_from(const nlohmann::json& j) {
  TeleopCommand cmd;
  cmd.seq = get_count(j, "seq");
  cmd.ts_us = get_micros(j, "ts_us");
  cmd.steering = get_real(j, "steering");
  cmd.throttle = get_real(j, "throttle");
  cmd.brake = get_real(j, "brake");
  validate(cmd);
  return cmd;
}

inline Telemetry telemetry_from(const nlohmann::json& j) {
  Telemetry t;
  t.seq = get_count(j, "seq");
  t.ts_us = get_micros(j, "ts_us");
  t.speed_mps = get_real(j, "speed_mps");
  t.steering_pos = get_real(j, "steering_pos");
  t.echo_ts_us = get_micros(j, "echo_ts_us");
  t.echo_seq = get_count(j, "echo_seq");
  validate(t);
  return t;
}

inline FrameMeta frame_meta_from(const nlohmann::json& j) {
  FrameMeta f;
  f.frame_id = get_count(j, "frame_id");
  f.event_us = get_micros(j, "event_us");
  f.display_us = get_micros(j, "display_us");
  f.g2g_us = get_micros(j, "g2g_us");
  validate(f);
  return f;
}

inline nlohmann::json parse_object(std::string_view text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw MessageError(MessageErrc::malformed, "record is not a JSON object");
  }
  return j;
}

inline std::string kind_of(const nlohmann::json& j) {
  const auto& k = field(j, "kind");
  if (!k.is_string()) {
    throw MessageError(MessageErrc::malformed, "kind must be a string");
  }
  return k.get<std::string>();
}

}  // namespace detail

/// Decodes any envelope. Unknown extra fields are ignored.
inline Message decode(std::string_view text) {
  const auto j = detail::parse_object(text);
  const auto kind = detail::kind_of(j);
  if (kind == to_string(MessageKind::command)) return detail::command_from(j);
  if (kind == to_string(MessageKind::telemetry)) return detail::telemetry_from(j);
  if (kind == to_string(MessageKind::frame_meta)) return detail::frame_meta_from(j);
  throw MessageError(MessageErrc::wrong_kind, "unknown kind: " + kind);
}

/// Decodes an envelope that must carry the given message type.
template <class Msg>
Msg decode_as(std::string_view text) {
  const auto j = detail::parse_object(text);
  const auto kind = detail::kind_of(j);
  if constexpr (std::is_same_v<Msg, TeleopCommand>) {
    if (kind != to_string(MessageKind::command)) {
      throw MessageError(MessageErrc::wrong_kind, "expected command, got " + kind);
    }
    return detail::command_from(j);
  } else if constexpr (std::is_same_v<Msg, Telemetry>) {
    if (kind != to_string(MessageKind::telemetry)) {
      throw MessageError(MessageErrc::wrong_kind, "expected telemetry, got " + kind);
    }
    return detail::telemetry_from(j);
  } else {
    static_assert(std::is_same_v<Msg, FrameMeta>);
    if (kind != to_string(MessageKind::frame_meta)) {
      throw MessageError(MessageErrc::wrong_kind, "expected frame-meta, got " + kind);
    }
    return detail::frame_meta_from(j);
  }
}

/// Flags ordering violations in a decoded session stream: seq must strictly
/// increase and ts_us must not decrease.
class StreamValidator {
 public:
  /// Returns false (and counts a violation) if this message breaks ordering.
  bool accept(std::uint64_t seq, Micros ts_us) {
    bool ok = true;
    if (last_seq_ && seq <= *last_seq_) ok = false;
    if (last_ts_ && ts_us < *last_ts_) ok = false;
    if (ok) {
      last_seq_ = seq;
      last_ts_ = ts_us;
    } else {
      ++violations_;
    }
    return ok;
  }

  template <class Msg>
  bool accept(const Msg& m) { return accept(m.seq, m.ts_us); }

  std::size_t violations() const { return violations_; }

 private:
  std::optional<std::uint64_t> last_seq_;
  std::optional<Micros> last_ts_;
  std::size_t violations_ = 0;
};

}  // namespace teleop
