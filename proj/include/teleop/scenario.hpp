#pragma once

// Experiment configuration: a single YAML document with nested sections.
//
//   name, seed, duration_s, mode, outputs
//   vehicle:   VehicleParams fields
//   uplink:    ChannelSpec fields (operator -> vehicle commands)
//   downlink:  ChannelSpec fields (vehicle -> operator telemetry)
//   video:     VideoPathSpec fields, net_channel nested
//   operator:  OperatorScript fields
//   analysis:  lag_window_us
//
// Validation reports every problem at once with its field path. Unknown keys
// are warnings so newer files still load.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "teleop/netem.hpp"
#include "teleop/vehicle.hpp"
#include "teleop/videopath.hpp"

namespace teleop {

enum class RunMode { virtual_clock, realtime };

struct TracePoint {
  Micros t_us = 0;
  Controls controls;
};

struct OperatorScript {
  enum class Kind { step, sine, trace, live };
  Kind kind = Kind::sine;
  double rate_hz = 100.0;
  std::uint64_t max_commands = 0;  // 0 = until the scenario ends
  double amplitude = 0.5;
  double offset = 0.0;
  double frequency_hz = 0.2;
  double step_time_s = 1.0;
  double throttle = 0.2;
  double brake = 0.0;
  std::string trace_path;
  std::vector<TracePoint> trace;  // loaded from trace_path

  /// Commanded controls at t_us after the session start.
  Controls at(Micros t_us) const {
    const double t = static_cast<double>(t_us) * 1e-6;
    Controls c{0.0, throttle, brake};
    switch (kind) {
      case Kind::sine:
        c.steering = offset + amplitude * std::sin(2.0 * std::numbers::pi * frequency_hz * t);
        break;
      case Kind::step:
        c.steering = t < step_time_s ? offset : offset + amplitude;
        break;
      case Kind::trace: {
        auto it = std::upper_bound(trace.begin(), trace.end(), t_us,
                                   [](Micros v, const TracePoint& p) { return v < p.t_us; });
        c = it == trace.begin() ? Controls{} : std::prev(it)->controls;
        break;
      }
      case Kind::live:
        break;
    }
    c.steering = std::clamp(c.steering, -1.0, 1.0);
    return c;
  }

  Micros period_us() const { return static_cast<Micros>(std::llround(1e6 / rate_hz)); }
};

struct AnalysisParams {
  Micros lag_window_us = 1'000'000;
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  double duration_s = 0.0;
  RunMode mode = RunMode::virtual_clock;
  VehicleParams vehicle;
  ChannelSpec uplink;    // seed 0 = derive from the scenario seed
  ChannelSpec downlink;
  bool video_enabled = true;
  VideoPathSpec video;
  OperatorScript op;
  AnalysisParams analysis;
  std::string outputs = "out";

  Micros duration_us() const { return static_cast<Micros>(std::llround(duration_s * 1e6)); }
};

struct Issue {
  std::string path;
  std::string message;

  std::string str() const { return path + ": " + message; }
};

struct ValidationResult {
  std::optional<Scenario> scenario;
  std::vector<Issue> errors;
  std::vector<Issue> warnings;

  bool ok() const { return errors.empty() && scenario.has_value(); }
};

class ScenarioError : public std::runtime_error {
 public:
  explicit ScenarioError(std::vector<Issue> issues)
      : std::runtime_error(join(issues)), issues_(std::move(issues)) {}
  const std::vector<Issue>& issues() const { return issues_; }

 private:
  static std::string join(const std::vector<Issue>& issues) {
    std::string s = "invalid scenario";
    for (const auto& i : issues) s += "\n  " + i.str();
    return s;
  }
  std::vector<Issue> issues_;
};

namespace detail {

/// Reads typed fields out of one YAML mapping, recording errors and unknown
/// keys instead of throwing.
class Section {
 public:
  Section(const YAML::Node& node, std::string path, ValidationResult& out)
      : node_(node), path_(std::move(path)), out_(out) {
    if (node_ && !node_.IsMap()) {
      out_.errors.push_back({path_.empty() ? "<root>" : path_, "expected a mapping"});
      valid_ = false;
    }
  }

  bool present() const { return node_ && node_.IsMap(); }

  template <class T>
  void read(const char* key, T& field) {
    seen_.insert(key);
    if (!valid_ || !node_[key]) return;
    try {
      field = node_[key].template as<T>();
    } catch (const YAML::Exception&) {
      error(key, std::string("expected ") + type_name<T>());
    }
  }

  YAML::Node child(const char* key) {
    seen_.insert(key);
    return valid_ ? node_[key] : YAML::Node{};
  }

  std::string path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void error(const std::string& key, std::string msg) {
    out_.errors.push_back({path(key), std::move(msg)});
  }

  /// Adds an error for every "field: message" string from a check().
  void errors_from(const std::vector<std::string>& checks) {
    for (const auto& c : checks) {
      const auto colon = c.find(':');
      error(c.substr(0, colon), c.substr(colon + 2));
    }
  }

  void warn_unknown() {
    if (!present()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.contains(key)) out_.warnings.push_back({path(key), "unknown key ignored"});
    }
  }

 private:
  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else return "a string";
  }

  YAML::Node node_;
  std::string path_;
  ValidationResult& out_;
  std::set<std::string> seen_;
  bool valid_ = true;
};

inline void read_channel(Section& parent, const char* key, ChannelSpec& spec,
                         ValidationResult& out) {
  Section s(parent.child(key), parent.path(key), out);
  s.read("base_delay_us", spec.base_delay_us);
  s.read("jitter_sigma_us", spec.jitter_sigma_us);
  s.read("min_delay_us", spec.min_delay_us);
  s.read("loss_prob", spec.loss_prob);
  s.read("bandwidth_bps", spec.bandwidth_bps);
  s.read("ordered", spec.ordered);
  s.read("seed", spec.seed);
  s.errors_from(check(spec));
  s.warn_unknown();
}

inline std::vector<TracePoint> load_trace(const std::filesystem::path& file,
                                          std::vector<std::string>& errors) {
  std::ifstream in(file);
  if (!in) {
    errors.push_back("cannot open " + file.string());
    return {};
  }
  std::vector<TracePoint> points;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#' || line.rfind("t_s", 0) == 0) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    double t = 0;
    TracePoint p;
    if (!(row >> t >> p.controls.steering >> p.controls.throttle >> p.controls.brake)) {
      errors.push_back(file.string() + ":" + std::to_string(lineno) +
                       ": expected t_s,steering,throttle,brake");
      continue;
    }
    p.t_us = static_cast<Micros>(std::llround(t * 1e6));
    const auto& c = p.controls;
    if (std::abs(c.steering) > 1.0 || c.throttle < 0 || c.throttle > 1 || c.brake < 0 ||
        c.brake > 1) {
      errors.push_back(file.string() + ":" + std::to_string(lineno) + ": value out of range");
    }
    if (!points.empty() && p.t_us < points.back().t_us) {
      errors.push_back(file.string() + ":" + std::to_string(lineno) + ": time goes backwards");
    }
    points.push_back(p);
  }
  if (points.empty() && errors.empty()) errors.push_back(file.string() + ": empty trace");
  return points;
}

}  // namespace detail

/// Parses and validates scenario text. Relative trace paths resolve against
/// base_dir.
inline ValidationResult validate(const std::string& scenario_text,
                                 const std::filesystem::path& base_dir = ".") {
  ValidationResult out;
  YAML::Node root;
  try {
    root = YAML::Load(scenario_text);
  } catch (const YAML::Exception& e) {
    out.errors.push_back({"<root>", std::string("parse error: ") + e.what()});
    return out;
  }
  if (!root || root.IsNull()) {
    out.errors.push_back({"<root>", "empty scenario"});
    return out;
  }

  Scenario sc;
  detail::Section top(root, "", out);
  if (!top.present()) return out;

  top.read("name", sc.name);
  top.read("seed", sc.seed);
  top.read("outputs", sc.outputs);
  if (!root["duration_s"]) {
    top.error("duration_s", "required");
  }
  top.read("duration_s", sc.duration_s);
  if (!(sc.duration_s > 0.0) || !std::isfinite(sc.duration_s)) {
    top.error("duration_s", "must be > 0");
  }
  std::string mode = "virtual";
  top.read("mode", mode);
  if (mode == "virtual") {
    sc.mode = RunMode::virtual_clock;
  } else if (mode == "realtime") {
    sc.mode = RunMode::realtime;
  } else {
    top.error("mode", "must be virtual or realtime");
  }

  {
    detail::Section v(top.child("vehicle"), "vehicle", out);
    auto& p = sc.vehicle;
    v.read("wheelbase_m", p.wheelbase_m);
    v.read("tau_steer_s", p.tau_steer_s);
    v.read("max_steer_rad", p.max_steer_rad);
    v.read("max_speed_mps", p.max_speed_mps);
    v.read("tick_period_us", p.tick_period_us);
    v.read("telemetry_period_us", p.telemetry_period_us);
    v.read("cmd_timeout_us", p.cmd_timeout_us);
    v.read("brake_ramp_us", p.brake_ramp_us);
    v.read("accel_max_mps2", p.accel_max_mps2);
    v.read("brake_max_mps2", p.brake_max_mps2);
    v.read("drag_per_s", p.drag_per_s);
    std::string disc = "exact";
    v.read("steer_discretization", disc);
    if (disc == "exact") {
      p.steer_discretization = Discretization::exact;
    } else if (disc == "euler") {
      p.steer_discretization = Discretization::euler;
    } else {
      v.error("steer_discretization", "must be exact or euler");
    }
    v.errors_from(check(p));
    v.warn_unknown();
  }

  detail::read_channel(top, "uplink", sc.uplink, out);
  detail::read_channel(top, "downlink", sc.downlink, out);

  {
    detail::Section v(top.child("video"), "video", out);
    auto& s = sc.video;
    v.read("enabled", sc.video_enabled);
    v.read("fps", s.fps);
    v.read("capture_extra_us", s.capture_extra_us);
    v.read("encode_us", s.encode_us);
    v.read("frame_bytes", s.frame_bytes);
    v.read("decode_us", s.decode_us);
    v.read("display_hz", s.display_hz);
    v.read("capture_phase_us", s.capture_phase_us);
    v.read("display_phase_us", s.display_phase_us);
    detail::read_channel(v, "net_channel", s.net_channel, out);
    auto checks = check(s);
    std::erase_if(checks, [](const std::string& c) { return c.rfind("net_channel.", 0) == 0; });
    v.errors_from(checks);
    v.warn_unknown();
  }

  {
    detail::Section o(top.child("operator"), "operator", out);
    auto& op = sc.op;
    std::string kind = "sine";
    o.read("kind", kind);
    if (kind == "sine") op.kind = OperatorScript::Kind::sine;
    else if (kind == "step") op.kind = OperatorScript::Kind::step;
    else if (kind == "trace") op.kind = OperatorScript::Kind::trace;
    else if (kind == "live") op.kind = OperatorScript::Kind::live;
    else o.error("kind", "must be step, sine, trace or live");
    o.read("rate_hz", op.rate_hz);
    o.read("max_commands", op.max_commands);
    o.read("amplitude", op.amplitude);
    o.read("offset", op.offset);
    o.read("frequency_hz", op.frequency_hz);
    o.read("step_time_s", op.step_time_s);
    o.read("throttle", op.throttle);
    o.read("brake", op.brake);
    o.read("trace_path", op.trace_path);
    if (!(op.rate_hz > 0.0) || !std::isfinite(op.rate_hz)) o.error("rate_hz", "must be > 0");
    if (!(std::abs(op.offset) + std::abs(op.amplitude) <= 1.0)) {
      o.error("amplitude", "|offset| + |amplitude| must be <= 1");
    }
    if (!(op.throttle >= 0.0 && op.throttle <= 1.0)) o.error("throttle", "must be in [0, 1]");
    if (!(op.brake >= 0.0 && op.brake <= 1.0)) o.error("brake", "must be in [0, 1]");
    if (!(op.frequency_hz >= 0.0)) o.error("frequency_hz", "must be >= 0");
    if (op.kind == OperatorScript::Kind::trace) {
      if (op.trace_path.empty()) {
        o.error("trace_path", "required for kind trace");
      } else {
        std::vector<std::string> trace_errors;
        std::filesystem::path p(op.trace_path);
        if (p.is_relative()) p = base_dir / p;
        op.trace = detail::load_trace(p, trace_errors);
        for (auto& e : trace_errors) o.error("trace_path", e);
      }
    }
    if (op.kind == OperatorScript::Kind::live && sc.mode != RunMode::realtime) {
      o.error("kind", "live operator requires mode realtime");
    }
    o.warn_unknown();
  }

  {
    detail::Section a(top.child("analysis"), "analysis", out);
    a.read("lag_window_us", sc.analysis.lag_window_us);
    if (sc.analysis.lag_window_us <= 0) a.error("lag_window_us", "must be > 0");
    a.warn_unknown();
  }

  top.warn_unknown();
  if (out.errors.empty()) out.scenario = std::move(sc);
  return out;
}

/// Reads and validates a scenario file; throws ScenarioError on any error.
inline Scenario load_scenario(const std::filesystem::path& file,
                              std::vector<Issue>* warnings = nullptr) {
  std::ifstream in(file);
  if (!in) throw ScenarioError({{file.string(), "cannot open scenario file"}});
  std::stringstream buf;
  buf << in.rdbuf();
  auto result = validate(buf.str(), file.parent_path());
  if (warnings) *warnings = result.warnings;
  if (!result.ok()) throw ScenarioError(result.errors);
  return std::move(*result.scenario);
}

}  // namespace teleop
