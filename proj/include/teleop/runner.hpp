#pragma once

// Experiment runs: drive a Session with the scripted operator, write the
// CSV ledgers and summary.json, and re-summarize an existing output directory.
//
// Output directory layout:
//   commands.csv   seq,submit_us,ts_us,steering,throttle,brake,arrival_us,processed_us
//   telemetry.csv  seq,ts_us,recv_us,speed_mps,steering_pos,echo_seq,echo_ts_us
//   trajectory.csv t_us,x_m,y_m,heading_rad,speed_mps,steering_norm,throttle,brake,failsafe
//   rtt.csv        seq,send_us,recv_us,rtt_us
//   g2g.csv        frame_id,event_us,capture_us,encode_done_us,arrive_us,decode_done_us,display_us,g2g_us
//   channels.csv   channel,sent,delivered,dropped
//   inbound.jsonl  one {"t_us","text"} object per operator record, for replay
//   summary.json   everything above reduced to statistics
//
// summary.json is a function of the CSVs alone, so report() reproduces it.

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleop/metrics.hpp"
#include "teleop/scenario.hpp"
#include "teleop/session.hpp"

namespace teleop {

class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Dataset: the tabular content of an output directory

struct CommandRow {
  std::uint64_t seq = 0;
  Micros submit_us = 0;
  Micros ts_us = 0;
  double steering = 0.0;
  double throttle = 0.0;
  double brake = 0.0;
  std::optional<Micros> arrival_us;
  std::optional<Micros> processed_us;
};

struct Dataset {
  std::vector<CommandRow> commands;
  std::vector<TelemetryRecord> telemetry;
  std::vector<TrajectoryRecord> trajectory;
  std::vector<RttSample> rtt;
  std::vector<VideoFrameRecord> frames;
  std::vector<ChannelStats> channels;
};

inline Dataset collect(const Session& s) {
  Dataset d;
  std::unordered_map<std::uint64_t, ProcessedCommand> processed;
  for (const auto& p : s.vehicle().processed()) processed.emplace(p.seq, p);
  for (const auto& c : s.commands()) {
    CommandRow row{c.cmd.seq, c.submit_us, c.cmd.ts_us, c.cmd.steering,
                   c.cmd.throttle, c.cmd.brake, std::nullopt, std::nullopt};
    if (auto it = processed.find(c.cmd.seq); it != processed.end()) {
      row.arrival_us = it->second.arrival_us;
      row.processed_us = it->second.processed_us;
    }
    d.commands.push_back(row);
  }
  d.telemetry = s.telemetry();
  d.trajectory = s.trajectory();
  d.rtt = s.rtt().samples();
  d.frames = s.displayed_frames();
  d.channels = s.channel_stats();
  return d;
}

// ---------------------------------------------------------------------------
// CSV text

namespace csv {

inline std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}
inline std::string num(std::int64_t v) { return std::to_string(v); }
inline std::string num(std::uint64_t v) { return std::to_string(v); }
inline std::string num(const std::optional<Micros>& v) { return v ? std::to_string(*v) : ""; }

template <class... Ts>
std::string row(const Ts&... vs) {
  std::string out;
  ((out += num(vs), out += ','), ...);
  out.back() = '\n';
  return out;
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    cells.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

template <class T>
T parse(const std::string& cell, const std::string& where) {
  T v{};
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
    throw RunError(where + ": cannot parse '" + cell + "'");
  }
  return v;
}

inline std::optional<Micros> parse_opt(const std::string& cell, const std::string& where) {
  if (cell.empty()) return std::nullopt;
  return parse<Micros>(cell, where);
}

/// Reads a CSV file with the expected header; returns the data rows split
/// into cells.
inline std::vector<std::vector<std::string>> read(const std::filesystem::path& file,
                                                  const std::string& header) {
  std::ifstream in(file);
  if (!in) throw RunError("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw RunError(file.string() + ": unexpected header");
  }
  const auto columns = split(header).size();
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != columns) {
      throw RunError(file.string() + ":" + std::to_string(rows.size() + 2) +
                     ": expected " + std::to_string(columns) + " columns");
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace csv

namespace headers {
inline const std::string commands =
    "seq,submit_us,ts_us,steering,throttle,brake,arrival_us,processed_us";
inline const std::string telemetry =
    "seq,ts_us,recv_us,speed_mps,steering_pos,echo_seq,echo_ts_us";
inline const std::string trajectory =
    "t_us,x_m,y_m,heading_rad,speed_mps,steering_norm,throttle,brake,failsafe";
inline const std::string rtt = "seq,send_us,recv_us,rtt_us";
inline const std::string g2g =
    "frame_id,event_us,capture_us,encode_done_us,arrive_us,decode_done_us,display_us,g2g_us";
inline const std::string channels = "channel,sent,delivered,dropped";
}  // namespace headers

inline void write_file(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw RunError("cannot write " + file.string());
  out << text;
  if (!out.flush()) throw RunError("write failed: " + file.string());
}

inline void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::string s = headers::commands + "\n";
  for (const auto& c : d.commands) {
    s += csv::row(c.seq, c.submit_us, c.ts_us, c.steering, c.throttle, c.brake,
                  c.arrival_us, c.processed_us);
  }
  write_file(dir / "commands.csv", s);

  s = headers::telemetry + "\n";
  for (const auto& r : d.telemetry) {
    s += csv::row(r.t.seq, r.t.ts_us, r.recv_us, r.t.speed_mps, r.t.steering_pos,
                  r.t.echo_seq, r.t.echo_ts_us);
  }
  write_file(dir / "telemetry.csv", s);

  s = headers::trajectory + "\n";
  for (const auto& r : d.trajectory) {
    s += csv::row(r.t_us, r.x_m, r.y_m, r.heading_rad, r.speed_mps, r.steering_norm,
                  r.applied.throttle, r.applied.brake, static_cast<std::int64_t>(r.failsafe));
  }
  write_file(dir / "trajectory.csv", s);

  s = headers::rtt + "\n";
  for (const auto& r : d.rtt) s += csv::row(r.seq, r.send_us, r.recv_us, r.rtt_us);
  write_file(dir / "rtt.csv", s);

  s = headers::g2g + "\n";
  for (const auto& f : d.frames) {
    s += csv::row(f.frame_id, f.event_time_us, f.capture_us, f.encode_done_us, f.arrive_us,
                  f.decode_done_us, f.display_us, f.g2g_us);
  }
  write_file(dir / "g2g.csv", s);

  s = headers::channels + "\n";
  for (const auto& c : d.channels) {
    s += c.name + "," + csv::row(c.sent, c.delivered, c.dropped);
  }
  write_file(dir / "channels.csv", s);
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset d;
  auto where = [&](const char* file) { return (dir / file).string(); };

  for (const auto& c : csv::read(dir / "commands.csv", headers::commands)) {
    const auto w = where("commands.csv");
    d.commands.push_back({csv::parse<std::uint64_t>(c[0], w), csv::parse<Micros>(c[1], w),
                          csv::parse<Micros>(c[2], w), csv::parse<double>(c[3], w),
                          csv::parse<double>(c[4], w), csv::parse<double>(c[5], w),
                          csv::parse_opt(c[6], w), csv::parse_opt(c[7], w)});
  }
  for (const auto& c : csv::read(dir / "telemetry.csv", headers::telemetry)) {
    const auto w = where("telemetry.csv");
    TelemetryRecord r;
    r.t.seq = csv::parse<std::uint64_t>(c[0], w);
    r.t.ts_us = csv::parse<Micros>(c[1], w);
    r.recv_us = csv::parse<Micros>(c[2], w);
    r.t.speed_mps = csv::parse<double>(c[3], w);
    r.t.steering_pos = csv::parse<double>(c[4], w);
    r.t.echo_seq = csv::parse<std::uint64_t>(c[5], w);
    r.t.echo_ts_us = csv::parse<Micros>(c[6], w);
    d.telemetry.push_back(r);
  }
  for (const auto& c : csv::read(dir / "trajectory.csv", headers::trajectory)) {
    const auto w = where("trajectory.csv");
    TrajectoryRecord r;
    r.t_us = csv::parse<Micros>(c[0], w);
    r.x_m = csv::parse<double>(c[1], w);
    r.y_m = csv::parse<double>(c[2], w);
    r.heading_rad = csv::parse<double>(c[3], w);
    r.speed_mps = csv::parse<double>(c[4], w);
    r.steering_norm = csv::parse<double>(c[5], w);
    r.applied.throttle = csv::parse<double>(c[6], w);
    r.applied.brake = csv::parse<double>(c[7], w);
    r.failsafe = csv::parse<std::int64_t>(c[8], w) != 0;
    d.trajectory.push_back(r);
  }
  for (const auto& c : csv::read(dir / "rtt.csv", headers::rtt)) {
    const auto w = where("rtt.csv");
    d.rtt.push_back({csv::parse<std::uint64_t>(c[0], w), csv::parse<Micros>(c[1], w),
                     csv::parse<Micros>(c[2], w), csv::parse<Micros>(c[3], w)});
  }
  for (const auto& c : csv::read(dir / "g2g.csv", headers::g2g)) {
    const auto w = where("g2g.csv");
    VideoFrameRecord f;
    f.frame_id = csv::parse<std::uint64_t>(c[0], w);
    f.event_time_us = csv::parse<Micros>(c[1], w);
    f.capture_us = csv::parse<Micros>(c[2], w);
    f.encode_done_us = csv::parse<Micros>(c[3], w);
    f.arrive_us = csv::parse<Micros>(c[4], w);
    f.decode_done_us = csv::parse<Micros>(c[5], w);
    f.display_us = csv::parse<Micros>(c[6], w);
    f.g2g_us = csv::parse<Micros>(c[7], w);
    d.frames.push_back(f);
  }
  for (const auto& c : csv::read(dir / "channels.csv", headers::channels)) {
    const auto w = where("channels.csv");
    d.channels.push_back({c[0], csv::parse<std::uint64_t>(c[1], w),
                          csv::parse<std::uint64_t>(c[2], w),
                          csv::parse<std::uint64_t>(c[3], w)});
  }
  return d;
}

// ---------------------------------------------------------------------------
// Summary

using Json = nlohmann::ordered_json;

inline Json to_json(const MetricSummary& s) {
  return Json{{"n", s.n},           {"mean_us", s.mean_us}, {"std_us", s.std_us},
              {"min_us", s.min_us}, {"p50_us", s.p50_us},   {"p95_us", s.p95_us},
              {"p99_us", s.p99_us}, {"max_us", s.max_us}};
}

inline Json summary_or_null(const std::vector<Micros>& v) {
  return v.empty() ? Json(nullptr) : to_json(summarize(v));
}

/// A report block: the source CSV plus summary fields (just n = 0 when empty).
inline Json metric_block(const std::vector<Micros>& v, const char* csv_file) {
  Json j{{"csv", csv_file}};
  if (v.empty()) {
    j["n"] = 0;
  } else {
    j.update(to_json(summarize(v)));
  }
  return j;
}

inline Json jitter_block(const std::vector<Micros>& transit, const char* csv_file) {
  Json j{{"csv", csv_file}};
  j["n"] = transit.size();
  j["transit"] = summary_or_null(transit);
  if (transit.size() >= 2) {
    j["interarrival_jitter_us"] = interarrival_jitter(transit);
  } else {
    j["interarrival_jitter_us"] = nullptr;
  }
  return j;
}

/// Run identity carried from the run into summary.json and kept by report().
struct RunInfo {
  std::string scenario;
  std::uint64_t seed = 0;
  Micros duration_us = 0;
  Micros lag_window_us = 0;
};

inline Json summarize(const Dataset& d, const RunInfo& info) {
  Json j;
  j["scenario"] = info.scenario;
  j["seed"] = info.seed;
  j["duration_us"] = info.duration_us;
  j["analysis"] = Json{{"lag_window_us", info.lag_window_us}};

  std::vector<Micros> tick_delay;
  for (const auto& c : d.commands) {
    if (c.arrival_us && c.processed_us) tick_delay.push_back(*c.processed_us - *c.arrival_us);
  }
  j["commands"] = Json{{"n", d.commands.size()}, {"processed", tick_delay.size()}};
  j["tick_delay"] = metric_block(tick_delay, "commands.csv");

  std::vector<Micros> rtt;
  for (const auto& r : d.rtt) rtt.push_back(r.rtt_us);
  j["rtt"] = metric_block(rtt, "rtt.csv");

  std::vector<Micros> g2g;
  for (const auto& f : d.frames) g2g.push_back(f.g2g_us);
  j["g2g"] = metric_block(g2g, "g2g.csv");

  std::vector<Micros> tel_transit;
  for (const auto& r : d.telemetry) tel_transit.push_back(r.recv_us - r.t.ts_us);
  // One transit per video frame, in capture order.
  std::map<std::uint64_t, Micros> frame_transit;
  for (const auto& f : d.frames) frame_transit.emplace(f.frame_id, f.arrive_us - f.encode_done_us);
  std::vector<Micros> video_transit;
  for (const auto& [id, t] : frame_transit) video_transit.push_back(t);
  j["jitter"] = Json{{"telemetry", jitter_block(tel_transit, "telemetry.csv")},
                     {"video", jitter_block(video_transit, "g2g.csv")}};

  Json loss{{"csv", "channels.csv"}};
  for (const auto& c : d.channels) {
    Json block{{"sent", c.sent}, {"delivered", c.delivered}, {"dropped", c.dropped}};
    if (c.sent > 0) {
      block["loss_rate"] = loss_rate(c.sent, c.sent - c.dropped);
    } else {
      block["loss_rate"] = nullptr;
    }
    loss[c.name] = block;
  }
  j["loss"] = loss;

  std::vector<TimedSample> u, theta;
  for (const auto& c : d.commands) u.push_back({c.submit_us, c.steering});
  for (const auto& r : d.trajectory) theta.push_back({r.t_us, r.steering_norm});
  const Json lag_csv = Json::array({"commands.csv", "trajectory.csv"});
  try {
    const auto est = steering_lag(u, theta, info.lag_window_us);
    j["steering_lag"] = Json{{"csv", lag_csv},
                             {"lag_us", est.lag_us},
                             {"correlation_peak", est.correlation_peak},
                             {"window_us", est.window_us},
                             {"grid_us", est.grid_us}};
  } catch (const MetricError& e) {
    j["steering_lag"] = Json{{"csv", lag_csv}, {"error", e.what()}};
  }
  return j;
}

inline void write_summary(const Json& summary, const std::filesystem::path& dir) {
  write_file(dir / "summary.json", summary.dump(2) + "\n");
}

inline void write_inbound(const std::vector<InboundLogEntry>& log,
                          const std::filesystem::path& dir) {
  std::string s;
  for (const auto& e : log) s += Json{{"t_us", e.t_us}, {"text", e.text}}.dump() + "\n";
  write_file(dir / "inbound.jsonl", s);
}

inline std::vector<InboundLogEntry> read_inbound(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw RunError("cannot open " + file.string());
  std::vector<InboundLogEntry> log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("t_us") || !j.contains("text")) {
      throw RunError(file.string() + ": malformed line " + std::to_string(log.size() + 1));
    }
    log.push_back({j["t_us"].get<Micros>(), j["text"].get<std::string>()});
  }
  return log;
}

inline RunInfo run_info(const Scenario& sc) {
  return {sc.name, sc.seed, sc.duration_us(), sc.analysis.lag_window_us};
}

/// Writes every artifact of a finished session into dir.
inline Json write_outputs(const Session& session, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw RunError("cannot create " + dir.string() + ": " + ec.message());
  const Dataset d = collect(session);
  write_dataset(d, dir);
  write_inbound(session.inbound_log(), dir);
  Json summary = summarize(d, run_info(session.scenario()));
  write_summary(summary, dir);
  return summary;
}

// ---------------------------------------------------------------------------
// Entry points

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
  /// Operator records to replay instead of the scripted operator.
  std::optional<std::vector<InboundLogEntry>> replay;
};

struct RunResult {
  std::filesystem::path out_dir;
  Json summary;
};

inline Scenario with_options(Scenario sc, const RunOptions& opt) {
  if (opt.seed) sc.seed = *opt.seed;
  if (opt.out_dir) sc.outputs = opt.out_dir->string();
  return sc;
}

/// Runs the scenario end to end. Virtual mode is as fast as possible; realtime
/// mode paces each operator step to the wall clock and produces the same
/// outputs.
inline RunResult run(const Scenario& scenario, const RunOptions& opt = {}) {
  const Scenario sc = with_options(scenario, opt);
  if (!opt.replay && sc.op.kind == OperatorScript::Kind::live) {
    throw RunError("operator kind live needs the serve command");
  }
  Session session(sc);
  if (opt.replay) {
    replay(session, *opt.replay);
  } else {
    ScriptedOperator op(sc.op);
    const auto start = std::chrono::steady_clock::now();
    while (!op.done(session.end_us())) {
      const Micros t = op.next_send_us();
      if (sc.mode == RunMode::realtime) {
        std::this_thread::sleep_until(start + std::chrono::microseconds(t));
      }
      session.submit_command(op.next_command(), t);
    }
    if (sc.mode == RunMode::realtime) {
      std::this_thread::sleep_until(start + std::chrono::microseconds(session.end_us()));
    }
    session.advance_to(session.end_us());
  }
  const std::filesystem::path dir = sc.outputs;
  return {dir, write_outputs(session, dir)};
}

/// Recomputes summary.json from the CSVs in dir and rewrites it. Identity
/// fields and the lag window come from the existing summary.json.
inline Json report(const std::filesystem::path& dir) {
  std::ifstream in(dir / "summary.json");
  if (!in) throw RunError("cannot open " + (dir / "summary.json").string());
  const auto old = nlohmann::json::parse(in, nullptr, false);
  if (old.is_discarded()) throw RunError("summary.json is not valid JSON");
  RunInfo info;
  try {
    info.scenario = old.at("scenario").get<std::string>();
    info.seed = old.at("seed").get<std::uint64_t>();
    info.duration_us = old.at("duration_us").get<Micros>();
    info.lag_window_us = old.at("analysis").at("lag_window_us").get<Micros>();
  } catch (const nlohmann::json::exception& e) {
    throw RunError(std::string("summary.json: ") + e.what());
  }
  Json summary = summarize(read_dataset(dir), info);
  write_summary(summary, dir);
  return summary;
}

}  // namespace teleop
