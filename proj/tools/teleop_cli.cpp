// teleop: run, validate, serve and re-summarize teleoperation experiments.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "teleop/bridge.hpp"
#include "teleop/runner.hpp"
#include "teleop/scenario.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

teleop::Bridge* g_bridge = nullptr;

void print_warnings(const std::vector<teleop::Issue>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w.str() << "\n";
}

teleop::Scenario load(const std::string& file) {
  std::vector<teleop::Issue> warnings;
  auto sc = teleop::load_scenario(file, &warnings);
  print_warnings(warnings);
  return sc;
}

void print_brief(const teleop::Json& s) {
  auto line = [&](const char* label, const teleop::Json& block) {
    if (block.value("n", 0) == 0) return;
    std::cout << label << ": n=" << block["n"] << " mean=" << block["mean_us"].get<double>() / 1000
              << "ms std=" << block["std_us"].get<double>() / 1000
              << "ms p95=" << block["p95_us"].get<double>() / 1000 << "ms\n";
  };
  line("rtt", s["rtt"]);
  line("g2g", s["g2g"]);
  line("tick_delay", s["tick_delay"]);
  const auto& lag = s["steering_lag"];
  if (lag.contains("lag_us")) {
    std::cout << "steering_lag: " << lag["lag_us"].get<double>() / 1000 << "ms (r="
              << lag["correlation_peak"] << ")\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Software testbed for teleoperated driving over an impaired link"};
  app.require_subcommand(1);

  std::string file;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string replay_file;
  auto* run = app.add_subcommand("run", "Run a scenario and write CSVs plus summary.json");
  run->add_option("scenario", file, "Scenario file")->required();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--out", out_dir, "Output directory (default: the scenario's outputs)");
  run->add_option("--replay", replay_file, "Replay operator records from an inbound.jsonl");

  auto* validate = app.add_subcommand("validate", "Check a scenario file and list every problem");
  validate->add_option("scenario", file, "Scenario file")->required();

  std::uint16_t port = 8765;
  auto* serve = app.add_subcommand("serve", "Serve a realtime scenario to a WebSocket client");
  serve->add_option("scenario", file, "Scenario file")->required();
  serve->add_option("--port", port, "TCP port on 127.0.0.1")->required();
  serve->add_option("--out", out_dir, "Output directory (default: the scenario's outputs)");

  std::string dir;
  auto* report = app.add_subcommand("report", "Recompute summary.json from an output directory");
  report->add_option("dir", dir, "Output directory of a previous run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (*validate) {
      std::ifstream in(file);
      if (!in) {
        std::cerr << file << ": cannot open\n";
        return kConfigError;
      }
      std::stringstream buf;
      buf << in.rdbuf();
      const auto result = teleop::validate(buf.str(), std::filesystem::path(file).parent_path());
      print_warnings(result.warnings);
      for (const auto& e : result.errors) std::cerr << "error: " << e.str() << "\n";
      if (!result.ok()) return kConfigError;
      std::cout << file << ": ok\n";
      return kOk;
    }

    if (*run) {
      const auto sc = load(file);
      teleop::RunOptions opt;
      opt.seed = seed;
      if (!out_dir.empty()) opt.out_dir = out_dir;
      if (!replay_file.empty()) opt.replay = teleop::read_inbound(replay_file);
      const auto result = teleop::run(sc, opt);
      print_brief(result.summary);
      std::cout << "outputs: " << result.out_dir.string() << "\n";
      return kOk;
    }

    if (*serve) {
      auto sc = load(file);
      if (sc.mode != teleop::RunMode::realtime) {
        std::cerr << "error: mode: serve needs mode realtime\n";
        return kConfigError;
      }
      if (!out_dir.empty()) sc.outputs = out_dir;
      teleop::BridgeOptions opt;
      opt.port = port;
      teleop::Bridge bridge(sc, opt);
      g_bridge = &bridge;
      std::signal(SIGINT, [](int) {
        if (g_bridge) g_bridge->stop();
      });
      std::cout << "serving ws://127.0.0.1:" << bridge.port() << " for " << sc.duration_s
                << " s (Ctrl-C to stop early)\n"
                << std::flush;
      bridge.run();
      g_bridge = nullptr;
      const auto summary = teleop::write_outputs(bridge.session(), sc.outputs);
      print_brief(summary);
      std::cout << "rejected commands: " << bridge.session().rejected_count() << "\n"
                << "outputs: " << sc.outputs << "\n";
      return kOk;
    }

    if (*report) {
      print_brief(teleop::report(dir));
      return kOk;
    }
  } catch (const teleop::ScenarioError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
