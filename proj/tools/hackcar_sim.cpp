// hackcar-sim: run, validate, replay and serve HackCar scenarios.

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"

#include "hackcar/gateway_server.hpp"
#include "hackcar/scenario.hpp"

namespace fs = std::filesystem;
using namespace hackcar;

namespace {

constexpr int kExitConfig = 2;

std::atomic<bool> g_interrupted{false};

struct OutputOptions {
  std::string out_dir;
  bool candump = false;
  bool telemetry_csv = false;
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

void emit(const RunReport& report, const OutputOptions& o) {
  const std::string summary = summary_json(report).dump(2) + "\n";
  if (!o.out_dir.empty()) {
    fs::create_directories(o.out_dir);
    const fs::path dir(o.out_dir);
    write_file(dir / "summary.json", summary);
    write_file(dir / "alerts.csv", report.alerts_csv());
    write_file(dir / "commands.csv", report.applied_trace());
    if (o.candump) {
      write_file(dir / "candump.log", report.candump());
      write_file(dir / "bus.csv", report.bus_csv());
    }
    if (o.telemetry_csv) write_file(dir / "telemetry.csv", report.telemetry_csv());
    std::cout << summary;
    return;
  }
  if (!o.candump && !o.telemetry_csv) {
    std::cout << summary;
    return;
  }
  std::cerr << summary;
  if (o.candump) std::cout << report.candump();
  if (o.telemetry_csv) std::cout << report.telemetry_csv();
}

void add_output_flags(CLI::App* cmd, OutputOptions& o) {
  cmd->add_option("--out", o.out_dir, "Directory for summary.json, alerts.csv and logs");
  cmd->add_flag("--candump", o.candump, "Export the candump log (and bus.csv)");
  cmd->add_flag("--telemetry-csv", o.telemetry_csv, "Export per-cycle telemetry CSV");
}

int serve(const ScenarioConfig& config, const GatewayOptions& gw, double time_scale,
          const OutputOptions& out, bool linger) {
  CommandQueue commands;
  TelemetryBroadcast telemetry;
  Simulation sim(config, LiveChannel{&commands, &telemetry});
  std::atomic<SimTime> clock{0};

  GatewayServer server(commands, telemetry, [&clock] { return clock.load(); }, gw);
  server.start();
  std::cerr << "hackcar-sim: serving on ws://" << gw.address << ":" << server.port() << "/\n";

  const auto report = run_paced(sim, clock, time_scale, g_interrupted);
  emit(report, out);
  while (linger && !g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  telemetry.close();
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HackCar virtual testbed: CAN bus, ECUs, vehicle plant and attacker"};
  app.require_subcommand(1);

  std::string scenario;
  std::optional<std::uint64_t> seed;
  OutputOptions out;

  auto* run_cmd = app.add_subcommand("run", "Run a scenario headless");
  run_cmd->add_option("scenario", scenario, "Scenario file")->required();
  run_cmd->add_option("--seed", seed, "Override the scenario seed");
  add_output_flags(run_cmd, out);

  auto* validate_cmd = app.add_subcommand("validate", "Check a scenario file");
  validate_cmd->add_option("scenario", scenario, "Scenario file")->required();

  std::string trace;
  auto* replay_cmd = app.add_subcommand("replay", "Run a scenario driven by a recorded trace");
  replay_cmd->add_option("--trace", trace, "Trace CSV (time_s,kind,value)")
      ->required();
  replay_cmd->add_option("scenario", scenario, "Scenario file")->required();
  replay_cmd->add_option("--seed", seed, "Override the scenario seed");
  add_output_flags(replay_cmd, out);

  GatewayOptions gw;
  double time_scale = 1.0;
  bool linger = false;
  std::string static_dir;
  auto* serve_cmd = app.add_subcommand("serve", "Run live with the WebSocket teleop gateway");
  serve_cmd->add_option("scenario", scenario, "Scenario file")->required();
  serve_cmd->add_option("--address", gw.address, "Listen address");
  serve_cmd->add_option("--port", gw.port, "Listen port (0 = any)");
  serve_cmd->add_option("--static", static_dir, "Directory of cockpit assets served over HTTP");
  serve_cmd->add_option("--time-scale", time_scale, "Sim seconds per wall second")
      ->check(CLI::PositiveNumber);
  serve_cmd->add_option("--seed", seed, "Override the scenario seed");
  serve_cmd->add_flag("--linger", linger, "Keep serving after the run ends until interrupted");
  add_output_flags(serve_cmd, out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help/version exit 0; usage errors share the config-error code.
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }
  std::signal(SIGINT, [](int) { g_interrupted = true; });

  ScenarioConfig config;
  try {
    config = load_scenario_file(scenario);
    if (seed) config.seed = *seed;
    if (*replay_cmd) {
      std::ifstream in(trace, std::ios::binary);
      if (!in) throw ConfigError("--trace", "cannot read " + trace);
      std::ostringstream ss;
      ss << in.rdbuf();
      config.trace = parse_trace(ss.str());
      config.teleop = TeleopSource::Trace;
      config.trace_file = trace;
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*validate_cmd) {
      std::cout << "ok: " << to_string(config.mode) << ", " << config.duration_s << " s, "
                << config.world.obstacles.size() << " obstacle(s), attack "
                << (config.attack.enabled ? "scheduled" : "off") << "\n";
      return 0;
    }
    if (*serve_cmd) {
      gw.static_dir = static_dir;
      return serve(config, gw, time_scale, out, linger);
    }
    emit(run(config), out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
