// vibetune command-line entry point.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "vibetune/project.hpp"

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

namespace fs = std::filesystem;
namespace vp = vibetune::project;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent kernel tuning orchestrator"};
  app.require_subcommand(1);

  std::string init_dir;
  std::uint64_t init_seed = 1;
  auto* init = app.add_subcommand("init", "Scaffold a new project directory");
  init->add_option("dir", init_dir, "Project directory (empty or absent)")->required();
  init->add_option("--seed", init_seed, "Seed written to config.json");

  std::string run_dir = ".";
  std::string mode, backend, scenario;
  std::uint64_t seed = 0;
  std::int64_t max_ticks = 0;
  bool dry = false;
  auto* run = app.add_subcommand("run", "Run the orchestration loop");
  run->add_option("dir", run_dir, "Project directory");
  auto* mode_opt = run->add_option("--mode", mode, "solo or multi")->check(CLI::IsMember({"solo", "multi"}));
  auto* seed_opt = run->add_option("--seed", seed, "RNG seed");
  auto* backend_opt =
      run->add_option("--backend", backend, "Job backend")->check(CLI::IsMember({"simulated", "local", "remote"}));
  auto* scenario_opt = run->add_option("--scenario", scenario, "Scripted scenario name");
  auto* ticks_opt = run->add_option("--max-ticks", max_ticks, "Tick limit")->check(CLI::PositiveNumber);
  run->add_flag("--dry", dry, "Validate configuration only");

  std::string status_dir = ".";
  auto* status = app.add_subcommand("status", "Show the state of a project");
  status->add_option("dir", status_dir, "Project directory");

  std::string fixture, replay_out = "replay";
  auto* replay = app.add_subcommand("replay", "Rebuild exports and report from an event file");
  replay->add_option("fixture", fixture, "JSONL event file")->required()->check(CLI::ExistingFile);
  replay->add_option("--out", replay_out, "Output directory");

  std::string report_dir = ".";
  auto* report = app.add_subcommand("report", "Regenerate exports and report for a project");
  report->add_option("dir", report_dir, "Project directory");

  std::string lint_dir = ".";
  auto* lint = app.add_subcommand("lint", "Scan a project's publish/ tree for prohibited libraries");
  lint->add_option("dir", lint_dir, "Project directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*init) {
      vp::cmd_init(init_dir, init_seed);
      std::cout << "Initialized project in " << init_dir << "\n";
      return 0;
    }
    if (*run) {
      vp::RunOverrides o;
      if (*mode_opt) o.mode = mode;
      if (*seed_opt) o.seed = seed;
      if (*backend_opt) o.backend = backend;
      if (*scenario_opt) o.scenario = scenario;
      if (*ticks_opt) o.max_ticks = max_ticks;
      o.dry = dry;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const auto res = vp::cmd_run(run_dir, o, [] { return g_stop.load(); });
      std::cout << res.output;
      return res.exit_code;
    }
    if (*status) {
      std::cout << vp::cmd_status(status_dir);
      return 0;
    }
    if (*replay) {
      const auto res = vp::cmd_replay(fixture, replay_out);
      std::cout << res.output;
      return res.exit_code;
    }
    if (*report) {
      if (!fs::exists(fs::path(report_dir) / vp::kConfigFile)) {
        throw vibetune::Error(vibetune::Errc::NotAProject, report_dir);
      }
      const auto events = vibetune::telemetry::load_events(fs::path(report_dir) / "telemetry" / "events.log");
      vibetune::telemetry::export_series(events, fs::path(report_dir) / "telemetry" / "exports");
      std::cout << "Report: " << vibetune::telemetry::render_markdown_report(events, fs::path(report_dir) / "reports").string()
                << "\n";
      return 0;
    }
    if (*lint) {
      const auto cfg = vp::load_config(lint_dir);
      const auto spec = vibetune::requirements::parse_requirements(
          vibetune::exec::read_file(fs::path(lint_dir) / cfg.requirements_path));
      const auto hits = vp::lint_tree(fs::path(lint_dir) / "publish", spec.forbidden_libraries);
      for (const auto& h : hits) {
        std::cout << h.file.string() << ":" << h.violation.line << ": " << h.violation.library << "\n";
      }
      std::cout << hits.size() << " violation(s)\n";
      return hits.empty() ? 0 : 1;
    }
  } catch (const vibetune::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return vp::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return vibetune::orchestrator::kExitRuntime;
  }
  return 0;
}
