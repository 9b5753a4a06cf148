#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vibetune/backends.hpp"
#include "vibetune/error.hpp"
#include "vibetune/orchestrator.hpp"
#include "vibetune/report.hpp"
#include "vibetune/requirements.hpp"
#include "vibetune/roles.hpp"
#include "vibetune/telemetry.hpp"

namespace vibetune::project {

namespace fs = std::filesystem;
using requirements::Role;

inline constexpr const char* kConfigFile = "config.json";

/// Requirement document written by `init`; same section layout the parser
/// expects.
inline std::string requirements_template() {
  return R"(# Requirements
## Project Information
* **Project Name**: gemm_tuning
## Overview
Tune a double-precision GEMM kernel on one GPU node.
## Hardware
* [x] 4 GPUs per node
* Only compilation may run on the login node; everything else goes through batch jobs.
## Peak Performance
* **Per GPU**: 7800 GFLOPS
## Accuracy Requirements
* Element type: double (64-bit)
* The PM assigns the error tolerance and shares it with the team.
## Computational Resource Budget
* **Minimum Consumption Line**: 100 points
* **Reference**: 500 points
* **Maximum**: 1,000 points
## Subsystem Rate
Points = elapsed seconds x 0.007 x GPUs used.
## Time Limit
* Minimum: 120 min
* Reference: 150 min
* Maximum: 180 min
## Agent Configuration
```
PM
SE
PG x 3
CD
```
## Publishing
* [x] Use enabled
* Anonymize user ids and absolute paths before publishing.
## Rules
* Calling `cuBLAS` or `MKL` is prohibited; kernels must be written by hand.
)";
}

struct CmdResult {
  int exit_code = 0;
  std::string output;
};

/// Maps library errors to process exit codes.
inline int exit_code_for(const Error& e) {
  switch (e.code()) {
    case Errc::ConfigInvalid:
    case Errc::EmptyDocument:
    case Errc::MalformedSection:
    case Errc::NotAProject:
    case Errc::DirNotEmpty:
    case Errc::FixtureParseError:
      return orchestrator::kExitConfig;
    default:
      return orchestrator::kExitRuntime;
  }
}

// ============================================================================
// init
// ============================================================================

inline void cmd_init(const fs::path& dir, std::uint64_t seed = 1) {
  if (fs::exists(dir) && (!fs::is_directory(dir) || !fs::is_empty(dir))) {
    throw Error(Errc::DirNotEmpty, dir.string());
  }
  fs::create_directories(dir);
  exec::write_file(dir / "requirements.md", requirements_template());
  orchestrator::ProjectConfig cfg;
  cfg.seed = seed;
  exec::write_file(dir / kConfigFile, orchestrator::to_json(cfg).dump(2) + "\n");
  for (Role role : requirements::kAllRoles) {
    exec::write_file(dir / "roles" / (std::string(requirements::to_string(role)) + ".md"),
                     roles::default_prompt_template(role));
  }
  for (const char* sub : {"telemetry/exports", "reports/img", "candidates", "publish"}) fs::create_directories(dir / sub);
}

// ============================================================================
// run
// ============================================================================

struct RunOverrides {
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
  std::optional<std::string> scenario;
  std::optional<std::int64_t> max_ticks;
  bool dry = false;
};

inline orchestrator::ProjectConfig load_config(const fs::path& dir) {
  const fs::path file = dir / kConfigFile;
  if (!fs::exists(file)) throw Error(Errc::NotAProject, "no " + std::string(kConfigFile) + " in " + dir.string());
  try {
    return orchestrator::config_from_json(nlohmann::json::parse(exec::read_file(file)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigInvalid, e.what());
  }
}

inline void apply_overrides(orchestrator::ProjectConfig& cfg, const RunOverrides& o) {
  if (o.mode) {
    if (*o.mode != "solo" && *o.mode != "multi") throw Error(Errc::ConfigInvalid, "mode must be solo or multi");
    cfg.mode = *o.mode == "solo" ? orchestrator::Mode::Solo : orchestrator::Mode::Multi;
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.backend) cfg.backend.kind = *o.backend;
  if (o.scenario) cfg.brains.scenario = *o.scenario;
  if (o.max_ticks) cfg.limits.max_ticks = *o.max_ticks;
}

inline std::map<Role, std::string> load_prompt_templates(const fs::path& dir) {
  std::map<Role, std::string> out;
  for (Role role : requirements::kAllRoles) {
    const fs::path file = dir / "roles" / (std::string(requirements::to_string(role)) + ".md");
    if (fs::exists(file)) out[role] = exec::read_file(file);
  }
  return out;
}

inline std::string summary_text(const orchestrator::RunSummary& s) {
  std::ostringstream os;
  os << "Terminated: " << s.reason << "\n";
  if (s.sota) {
    os << "SOTA: " << roles::vtag(s.sota->version) << ", " << text::fixed(s.sota->gflops, 1) << " GFLOPS, "
       << text::fixed(s.sota_efficiency_pct, 2) << "%\n";
  } else {
    os << "SOTA: none\n";
  }
  os << "Points spent: " << s.spent.to_string() << " (" << exec::to_string(s.budget) << ") over " << s.jobs
     << " jobs\n";
  os << "Elapsed ticks: " << s.ticks << "\n";
  return os.str();
}

/// Runs the project in `dir`. With `dry` only the configuration and
/// requirements are validated.
inline CmdResult cmd_run(const fs::path& dir, const RunOverrides& overrides = {},
                         std::function<bool()> stop_requested = {}) {
  orchestrator::ProjectConfig cfg = load_config(dir);
  apply_overrides(cfg, overrides);
  const fs::path req_file = dir / cfg.requirements_path;
  if (!fs::exists(req_file)) throw Error(Errc::ConfigInvalid, "missing requirements file " + req_file.string());
  requirements::RequirementSpec spec = requirements::parse_requirements(exec::read_file(req_file));

  orchestrator::RunOptions opts;
  opts.prompt_templates = load_prompt_templates(dir);
  opts.stop_requested = std::move(stop_requested);
  if (overrides.dry) {
    orchestrator::Orchestrator probe(spec, cfg, opts);  // validates; touches nothing on disk
    std::string out = "Configuration valid.\n";
    if (!spec.missing_items.empty()) out += "Missing items: " + roles::join(spec.missing_items, ", ") + "\n";
    return {orchestrator::kExitOk, out};
  }
  opts.project_dir = dir;
  orchestrator::Orchestrator orch(std::move(spec), cfg, opts);
  const auto summary = orch.run();
  return {summary.exit_code, summary_text(summary)};
}

// ============================================================================
// replay
// ============================================================================

/// Rebuilds exports and the report from a recorded event file into `out`.
inline CmdResult cmd_replay(const fs::path& fixture, const fs::path& out) {
  const auto events = telemetry::load_events(fixture);
  const auto state = telemetry::replay(events);
  telemetry::export_series(events, out / "exports");
  const auto report = telemetry::render_markdown_report(events, out);
  std::ostringstream os;
  os << (state.changelog.versions().empty() ? std::string("No candidates recorded.")
                                           : telemetry::valid_best_line(state))
     << "\n";
  os << "Report: " << report.string() << "\n";
  return {orchestrator::kExitOk, os.str()};
}

// ============================================================================
// status
// ============================================================================

inline std::string cmd_status(const fs::path& dir) {
  if (!fs::exists(dir / kConfigFile)) throw Error(Errc::NotAProject, dir.string());
  const fs::path log_file = dir / "telemetry" / "events.log";
  if (!fs::exists(log_file) || fs::file_size(log_file) == 0) return "Phase: not started\n";
  const auto events = telemetry::load_events(log_file);
  const auto state = telemetry::replay(events);
  std::ostringstream os;
  os << "Phase: " << state.phase << " (tick " << state.last_tick << ")\n";
  if (!state.termination_reason.empty()) os << "Termination reason: " << state.termination_reason << "\n";
  os << "Agents:\n";
  for (const auto& id : state.agent_order) {
    const auto& a = state.agents.at(id);
    if (a.state == agents::AgentState::Terminated) continue;
    os << "  " << a.id << " [" << requirements::to_string(a.role) << "] " << agents::to_string(a.state) << ", "
       << a.context_tokens << " tokens in context, " << a.compactions.size() << " compactions\n";
  }
  os << "Budget: " << state.spent.to_string() << " points";
  if (state.thresholds) {
    const requirements::Budget b{state.thresholds->min, state.thresholds->reference, state.thresholds->max};
    os << " (" << exec::to_string(exec::budget_status(state.spent, b)) << ")";
  }
  os << "\n" << telemetry::valid_best_line(state) << "\n";
  return os.str();
}

// ============================================================================
// lint
// ============================================================================

struct FileViolation {
  fs::path file;
  exec::LintViolation violation;
};

/// Offline forbidden-library scan of every regular file under `root`.
inline std::vector<FileViolation> lint_tree(const fs::path& root, const std::vector<std::string>& forbidden) {
  std::vector<FileViolation> out;
  if (!fs::exists(root)) return out;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    for (auto& v : exec::lint_forbidden(exec::read_file(f), forbidden)) out.push_back({fs::relative(f, root), v});
  }
  return out;
}

}  // namespace vibetune::project
