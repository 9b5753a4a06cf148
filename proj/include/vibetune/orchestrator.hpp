#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vibetune/agents.hpp"
#include "vibetune/backends.hpp"
#include "vibetune/bus.hpp"
#include "vibetune/exec.hpp"
#include "vibetune/remote_brain.hpp"
#include "vibetune/report.hpp"
#include "vibetune/requirements.hpp"
#include "vibetune/roles.hpp"
#include "vibetune/telemetry.hpp"
#include "vibetune/tuning.hpp"

namespace vibetune::orchestrator {

using agents::Action;
using agents::ActionKind;
using requirements::Role;
using telemetry::EventKind;

enum class Mode { Solo, Multi };

inline std::string_view to_string(Mode m) { return m == Mode::Solo ? "solo" : "multi"; }

struct Limits {
  std::int64_t max_ticks = 240;
  std::int64_t idle_patience = 3;
  std::int64_t report_period = 50;
  int stall_window = 5;
  std::int64_t spawn_interval = 20;
  std::size_t max_inflight = 2;
  int gpus_per_job = 4;
  std::int64_t compact_threshold = agents::kDefaultCompactThreshold;
  double tick_minutes = 1.0;
  double target_efficiency_pct = 60.0;
  /// Extra ticks granted after termination for in-flight jobs to finish.
  std::int64_t drain_ticks = 30;
};

struct BrainSettings {
  std::string kind = "scripted";  // scripted | remote
  std::string scenario = "baseline";
  roles::RemoteBrainConfig remote;
};

struct BackendSettings {
  std::string kind = "simulated";  // simulated | local | remote
  std::string build_cmd = "make -C {src}";
  std::string run_cmd = "{src}/gemm";
  exec::RemoteProfile remote;
  std::string resource_group = "default";
};

struct ProjectConfig {
  std::string requirements_path = "requirements.md";
  Mode mode = Mode::Multi;
  BrainSettings brains;
  BackendSettings backend;
  std::optional<std::uint64_t> seed;
  tuning::ParameterSpace space = roles::default_space();
  std::string strategy = "random";
  Limits limits;
  std::string remote_user;
};

inline nlohmann::json to_json(const ProjectConfig& c) {
  nlohmann::json limits{{"max_ticks", c.limits.max_ticks},
                        {"idle_patience", c.limits.idle_patience},
                        {"report_period", c.limits.report_period},
                        {"stall_window", c.limits.stall_window},
                        {"spawn_interval", c.limits.spawn_interval},
                        {"max_inflight", c.limits.max_inflight},
                        {"gpus_per_job", c.limits.gpus_per_job},
                        {"compact_threshold", c.limits.compact_threshold},
                        {"tick_minutes", c.limits.tick_minutes},
                        {"target_efficiency_pct", c.limits.target_efficiency_pct},
                        {"drain_ticks", c.limits.drain_ticks}};
  nlohmann::json j{{"requirements", c.requirements_path},
                   {"mode", to_string(c.mode)},
                   {"brains", {{"kind", c.brains.kind}, {"scenario", c.brains.scenario},
                               {"remote", roles::to_json(c.brains.remote)}}},
                   {"backend", {{"kind", c.backend.kind},
                                {"build_cmd", c.backend.build_cmd},
                                {"run_cmd", c.backend.run_cmd},
                                {"resource_group", c.backend.resource_group},
                                {"remote", exec::to_json(c.backend.remote)}}},
                   {"parameter_space", tuning::to_json(c.space)},
                   {"strategy", c.strategy},
                   {"limits", limits},
                   {"remote_user", c.remote_user}};
  j["seed"] = c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr);
  return j;
}

inline ProjectConfig config_from_json(const nlohmann::json& j) {
  ProjectConfig c;
  try {
    c.requirements_path = j.value("requirements", c.requirements_path);
    const std::string mode = j.value("mode", std::string("multi"));
    if (mode != "solo" && mode != "multi") throw Error(Errc::ConfigInvalid, "mode must be solo or multi");
    c.mode = mode == "solo" ? Mode::Solo : Mode::Multi;
    if (j.contains("brains")) {
      const auto& b = j.at("brains");
      c.brains.kind = b.value("kind", c.brains.kind);
      c.brains.scenario = b.value("scenario", c.brains.scenario);
      if (b.contains("remote")) c.brains.remote = roles::remote_brain_config_from_json(b.at("remote"));
    }
    if (j.contains("backend")) {
      const auto& b = j.at("backend");
      c.backend.kind = b.value("kind", c.backend.kind);
      c.backend.build_cmd = b.value("build_cmd", c.backend.build_cmd);
      c.backend.run_cmd = b.value("run_cmd", c.backend.run_cmd);
      c.backend.resource_group = b.value("resource_group", c.backend.resource_group);
      if (b.contains("remote")) c.backend.remote = exec::remote_profile_from_json(b.at("remote"));
    }
    if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("parameter_space")) c.space = tuning::space_from_json(j.at("parameter_space"));
    c.strategy = j.value("strategy", c.strategy);
    c.remote_user = j.value("remote_user", c.remote_user);
    if (j.contains("limits")) {
      const auto& l = j.at("limits");
      c.limits.max_ticks = l.value("max_ticks", c.limits.max_ticks);
      c.limits.idle_patience = l.value("idle_patience", c.limits.idle_patience);
      c.limits.report_period = l.value("report_period", c.limits.report_period);
      c.limits.stall_window = l.value("stall_window", c.limits.stall_window);
      c.limits.spawn_interval = l.value("spawn_interval", c.limits.spawn_interval);
      c.limits.max_inflight = l.value("max_inflight", c.limits.max_inflight);
      c.limits.gpus_per_job = l.value("gpus_per_job", c.limits.gpus_per_job);
      c.limits.compact_threshold = l.value("compact_threshold", c.limits.compact_threshold);
      c.limits.tick_minutes = l.value("tick_minutes", c.limits.tick_minutes);
      c.limits.target_efficiency_pct = l.value("target_efficiency_pct", c.limits.target_efficiency_pct);
      c.limits.drain_ticks = l.value("drain_ticks", c.limits.drain_ticks);
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(Errc::ConfigInvalid, e.what());
  }
  return c;
}

/// Problems that make a config unusable, empty when fine.
inline std::vector<std::string> config_problems(const ProjectConfig& c) {
  std::vector<std::string> out;
  if (c.brains.kind != "scripted" && c.brains.kind != "remote") out.push_back("brains.kind must be scripted or remote");
  if (c.backend.kind != "simulated" && c.backend.kind != "local" && c.backend.kind != "remote") {
    out.push_back("backend.kind must be simulated, local or remote");
  }
  if ((c.brains.kind == "scripted" || c.backend.kind == "simulated") && !c.seed) {
    out.push_back("seed is required for scripted brains and the simulated backend");
  }
  if (!tuning::make_strategy(c.strategy)) out.push_back("unknown strategy " + c.strategy);
  if (c.space.size() == 0) out.push_back("parameter space is empty");
  if (c.limits.max_ticks < 0) out.push_back("limits.max_ticks must be non-negative");
  if (c.limits.max_inflight < 1) out.push_back("limits.max_inflight must be at least 1");
  if (c.limits.gpus_per_job < 1) out.push_back("limits.gpus_per_job must be at least 1");
  if (c.limits.compact_threshold < 1) out.push_back("limits.compact_threshold must be positive");
  if (!(c.limits.tick_minutes > 0)) out.push_back("limits.tick_minutes must be positive");
  return out;
}

// ============================================================================
// Scenarios
// ============================================================================

struct Scenario {
  std::string name;
  roles::PolicyConfig policy;
  exec::SimScenario sim;
};

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names = {"baseline", "violation-demo", "lossy", "boundary-bug"};
  return names;
}

/// Scripted scenario presets layered over the policy derived from config.
inline Scenario make_scenario(const std::string& name, roles::PolicyConfig policy) {
  Scenario s{name, std::move(policy), exec::SimScenario{}};
  if (name == "baseline") {
  } else if (name == "violation-demo") {
    s.policy.plant_violation_at = 3;
    s.policy.plant_agent = "PG1.1";
  } else if (name == "lossy") {
    s.policy.lossy_roles = {Role::PG};
  } else if (name == "boundary-bug") {
    s.sim.techniques["Boundary condition"].boundary_bug = true;
  } else {
    throw Error(Errc::ConfigInvalid, "unknown scenario " + name);
  }
  return s;
}

// ============================================================================
// Run
// ============================================================================

struct RunOptions {
  /// Where events, candidates, publications and reports go. In-memory only
  /// when absent.
  std::optional<std::filesystem::path> project_dir;
  std::function<bool()> stop_requested;
  /// Fixed wall clock for tests; real UTC time when empty.
  std::function<std::string()> wall_clock;
  /// Per-role prompt template overrides for remote brains.
  std::map<Role, std::string> prompt_templates;
};

struct RunSummary {
  std::string reason;
  std::optional<tuning::SotaPoint> sota;
  double sota_efficiency_pct = 0;
  Decimal spent;
  exec::BudgetStatus budget = exec::BudgetStatus::UnderMin;
  std::int64_t ticks = 0;
  std::size_t jobs = 0;
  int exit_code = 0;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitBudget = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitRuntime = 4;

class Orchestrator {
 public:
  Orchestrator(requirements::RequirementSpec spec, ProjectConfig cfg, RunOptions opts = {},
               std::unique_ptr<exec::Backend> backend = nullptr)
      : spec_(std::move(spec)), cfg_(std::move(cfg)), opts_(std::move(opts)), log_(open_log(opts_)),
        bus_(log_.get(), opts_.project_dir ? std::optional(*opts_.project_dir / "telemetry" / "messages.jsonl")
                                           : std::nullopt) {
    if (opts_.wall_clock) log_->set_wall_clock(opts_.wall_clock);
    if (const auto problems = config_problems(cfg_); !problems.empty()) {
      throw Error(Errc::ConfigInvalid, roles::join(problems, "; "));
    }
    const bool multi = cfg_.mode == Mode::Multi;
    if (const auto v = requirements::validate_spec(spec_, multi); !v.empty()) {
      std::vector<std::string> lines;
      for (const auto& item : v) lines.push_back(std::string(requirements::to_string(item.code)) + ": " + item.detail);
      throw Error(Errc::ConfigInvalid, roles::join(lines, "; "));
    }
    if (!multi) spec_.agent_roster = {{Role::PG, 1}};

    roles::PolicyConfig policy;
    policy.tolerance = spec_.accuracy.tolerance.value_or(1e-12);
    policy.stall_window = cfg_.limits.stall_window;
    policy.report_period = cfg_.limits.report_period;
    policy.spawn_interval = cfg_.limits.spawn_interval;
    policy.target_efficiency_pct = cfg_.limits.target_efficiency_pct;
    policy.gpus_per_job = cfg_.limits.gpus_per_job;
    policy.strategy = cfg_.strategy;
    policy.seed = cfg_.seed.value_or(0);
    policy.space = cfg_.space;
    policy.remote_user = cfg_.remote_user;
    scenario_ = make_scenario(cfg_.brains.scenario, policy);
    scenario_.sim.peak_gflops = spec_.hardware.peak_gflops_per_gpu;
    changelog_.set_tolerance(scenario_.policy.tolerance);

    registry_ = std::make_unique<agents::AgentRegistry>(*log_, spec_.agent_roster, !multi);
    backend_ = backend ? std::move(backend) : make_backend();
  }

  RunSummary run() {
    log_->set_tick(0);
    bus_.set_tick(0);
    log_->append(telemetry::kSystem, EventKind::PhaseChange,
                 {{"phase", "running"},
                  {"mode", to_string(cfg_.mode)},
                  {"seed", cfg_.seed.value_or(0)},
                  {"scenario", scenario_.name},
                  {"backend", backend_->tag()},
                  {"peak_gflops_per_gpu", spec_.hardware.peak_gflops_per_gpu},
                  {"tolerance", changelog_.tolerance()}});
    log_budget();
    const Role root = cfg_.mode == Mode::Multi ? Role::PM : Role::PG;
    spawn(std::string(agents::kLauncher), root);

    std::int64_t tick = 0;
    for (; tick < cfg_.limits.max_ticks && !terminated_; ++tick) {
      set_tick(tick);
      complete_jobs(tick);
      dispatch_queue(tick);
      registry_->tick_hooks(cfg_.limits.idle_patience);
      for (const auto& id : registry_->live_ids()) {
        if (terminated_) break;
        if (registry_->is_live(id)) step_agent(id, tick);
      }
      if (!terminated_ && registry_->live_ids().empty()) {
        terminate_project(std::string(telemetry::kSystem), "no live agents");
      }
      if (on_tick_end) on_tick_end(*this, tick);
    }
    if (!terminated_) {
      set_tick(tick);
      terminate_project(std::string(telemetry::kSystem), "tick limit reached");
    }
    finish(tick);

    RunSummary s;
    s.reason = reason_;
    s.sota = changelog_.sota();
    if (s.sota) s.sota_efficiency_pct = changelog_.latest(s.sota->version)->metrics->efficiency_pct;
    s.spent = ledger_.spent_points();
    s.budget = exec::budget_status(ledger_, spec_);
    s.ticks = log_->tick();
    s.jobs = ledger_.job_count();
    s.exit_code = budget_reason_ ? kExitBudget : kExitOk;
    return s;
  }

  const telemetry::EventLog& log() const { return *log_; }
  const tuning::ChangeLog& changelog() const { return changelog_; }
  const agents::AgentRegistry& registry() const { return *registry_; }
  const exec::BudgetLedger& ledger() const { return ledger_; }
  const bus::MessageBus& message_bus() const { return bus_; }
  const std::vector<std::string>& published() const { return published_; }
  const requirements::RequirementSpec& spec() const { return spec_; }
  const Scenario& scenario() const { return scenario_; }
  std::string source_of(const std::string& version) const {
    const auto it = sources_.find(version);
    return it == sources_.end() ? std::string() : it->second;
  }

  /// Called after every tick with the live state; used by consistency checks.
  std::function<void(const Orchestrator&, std::int64_t)> on_tick_end;

 private:
  struct QueuedJob {
    std::string version;
    int gpus = 1;
    std::string author;
  };
  struct InflightJob {
    std::uint64_t handle = 0;
    std::string version;
    std::string author;
  };

  static std::unique_ptr<telemetry::EventLog> open_log(const RunOptions& opts) {
    if (!opts.project_dir) return std::make_unique<telemetry::EventLog>();
    return std::make_unique<telemetry::EventLog>(*opts.project_dir / "telemetry" / "events.log");
  }

  std::unique_ptr<exec::Backend> make_backend() const {
    const auto root = opts_.project_dir.value_or(std::filesystem::temp_directory_path() / "vibetune");
    if (cfg_.backend.kind == "local") {
      return std::make_unique<exec::LocalBackend>(root / "sandbox", cfg_.backend.build_cmd, cfg_.backend.run_cmd);
    }
    if (cfg_.backend.kind == "remote") return std::make_unique<exec::RemoteBackend>(root / "sandbox", cfg_.backend.remote);
    return std::make_unique<exec::SimulatedBackend>(scenario_.sim, cfg_.seed.value_or(0));
  }

  std::unique_ptr<agents::Brain> make_brain(Role role) const {
    if (cfg_.brains.kind == "remote") {
      roles::RemoteBrainConfig rc = cfg_.brains.remote;
      if (const auto it = opts_.prompt_templates.find(role); it != opts_.prompt_templates.end()) {
        rc.prompt_template = it->second;
      }
      return std::make_unique<roles::RemoteBrain>(role, rc);
    }
    return std::make_unique<roles::ScriptedBrain>(role, scenario_.policy);
  }

  void set_tick(std::int64_t tick) {
    log_->set_tick(tick);
    bus_.set_tick(tick);
  }

  double elapsed_minutes() const { return static_cast<double>(log_->tick()) * cfg_.limits.tick_minutes; }

  bool budget_exhausted() const {
    return exec::budget_status(ledger_, spec_) == exec::BudgetStatus::Exceeded ||
           ledger_.spent_points() >= spec_.budget.max_points;
  }

  void log_budget() {
    const auto& b = spec_.budget;
    log_->append(telemetry::kSystem, EventKind::BudgetUpdate,
                 {{"spent", ledger_.spent_points().to_string()},
                  {"status", exec::to_string(exec::budget_status(ledger_, spec_))},
                  {"min", b.min_points.to_string()},
                  {"reference", b.reference_points.to_string()},
                  {"max", b.max_points.to_string()}});
  }

  void log_error(const std::string& agent, const std::string& what, const std::string& context = {}) {
    nlohmann::json p{{"message", what}};
    if (!context.empty()) p["context"] = context;
    log_->append(agent, EventKind::Error, p);
  }

  const agents::AgentDescriptor& spawn(const std::string& requester, Role role) {
    const auto& d = registry_->spawn_agent(requester, role, make_brain(role), cfg_.limits.compact_threshold);
    bus_.register_agent(d.id, std::string(requirements::to_string(role)));
    return d;
  }

  // --------------------------------------------------------------------------
  // Jobs
  // --------------------------------------------------------------------------

  void complete_jobs(std::int64_t tick) {
    for (auto it = inflight_.begin(); it != inflight_.end();) {
      const exec::PollResult polled = backend_->poll(it->handle, tick);
      if (polled.state != exec::JobState::Done && polled.state != exec::JobState::Error) {
        ++it;
        continue;
      }
      const exec::JobRecord rec = *polled.record;
      const InflightJob job = *it;
      it = inflight_.erase(it);
      finish_job(job, rec);
    }
  }

  void finish_job(const InflightJob& job, const exec::JobRecord& rec) {
    ledger_.charge(rec);
    log_->append(telemetry::kSystem, EventKind::JobDone,
                 {{"job", job.handle},
                  {"version", job.version},
                  {"state", exec::to_string(rec.state)},
                  {"elapsed_s", rec.elapsed_s.to_string()},
                  {"points", rec.points.to_string()},
                  {"error", rec.error},
                  {"metrics", rec.outputs.metrics}});
    log_budget();

    std::optional<tuning::Metrics> metrics;
    tuning::Status verdict = tuning::Status::Failed;
    std::string note;
    if (rec.state == exec::JobState::Error) {
      note = rec.error;
    } else if (!rec.outputs.metrics.contains("gflops") || !rec.outputs.metrics.contains("error_norm")) {
      note = "job output lacks gflops or error_norm";
    } else {
      tuning::Metrics m;
      m.gflops = rec.outputs.metrics.at("gflops");
      m.efficiency_pct = exec::efficiency_pct(m.gflops, spec_.hardware.peak_gflops_per_gpu);
      m.error_norm = rec.outputs.metrics.at("error_norm");
      m.elapsed_s = rec.elapsed_s.to_double();
      m.gpus = rec.gpus;
      metrics = m;
      if (changelog_.latest(job.version)->status == tuning::Status::Invalid) {
        verdict = tuning::Status::Invalid;
      } else if (m.error_norm <= changelog_.tolerance()) {
        verdict = tuning::Status::Valid;
      } else {
        note = "accuracy: error norm " + text::shortest(m.error_norm) + " exceeds tolerance " +
               text::shortest(changelog_.tolerance());
      }
    }
    record_result(telemetry::kSystem, job.version, metrics, verdict, note);
    notices_[job.author].push_back({job.version, verdict, metrics, rec.error, false});
  }

  void record_result(std::string_view agent, const std::string& version, const std::optional<tuning::Metrics>& metrics,
                     tuning::Status verdict, const std::string& note) {
    changelog_.record_result(version, metrics, verdict, log_->tick(), note);
    log_->append(agent, EventKind::ResultRecorded,
                 {{"version", version},
                  {"status", tuning::to_string(verdict)},
                  {"metrics", metrics ? tuning::to_json(*metrics) : nlohmann::json(nullptr)},
                  {"note", note}});
  }

  void dispatch_queue(std::int64_t tick) {
    while (!queue_.empty() && inflight_.size() < cfg_.limits.max_inflight) {
      const QueuedJob q = queue_.front();
      queue_.pop_front();
      if (budget_exhausted()) {
        log_error(telemetry::kSystem.data(), "job for " + q.version + " not run: budget exhausted");
        notices_[q.author].push_back({q.version, changelog_.latest(q.version)->status, std::nullopt,
                                      "budget exhausted", true});
        continue;
      }
      const auto* c = changelog_.latest(q.version);
      exec::JobRequest req;
      req.version = q.version;
      req.params = c->params;
      req.label = c->optimization_label;
      req.source = sources_[q.version];
      req.build_script = builds_[q.version];
      req.gpus = q.gpus;
      req.resource_group = cfg_.backend.resource_group;
      req.point_rate = spec_.point_rate;
      const std::uint64_t handle = backend_->submit(req, tick);
      inflight_.push_back({handle, q.version, q.author});
      log_->append(telemetry::kSystem, EventKind::JobSubmitted,
                   {{"job", handle},
                    {"version", q.version},
                    {"backend", backend_->tag()},
                    {"gpus", q.gpus},
                    {"resource_group", req.resource_group},
                    {"author", q.author}});
    }
  }

  std::size_t jobs_of(const std::string& agent) const {
    std::size_t n = 0;
    for (const auto& j : inflight_) n += j.author == agent ? 1 : 0;
    for (const auto& j : queue_) n += j.author == agent ? 1 : 0;
    return n;
  }

  // --------------------------------------------------------------------------
  // Agents
  // --------------------------------------------------------------------------

  void step_agent(const std::string& id, std::int64_t tick) {
    const agents::AgentDescriptor& d = registry_->get(id);
    auto& seen = seen_[id];
    const auto& entries = changelog_.entries();
    const bool has_news = seen < entries.size();
    const bool invoke = d.state == agents::AgentState::Spawned || d.state == agents::AgentState::Working ||
                        bus_.pending(id) > 0 || !notices_[id].empty() || has_news || d.wake_pending;
    if (!invoke) return;
    // A woken agent works this tick, so no idle stretch outlasts the patience window.
    if (d.wake_pending && d.state == agents::AgentState::Idle) registry_->set_state(id, agents::AgentState::Working);

    agents::Observation obs;
    obs.tick = tick;
    obs.elapsed_minutes = elapsed_minutes();
    obs.self_id = id;
    obs.self_role = d.role;
    obs.context_tokens = d.context_tokens;
    obs.solo = cfg_.mode == Mode::Solo;
    obs.woken = d.wake_pending;
    obs.stop_requested = opts_.stop_requested && opts_.stop_requested();
    obs.closing = terminated_;
    obs.inbox = bus_.drain(id);
    obs.my_results = std::move(notices_[id]);
    notices_[id].clear();
    std::set<std::string> fresh, resolved;
    for (std::size_t i = seen; i < entries.size(); ++i) {
      const auto& c = entries[i].snapshot;
      if (c.status == tuning::Status::Pending && !c.flagged && fresh.insert(c.version).second) {
        obs.new_candidates.push_back(c.version);
      } else if (c.status != tuning::Status::Pending && resolved.insert(c.version).second) {
        obs.new_results.push_back(c.version);
      }
    }
    seen = entries.size();
    obs.team = registry_->team();
    obs.published = published_;
    obs.my_inflight = jobs_of(id);
    obs.changelog = &changelog_;
    obs.spec = &spec_;
    obs.spent_points = ledger_.spent_points();
    obs.budget = exec::budget_status(ledger_, spec_);
    obs.read_source = [this](const std::string& v) { return source_of(v); };

    const agents::Decision decision = registry_->decide(id, obs);
    registry_->record_tokens(id, decision.tokens_charged);
    if (decision.error) log_error(id, *decision.error, "brain");

    bool acted = false;
    const bool was_terminated = terminated_;
    for (const auto& action : decision.actions) {
      if (action.kind == ActionKind::NoOp) continue;
      acted = true;
      try {
        apply(id, d.role, action);
      } catch (const Error& e) {
        log_error(id, e.what(), std::string(agents::to_string(action.kind)));
      }
      if (terminated_ != was_terminated || !registry_->is_live(id)) break;
    }
    if (!registry_->is_live(id)) return;
    registry_->set_state(id, acted ? agents::AgentState::Working : agents::AgentState::Idle);
    registry_->maybe_autocompact(id);
  }

  void require_role(Role actual, std::initializer_list<Role> allowed, ActionKind kind) const {
    for (Role r : allowed) {
      if (r == actual) return;
    }
    throw Error(Errc::Unauthorized,
                std::string(requirements::to_string(actual)) + " may not " + std::string(agents::to_string(kind)));
  }

  bool solo() const { return cfg_.mode == Mode::Solo; }

  void apply(const std::string& id, Role role, const Action& a) {
    if (terminated_ && (a.kind == ActionKind::GenerateCandidate || a.kind == ActionKind::SubmitJob ||
                        a.kind == ActionKind::SpawnAgent)) {
      throw Error(Errc::Unauthorized, std::string(agents::to_string(a.kind)) + " after project termination");
    }
    switch (a.kind) {
      case ActionKind::SendMessage:
        bus_.send(id, a.to, a.body);
        break;
      case ActionKind::GenerateCandidate:
        require_role(role, {Role::PG}, a.kind);
        generate(id, a);
        break;
      case ActionKind::SubmitJob: {
        require_role(role, {Role::PG}, a.kind);
        if (!changelog_.contains(a.version)) throw Error(Errc::UnknownVersion, a.version);
        if (budget_exhausted()) throw Error(Errc::SubmitRejected, a.version + ": budget exhausted");
        const int gpus = a.gpus > 0 ? a.gpus : cfg_.limits.gpus_per_job;
        queue_.push_back({a.version, gpus, id});
        dispatch_queue(log_->tick());
        break;
      }
      case ActionKind::ReviewCandidate:
        require_role(role, {Role::CD}, a.kind);
        review(id, a);
        break;
      case ActionKind::SpawnAgent:
        spawn(id, a.role);
        break;
      case ActionKind::MarkInvalid: {
        require_role(role, {Role::PM}, a.kind);
        if (!changelog_.contains(a.version)) throw Error(Errc::UnknownVersion, a.version);
        record_result(id, a.version, std::nullopt, tuning::Status::Invalid, a.body);
        break;
      }
      case ActionKind::EmitReport:
        require_role(role, {Role::SE}, a.kind);
        log_->append(id, EventKind::Report, {{"body", a.body}});
        break;
      case ActionKind::Publish:
        if (solo()) require_role(role, {Role::PG}, a.kind);
        else require_role(role, {Role::CD}, a.kind);
        publish(id, a.version);
        break;
      case ActionKind::Terminate:
        if (a.scope == agents::TerminateScope::Project) {
          if (solo()) require_role(role, {Role::PG}, a.kind);
          else require_role(role, {Role::PM}, a.kind);
          terminate_project(id, a.body);
        } else {
          registry_->terminate(id, a.body);
          bus_.retire_agent(id);
        }
        break;
      case ActionKind::NoOp:
        break;
    }
  }

  void generate(const std::string& id, const Action& a) {
    const std::string version = a.version.empty() ? tuning::next_minor_version(changelog_) : a.version;
    const std::string source_ref = "candidates/" + version + "/kernel.cu";
    changelog_.register_candidate(version, a.parent, a.params, source_ref, a.label, log_->tick());
    sources_[version] = a.source;
    builds_[version] = a.build_script;
    if (opts_.project_dir) {
      exec::write_file(*opts_.project_dir / source_ref, a.source);
      if (!a.build_script.empty()) exec::write_file(*opts_.project_dir / "candidates" / version / "Makefile", a.build_script);
    }
    log_->append(id, EventKind::CandidateRegistered,
                 {{"version", version},
                  {"parent", a.parent ? nlohmann::json(*a.parent) : nlohmann::json(nullptr)},
                  {"params", a.params},
                  {"label", a.label},
                  {"source_ref", source_ref}});
  }

  void review(const std::string& id, const Action& a) {
    if (a.findings.empty()) return;
    if (!changelog_.contains(a.version)) throw Error(Errc::UnknownVersion, a.version);
    const std::string note = roles::join(a.findings, "; ");
    changelog_.flag(a.version, note, log_->tick());
    log_->append(id, EventKind::Violation, {{"version", a.version}, {"findings", a.findings}, {"note", note}});
    static const std::string kLib = "RequirementViolation: ";
    for (const auto& f : a.findings) {
      if (!bus_.is_live("PM")) break;
      if (f.rfind(kLib, 0) == 0) {
        bus_.send(id, "PM", roles::violation_warning(a.version, f.substr(kLib.size())));
      } else {
        bus_.send(id, "PM", "Anonymization issue in " + roles::vtag(a.version) + ": " + f + ".");
      }
    }
  }

  void publish(const std::string& id, const std::string& version) {
    const auto* c = changelog_.latest(version);
    if (c == nullptr) throw Error(Errc::UnknownVersion, version);
    if (c->status != tuning::Status::Valid || c->flagged) {
      throw Error(Errc::IllegalTransition, version + " is not a clean valid candidate");
    }
    const std::string rel = "publish/" + version;
    if (opts_.project_dir) {
      const auto dir = *opts_.project_dir / rel;
      exec::write_file(dir / "kernel.cu", roles::anonymize(sources_[version], cfg_.remote_user));
      nlohmann::json meta{{"version", version},
                          {"label", c->optimization_label},
                          {"params", c->params},
                          {"gflops", c->metrics->gflops},
                          {"efficiency_pct", c->metrics->efficiency_pct},
                          {"error_norm", c->metrics->error_norm},
                          {"source", "kernel.cu"}};
      exec::write_file(dir / "metadata.json", roles::anonymize(meta.dump(2), cfg_.remote_user) + "\n");
    }
    published_.push_back(version);
    log_->append(id, EventKind::Published, {{"version", version}, {"path", rel}});
  }

  void terminate_project(const std::string& agent, const std::string& reason) {
    if (terminated_) return;
    terminated_ = true;
    reason_ = reason;
    budget_reason_ = reason.rfind("budget", 0) == 0;
    log_->append(agent, EventKind::Terminate, {{"scope", "project"}, {"reason", reason}});
  }

  /// Nothing in flight and no agent has unread mail, notices or ChangeLog news.
  bool quiescent() {
    if (!inflight_.empty()) return false;
    for (const auto& id : registry_->live_ids()) {
      if (bus_.pending(id) > 0 || !notices_[id].empty() || seen_[id] < changelog_.entries().size()) return false;
    }
    return true;
  }

  /// After the stop decision, running jobs still finish and agents still
  /// review, invalidate and publish (in closing mode) for up to drain_ticks.
  void finish(std::int64_t tick) {
    // `tick` is the first tick nobody has stepped in yet.
    for (std::int64_t extra = 0; !quiescent() && extra < cfg_.limits.drain_ticks; ++extra, ++tick) {
      set_tick(tick);
      complete_jobs(tick);
      for (const auto& id : registry_->live_ids()) {
        if (registry_->is_live(id)) step_agent(id, tick);
      }
    }
    for (const auto& job : inflight_) log_error(telemetry::kSystem.data(), "job for " + job.version + " abandoned");
    for (const auto& q : queue_) log_error(telemetry::kSystem.data(), "job for " + q.version + " not run: project terminated");
    inflight_.clear();
    queue_.clear();
    for (const auto& id : registry_->live_ids()) {
      registry_->terminate(id, "project terminated");
      bus_.retire_agent(id);
    }
    log_->append(telemetry::kSystem, EventKind::PhaseChange, {{"phase", "terminated"}, {"reason", reason_}});
    if (opts_.project_dir) {
      telemetry::export_series(log_->events(), *opts_.project_dir / "telemetry" / "exports");
      telemetry::render_markdown_report(log_->events(), *opts_.project_dir / "reports");
    }
    if (on_tick_end) on_tick_end(*this, log_->tick());
  }

  requirements::RequirementSpec spec_;
  ProjectConfig cfg_;
  RunOptions opts_;
  std::unique_ptr<telemetry::EventLog> log_;
  bus::MessageBus bus_;
  Scenario scenario_;
  tuning::ChangeLog changelog_;
  exec::BudgetLedger ledger_;
  std::unique_ptr<agents::AgentRegistry> registry_;
  std::unique_ptr<exec::Backend> backend_;
  std::deque<QueuedJob> queue_;
  std::vector<InflightJob> inflight_;
  std::map<std::string, std::vector<agents::JobNotice>> notices_;
  std::map<std::string, std::size_t> seen_;
  std::map<std::string, std::string> sources_;
  std::map<std::string, std::string> builds_;
  std::vector<std::string> published_;
  bool terminated_ = false;
  bool budget_reason_ = false;
  std::string reason_;
};

}  // namespace vibetune::orchestrator
