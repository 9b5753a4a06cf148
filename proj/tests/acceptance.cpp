// Acceptance checks: one PASS/FAIL line per criterion, with its runtime.
// Exit status is non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "vibetune/project.hpp"

namespace fs = std::filesystem;
using namespace vibetune;
using requirements::Role;
using telemetry::EventKind;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

/// Collects failed expectations; the first few end up in the detail text.
struct Checker {
  Outcome out;
  void expect(bool cond, const std::string& what) {
    if (cond) return;
    if (out.ok) out.detail = what;
    else if (out.detail.size() < 300) out.detail += "; " + what;
    out.ok = false;
  }
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vibetune_acceptance_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

requirements::RequirementSpec sample_spec() {
  return requirements::parse_requirements(exec::read_file(fs::path(VIBETUNE_FIXTURES) / "sample_requirements.md"));
}

std::string masked_file(const fs::path& events_log) { return telemetry::masked_dump(telemetry::load_events(events_log)); }

// ---------------------------------------------------------------------------

Outcome requirements_round_trip() {
  Checker c;
  const auto spec = sample_spec();
  c.expect(spec.budget.min_points == Decimal(100), "min points");
  c.expect(spec.budget.reference_points == Decimal(500), "reference points");
  c.expect(spec.budget.max_points == Decimal(1000), "max points");
  c.expect(spec.point_rate == Decimal::parse("0.007"), "rate");
  c.expect(spec.time_limits.min == 120 && spec.time_limits.reference == 150 && spec.time_limits.max == 180,
           "time limits");
  const std::map<Role, int> roster{{Role::PM, 1}, {Role::SE, 1}, {Role::PG, 3}, {Role::CD, 1}};
  c.expect(spec.agent_roster == roster, "roster");
  c.expect(spec.forbidden_libraries == std::vector<std::string>{"cuBLAS", "MKL"}, "forbidden libraries");
  const auto again = requirements::parse_requirements(requirements::serialize_spec(spec));
  c.expect(requirements::recognized_equal(spec, again), "serialize/parse round trip");
  c.out.detail = c.out.ok ? "budget 100/500/1000, rate 0.007, 120/150/180 min, PM1 SE1 PG3 CD1, {cuBLAS, MKL}"
                          : c.out.detail;
  return c.out;
}

Outcome points_property() {
  Checker c;
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<std::int64_t> millis(0, 36'000'000);  // up to 10 h
  std::uniform_int_distribution<int> gpus(0, 16);
  const Decimal rate = Decimal::parse("0.007");
  exec::BudgetLedger ledger;
  // Oracle in integer micro-points: ms * 7 * gpus, since 0.007 * ms / 1000 = 7 * ms / 1e6.
  std::int64_t oracle_total = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t ms = millis(rng);
    const int g = gpus(rng);
    std::ostringstream text;
    text << ms / 1000 << '.' << std::setw(3) << std::setfill('0') << ms % 1000;
    const Decimal elapsed = Decimal::parse(text.str());
    const Decimal points = exec::compute_points(elapsed, g, rate);
    const std::int64_t micro = ms * 7 * g;
    oracle_total += micro;
    if (points != Decimal::from_parts(micro, 6)) {
      c.expect(false, "pair " + std::to_string(i) + ": " + points.to_string());
      break;
    }
    exec::JobRecord job;
    job.points = points;
    ledger.charge(job);
  }
  c.expect(ledger.spent_points() == Decimal::from_parts(oracle_total, 6),
           "ledger " + ledger.spent_points().to_string() + " vs oracle");
  if (c.out.ok) c.out.detail = "1000 pairs exact, ledger total " + ledger.spent_points().to_string();
  return c.out;
}

Outcome version_history_replay() {
  Checker c;
  const auto events = telemetry::load_events(fs::path(VIBETUNE_FIXTURES) / "version_history.jsonl");
  const auto state = telemetry::replay(events);
  const auto sota = state.changelog.sota();
  c.expect(sota && sota->version == "1.4.0", "SOTA version");
  if (sota) {
    c.expect(std::fabs(sota->gflops - 3365.2) < 1e-9, "SOTA gflops");
    const double eff = exec::efficiency_pct(sota->gflops, 7800.0);
    c.expect(std::fabs(eff - 43.14) <= 0.05, "SOTA efficiency");
  }
  c.expect(telemetry::valid_best_line(state) == "Valid best: v1.4.0, 3365.2 GFLOPS, 43.14%", "valid best line");
  const auto* v130 = state.changelog.latest("1.3.0");
  c.expect(v130 != nullptr && v130->status == tuning::Status::Invalid, "v1.3.0 Invalid");
  // Reference rows with a measurement: version, gflops, printed efficiency.
  const std::vector<std::tuple<std::string, double, double>> rows = {
      {"1.0.0", 1803.7, 23.10}, {"1.0.1", 1888.5, 24.21}, {"1.2.1", 2185.2, 28.02},
      {"1.3.0", 5868.9, 75.24}, {"1.4.0", 3365.2, 43.14}};
  double worst = 0;
  for (const auto& [v, gf, eff] : rows) {
    const auto* cand = state.changelog.latest(v);
    c.expect(cand && cand->metrics && std::fabs(cand->metrics->gflops - gf) < 1e-9, "gflops of " + v);
    const double recomputed = exec::efficiency_pct(gf, 7800.0);
    worst = std::max(worst, std::fabs(recomputed - eff));
    c.expect(std::fabs(recomputed - eff) <= 0.05, "efficiency of " + v);
    if (cand && cand->metrics) c.expect(std::fabs(cand->metrics->efficiency_pct - eff) <= 0.05, "recorded eff " + v);
  }
  // Invalid must never count: the performance export marks it non-SOTA.
  const std::string csv = telemetry::performance_csv(state);
  c.expect(csv.find(",Invalid,1") == std::string::npos, "Invalid row marked as SOTA");
  if (c.out.ok) {
    std::ostringstream os;
    os << "SOTA v1.4.0 3365.2 GFLOPS 43.14%, v1.3.0 Invalid, max efficiency deviation " << std::fixed
       << std::setprecision(3) << worst << "pp";
    c.out.detail = os.str();
  }
  return c.out;
}

struct ScenarioRun {
  std::string masked_log;
  std::vector<std::string> library_versions;  // candidates whose source calls the library
  std::vector<telemetry::TelemetryEvent> events;
  std::vector<std::string> published;
  std::vector<project::FileViolation> publish_lint;
  std::set<std::string> sota_history;
  orchestrator::RunSummary summary;
  fs::path dir;
};

ScenarioRun run_scenario(const requirements::RequirementSpec& spec, orchestrator::Mode mode,
                         const std::string& scenario, std::uint64_t seed, const fs::path& dir) {
  orchestrator::ProjectConfig cfg;
  cfg.mode = mode;
  cfg.seed = seed;
  cfg.brains.scenario = scenario;
  orchestrator::RunOptions opts;
  opts.project_dir = dir;
  opts.wall_clock = [] { return std::string("1970-01-01T00:00:00Z"); };
  orchestrator::Orchestrator orch(spec, cfg, opts);
  ScenarioRun r;
  r.dir = dir;
  orch.on_tick_end = [&r](const orchestrator::Orchestrator& o, std::int64_t) {
    if (const auto s = o.changelog().sota()) r.sota_history.insert(s->version);
  };
  r.summary = orch.run();
  r.events = orch.log().events();
  r.masked_log = masked_file(dir / "telemetry" / "events.log");
  for (const auto& v : orch.changelog().versions()) {
    if (!exec::lint_forbidden(orch.source_of(v), spec.forbidden_libraries).empty()) r.library_versions.push_back(v);
  }
  r.published = orch.published();
  r.publish_lint = project::lint_tree(dir / "publish", spec.forbidden_libraries);
  return r;
}

std::optional<std::uint64_t> first_seq(const std::vector<telemetry::TelemetryEvent>& events,
                                       const std::function<bool(const telemetry::TelemetryEvent&)>& pred) {
  for (const auto& e : events) {
    if (pred(e)) return e.seq;
  }
  return std::nullopt;
}

Outcome violation_scenario() {
  Checker c;
  const auto spec = sample_spec();
  const auto a = run_scenario(spec, orchestrator::Mode::Multi, "violation-demo", 7, scratch("violation_a"));
  const auto b = run_scenario(spec, orchestrator::Mode::Multi, "violation-demo", 7, scratch("violation_b"));
  c.expect(!a.library_versions.empty(), "no planted candidate");
  std::string detail;
  for (const auto& v : a.library_versions) {
    const auto has_version = [&v](const telemetry::TelemetryEvent& e) {
      return e.payload.is_object() && e.payload.value("version", std::string()) == v;
    };
    const auto flagged = first_seq(a.events, [&](const auto& e) {
      return e.kind == EventKind::Violation && e.agent == "CD" && has_version(e);
    });
    const auto measured = first_seq(a.events, [&](const auto& e) {
      return e.kind == EventKind::ResultRecorded && e.agent == telemetry::kSystem && has_version(e);
    });
    const auto invalidated = first_seq(a.events, [&](const auto& e) {
      return e.kind == EventKind::ResultRecorded && e.agent == "PM" && has_version(e) &&
             e.payload.value("status", std::string()) == "Invalid";
    });
    c.expect(flagged.has_value(), v + " not flagged by CD");
    c.expect(measured.has_value(), v + " never measured");
    c.expect(invalidated.has_value(), v + " not invalidated by PM");
    if (measured && invalidated) {
      const auto gap = static_cast<std::int64_t>(*invalidated) - static_cast<std::int64_t>(*measured);
      c.expect(gap >= 0 && gap <= 10, v + " invalidated " + std::to_string(gap) + " events after its result");
      detail += "v" + v + " flagged@" + std::to_string(*flagged) + " measured@" + std::to_string(*measured) +
                " invalidated@" + std::to_string(*invalidated) + " ";
    }
    c.expect(!a.sota_history.contains(v), v + " was SOTA");
    c.expect(std::find(a.published.begin(), a.published.end(), v) == a.published.end(), v + " published");
    c.expect(!fs::exists(a.dir / "publish" / v), v + " in publish/");
  }
  c.expect(a.publish_lint.empty(), "publish/ contains library calls");
  c.expect(a.masked_log == b.masked_log, "two runs differ");
  if (c.out.ok) c.out.detail = detail + "| SOTA " + (a.summary.sota ? "v" + a.summary.sota->version : "none") +
                               ", logs identical (" + std::to_string(a.events.size()) + " events)";
  return c.out;
}

Outcome solo_vs_multi() {
  Checker c;
  const auto spec = sample_spec();
  int solo_dirty = 0, multi_planted = 0, multi_caught = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto multi = run_scenario(spec, orchestrator::Mode::Multi, "lossy", seed, scratch("multi"));
    c.expect(multi.publish_lint.empty(), "multi seed " + std::to_string(seed) + " published a library call");
    for (const auto& v : multi.library_versions) {
      ++multi_planted;
      const bool flagged = first_seq(multi.events, [&](const auto& e) {
                             return e.kind == EventKind::Violation && e.payload.value("version", std::string()) == v;
                           }).has_value();
      multi_caught += flagged ? 1 : 0;
      c.expect(flagged, "multi seed " + std::to_string(seed) + " missed v" + v);
      c.expect(!multi.sota_history.contains(v), "multi seed " + std::to_string(seed) + " SOTA v" + v);
    }
    const auto solo = run_scenario(spec, orchestrator::Mode::Solo, "lossy", seed, scratch("solo"));
    solo_dirty += solo.publish_lint.empty() ? 0 : 1;
  }
  c.expect(multi_planted > 0, "lossy multi runs never attempted the library");
  c.expect(solo_dirty >= 16, "solo published a flagged candidate in only " + std::to_string(solo_dirty) + "/20 seeds");
  std::ostringstream os;
  os << "multi caught " << multi_caught << "/" << multi_planted << " library candidates, published none; solo "
     << "published flagged code in " << solo_dirty << "/20 seeds";
  if (c.out.ok) c.out.detail = os.str();
  return c.out;
}

/// Brain that never acts; compaction keeps a fixed-size summary.
class FixedBrain final : public agents::Brain {
 public:
  std::string kind() const override { return "fixed"; }
  agents::Decision decide(const agents::Observation&) override { return {{agents::Action::noop()}, 0, {}}; }
  agents::CompactionSummary compact(const agents::AgentDescriptor&, std::int64_t) override {
    return {"summary", 12000};
  }
};

Outcome auto_compact() {
  Checker c;
  telemetry::EventLog log;
  log.set_wall_clock([] { return std::string(); });
  agents::AgentRegistry registry(log, {{Role::PG, 1}}, /*solo=*/true);
  const auto id = registry.spawn_agent(std::string(agents::kLauncher), Role::PG, std::make_unique<FixedBrain>()).id;
  // Running sum: 100k, 140k, 160k(cross) -> 12k, 82k, 152k(cross) -> 12k, 62k, 112k.
  const std::vector<std::int64_t> deltas = {100000, 40000, 20000, 70000, 70000, 50000, 50000};
  // Oracle: count crossings by replaying the sums by hand.
  int expected = 0;
  std::int64_t sum = 0;
  for (auto d : deltas) {
    sum += d;
    if (sum >= 150000) {
      ++expected;
      sum = 12000;
    }
  }
  std::map<std::int64_t, std::int64_t> live;
  for (std::size_t t = 0; t < deltas.size(); ++t) {
    log.set_tick(static_cast<std::int64_t>(t));
    registry.record_tokens(id, deltas[t]);
    registry.maybe_autocompact(id);
    live[static_cast<std::int64_t>(t)] = registry.get(id).context_tokens;
  }
  int events = 0;
  for (const auto& e : log.events()) {
    if (e.kind != EventKind::Compaction) continue;
    ++events;
    c.expect(e.payload.at("tokens_after").get<std::int64_t>() < 150000, "compaction left counter above threshold");
  }
  c.expect(expected == 2, "oracle expects two crossings");
  c.expect(events == 2, "got " + std::to_string(events) + " compaction events");
  c.expect(registry.get(id).compactions.size() == 2, "descriptor compaction count");
  const auto report = telemetry::context_usage_report(log.events());
  std::map<std::int64_t, std::int64_t> rebuilt;
  for (const auto& [tick, tokens] : report.series.at(id)) rebuilt[tick] = tokens;  // last value per tick wins
  c.expect(rebuilt == live, "replayed series differs from live counters");
  const auto replayed = telemetry::replay(log.events());
  c.expect(replayed.agents.at(id).context_tokens == registry.get(id).context_tokens, "replayed final counter");
  if (c.out.ok) c.out.detail = "2 compactions, series matches live counters at all " + std::to_string(live.size()) + " ticks";
  return c.out;
}

Outcome budget_enforcement() {
  Checker c;
  auto spec = sample_spec();
  const auto run = [&](const Decimal& max, const fs::path& dir) {
    auto s = spec;
    s.budget = {Decimal::from_parts(0, 0), max * Decimal::parse("0.5"), max};
    orchestrator::ProjectConfig cfg;
    cfg.seed = 11;
    cfg.limits.max_inflight = 1;
    orchestrator::RunOptions opts;
    opts.project_dir = dir;
    orchestrator::Orchestrator orch(s, cfg, opts);
    auto summary = orch.run();
    return std::make_pair(summary, orch.log().events());
  };
  const auto job_points = [](const std::vector<telemetry::TelemetryEvent>& events) {
    std::vector<Decimal> out;
    for (const auto& e : events) {
      if (e.kind == EventKind::JobDone) out.push_back(Decimal::parse(e.payload.at("points").get<std::string>()));
    }
    return out;
  };
  // Probe the cost of the first three jobs, then set the maximum one
  // micro-point under their sum. Re-probe until the trajectory is stable.
  Decimal max = Decimal(1000);
  std::pair<orchestrator::RunSummary, std::vector<telemetry::TelemetryEvent>> result;
  bool settled = false;
  for (int attempt = 0; attempt < 5 && !settled; ++attempt) {
    result = run(max, scratch("budget"));
    const auto pts = job_points(result.second);
    if (pts.size() < 3) break;
    const Decimal three = pts[0] + pts[1] + pts[2];
    const Decimal candidate = three - Decimal::from_parts(1, 6);
    settled = candidate == max;
    max = candidate;
  }
  const auto& [summary, events] = result;
  const auto pts = job_points(events);
  c.expect(settled, "budget probe did not settle");
  c.expect(pts.size() == 3, std::to_string(pts.size()) + " jobs ran");
  if (pts.size() >= 2) c.expect(pts[0] + pts[1] <= max, "two jobs already exceed the maximum");
  std::optional<std::uint64_t> exceeded_at;
  int submits = 0, submits_after = 0;
  for (const auto& e : events) {
    if (e.kind == EventKind::BudgetUpdate && e.payload.value("status", std::string()) == "Exceeded" && !exceeded_at) {
      exceeded_at = e.seq;
    }
    if (e.kind == EventKind::JobSubmitted) {
      ++submits;
      if (exceeded_at) ++submits_after;
    }
  }
  c.expect(exceeded_at.has_value(), "budget never reached Exceeded");
  c.expect(submits == 3, std::to_string(submits) + " JobSubmitted events");
  c.expect(submits_after == 0, "submission after Exceeded");
  c.expect(summary.exit_code == orchestrator::kExitBudget, "exit code " + std::to_string(summary.exit_code));
  if (c.out.ok) {
    c.out.detail = "max " + max.to_string() + " points, 3 jobs, no submit after Exceeded, exit 2 (" + summary.reason + ")";
  }
  return c.out;
}

Outcome verification() {
  Checker c;
  const double tolerance = 1e-12;
  const auto problem = exec::make_problem(7, 5, 3, 42);
  // Oracle: plain triple loop written out here, independent of the library.
  exec::Matrix oracle = problem.c;
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < 3; ++p) s += problem.a(i, p) * problem.b(p, j);
      oracle(i, j) = problem.alpha * s + problem.beta * problem.c(i, j);
    }
  }
  const auto reference = exec::reference_result(problem);
  c.expect(exec::verify_error_norm(reference, oracle) == 0.0, "library reference differs from oracle");
  const auto buggy = exec::tiled_gemm(problem.a, problem.b, problem.c, problem.alpha, problem.beta, 4, 4, 1, true);
  const double bug_norm = exec::relative_error(buggy, oracle);
  c.expect(bug_norm > tolerance, "buggy kernel norm within tolerance");
  c.expect(exec::verify_error_norm(oracle, oracle) == 0.0, "identical inputs give non-zero norm");
  c.expect(exec::accuracy_ok(oracle, oracle, tolerance), "identical inputs rejected");

  // End to end: the boundary-bug scenario must record its candidates Failed.
  const auto spec = sample_spec();
  orchestrator::ProjectConfig cfg;
  cfg.seed = 3;
  cfg.brains.scenario = "boundary-bug";
  orchestrator::Orchestrator orch(spec, cfg);
  orch.run();
  int boundary = 0, failed = 0, valid = 0;
  for (const auto& v : orch.changelog().versions()) {
    const auto* cand = orch.changelog().latest(v);
    if (cand->status == tuning::Status::Valid) ++valid;
    if (cand->optimization_label != "Boundary condition" || cand->status == tuning::Status::Pending) continue;
    ++boundary;
    failed += cand->status == tuning::Status::Failed ? 1 : 0;
  }
  c.expect(boundary > 0, "no boundary-condition candidate measured");
  c.expect(failed == boundary, "boundary-condition candidate not Failed");
  c.expect(valid > 0, "correct kernels not Valid");
  if (c.out.ok) {
    std::ostringstream os;
    os << "buggy relative norm " << std::scientific << std::setprecision(3) << bug_norm << " > " << tolerance
       << " -> Failed (" << failed << "/" << boundary << " in run), identical norm 0 -> Valid";
    c.out.detail = os.str();
  }
  return c.out;
}

Outcome determinism() {
  Checker c;
  const fs::path a = scratch("determinism_a"), b = scratch("determinism_b");
  project::cmd_init(a, 5);
  project::cmd_init(b, 5);
  const auto ra = project::cmd_run(a);
  const auto rb = project::cmd_run(b);
  c.expect(ra.exit_code == rb.exit_code, "exit codes differ");
  c.expect(ra.output == rb.output, "summaries differ");
  const std::string la = masked_file(a / "telemetry" / "events.log");
  const std::string lb = masked_file(b / "telemetry" / "events.log");
  c.expect(!la.empty(), "empty log");
  c.expect(la == lb, "event logs differ");
  if (c.out.ok) {
    c.out.detail = "identical logs (" + std::to_string(std::count(la.begin(), la.end(), '\n')) + " events)";
  }
  return c.out;
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    double limit_s;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria = {
      {"requirements-round-trip", 1, requirements_round_trip},
      {"points-formula", 1, points_property},
      {"version-history-replay", 1, version_history_replay},
      {"violation-scenario", 10, violation_scenario},
      {"solo-vs-multi", 60, solo_vs_multi},
      {"auto-compact", 1, auto_compact},
      {"budget-enforcement", 10, budget_enforcement},
      {"verification", 1, verification},
      {"determinism", 20, determinism},
  };
  int failures = 0;
  for (const auto& cr : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.ok && secs >= cr.limit_s) {
      o.ok = false;
      o.detail += " (too slow)";
    }
    failures += o.ok ? 0 : 1;
    std::cout << (o.ok ? "PASS " : "FAIL ") << cr.name << " [" << std::fixed << std::setprecision(3) << secs << "s / "
              << std::setprecision(0) << cr.limit_s << "s] " << o.detail << std::endl;
  }
  fs::remove_all(fs::temp_directory_path() / ("vibetune_acceptance_" + std::to_string(::getpid())));
  return failures == 0 ? 0 : 1;
}
