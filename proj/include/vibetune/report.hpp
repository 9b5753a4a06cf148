#pragma once

#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vibetune/agents.hpp"
#include "vibetune/backends.hpp"
#include "vibetune/decimal.hpp"
#include "vibetune/exec.hpp"
#include "vibetune/requirements.hpp"
#include "vibetune/telemetry.hpp"
#include "vibetune/text.hpp"
#include "vibetune/tuning.hpp"

namespace vibetune::telemetry {

// ============================================================================
// Replay
// ============================================================================

struct BudgetThresholds {
  Decimal min, reference, max;
};

struct BudgetPoint {
  std::int64_t tick = 0;
  Decimal spent;
  std::string status;
};

struct ViolationRecord {
  std::int64_t tick = 0;
  std::string version;
  std::string reviewer;
  std::vector<std::string> findings;
};

/// State rebuilt from the event log alone.
struct ReplayState {
  tuning::ChangeLog changelog;
  Decimal spent;
  std::size_t jobs = 0;
  std::optional<BudgetThresholds> thresholds;
  std::vector<BudgetPoint> budget_series;
  std::map<std::string, agents::AgentDescriptor> agents;
  std::vector<std::string> agent_order;
  std::vector<ViolationRecord> violations;
  std::vector<std::string> published;
  std::vector<std::string> reports;
  double peak_gflops = requirements::kDefaultPeakGflopsPerGpu;
  std::string phase = "not started";
  std::string termination_reason;
  std::int64_t last_tick = 0;

  nlohmann::json agents_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& id : agent_order) j.push_back(agents::to_json(agents.at(id)));
    return j;
  }
};

namespace detail {
inline Decimal decimal_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  const auto& v = j.at(key);
  if (v.is_string()) return Decimal::parse(v.get<std::string>());
  if (v.is_number_integer()) return Decimal(v.get<std::int64_t>());
  return Decimal::from_double(v.get<double>(), 6);
}
}  // namespace detail

/// Applies one event to `state`. Unknown payload shapes raise FixtureParseError.
inline void apply_event(ReplayState& state, const TelemetryEvent& ev) {
  const auto& p = ev.payload;
  state.last_tick = ev.tick;
  try {
    switch (ev.kind) {
      case EventKind::Spawn: {
        agents::AgentDescriptor d;
        d.id = ev.agent;
        d.role = requirements::parse_role(p.at("role").get<std::string>()).value();
        d.compact_threshold = p.value("threshold", agents::kDefaultCompactThreshold);
        d.spawned_at = ev.tick;
        d.idle_since = ev.tick;
        state.agents[d.id] = d;
        state.agent_order.push_back(d.id);
        break;
      }
      case EventKind::TokenUsage: {
        auto& d = state.agents.at(ev.agent);
        const std::int64_t delta = p.at("delta").get<std::int64_t>();
        d.context_tokens += delta;
        d.cumulative_tokens += delta;
        break;
      }
      case EventKind::Compaction: {
        auto& d = state.agents.at(ev.agent);
        agents::CompactionEvent c{ev.tick, p.at("tokens_before").get<std::int64_t>(),
                                  p.at("tokens_after").get<std::int64_t>(), p.value("summary", std::string())};
        d.context_tokens = c.tokens_after;
        d.state = agents::AgentState::Working;
        d.compactions.push_back(c);
        break;
      }
      case EventKind::StateChange: {
        auto& d = state.agents.at(ev.agent);
        d.state = agents::parse_agent_state(p.at("to").get<std::string>()).value();
        if (d.state == agents::AgentState::Idle) d.idle_since = ev.tick;
        break;
      }
      case EventKind::Terminate:
        if (p.value("scope", std::string()) == "project") {
          state.phase = "terminated";
          state.termination_reason = p.value("reason", std::string());
        } else if (state.agents.contains(ev.agent)) {
          state.agents.at(ev.agent).state = agents::AgentState::Terminated;
        }
        break;
      case EventKind::CandidateRegistered: {
        std::optional<std::string> parent;
        if (p.contains("parent") && !p.at("parent").is_null()) parent = p.at("parent").get<std::string>();
        state.changelog.register_candidate(p.at("version").get<std::string>(), parent,
                                           p.value("params", tuning::Params{}), p.value("source_ref", std::string()),
                                           p.value("label", std::string()), ev.tick);
        break;
      }
      case EventKind::ResultRecorded: {
        std::optional<tuning::Metrics> metrics;
        if (p.contains("metrics") && !p.at("metrics").is_null()) metrics = tuning::metrics_from_json(p.at("metrics"));
        const auto status = tuning::parse_status(p.at("status").get<std::string>()).value();
        state.changelog.record_result(p.at("version").get<std::string>(), metrics, status, ev.tick,
                                      p.value("note", std::string()));
        break;
      }
      case EventKind::Violation: {
        ViolationRecord v{ev.tick, p.at("version").get<std::string>(), ev.agent,
                          p.value("findings", std::vector<std::string>{})};
        state.changelog.flag(v.version, p.value("note", std::string("violation")), ev.tick);
        state.violations.push_back(std::move(v));
        break;
      }
      case EventKind::JobDone:
        state.spent += detail::decimal_field(p, "points");
        ++state.jobs;
        break;
      case EventKind::BudgetUpdate:
        if (p.contains("max")) {
          state.thresholds = BudgetThresholds{detail::decimal_field(p, "min"), detail::decimal_field(p, "reference"),
                                              detail::decimal_field(p, "max")};
        }
        state.budget_series.push_back({ev.tick, detail::decimal_field(p, "spent"), p.value("status", std::string())});
        break;
      case EventKind::Published:
        state.published.push_back(p.at("version").get<std::string>());
        break;
      case EventKind::Report:
        state.reports.push_back(p.value("body", std::string()));
        break;
      case EventKind::PhaseChange:
        state.phase = p.value("phase", state.phase);
        if (p.contains("peak_gflops_per_gpu")) state.peak_gflops = p.at("peak_gflops_per_gpu").get<double>();
        if (p.contains("reason")) state.termination_reason = p.at("reason").get<std::string>();
        break;
      case EventKind::MessageSent:
      case EventKind::MessagesDrained:
      case EventKind::JobSubmitted:
      case EventKind::Wake:
      case EventKind::Error:
        break;
    }
  } catch (const std::exception& e) {
    throw Error(Errc::FixtureParseError, "event " + std::to_string(ev.seq) + ": " + e.what());
  }
}

inline ReplayState replay(const std::vector<TelemetryEvent>& events) {
  ReplayState state;
  // Verdicts were decided live; replay must not re-judge them.
  state.changelog.set_tolerance(std::numeric_limits<double>::infinity());
  for (const auto& ev : events) apply_event(state, ev);
  return state;
}

// ============================================================================
// Context usage
// ============================================================================

struct CompactionMarker {
  std::string agent;
  std::int64_t tick = 0;
  std::int64_t tokens_before = 0;
  std::int64_t tokens_after = 0;
};

struct ContextUsageReport {
  std::int64_t generated_at = 0;
  /// Agents in order of first appearance.
  std::vector<std::string> agents;
  std::map<std::string, std::vector<std::pair<std::int64_t, std::int64_t>>> series;
  std::vector<CompactionMarker> markers;
  std::map<std::string, std::int64_t> totals;

  std::size_t compactions(const std::string& agent) const {
    std::size_t n = 0;
    for (const auto& m : markers) n += m.agent == agent ? 1 : 0;
    return n;
  }
};

struct TickWindow {
  std::int64_t from = std::numeric_limits<std::int64_t>::min();
  std::int64_t to = std::numeric_limits<std::int64_t>::max();
  bool contains(std::int64_t t) const { return t >= from && t <= to; }
};

/// Per-agent token series from TokenUsage and Compaction events. Counters are
/// accumulated over the whole log; only points inside `window` are reported.
inline ContextUsageReport context_usage_report(const std::vector<TelemetryEvent>& events, TickWindow window = {}) {
  ContextUsageReport r;
  std::map<std::string, std::int64_t> current;
  for (const auto& ev : events) {
    if (ev.kind != EventKind::TokenUsage && ev.kind != EventKind::Compaction) continue;
    r.generated_at = std::max(r.generated_at, ev.tick);
    if (ev.kind == EventKind::TokenUsage) {
      const auto delta = ev.payload.at("delta").get<std::int64_t>();
      current[ev.agent] += delta;
      r.totals[ev.agent] += delta;
    } else {
      current[ev.agent] = ev.payload.at("tokens_after").get<std::int64_t>();
      if (window.contains(ev.tick)) {
        r.markers.push_back({ev.agent, ev.tick, ev.payload.at("tokens_before").get<std::int64_t>(),
                             current[ev.agent]});
      }
    }
    if (!window.contains(ev.tick)) continue;
    if (!r.series.contains(ev.agent)) r.agents.push_back(ev.agent);
    r.series[ev.agent].push_back({ev.tick, current[ev.agent]});
  }
  return r;
}

// ============================================================================
// CSV exports
// ============================================================================

struct ExportFiles {
  std::filesystem::path performance, budget, tokens;
  std::filesystem::path changelog_csv, changelog_jsonl;
};

inline std::string performance_csv(const ReplayState& state) {
  const auto& log = state.changelog;
  // A row counts as a SOTA step when it raised the running valid best and
  // was never invalidated afterwards.
  std::map<std::string, std::int64_t> result_tick;
  std::set<std::string> stepped;
  double best = -1;
  for (const auto& e : log.entries()) {
    const auto& c = e.snapshot;
    if (c.status != tuning::Status::Pending && !result_tick.contains(c.version)) result_tick[c.version] = e.tick;
    if (c.status == tuning::Status::Valid && !c.flagged && c.metrics && c.metrics->gflops > best) {
      best = c.metrics->gflops;
      stepped.insert(c.version);
    }
  }
  std::map<std::string, std::int64_t> reg_tick;
  for (const auto& e : log.entries()) reg_tick.try_emplace(e.snapshot.version, e.tick);

  std::ostringstream os;
  os << "tick,version,gflops,efficiency_pct,status,is_sota\n";
  for (const auto& version : log.versions()) {
    const auto& c = *log.latest(version);
    const std::int64_t tick = result_tick.contains(version) ? result_tick[version] : reg_tick[version];
    os << tick << ',' << version << ',';
    if (c.metrics && c.status != tuning::Status::Failed) {
      os << text::shortest(c.metrics->gflops) << ',' << text::shortest(c.metrics->efficiency_pct);
    } else {
      os << ',';
    }
    const bool is_sota = stepped.contains(version) && c.status == tuning::Status::Valid && !c.flagged;
    os << ',' << tuning::to_string(c.status) << ',' << (is_sota ? 1 : 0) << '\n';
  }
  return os.str();
}

inline std::string budget_csv(const ReplayState& state) {
  std::ostringstream os;
  os << "tick,spent_points,min,reference,max\n";
  if (!state.thresholds) return os.str();
  const auto& t = *state.thresholds;
  for (const auto& b : state.budget_series) {
    os << b.tick << ',' << b.spent.to_string() << ',' << t.min.to_string() << ',' << t.reference.to_string() << ','
       << t.max.to_string() << '\n';
  }
  return os.str();
}

inline std::string tokens_csv(const std::vector<TelemetryEvent>& events) {
  std::ostringstream os;
  os << "tick,agent,context_tokens,compaction_flag\n";
  std::map<std::string, std::int64_t> current;
  for (const auto& ev : events) {
    if (ev.kind == EventKind::TokenUsage) {
      current[ev.agent] += ev.payload.at("delta").get<std::int64_t>();
      os << ev.tick << ',' << ev.agent << ',' << current[ev.agent] << ",0\n";
    } else if (ev.kind == EventKind::Compaction) {
      current[ev.agent] = ev.payload.at("tokens_after").get<std::int64_t>();
      os << ev.tick << ',' << ev.agent << ',' << current[ev.agent] << ",1\n";
    }
  }
  return os.str();
}

/// Writes the three plot series plus the changelog (CSV and JSONL) into `dest`.
inline ExportFiles export_series(const std::vector<TelemetryEvent>& events, const std::filesystem::path& dest) {
  const ReplayState state = replay(events);
  std::error_code ec;
  std::filesystem::create_directories(dest, ec);
  if (ec) throw Error(Errc::StorageFailure, "cannot create " + dest.string());
  ExportFiles files{dest / "performance.csv", dest / "budget.csv",     dest / "tokens.csv",
                    dest / "changelog.csv",   dest / "changelog.jsonl"};
  exec::write_file(files.performance, performance_csv(state));
  exec::write_file(files.budget, budget_csv(state));
  exec::write_file(files.tokens, tokens_csv(events));
  exec::write_file(files.changelog_csv, tuning::changelog_csv(state.changelog));
  exec::write_file(files.changelog_jsonl, tuning::changelog_jsonl(state.changelog));
  return files;
}

// ============================================================================
// Markdown report
// ============================================================================

inline std::string version_tag(const std::string& v) { return !v.empty() && v[0] == 'v' ? v : "v" + v; }

inline std::string valid_best_line(const ReplayState& state) {
  const auto s = state.changelog.sota();
  if (!s) return "Valid best: none";
  const auto* c = state.changelog.latest(s->version);
  return "Valid best: " + version_tag(s->version) + ", " + text::fixed(s->gflops, 1) + " GFLOPS, " +
         text::fixed(c->metrics->efficiency_pct, 2) + "%";
}

/// Renders `dest/report.md`. Images under `dest/img/` are linked by relative
/// path when present.
inline std::filesystem::path render_markdown_report(const std::vector<TelemetryEvent>& events,
                                                    const std::filesystem::path& dest) {
  const ReplayState state = replay(events);
  std::ostringstream os;
  os << "# Tuning report\n\n";
  os << "Phase: " << state.phase;
  if (!state.termination_reason.empty()) os << " (" << state.termination_reason << ")";
  os << "\n\n";

  os << "## Candidates\n\n";
  const auto& log = state.changelog;
  if (log.versions().empty()) {
    os << "No candidates recorded.\n\n";
  } else {
    os << valid_best_line(state) << "\n\n";
    os << "| Version | Technique | GFLOPS | Efficiency | Status |\n|---|---|---|---|---|\n";
    for (const auto& v : log.versions()) {
      const auto& c = *log.latest(v);
      const bool measured = c.metrics && (c.status == tuning::Status::Valid || c.status == tuning::Status::Invalid);
      os << "| " << version_tag(v) << " | " << c.optimization_label << " | "
         << (measured ? text::fixed(c.metrics->gflops, 1) : "N/A") << " | "
         << (measured ? text::fixed(c.metrics->efficiency_pct, 2) + "%" : "N/A") << " | "
         << tuning::to_string(c.status) << (c.flagged ? " (flagged)" : "") << " |\n";
    }
    os << "\n";
  }

  os << "## Budget\n\n";
  os << "Spent: " << state.spent.to_string() << " points over " << state.jobs << " jobs";
  if (state.thresholds) {
    const requirements::Budget b{state.thresholds->min, state.thresholds->reference, state.thresholds->max};
    os << " (" << exec::to_string(exec::budget_status(state.spent, b)) << "; min " << b.min_points.to_string()
       << ", reference " << b.reference_points.to_string() << ", max " << b.max_points.to_string() << ")";
  }
  os << "\n\n";

  os << "## Violations\n\n";
  if (state.violations.empty()) os << "None.\n";
  for (const auto& v : state.violations) {
    os << "- " << version_tag(v.version) << " (tick " << v.tick << ", " << v.reviewer << "): ";
    for (std::size_t i = 0; i < v.findings.size(); ++i) os << (i ? "; " : "") << v.findings[i];
    os << "\n";
  }
  os << "\n";

  os << "## Context usage\n\n";
  const auto usage = context_usage_report(events);
  if (usage.agents.empty()) os << "No token usage recorded.\n";
  for (const auto& agent : usage.agents) {
    os << "- " << agent << ": " << usage.totals.at(agent) << " tokens total, " << usage.compactions(agent)
       << " compactions\n";
  }
  os << "\n";

  std::vector<std::string> images;
  for (const char* name : {"performance", "tokens", "budget"}) {
    for (const char* ext : {".png", ".svg"}) {
      const std::string rel = std::string("img/") + name + ext;
      if (std::filesystem::exists(dest / rel)) images.push_back(rel);
    }
  }
  if (!images.empty()) {
    os << "## Figures\n\n";
    for (const auto& rel : images) os << "![" << std::filesystem::path(rel).stem().string() << "](" << rel << ")\n";
  }

  std::error_code ec;
  std::filesystem::create_directories(dest, ec);
  const auto file = dest / "report.md";
  exec::write_file(file, os.str());
  return file;
}

}  // namespace vibetune::telemetry
