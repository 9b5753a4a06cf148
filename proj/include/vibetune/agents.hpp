#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vibetune/bus.hpp"
#include "vibetune/decimal.hpp"
#include "vibetune/error.hpp"
#include "vibetune/exec.hpp"
#include "vibetune/requirements.hpp"
#include "vibetune/telemetry.hpp"
#include "vibetune/tuning.hpp"

namespace vibetune::agents {

using requirements::Role;

inline constexpr std::string_view kLauncher = "LAUNCHER";
inline constexpr std::int64_t kDefaultCompactThreshold = 150000;

enum class AgentState { Spawned, Working, Idle, Compacting, Terminated };

inline std::string_view to_string(AgentState s) {
  switch (s) {
    case AgentState::Spawned: return "Spawned";
    case AgentState::Working: return "Working";
    case AgentState::Idle: return "Idle";
    case AgentState::Compacting: return "Compacting";
    case AgentState::Terminated: return "Terminated";
  }
  return "?";
}

inline std::optional<AgentState> parse_agent_state(std::string_view text) {
  for (AgentState s : {AgentState::Spawned, AgentState::Working, AgentState::Idle, AgentState::Compacting,
                       AgentState::Terminated}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

/// Spawned -> {Working, Idle}; Working <-> Idle; {Working, Idle} -> Compacting
/// -> Working; anything -> Terminated; nothing leaves Terminated.
inline bool transition_allowed(AgentState from, AgentState to) {
  if (from == AgentState::Terminated) return false;
  if (to == AgentState::Terminated) return true;
  switch (from) {
    case AgentState::Spawned: return to == AgentState::Working || to == AgentState::Idle;
    case AgentState::Working: return to == AgentState::Idle || to == AgentState::Compacting;
    case AgentState::Idle: return to == AgentState::Working || to == AgentState::Compacting;
    case AgentState::Compacting: return to == AgentState::Working;
    case AgentState::Terminated: return false;
  }
  return false;
}

struct CompactionEvent {
  std::int64_t tick = 0;
  std::int64_t tokens_before = 0;
  std::int64_t tokens_after = 0;
  std::string retained_summary;
  bool operator==(const CompactionEvent&) const = default;
};

struct AgentDescriptor {
  std::string id;
  Role role = Role::PG;
  AgentState state = AgentState::Spawned;
  std::int64_t context_tokens = 0;
  std::int64_t cumulative_tokens = 0;
  std::int64_t compact_threshold = kDefaultCompactThreshold;
  std::vector<CompactionEvent> compactions;
  std::int64_t spawned_at = 0;
  std::int64_t idle_since = 0;
  std::int64_t decisions = 0;
  bool wake_pending = false;
};

inline nlohmann::json to_json(const AgentDescriptor& a) {
  nlohmann::json compactions = nlohmann::json::array();
  for (const auto& c : a.compactions) {
    compactions.push_back({{"tick", c.tick}, {"tokens_before", c.tokens_before}, {"tokens_after", c.tokens_after}});
  }
  return {{"id", a.id},
          {"role", requirements::to_string(a.role)},
          {"state", to_string(a.state)},
          {"context_tokens", a.context_tokens},
          {"cumulative_tokens", a.cumulative_tokens},
          {"compact_threshold", a.compact_threshold},
          {"compactions", compactions},
          {"spawned_at", a.spawned_at}};
}

// ============================================================================
// Actions and observations
// ============================================================================

enum class ActionKind {
  SendMessage,
  GenerateCandidate,
  SubmitJob,
  ReviewCandidate,
  SpawnAgent,
  MarkInvalid,
  EmitReport,
  Publish,
  Terminate,
  NoOp,
};

inline std::string_view to_string(ActionKind k) {
  switch (k) {
    case ActionKind::SendMessage: return "SendMessage";
    case ActionKind::GenerateCandidate: return "GenerateCandidate";
    case ActionKind::SubmitJob: return "SubmitJob";
    case ActionKind::ReviewCandidate: return "ReviewCandidate";
    case ActionKind::SpawnAgent: return "SpawnAgent";
    case ActionKind::MarkInvalid: return "MarkInvalid";
    case ActionKind::EmitReport: return "EmitReport";
    case ActionKind::Publish: return "Publish";
    case ActionKind::Terminate: return "Terminate";
    case ActionKind::NoOp: return "NoOp";
  }
  return "?";
}

inline std::optional<ActionKind> parse_action_kind(std::string_view text) {
  for (int i = 0; i <= static_cast<int>(ActionKind::NoOp); ++i) {
    const auto k = static_cast<ActionKind>(i);
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

enum class TerminateScope { Self, Project };

/// One thing an agent asks the orchestrator to do. Only the fields relevant to
/// `kind` are read.
struct Action {
  ActionKind kind = ActionKind::NoOp;
  std::string to;       // SendMessage
  std::string body;     // SendMessage text, EmitReport text, MarkInvalid/Terminate reason
  std::string version;  // candidate-scoped actions
  std::optional<std::string> parent;
  tuning::Params params;
  std::string label;
  std::string source;
  std::string build_script;
  int gpus = 0;
  Role role = Role::PG;               // SpawnAgent
  std::vector<std::string> findings;  // ReviewCandidate
  TerminateScope scope = TerminateScope::Self;

  static Action noop() { return {}; }
  static Action send(std::string to, std::string body) {
    Action a;
    a.kind = ActionKind::SendMessage;
    a.to = std::move(to);
    a.body = std::move(body);
    return a;
  }
  static Action spawn(Role role) {
    Action a;
    a.kind = ActionKind::SpawnAgent;
    a.role = role;
    return a;
  }
  static Action mark_invalid(std::string version, std::string reason) {
    Action a;
    a.kind = ActionKind::MarkInvalid;
    a.version = std::move(version);
    a.body = std::move(reason);
    return a;
  }
  static Action submit(std::string version, int gpus) {
    Action a;
    a.kind = ActionKind::SubmitJob;
    a.version = std::move(version);
    a.gpus = gpus;
    return a;
  }
  static Action review(std::string version, std::vector<std::string> findings) {
    Action a;
    a.kind = ActionKind::ReviewCandidate;
    a.version = std::move(version);
    a.findings = std::move(findings);
    return a;
  }
  static Action report(std::string body) {
    Action a;
    a.kind = ActionKind::EmitReport;
    a.body = std::move(body);
    return a;
  }
  static Action publish(std::string version) {
    Action a;
    a.kind = ActionKind::Publish;
    a.version = std::move(version);
    return a;
  }
  static Action terminate(TerminateScope scope, std::string reason) {
    Action a;
    a.kind = ActionKind::Terminate;
    a.scope = scope;
    a.body = std::move(reason);
    return a;
  }
};

/// Outcome of one of this agent's jobs, delivered on the next decision.
struct JobNotice {
  std::string version;
  tuning::Status status = tuning::Status::Pending;
  std::optional<tuning::Metrics> metrics;
  std::string error;  // empty on success
  bool not_run = false;
};

struct TeamMember {
  std::string id;
  Role role = Role::PG;
  AgentState state = AgentState::Spawned;
  std::int64_t context_tokens = 0;
  std::int64_t cumulative_tokens = 0;
  std::size_t compactions = 0;
};

/// Everything a brain may look at for one decision.
struct Observation {
  std::int64_t tick = 0;
  double elapsed_minutes = 0;
  std::string self_id;
  Role self_role = Role::PG;
  std::int64_t context_tokens = 0;
  bool solo = false;
  bool woken = false;
  bool stop_requested = false;
  /// The project has been told to stop: finish reviews and bookkeeping, start
  /// nothing new.
  bool closing = false;
  std::vector<bus::Message> inbox;
  std::vector<JobNotice> my_results;
  /// Versions whose ChangeLog entries appeared since this agent last decided.
  std::vector<std::string> new_candidates;
  std::vector<std::string> new_results;
  std::vector<TeamMember> team;
  std::vector<std::string> published;
  std::size_t my_inflight = 0;
  const tuning::ChangeLog* changelog = nullptr;
  const requirements::RequirementSpec* spec = nullptr;
  Decimal spent_points;
  exec::BudgetStatus budget = exec::BudgetStatus::UnderMin;
  std::function<std::string(const std::string&)> read_source;
};

struct Decision {
  std::vector<Action> actions;
  std::int64_t tokens_charged = 0;
  /// Set when the brain could not produce a real decision (e.g. endpoint
  /// failure); the actions are then a single NoOp.
  std::optional<std::string> error;
};

struct CompactionSummary {
  std::string text;
  std::int64_t tokens = 0;
};

/// Decision maker behind one agent. Scripted implementations are pure
/// decision tables; remote ones call a chat-completion endpoint.
class Brain {
 public:
  virtual ~Brain() = default;
  virtual std::string kind() const = 0;
  virtual Decision decide(const Observation& obs) = 0;
  /// Replaces working memory with a summary; returns what was kept.
  virtual CompactionSummary compact(const AgentDescriptor& self, std::int64_t tick) = 0;
};

struct WakeAction {
  std::string agent;
  std::int64_t idle_ticks = 0;
};

// ============================================================================
// Activity database
// ============================================================================

/// Registry of every agent ever spawned. Terminated agents stay, flagged.
/// Each mutation appends exactly one telemetry event.
class AgentRegistry {
 public:
  /// `roster` limits live-or-dead agents per role. In solo mode the launcher
  /// may start a PG; otherwise only a PM.
  AgentRegistry(telemetry::EventLog& log, std::map<Role, int> roster, bool solo = false)
      : log_(log), roster_(std::move(roster)), solo_(solo) {}

  const AgentDescriptor& spawn_agent(std::string_view requester, Role role, std::unique_ptr<Brain> brain,
                                     std::int64_t compact_threshold = kDefaultCompactThreshold) {
    if (requester == kLauncher) {
      const bool ok = solo_ ? role == Role::PG : role == Role::PM;
      if (!ok) throw Error(Errc::Unauthorized, "launcher may not spawn " + std::string(requirements::to_string(role)));
    } else {
      const auto* req = find(std::string(requester));
      if (req == nullptr) throw Error(Errc::UnknownAgent, std::string(requester));
      if (req->descriptor.role != Role::PM || req->descriptor.state == AgentState::Terminated) {
        throw Error(Errc::Unauthorized, std::string(requester) + " may not spawn agents");
      }
    }
    const int limit = roster_.contains(role) ? roster_.at(role) : 0;
    const int count = count_role(role);
    if (count >= limit) {
      throw Error(Errc::RosterLimitExceeded,
                  std::string(requirements::to_string(role)) + " limit " + std::to_string(limit));
    }

    Entry e;
    e.descriptor.id = make_id(role, count + 1, limit);
    e.descriptor.role = role;
    e.descriptor.compact_threshold = compact_threshold;
    e.descriptor.spawned_at = log_.tick();
    e.descriptor.idle_since = log_.tick();
    e.brain = std::move(brain);
    order_.push_back(e.descriptor.id);
    entries_[e.descriptor.id] = std::move(e);
    const auto& d = entries_[order_.back()].descriptor;
    log_.append(d.id, telemetry::EventKind::Spawn,
                {{"role", requirements::to_string(role)},
                 {"requester", requester},
                 {"threshold", compact_threshold},
                 {"brain", entries_[d.id].brain ? entries_[d.id].brain->kind() : "none"}});
    return d;
  }

  std::int64_t record_tokens(const std::string& id, std::int64_t delta) {
    Entry& e = live(id);
    if (delta < 0) throw Error(Errc::NegativeInput, "token delta");
    e.descriptor.context_tokens += delta;
    e.descriptor.cumulative_tokens += delta;
    log_.append(id, telemetry::EventKind::TokenUsage,
                {{"delta", delta}, {"context_tokens", e.descriptor.context_tokens}});
    return e.descriptor.context_tokens;
  }

  /// Compacts when context_tokens has reached the threshold. The summary size
  /// becomes the new counter, kept strictly below both the threshold and the
  /// pre-compaction count.
  std::optional<CompactionEvent> maybe_autocompact(const std::string& id) {
    Entry& e = get_entry(id);
    AgentDescriptor& d = e.descriptor;
    if (d.state == AgentState::Terminated || d.context_tokens < d.compact_threshold) return std::nullopt;
    const AgentState resume_from = d.state;
    d.state = AgentState::Compacting;
    CompactionSummary summary = e.brain ? e.brain->compact(d, log_.tick()) : CompactionSummary{"", 0};
    const std::int64_t cap = std::min(d.compact_threshold, d.context_tokens) - 1;
    CompactionEvent ev{log_.tick(), d.context_tokens, std::clamp<std::int64_t>(summary.tokens, 0, cap),
                       std::move(summary.text)};
    d.context_tokens = ev.tokens_after;
    d.state = AgentState::Working;
    d.compactions.push_back(ev);
    log_.append(id, telemetry::EventKind::Compaction,
                {{"tokens_before", ev.tokens_before},
                 {"tokens_after", ev.tokens_after},
                 {"from_state", to_string(resume_from)},
                 {"summary", ev.retained_summary}});
    return ev;
  }

  /// Idle-prevention hook: every agent idle for at least `idle_patience`
  /// ticks gets a forced decision next round.
  std::vector<WakeAction> tick_hooks(std::int64_t idle_patience) {
    std::vector<WakeAction> out;
    for (const auto& id : order_) {
      AgentDescriptor& d = entries_[id].descriptor;
      if (d.state != AgentState::Idle || d.wake_pending) continue;
      const std::int64_t idle = log_.tick() - d.idle_since;
      if (idle < idle_patience) continue;
      d.wake_pending = true;
      out.push_back({id, idle});
      log_.append(id, telemetry::EventKind::Wake, {{"idle_ticks", idle}});
    }
    return out;
  }

  /// Logs a StateChange only when the state actually changes.
  void set_state(const std::string& id, AgentState to) {
    Entry& e = live(id);
    AgentDescriptor& d = e.descriptor;
    if (d.state == to) return;
    if (!transition_allowed(d.state, to)) {
      throw Error(Errc::IllegalTransition,
                  id + ": " + std::string(to_string(d.state)) + " -> " + std::string(to_string(to)));
    }
    log_.append(id, telemetry::EventKind::StateChange, {{"from", to_string(d.state)}, {"to", to_string(to)}});
    d.state = to;
    if (to == AgentState::Idle) d.idle_since = log_.tick();
  }

  void terminate(const std::string& id, const std::string& reason) {
    Entry& e = get_entry(id);
    if (e.descriptor.state == AgentState::Terminated) return;
    e.descriptor.state = AgentState::Terminated;
    log_.append(id, telemetry::EventKind::Terminate, {{"scope", "agent"}, {"reason", reason}});
  }

  /// Invokes the agent's brain. Terminated agents are never consulted.
  Decision decide(const std::string& id, const Observation& obs) {
    Entry& e = live(id);
    ++e.descriptor.decisions;
    e.descriptor.wake_pending = false;
    if (!e.brain) return {{Action::noop()}, 0, std::nullopt};
    return e.brain->decide(obs);
  }

  const AgentDescriptor& get(const std::string& id) const {
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw Error(Errc::UnknownAgent, id);
    return it->second.descriptor;
  }

  Brain* brain(const std::string& id) { return get_entry(id).brain.get(); }

  bool contains(const std::string& id) const { return entries_.contains(id); }

  bool is_live(const std::string& id) const {
    const auto it = entries_.find(id);
    return it != entries_.end() && it->second.descriptor.state != AgentState::Terminated;
  }

  /// All ids in spawn order, terminated included.
  const std::vector<std::string>& ids() const { return order_; }

  std::vector<std::string> live_ids() const {
    std::vector<std::string> out;
    for (const auto& id : order_) {
      if (is_live(id)) out.push_back(id);
    }
    return out;
  }

  int count_role(Role role) const {
    int n = 0;
    for (const auto& [id, e] : entries_) n += e.descriptor.role == role ? 1 : 0;
    return n;
  }

  int live_count(Role role) const {
    int n = 0;
    for (const auto& [id, e] : entries_) {
      n += (e.descriptor.role == role && e.descriptor.state != AgentState::Terminated) ? 1 : 0;
    }
    return n;
  }

  std::vector<TeamMember> team() const {
    std::vector<TeamMember> out;
    for (const auto& id : order_) {
      const auto& d = entries_.at(id).descriptor;
      out.push_back({d.id, d.role, d.state, d.context_tokens, d.cumulative_tokens, d.compactions.size()});
    }
    return out;
  }

  nlohmann::json snapshot_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& id : order_) j.push_back(to_json(entries_.at(id).descriptor));
    return j;
  }

 private:
  struct Entry {
    AgentDescriptor descriptor;
    std::unique_ptr<Brain> brain;
  };

  static std::string make_id(Role role, int ordinal, int limit) {
    switch (role) {
      case Role::PM: return ordinal == 1 ? "PM" : "PM" + std::to_string(ordinal);
      case Role::CD: return ordinal == 1 && limit <= 1 ? "CD" : "CD" + std::to_string(ordinal);
      case Role::SE: return "SE" + std::to_string(ordinal);
      case Role::PG: return "PG1." + std::to_string(ordinal);
    }
    return "?";
  }

  const Entry* find(const std::string& id) const {
    const auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
  }

  Entry& get_entry(const std::string& id) {
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw Error(Errc::UnknownAgent, id);
    return it->second;
  }

  Entry& live(const std::string& id) {
    Entry& e = get_entry(id);
    if (e.descriptor.state == AgentState::Terminated) throw Error(Errc::TerminatedAgent, id);
    return e;
  }

  telemetry::EventLog& log_;
  std::map<Role, int> roster_;
  bool solo_ = false;
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
};

}  // namespace vibetune::agents
