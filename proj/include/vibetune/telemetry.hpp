#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vibetune/error.hpp"

namespace vibetune::telemetry {

using json = nlohmann::json;

inline constexpr std::string_view kSystem = "SYSTEM";

enum class EventKind {
  Spawn,
  Terminate,
  TokenUsage,
  Compaction,
  MessageSent,
  MessagesDrained,
  CandidateRegistered,
  ResultRecorded,
  JobSubmitted,
  JobDone,
  Violation,
  BudgetUpdate,
  Report,
  PhaseChange,
  StateChange,
  Wake,
  Published,
  Error,
};

inline constexpr EventKind kAllKinds[] = {
    EventKind::Spawn,         EventKind::Terminate,       EventKind::TokenUsage,
    EventKind::Compaction,    EventKind::MessageSent,     EventKind::MessagesDrained,
    EventKind::CandidateRegistered, EventKind::ResultRecorded, EventKind::JobSubmitted,
    EventKind::JobDone,       EventKind::Violation,       EventKind::BudgetUpdate,
    EventKind::Report,        EventKind::PhaseChange,     EventKind::StateChange,
    EventKind::Wake,          EventKind::Published,       EventKind::Error,
};

inline std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Spawn: return "Spawn";
    case EventKind::Terminate: return "Terminate";
    case EventKind::TokenUsage: return "TokenUsage";
    case EventKind::Compaction: return "Compaction";
    case EventKind::MessageSent: return "MessageSent";
    case EventKind::MessagesDrained: return "MessagesDrained";
    case EventKind::CandidateRegistered: return "CandidateRegistered";
    case EventKind::ResultRecorded: return "ResultRecorded";
    case EventKind::JobSubmitted: return "JobSubmitted";
    case EventKind::JobDone: return "JobDone";
    case EventKind::Violation: return "Violation";
    case EventKind::BudgetUpdate: return "BudgetUpdate";
    case EventKind::Report: return "Report";
    case EventKind::PhaseChange: return "PhaseChange";
    case EventKind::StateChange: return "StateChange";
    case EventKind::Wake: return "Wake";
    case EventKind::Published: return "Published";
    case EventKind::Error: return "Error";
  }
  return "Unknown";
}

inline std::optional<EventKind> parse_event_kind(std::string_view text) {
  for (EventKind kind : kAllKinds) {
    if (to_string(kind) == text) return kind;
  }
  return std::nullopt;
}

struct TelemetryEvent {
  std::uint64_t seq = 0;
  std::int64_t tick = 0;
  std::string wall_time;
  std::string agent;
  EventKind kind = EventKind::Report;
  json payload = json::object();
};

inline json to_json(const TelemetryEvent& ev) {
  return json{{"seq", ev.seq},       {"tick", ev.tick},
              {"wall_time", ev.wall_time}, {"agent", ev.agent},
              {"kind", to_string(ev.kind)}, {"payload", ev.payload}};
}

inline TelemetryEvent event_from_json(const json& j) {
  TelemetryEvent ev;
  try {
    ev.seq = j.at("seq").get<std::uint64_t>();
    ev.tick = j.at("tick").get<std::int64_t>();
    ev.wall_time = j.value("wall_time", "");
    ev.agent = j.at("agent").get<std::string>();
    const auto kind = parse_event_kind(j.at("kind").get<std::string>());
    if (!kind) throw Error(Errc::FixtureParseError, "unknown event kind " + j.at("kind").dump());
    ev.kind = *kind;
    ev.payload = j.value("payload", json::object());
  } catch (const json::exception& e) {
    throw Error(Errc::FixtureParseError, e.what());
  }
  return ev;
}

/// One line of events.log. Keys are emitted in sorted order, so the line is a
/// pure function of the event.
inline std::string to_line(const TelemetryEvent& ev) { return to_json(ev).dump(); }

inline std::string utc_now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Parses a line-delimited event file. Blank lines are skipped.
inline std::vector<TelemetryEvent> load_events(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::FixtureParseError, "cannot open " + file.string());
  std::vector<TelemetryEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(Errc::FixtureParseError, file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    events.push_back(event_from_json(j));
  }
  return events;
}

/// The single append-only log. Every state change in the orchestrator lands
/// here exactly once; the rest of the system can be rebuilt from it.
///
/// Ticks come from the owner via set_tick(); wall time is recorded for humans
/// and never read back for control decisions.
class EventLog {
 public:
  EventLog() = default;

  /// Durable log: every append is written and flushed before returning.
  explicit EventLog(const std::filesystem::path& file) : path_(file) {
    std::error_code ec;
    std::filesystem::create_directories(file.parent_path(), ec);
    out_.open(file, std::ios::out | std::ios::trunc);
    if (!out_) throw Error(Errc::StorageFailure, "cannot open " + file.string());
  }

  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  void set_tick(std::int64_t tick) { tick_ = tick; }
  std::int64_t tick() const { return tick_; }

  void set_wall_clock(std::function<std::string()> clock) { wall_clock_ = std::move(clock); }

  std::uint64_t append(std::string_view agent, EventKind kind, json payload = json::object()) {
    TelemetryEvent ev;
    ev.seq = events_.size() + 1;
    ev.tick = tick_;
    ev.wall_time = wall_clock_ ? wall_clock_() : std::string();
    ev.agent = std::string(agent);
    ev.kind = kind;
    ev.payload = std::move(payload);
    if (out_.is_open()) {
      out_ << to_line(ev) << '\n';
      out_.flush();
      if (!out_) throw Error(Errc::StorageFailure, "write failed on " + path_->string());
    }
    events_.push_back(std::move(ev));
    return events_.back().seq;
  }

  const std::vector<TelemetryEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  const std::optional<std::filesystem::path>& path() const { return path_; }

 private:
  std::vector<TelemetryEvent> events_;
  std::int64_t tick_ = 0;
  std::function<std::string()> wall_clock_ = utc_now_iso8601;
  std::optional<std::filesystem::path> path_;
  std::ofstream out_;
};

/// The log with every wall_time blanked; two runs with the same seed must
/// produce identical output from this.
inline std::string masked_dump(const std::vector<TelemetryEvent>& events) {
  std::string out;
  for (TelemetryEvent ev : events) {
    ev.wall_time.clear();
    out += to_line(ev);
    out += '\n';
  }
  return out;
}

}  // namespace vibetune::telemetry
