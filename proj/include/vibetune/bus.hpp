#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vibetune/error.hpp"
#include "vibetune/telemetry.hpp"

namespace vibetune::bus {

inline constexpr std::string_view kBroadcast = "*";

struct Message {
  std::uint64_t id = 0;
  std::string sender;
  std::string recipient;  // agent id or kBroadcast
  std::string role_tag;   // e.g. "[CD]"
  std::string body;
  std::int64_t tick = 0;

  bool operator==(const Message&) const = default;
};

inline nlohmann::json to_json(const Message& m) {
  return {{"id", m.id},           {"sender", m.sender}, {"recipient", m.recipient},
          {"role_tag", m.role_tag}, {"body", m.body},     {"tick", m.tick}};
}

/// In-process mailboxes with a global, append-only transcript.
///
/// Message ids are a single global sequence, so every mailbox drains in
/// transcript order. Messages still queued for an agent when it is retired
/// stay in the transcript and are recorded as undelivered.
class MessageBus {
 public:
  explicit MessageBus(telemetry::EventLog* log = nullptr,
                      std::optional<std::filesystem::path> transcript_file = std::nullopt)
      : log_(log) {
    if (transcript_file) {
      std::error_code ec;
      std::filesystem::create_directories(transcript_file->parent_path(), ec);
      out_.open(*transcript_file, std::ios::out | std::ios::trunc);
      if (!out_) throw Error(Errc::StorageFailure, "cannot open " + transcript_file->string());
    }
  }

  void register_agent(const std::string& id, std::string role_label) {
    live_[id] = "[" + std::move(role_label) + "]";
    mailboxes_[id];
  }

  /// Agent terminated: anything still queued for it becomes undelivered.
  void retire_agent(const std::string& id) {
    auto it = live_.find(id);
    if (it == live_.end()) return;
    live_.erase(it);
    retired_.insert(id);
    for (std::uint64_t msg_id : mailboxes_[id]) {
      undelivered_.emplace_back(msg_id, id);
      persist({{"undelivered", msg_id}, {"recipient", id}});
    }
    mailboxes_[id].clear();
  }

  bool is_live(const std::string& id) const { return live_.contains(id); }

  Message send(const std::string& sender, const std::string& recipient, std::string body) {
    const auto from = live_.find(sender);
    if (from == live_.end()) {
      throw Error(retired_.contains(sender) ? Errc::TerminatedAgent : Errc::UnknownAgent, sender);
    }
    std::vector<std::string> targets;
    if (recipient == kBroadcast) {
      for (const auto& [id, tag] : live_) {
        if (id != sender) targets.push_back(id);
      }
    } else if (live_.contains(recipient)) {
      targets.push_back(recipient);
    } else {
      throw Error(retired_.contains(recipient) ? Errc::DeadRecipient : Errc::UnknownAgent, recipient);
    }

    Message msg;
    msg.id = transcript_.size() + 1;
    msg.sender = sender;
    msg.recipient = recipient;
    msg.role_tag = from->second;
    msg.body = std::move(body);
    msg.tick = log_ ? log_->tick() : tick_;
    for (const auto& t : targets) mailboxes_[t].push_back(msg.id);
    transcript_.push_back(msg);
    persist(to_json(msg));
    if (log_) {
      log_->append(sender, telemetry::EventKind::MessageSent,
                   {{"id", msg.id}, {"to", recipient}, {"recipients", targets},
                    {"role_tag", msg.role_tag}, {"body", msg.body}});
    }
    return msg;
  }

  std::vector<Message> drain(const std::string& agent) {
    if (!live_.contains(agent)) {
      throw Error(retired_.contains(agent) ? Errc::TerminatedAgent : Errc::UnknownAgent, agent);
    }
    auto& box = mailboxes_[agent];
    std::vector<Message> out;
    out.reserve(box.size());
    for (std::uint64_t id : box) out.push_back(transcript_[id - 1]);
    box.clear();
    if (log_ && !out.empty()) {
      log_->append(agent, telemetry::EventKind::MessagesDrained,
                   {{"count", out.size()}, {"last_id", out.back().id}});
    }
    return out;
  }

  std::size_t pending(const std::string& agent) const {
    const auto it = mailboxes_.find(agent);
    return it == mailboxes_.end() ? 0 : it->second.size();
  }

  std::vector<std::uint64_t> pending_ids(const std::string& agent) const {
    const auto it = mailboxes_.find(agent);
    if (it == mailboxes_.end()) return {};
    return {it->second.begin(), it->second.end()};
  }

  const std::vector<Message>& transcript() const { return transcript_; }

  /// (message id, intended recipient) pairs that were never drained.
  const std::vector<std::pair<std::uint64_t, std::string>>& undelivered() const { return undelivered_; }

  void set_tick(std::int64_t tick) { tick_ = tick; }

 private:
  void persist(const nlohmann::json& record) {
    if (!out_.is_open()) return;
    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) throw Error(Errc::StorageFailure, "transcript write failed");
  }

  telemetry::EventLog* log_ = nullptr;
  std::map<std::string, std::string> live_;  // id -> role tag
  std::set<std::string> retired_;
  std::map<std::string, std::deque<std::uint64_t>> mailboxes_;
  std::vector<Message> transcript_;
  std::vector<std::pair<std::uint64_t, std::string>> undelivered_;
  std::int64_t tick_ = 0;
  std::ofstream out_;
};

/// Pending message ids per agent, rebuilt from MessageSent / MessagesDrained
/// events up to and including `up_to_seq`.
inline std::map<std::string, std::vector<std::uint64_t>> replay_mailboxes(
    const std::vector<telemetry::TelemetryEvent>& events, std::uint64_t up_to_seq) {
  std::map<std::string, std::vector<std::uint64_t>> boxes;
  for (const auto& ev : events) {
    if (ev.seq > up_to_seq) break;
    if (ev.kind == telemetry::EventKind::MessageSent) {
      for (const auto& r : ev.payload.at("recipients")) {
        boxes[r.get<std::string>()].push_back(ev.payload.at("id").get<std::uint64_t>());
      }
    } else if (ev.kind == telemetry::EventKind::MessagesDrained) {
      auto& box = boxes[ev.agent];
      const auto last = ev.payload.at("last_id").get<std::uint64_t>();
      std::erase_if(box, [last](std::uint64_t id) { return id <= last; });
    } else if (ev.kind == telemetry::EventKind::Terminate && ev.payload.value("scope", "") == "agent") {
      boxes[ev.agent].clear();
    }
  }
  return boxes;
}

}  // namespace vibetune::bus
