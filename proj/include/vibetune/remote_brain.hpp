#pragma once

#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "vibetune/agents.hpp"
#include "vibetune/roles.hpp"

namespace vibetune::roles {

struct RemoteBrainConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string path = "/v1/chat/completions";
  std::string model = "default";
  /// Environment variable holding the bearer token; unset means no header.
  std::string api_key_env = "VIBETUNE_API_KEY";
  int timeout_s = 120;
  /// Prompt template; empty selects the role default.
  std::string prompt_template;
};

inline nlohmann::json to_json(const RemoteBrainConfig& c) {
  return {{"base_url", c.base_url}, {"path", c.path},           {"model", c.model},
          {"api_key_env", c.api_key_env}, {"timeout_s", c.timeout_s}};
}

inline RemoteBrainConfig remote_brain_config_from_json(const nlohmann::json& j) {
  RemoteBrainConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.path = j.value("path", c.path);
  c.model = j.value("model", c.model);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.timeout_s = j.value("timeout_s", c.timeout_s);
  return c;
}

/// Reads one action object as produced by a remote model.
inline Action action_from_json(const nlohmann::json& j) {
  const auto kind = agents::parse_action_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error(Errc::ConfigInvalid, "unknown action kind " + j.at("kind").dump());
  Action a;
  a.kind = *kind;
  a.to = j.value("to", std::string());
  a.body = j.value("body", std::string());
  a.version = j.value("version", std::string());
  if (j.contains("parent") && j.at("parent").is_string()) a.parent = j.at("parent").get<std::string>();
  a.params = j.value("params", tuning::Params{});
  a.label = j.value("label", std::string());
  a.source = j.value("source", std::string());
  a.build_script = j.value("build_script", std::string());
  a.gpus = j.value("gpus", 0);
  if (j.contains("role")) {
    const auto role = requirements::parse_role(j.at("role").get<std::string>());
    if (!role) throw Error(Errc::ConfigInvalid, "unknown role " + j.at("role").dump());
    a.role = *role;
  }
  a.findings = j.value("findings", std::vector<std::string>{});
  a.scope = j.value("scope", std::string("self")) == "project" ? TerminateScope::Project : TerminateScope::Self;
  return a;
}

/// Brain backed by an OpenAI-style chat-completion endpoint. Any transport or
/// format failure turns into a NoOp decision carrying the error text.
class RemoteBrain final : public agents::Brain {
 public:
  RemoteBrain(Role role, RemoteBrainConfig cfg) : role_(role), cfg_(std::move(cfg)) {
    if (cfg_.prompt_template.empty()) cfg_.prompt_template = default_prompt_template(role);
  }

  std::string kind() const override { return "remote"; }

  agents::Decision decide(const Observation& obs) override {
    agents::Decision d;
    const std::string prompt = render_prompt(cfg_.prompt_template, obs);
    history_.push_back({{"role", "user"}, {"content", prompt}});
    try {
      const auto reply = call(history_);
      history_.push_back({{"role", "assistant"}, {"content", reply.content}});
      auto parsed = nlohmann::json::parse(reply.content);
      if (!parsed.is_array()) parsed = nlohmann::json::array({parsed});
      for (const auto& item : parsed) d.actions.push_back(action_from_json(item));
      if (d.actions.empty()) d.actions.push_back(Action::noop());
      d.tokens_charged = std::max<std::int64_t>(0, reply.total_tokens - obs.context_tokens);
    } catch (const std::exception& e) {
      history_.pop_back();
      d.actions = {Action::noop()};
      d.error = e.what();
      d.tokens_charged = 0;
    }
    return d;
  }

  agents::CompactionSummary compact(const agents::AgentDescriptor& self, std::int64_t) override {
    std::vector<nlohmann::json> request = history_;
    request.push_back({{"role", "user"},
                       {"content", "Summarize the conversation so far for " + self.id +
                                       " in under 2000 words, keeping decisions and open tasks."}});
    std::string summary;
    std::int64_t tokens = 0;
    try {
      const auto reply = call(request);
      summary = reply.content;
      tokens = reply.completion_tokens > 0 ? reply.completion_tokens : static_cast<std::int64_t>(summary.size() / 4);
    } catch (const std::exception&) {
      summary = "Conversation summary unavailable.";
      tokens = static_cast<std::int64_t>(summary.size() / 4);
    }
    history_ = {{{"role", "user"}, {"content", "Summary of earlier work: " + summary}}};
    return {summary, tokens};
  }

 private:
  struct Reply {
    std::string content;
    std::int64_t total_tokens = 0;
    std::int64_t completion_tokens = 0;
  };

  Reply call(const std::vector<nlohmann::json>& turns) const {
    nlohmann::json messages = nlohmann::json::array();
    messages.push_back({{"role", "system"},
                        {"content", "You are agent role " + std::string(requirements::to_string(role_)) +
                                        " in a performance-tuning team."}});
    for (const auto& t : turns) messages.push_back(t);
    const nlohmann::json body{{"model", cfg_.model}, {"messages", messages}, {"temperature", 0}};

    httplib::Client client(cfg_.base_url);
    client.set_connection_timeout(cfg_.timeout_s, 0);
    client.set_read_timeout(cfg_.timeout_s, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key != nullptr && *key != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    const auto res = client.Post(cfg_.path, headers, body.dump(), "application/json");
    if (!res) throw Error(Errc::RunFailed, "endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error(Errc::RunFailed, "endpoint returned HTTP " + std::to_string(res->status));
    const auto j = nlohmann::json::parse(res->body);
    Reply r;
    r.content = j.at("choices").at(0).at("message").at("content").get<std::string>();
    if (j.contains("usage")) {
      r.total_tokens = j["usage"].value("total_tokens", std::int64_t{0});
      r.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
    }
    return r;
  }

  Role role_;
  RemoteBrainConfig cfg_;
  std::vector<nlohmann::json> history_;
};

}  // namespace vibetune::roles
