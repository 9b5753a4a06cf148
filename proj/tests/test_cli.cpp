#include <gtest/gtest.h>

#include <filesystem>
#include <regex>

#include <unistd.h>

#include "vibetune/project.hpp"

namespace fs = std::filesystem;
using namespace vibetune;
using telemetry::EventKind;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vibetune_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

exec::CommandResult cli(const std::string& args) { return exec::run_shell(std::string(VIBETUNE_CLI) + " " + args); }

std::size_t count_kind(const std::vector<telemetry::TelemetryEvent>& events, EventKind kind) {
  std::size_t n = 0;
  for (const auto& ev : events) n += ev.kind == kind ? 1 : 0;
  return n;
}

void set_budget(const fs::path& dir, const std::string& min, const std::string& ref, const std::string& max) {
  std::string doc = exec::read_file(dir / "requirements.md");
  doc = std::regex_replace(doc, std::regex(R"(\*\*Minimum Consumption Line\*\*: [0-9,]+)"),
                           "**Minimum Consumption Line**: " + min);
  doc = std::regex_replace(doc, std::regex(R"(\*\*Reference\*\*: [0-9,]+)"), "**Reference**: " + ref);
  doc = std::regex_replace(doc, std::regex(R"(\*\*Maximum\*\*: [0-9,]+)"), "**Maximum**: " + max);
  exec::write_file(dir / "requirements.md", doc);
}

}  // namespace

TEST(Cli, InitScaffoldsProject) {
  const auto dir = scratch("init");
  const auto r = cli("init " + dir.string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  for (const char* f : {"requirements.md", "config.json", "roles/PM.md", "roles/SE.md", "roles/PG.md", "roles/CD.md"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  for (const char* d : {"telemetry/exports", "reports/img", "candidates", "publish"}) {
    EXPECT_TRUE(fs::is_directory(dir / d)) << d;
  }
  const auto again = cli("init " + dir.string());
  EXPECT_EQ(again.exit_code, 3);
  EXPECT_NE(again.output.find("DirNotEmpty"), std::string::npos);
}

TEST(Cli, DryRunValidatesOnly) {
  const auto dir = scratch("dry");
  ASSERT_EQ(cli("init " + dir.string()).exit_code, 0);
  const auto r = cli("run " + dir.string() + " --dry");
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("Configuration valid."), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "telemetry" / "events.log"));
}

TEST(Cli, ConfigErrorsExitThree) {
  const auto dir = scratch("badcfg");
  ASSERT_EQ(cli("init " + dir.string()).exit_code, 0);
  exec::write_file(dir / "config.json", "{ not json");
  EXPECT_EQ(cli("run " + dir.string()).exit_code, 3);
  const auto empty = scratch("notaproject");
  fs::create_directories(empty);
  EXPECT_EQ(cli("run " + empty.string()).exit_code, 3);
  EXPECT_EQ(cli("status " + empty.string()).exit_code, 3);
  EXPECT_NE(cli("run " + dir.string() + " --mode duo").exit_code, 0);
}

TEST(Cli, ViolationIsCaughtAndNothingBadPublished) {
  const auto dir = scratch("violation");
  ASSERT_EQ(cli("init " + dir.string() + " --seed 7").exit_code, 0);
  const auto r = cli("run " + dir.string() + " --scenario violation-demo");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto events = telemetry::load_events(dir / "telemetry" / "events.log");
  const auto state = telemetry::replay(events);
  ASSERT_FALSE(state.violations.empty());
  const std::string bad = state.violations.front().version;
  EXPECT_EQ(state.changelog.latest(bad)->status, tuning::Status::Invalid);
  EXPECT_NE(state.changelog.sota()->version, bad);
  const auto lint = cli("lint " + dir.string());
  EXPECT_EQ(lint.exit_code, 0) << lint.output;
  EXPECT_NE(lint.output.find("0 violation(s)"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "telemetry" / "exports" / "performance.csv"));
  EXPECT_TRUE(fs::exists(dir / "reports" / "report.md"));
}

TEST(Cli, LossySoloPublishesForbiddenCode) {
  const auto dir = scratch("solo");
  ASSERT_EQ(cli("init " + dir.string() + " --seed 1").exit_code, 0);
  const auto r = cli("run " + dir.string() + " --mode solo --scenario lossy");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto lint = cli("lint " + dir.string());
  EXPECT_EQ(lint.exit_code, 1) << lint.output;
  EXPECT_NE(lint.output.find("cuBLAS"), std::string::npos);
}

TEST(Cli, ZeroBudgetSubmitsNothing) {
  const auto dir = scratch("nobudget");
  ASSERT_EQ(cli("init " + dir.string()).exit_code, 0);
  set_budget(dir, "0", "0", "0");
  const auto r = cli("run " + dir.string());
  EXPECT_EQ(r.exit_code, 2) << r.output;
  const auto events = telemetry::load_events(dir / "telemetry" / "events.log");
  EXPECT_EQ(count_kind(events, EventKind::JobSubmitted), 0u);
  EXPECT_EQ(telemetry::replay(events).spent, Decimal(0));
}

TEST(Cli, ReplayOfFixture) {
  const auto out = scratch("replay");
  const auto r = cli("replay " + (fs::path(VIBETUNE_FIXTURES) / "version_history.jsonl").string() + " --out " +
                     out.string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("Valid best: v1.4.0, 3365.2 GFLOPS, 43.14%"), std::string::npos) << r.output;
  for (const char* f : {"exports/performance.csv", "exports/budget.csv", "exports/tokens.csv", "report.md"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
}

TEST(Cli, ReplayOfEmptyFixture) {
  const auto out = scratch("replay_empty");
  fs::create_directories(out);
  exec::write_file(out / "empty.jsonl", "");
  const auto r = cli("replay " + (out / "empty.jsonl").string() + " --out " + (out / "r").string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("No candidates recorded."), std::string::npos);
}

TEST(Cli, StatusBeforeAndAfterRun) {
  const auto dir = scratch("status");
  ASSERT_EQ(cli("init " + dir.string() + " --seed 3").exit_code, 0);
  auto s = cli("status " + dir.string());
  EXPECT_EQ(s.exit_code, 0);
  EXPECT_EQ(s.output, "Phase: not started\n");

  ASSERT_EQ(cli("run " + dir.string()).exit_code, 0);
  s = cli("status " + dir.string());
  ASSERT_EQ(s.exit_code, 0) << s.output;
  EXPECT_NE(s.output.find("Phase: terminated"), std::string::npos);
  std::smatch m;
  ASSERT_TRUE(std::regex_search(s.output, m, std::regex("Termination reason: (.+)\n")));

  const auto state = telemetry::replay(telemetry::load_events(dir / "telemetry" / "events.log"));
  EXPECT_EQ(m[1].str(), state.termination_reason);
  std::vector<std::string> listed;
  const std::regex agent_line(R"(\n  (\S+) \[(PM|SE|PG|CD)\] )");
  for (auto it = std::sregex_iterator(s.output.begin(), s.output.end(), agent_line); it != std::sregex_iterator(); ++it) {
    listed.push_back((*it)[1].str());
  }
  std::vector<std::string> live;
  for (const auto& id : state.agent_order) {
    if (state.agents.at(id).state != agents::AgentState::Terminated) live.push_back(id);
  }
  EXPECT_EQ(listed, live);
}

TEST(Cli, SameSeedSameLog) {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  for (const auto& d : {a, b}) {
    ASSERT_EQ(cli("init " + d.string() + " --seed 9").exit_code, 0);
    ASSERT_EQ(cli("run " + d.string()).exit_code, 0);
  }
  EXPECT_EQ(telemetry::masked_dump(telemetry::load_events(a / "telemetry" / "events.log")),
            telemetry::masked_dump(telemetry::load_events(b / "telemetry" / "events.log")));
}
