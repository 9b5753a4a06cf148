#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "vibetune/project.hpp"
#include "vibetune/report.hpp"
#include "vibetune/telemetry.hpp"

namespace fs = std::filesystem;
using namespace vibetune;
using namespace vibetune::telemetry;

namespace {

fs::path fixture() { return fs::path(VIBETUNE_FIXTURES) / "version_history.jsonl"; }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vibetune_telemetry_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST(EventLog, SequenceNumbersStartAtOne) {
  EventLog log;
  log.set_wall_clock([] { return std::string("2026-01-01T00:00:00Z"); });
  EXPECT_EQ(log.append("PM", EventKind::Spawn, {{"role", "PM"}}), 1u);
  log.set_tick(3);
  EXPECT_EQ(log.append("PM", EventKind::TokenUsage, {{"delta", 5}}), 2u);
  EXPECT_EQ(log.events()[1].tick, 3);
  EXPECT_EQ(log.events()[1].wall_time, "2026-01-01T00:00:00Z");
}

TEST(EventLog, FileRoundTripAndMasking) {
  const auto dir = scratch("roundtrip");
  {
    EventLog log(dir / "events.log");
    log.append("PM", EventKind::Spawn, {{"role", "PM"}, {"requester", "LAUNCHER"}});
    log.append("PM", EventKind::Report, {{"body", "hello"}});
  }
  const auto events = load_events(dir / "events.log");
  ASSERT_EQ(events.size(), 2u);
  EXPECT_EQ(events[1].payload.at("body"), "hello");
  const std::string masked = masked_dump(events);
  std::istringstream lines(masked);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    EXPECT_NE(line.find("\"wall_time\":\"\""), std::string::npos) << line;
    ++n;
  }
  EXPECT_EQ(n, 2);
  EXPECT_FALSE(events[0].wall_time.empty());
}

TEST(EventLog, MalformedFixtureIsRejected) {
  const auto dir = scratch("bad");
  exec::write_file(dir / "bad.jsonl", "{\"seq\":1,\"tick\":0,\"agent\":\"PM\",\"kind\":\"Nope\"}\n");
  try {
    load_events(dir / "bad.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::FixtureParseError);
  }
}

TEST(ContextUsage, EmptyLogGivesEmptyReport) {
  const auto r = context_usage_report({});
  EXPECT_TRUE(r.agents.empty());
  EXPECT_TRUE(r.markers.empty());
}

TEST(ContextUsage, FixtureAgentsInFirstAppearanceOrder) {
  const auto r = context_usage_report(load_events(fixture()));
  ASSERT_FALSE(r.agents.empty());
  EXPECT_EQ(r.agents.front(), "PM");
  EXPECT_EQ(r.markers.size(), 2u);
  EXPECT_EQ(r.compactions("PG1.1"), 1u);
  EXPECT_EQ(r.compactions("PM"), 1u);
}

TEST(ContextUsage, SingleCrossingGivesOneMarker) {
  EventLog log;
  log.append("PG1.1", EventKind::Spawn, {{"role", "PG"}});
  log.set_tick(1);
  log.append("PG1.1", EventKind::TokenUsage, {{"delta", 100000}});
  log.set_tick(2);
  log.append("PG1.1", EventKind::TokenUsage, {{"delta", 60000}});
  log.append("PG1.1", EventKind::Compaction, {{"tokens_before", 160000}, {"tokens_after", 15000}});
  log.set_tick(3);
  log.append("PG1.1", EventKind::TokenUsage, {{"delta", 1000}});
  const auto r = context_usage_report(log.events());
  ASSERT_EQ(r.markers.size(), 1u);
  EXPECT_EQ(r.markers[0].tick, 2);
  EXPECT_EQ(r.markers[0].tokens_before, 160000);
  const auto& s = r.series.at("PG1.1");
  EXPECT_EQ(s.back(), (std::pair<std::int64_t, std::int64_t>{3, 16000}));
  EXPECT_EQ(r.totals.at("PG1.1"), 161000);
  // A window that excludes tick 2 drops the marker but keeps the counters.
  const auto late = context_usage_report(log.events(), {3, 3});
  EXPECT_TRUE(late.markers.empty());
  EXPECT_EQ(late.series.at("PG1.1").front().second, 16000);
}

TEST(Exports, PerformanceCsvFromFixture) {
  const auto state = replay(load_events(fixture()));
  const auto rows = parse_csv(performance_csv(state));
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"tick", "version", "gflops", "efficiency_pct", "status", "is_sota"}));
  std::map<std::string, std::vector<std::string>> by_version;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 6u) << i;
    by_version[rows[i][1]] = rows[i];
  }
  EXPECT_EQ(by_version.at("1.3.0")[4], "Invalid");
  EXPECT_EQ(by_version.at("1.3.0")[5], "0");
  EXPECT_EQ(by_version.at("1.4.0")[2], "3365.2");
  EXPECT_EQ(by_version.at("1.4.0")[5], "1");
  EXPECT_EQ(by_version.at("1.5.0")[2], "");
  EXPECT_EQ(by_version.at("1.5.0")[4], "Failed");
  EXPECT_EQ(by_version.at("1.5.1")[4], "Pending");
  // Efficiency recomputed against the per-GPU peak.
  EXPECT_NEAR(std::stod(by_version.at("1.2.1")[3]), 100.0 * 2185.2 / 7800.0, 1e-4);
}

TEST(Exports, BudgetCsvWithoutJobs) {
  EventLog log;
  log.append("SYSTEM", EventKind::BudgetUpdate,
             {{"spent", "0"}, {"min", "100"}, {"reference", "500"}, {"max", "1000"}, {"status", "UnderMin"}});
  const auto rows = parse_csv(budget_csv(replay(log.events())));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1], (std::vector<std::string>{"0", "0", "100", "500", "1000"}));
  EXPECT_EQ(parse_csv(budget_csv(replay({}))).size(), 1u);
}

TEST(Exports, TokensCsvFlagsCompactions) {
  const auto rows = parse_csv(tokens_csv(load_events(fixture())));
  EXPECT_EQ(rows[0], (std::vector<std::string>{"tick", "agent", "context_tokens", "compaction_flag"}));
  int flagged = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) flagged += rows[i][3] == "1" ? 1 : 0;
  EXPECT_EQ(flagged, 2);
}

TEST(Exports, ExportSeriesWritesChangelog) {
  const auto dir = scratch("exports");
  const auto files = export_series(load_events(fixture()), dir);
  const auto rows = parse_csv(exec::read_file(files.changelog_csv));
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"version", "gflops", "efficiency_pct", "error_norm", "status", "label",
                                               "tick"}));
  bool invalid_blank = false;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i][0] == "1.3.0") invalid_blank = rows[i][4] == "Invalid" && rows[i][1].empty();
  }
  EXPECT_TRUE(invalid_blank);
  // One JSONL record per changelog entry, every one parseable.
  std::istringstream in(exec::read_file(files.changelog_jsonl));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    EXPECT_TRUE(nlohmann::json::accept(line));
    ++n;
  }
  EXPECT_EQ(n, replay(load_events(fixture())).changelog.entries().size());
}

TEST(Report, ValidBestAndRelativeImages) {
  const auto dir = scratch("report");
  exec::write_file(dir / "img" / "performance.png", "png");
  const auto file = render_markdown_report(load_events(fixture()), dir);
  const std::string md = exec::read_file(file);
  EXPECT_NE(md.find("Valid best: v1.4.0, 3365.2 GFLOPS, 43.14%"), std::string::npos);
  EXPECT_NE(md.find("](img/performance.png)"), std::string::npos);
  EXPECT_EQ(md.find(dir.string()), std::string::npos);
  EXPECT_NE(md.find("| v1.5.0 | Bigger tiling sizes | N/A | N/A | Failed |"), std::string::npos);
}

TEST(Report, EmptyProject) {
  const auto dir = scratch("empty_report");
  const std::string md = exec::read_file(render_markdown_report({}, dir));
  EXPECT_NE(md.find("No candidates recorded."), std::string::npos);
  EXPECT_EQ(md.find("Figures"), std::string::npos);
}

TEST(Replay, RebuildsLiveState) {
  auto spec = requirements::parse_requirements(project::requirements_template());
  orchestrator::ProjectConfig cfg;
  cfg.seed = 2;
  cfg.brains.scenario = "violation-demo";
  orchestrator::Orchestrator orch(spec, cfg);
  orch.run();
  const auto state = replay(orch.log().events());
  EXPECT_EQ(state.changelog.snapshot_json(), orch.changelog().snapshot_json());
  EXPECT_EQ(state.spent, orch.ledger().spent_points());
  EXPECT_EQ(state.jobs, orch.ledger().job_count());
  EXPECT_EQ(state.agents_json(), orch.registry().snapshot_json());
  EXPECT_EQ(state.published, orch.published());
}
