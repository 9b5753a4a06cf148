#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "vibetune/project.hpp"
#include "vibetune/requirements.hpp"

namespace fs = std::filesystem;
using namespace vibetune;
using namespace vibetune::requirements;

namespace {

std::string sample_text() {
  std::ifstream in(fs::path(VIBETUNE_FIXTURES) / "sample_requirements.md");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Drops the heading line containing `needle` and its body up to the next
/// heading of the same or higher level.
std::string drop_section(const std::string& doc, const std::string& needle) {
  std::istringstream in(doc);
  std::string line, out;
  int skip_level = 0;
  while (std::getline(in, line)) {
    const auto hashes = line.find_first_not_of('#');
    const bool heading = !line.empty() && line[0] == '#' && hashes != std::string::npos;
    const int level = heading ? static_cast<int>(hashes) : 0;
    if (skip_level > 0) {
      if (heading && level <= skip_level) skip_level = 0;
      else continue;
    }
    if (heading && line.find(needle) != std::string::npos) {
      skip_level = level;
      continue;
    }
    out += line + "\n";
  }
  return out;
}

}  // namespace

TEST(Requirements, SampleDocumentFields) {
  const auto spec = parse_requirements(sample_text());
  EXPECT_EQ(spec.budget.min_points, Decimal(100));
  EXPECT_EQ(spec.budget.reference_points, Decimal(500));
  EXPECT_EQ(spec.budget.max_points, Decimal(1000));
  EXPECT_EQ(spec.point_rate, Decimal::parse("0.007"));
  EXPECT_DOUBLE_EQ(spec.time_limits.min, 120);
  EXPECT_DOUBLE_EQ(spec.time_limits.reference, 150);
  EXPECT_DOUBLE_EQ(spec.time_limits.max, 180);
  const std::map<Role, int> roster{{Role::PM, 1}, {Role::SE, 1}, {Role::PG, 3}, {Role::CD, 1}};
  EXPECT_EQ(spec.agent_roster, roster);
  EXPECT_EQ(spec.forbidden_libraries, (std::vector<std::string>{"cuBLAS", "MKL"}));
  EXPECT_EQ(spec.hardware.gpus_per_node, 4);
  EXPECT_TRUE(spec.publish.enabled);
}

TEST(Requirements, EmptyDocumentIsRejected) {
  for (const char* doc : {"", "   \n\t\n"}) {
    try {
      parse_requirements(doc);
      FAIL() << "empty document accepted";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::EmptyDocument);
    }
  }
}

TEST(Requirements, RemovedSectionIsReportedMissing) {
  const std::string doc = drop_section(sample_text(), "Accuracy Requirements");
  ASSERT_EQ(doc.find("Accuracy Requirements"), std::string::npos);
  const auto spec = parse_requirements(doc);
  EXPECT_NE(std::find(spec.missing_items.begin(), spec.missing_items.end(), "Accuracy Requirements"),
            spec.missing_items.end());
  // Everything else that is required is still present.
  for (auto section : required_sections()) {
    if (section == kSectionAccuracy) continue;
    EXPECT_EQ(std::find(spec.missing_items.begin(), spec.missing_items.end(), std::string(section)),
              spec.missing_items.end())
        << section;
  }
}

TEST(Requirements, UnknownSectionsArePreserved) {
  const auto spec = parse_requirements(sample_text() + "\n## Weather Notes\nSunny with clouds.\n");
  const auto it = std::find_if(spec.notes.begin(), spec.notes.end(),
                               [](const auto& n) { return n.first.find("Weather Notes") != std::string::npos; });
  ASSERT_NE(it, spec.notes.end());
  EXPECT_NE(it->second.find("Sunny with clouds."), std::string::npos);
}

TEST(Requirements, ValidateAcceptsSample) {
  EXPECT_TRUE(validate_spec(parse_requirements(sample_text())).empty());
}

TEST(Requirements, ValidateRejectsBadOrdering) {
  auto spec = parse_requirements(sample_text());
  spec.budget = {Decimal(500), Decimal(100), Decimal(1000)};
  const auto v = validate_spec(spec);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].code, ViolationCode::BudgetOrdering);

  spec = parse_requirements(sample_text());
  spec.time_limits = {180, 150, 120};
  ASSERT_FALSE(validate_spec(spec).empty());
  EXPECT_EQ(validate_spec(spec)[0].code, ViolationCode::TimeOrdering);

  spec = parse_requirements(sample_text());
  spec.point_rate = Decimal(0);
  EXPECT_EQ(validate_spec(spec).at(0).code, ViolationCode::NonPositiveRate);
}

TEST(Requirements, ManagerCountDependsOnMode) {
  auto spec = parse_requirements(sample_text());
  spec.agent_roster[Role::PM] = 0;
  ASSERT_EQ(validate_spec(spec, true).size(), 1u);
  EXPECT_EQ(validate_spec(spec, true)[0].code, ViolationCode::MissingManager);
  EXPECT_TRUE(validate_spec(spec, false).empty());
  spec.agent_roster[Role::PM] = 2;
  EXPECT_EQ(validate_spec(spec, true).at(0).code, ViolationCode::ExtraManager);
}

TEST(Requirements, SerializeParseIsAFixedPoint) {
  const auto spec = parse_requirements(sample_text());
  const std::string once = serialize_spec(spec);
  const auto again = parse_requirements(once);
  EXPECT_TRUE(recognized_equal(spec, again));
  EXPECT_EQ(serialize_spec(again), once);
}

TEST(Requirements, InitTemplateParsesCleanly) {
  const auto spec = parse_requirements(project::requirements_template());
  EXPECT_TRUE(validate_spec(spec).empty());
  EXPECT_TRUE(spec.missing_items.empty()) << roles::join(spec.missing_items, ", ");
  EXPECT_EQ(spec.budget.max_points, Decimal(1000));
  EXPECT_EQ(spec.roster_limit(Role::PG), 3);
  EXPECT_EQ(spec.forbidden_libraries, (std::vector<std::string>{"cuBLAS", "MKL"}));
}

TEST(Requirements, RoleNamesRoundTrip) {
  for (Role r : kAllRoles) EXPECT_EQ(parse_role(to_string(r)), r);
  EXPECT_FALSE(parse_role("QA").has_value());
}
