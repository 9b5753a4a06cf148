#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vibetune/decimal.hpp"
#include "vibetune/error.hpp"

namespace vibetune::requirements {

enum class Role { PM, SE, PG, CD };

inline constexpr Role kAllRoles[] = {Role::PM, Role::SE, Role::PG, Role::CD};

inline std::string_view to_string(Role role) {
  switch (role) {
    case Role::PM: return "PM";
    case Role::SE: return "SE";
    case Role::PG: return "PG";
    case Role::CD: return "CD";
  }
  return "?";
}

inline std::optional<Role> parse_role(std::string_view text) {
  for (Role r : kAllRoles) {
    if (to_string(r) == text) return r;
  }
  return std::nullopt;
}

struct Budget {
  Decimal min_points;
  Decimal reference_points;
  Decimal max_points;
  bool operator==(const Budget&) const = default;
};

/// Minutes.
struct TimeLimits {
  double min = 0;
  double reference = 0;
  double max = 0;
  bool operator==(const TimeLimits&) const = default;
};

struct Accuracy {
  std::string value_type = "float64";
  std::string error_metric = "relative-2norm";
  /// Unset means the PM assigns the tolerance at project start.
  std::optional<double> tolerance;
  bool operator==(const Accuracy&) const = default;
};

struct Hardware {
  int gpus_per_node = 1;
  double peak_gflops_per_gpu = 7800.0;
  double peak_gflops_node = 7800.0;
  bool operator==(const Hardware&) const = default;
};

struct Publish {
  bool enabled = false;
  bool anonymize = false;
  bool operator==(const Publish&) const = default;
};

inline const Decimal kDefaultPointRate = Decimal::parse("0.007");
inline constexpr double kDefaultPeakGflopsPerGpu = 7800.0;

struct RequirementSpec {
  std::string project_name;
  Budget budget;
  Decimal point_rate = kDefaultPointRate;
  TimeLimits time_limits;
  std::map<Role, int> agent_roster;
  std::vector<std::string> forbidden_libraries;
  Accuracy accuracy;
  Hardware hardware;
  std::vector<std::string> priorities;
  Publish publish;
  std::vector<std::string> missing_items;
  /// Unrecognized sections, heading -> body text, preserved verbatim.
  std::vector<std::pair<std::string, std::string>> notes;

  int roster_limit(Role role) const {
    const auto it = agent_roster.find(role);
    return it == agent_roster.end() ? 0 : it->second;
  }
};

/// Equality over the fields the parser maps; ignores missing_items and notes.
inline bool recognized_equal(const RequirementSpec& a, const RequirementSpec& b) {
  return a.project_name == b.project_name && a.budget == b.budget && a.point_rate == b.point_rate &&
         a.time_limits == b.time_limits && a.agent_roster == b.agent_roster &&
         a.forbidden_libraries == b.forbidden_libraries && a.accuracy == b.accuracy &&
         a.hardware == b.hardware && a.priorities == b.priorities && a.publish == b.publish;
}

// Canonical names of the sections every runnable document needs.
inline constexpr std::string_view kSectionProject = "Project Information";
inline constexpr std::string_view kSectionBudget = "Computational Resource Budget";
inline constexpr std::string_view kSectionRate = "Subsystem Rate";
inline constexpr std::string_view kSectionTime = "Time Limit";
inline constexpr std::string_view kSectionAgents = "Agent Configuration";
inline constexpr std::string_view kSectionAccuracy = "Accuracy Requirements";
inline constexpr std::string_view kSectionPeak = "Peak Performance";

inline const std::vector<std::string_view>& required_sections() {
  static const std::vector<std::string_view> sections = {
      kSectionProject, kSectionBudget, kSectionRate, kSectionTime, kSectionAgents, kSectionAccuracy};
  return sections;
}

namespace detail {

enum class SectionKey {
  Project, Budget, Rate, Time, Agents, Accuracy, IoType, Hardware, Peak,
  Priorities, Publish, Security, Prohibitions, AutoFilled, Unknown,
};

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size() && (s[i + 1] == '_' || s[i + 1] == '*' || s[i + 1] == '[' || s[i + 1] == ']')) {
      continue;
    }
    out += s[i];
  }
  return out;
}

inline std::string strip_markup(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c != '*') out += c;
  }
  return trim(unescape(out));
}

inline SectionKey classify(std::string_view heading) {
  // Fixed alias table; keys are lower-cased with markup removed.
  static const std::vector<std::pair<std::string_view, SectionKey>> aliases = {
      {"project information", SectionKey::Project},
      {"project", SectionKey::Project},
      {"computational resource budget", SectionKey::Budget},
      {"resource budget", SectionKey::Budget},
      {"budget points", SectionKey::Budget},
      {"subsystem rate", SectionKey::Rate},
      {"type ii subsystem rate", SectionKey::Rate},
      {"point rate", SectionKey::Rate},
      {"rate", SectionKey::Rate},
      {"time limit", SectionKey::Time},
      {"time limits", SectionKey::Time},
      {"agent configuration", SectionKey::Agents},
      {"agent roster", SectionKey::Agents},
      {"accuracy requirements", SectionKey::Accuracy},
      {"input/output type", SectionKey::IoType},
      {"available hardware", SectionKey::Hardware},
      {"peak performance", SectionKey::Peak},
      {"priorities", SectionKey::Priorities},
      {"github integration", SectionKey::Publish},
      {"publishing", SectionKey::Publish},
      {"security requirements", SectionKey::Security},
      {"instructions for all agents", SectionKey::Prohibitions},
      {"other restrictions", SectionKey::Prohibitions},
      {"prohibitions", SectionKey::Prohibitions},
      {"auto-generated information (filled by pm)", SectionKey::AutoFilled},
  };
  const std::string key = lower(strip_markup(heading));
  for (const auto& [alias, section] : aliases) {
    if (key == alias) return section;
  }
  if (key.size() > 5 && key.ends_with(" rate")) return SectionKey::Rate;
  return SectionKey::Unknown;
}

struct Section {
  std::string heading;
  int level = 0;
  std::vector<std::string> lines;
};

inline std::vector<Section> split_sections(std::string_view doc) {
  std::vector<Section> sections;
  std::istringstream in{std::string(doc)};
  std::string line;
  bool in_fence = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = trim(line);
    if (t.starts_with("```")) {
      in_fence = !in_fence;
      continue;
    }
    if (!in_fence && t.starts_with("#")) {
      const auto hashes = t.find_first_not_of('#');
      if (hashes != std::string::npos && t[hashes] == ' ') {
        sections.push_back({trim(t.substr(hashes)), static_cast<int>(hashes), {}});
        continue;
      }
    }
    // Text before the first heading has no section to belong to.
    if (t.empty() || sections.empty()) continue;
    sections.back().lines.push_back(t);
  }
  return sections;
}

/// A bullet line `* **Key**: value` split into (key, value); key is lower-case.
inline std::optional<std::pair<std::string, std::string>> key_value(std::string_view line) {
  std::string t = trim(line);
  while (!t.empty() && (t[0] == '*' || t[0] == '-') && t.size() > 1 && t[1] == ' ') t = trim(t.substr(2));
  const auto colon = t.find(':');
  if (colon == std::string::npos) return std::nullopt;
  return std::make_pair(lower(strip_markup(t.substr(0, colon))), trim(t.substr(colon + 1)));
}

inline std::optional<std::string> first_number(std::string_view text) {
  std::string cleaned;
  for (char c : text) {
    if (c != ',') cleaned += c;
  }
  static const std::regex number(R"((\d+(?:\.\d+)?))");
  std::smatch m;
  if (std::regex_search(cleaned, m, number)) return m[1].str();
  return std::nullopt;
}

/// "120 min (2h)" -> 120; "2.5h" -> 150.
inline std::optional<double> parse_minutes(std::string_view text) {
  std::string cleaned;
  for (char c : text) {
    if (c != ',') cleaned += c;
  }
  static const std::regex amount(R"((\d+(?:\.\d+)?)\s*([a-zA-Z]*))");
  std::smatch m;
  if (!std::regex_search(cleaned, m, amount)) return std::nullopt;
  const double value = std::stod(m[1].str());
  const std::string unit = lower(m[2].str());
  if (unit.starts_with("h")) return value * 60.0;
  return value;
}

inline std::string slug(std::string_view text) {
  std::string out;
  bool dash = false;
  for (char c : lower(text)) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      if (dash && !out.empty()) out += '-';
      out += c;
      dash = false;
    } else {
      dash = true;
    }
  }
  return out;
}

/// Checkbox line: returns (checked, label) for `* [x] label` / `* [ ] label`.
inline std::optional<std::pair<bool, std::string>> checkbox(std::string_view line) {
  std::string t = trim(line);
  if (t.starts_with("* ") || t.starts_with("- ")) t = trim(t.substr(2));
  t = unescape(t);
  if (t.size() < 3 || t[0] != '[' || t[2] != ']') return std::nullopt;
  const bool checked = t[1] == 'x' || t[1] == 'X';
  return std::make_pair(checked, trim(t.substr(3)));
}

inline void add_forbidden(std::vector<std::string>& list, const std::string& token) {
  const std::string key = lower(token);
  if (key.empty()) return;
  for (const auto& existing : list) {
    if (lower(existing) == key) return;
  }
  list.push_back(token);
}

inline void collect_backticked(std::vector<std::string>& list, std::string_view line) {
  static const std::regex tick(R"([`']([A-Za-z0-9_+.-]+)[`'])");
  const std::string s(line);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), tick); it != std::sregex_iterator(); ++it) {
    add_forbidden(list, (*it)[1].str());
  }
}

inline Decimal parse_decimal_field(const std::string& value, std::string_view section) {
  const auto number = first_number(value);
  if (!number) throw Error(Errc::MalformedSection, std::string(section));
  return Decimal::parse(*number);
}

inline void mark_missing(RequirementSpec& spec, std::string_view section) {
  if (std::find(spec.missing_items.begin(), spec.missing_items.end(), section) == spec.missing_items.end()) {
    spec.missing_items.emplace_back(section);
  }
}

}  // namespace detail

/// Maps a headed plain-text requirements document onto a RequirementSpec.
///
/// Recognized headings are matched through a fixed alias table. Required
/// sections that are absent, or present without any usable line, are listed
/// in missing_items; a recognized heading whose values cannot be read as
/// numbers raises MalformedSection. Forbidden libraries are collected from
/// every line mentioning a prohibition, using the back-quoted tokens.
inline RequirementSpec parse_requirements(std::string_view doc) {
  using detail::SectionKey;
  if (detail::trim(doc).empty()) throw Error(Errc::EmptyDocument, "requirements document is empty");

  RequirementSpec spec;
  bool have_project = false, have_budget = false, have_rate = false, have_time = false;
  bool have_agents = false, have_accuracy = false, have_peak = false;
  std::optional<double> node_peak;

  for (const auto& section : detail::split_sections(doc)) {
    const SectionKey key = detail::classify(section.heading);
    for (const auto& line : section.lines) {
      if (detail::lower(line).find("prohibit") != std::string::npos) {
        detail::collect_backticked(spec.forbidden_libraries, line);
      }
    }
    switch (key) {
      case SectionKey::Project:
        for (const auto& line : section.lines) {
          if (auto kv = detail::key_value(line); kv && kv->first == "project name") {
            spec.project_name = detail::unescape(kv->second);
            have_project = true;
          }
        }
        break;
      case SectionKey::Budget: {
        bool any = false;
        for (const auto& line : section.lines) {
          auto kv = detail::key_value(line);
          if (!kv) continue;
          Decimal* target = nullptr;
          if (kv->first.find("minimum") != std::string::npos) target = &spec.budget.min_points;
          if (kv->first.find("reference") != std::string::npos) target = &spec.budget.reference_points;
          if (kv->first.find("maximum") != std::string::npos) target = &spec.budget.max_points;
          if (target == nullptr) continue;
          *target = detail::parse_decimal_field(kv->second, kSectionBudget);
          any = true;
        }
        have_budget = have_budget || any;
        break;
      }
      case SectionKey::Rate:
        for (const auto& line : section.lines) {
          if (auto n = detail::first_number(line)) {
            spec.point_rate = Decimal::parse(*n);
            have_rate = true;
            break;
          }
        }
        if (!have_rate && !section.lines.empty()) throw Error(Errc::MalformedSection, std::string(kSectionRate));
        break;
      case SectionKey::Time: {
        bool any = false;
        for (const auto& line : section.lines) {
          auto kv = detail::key_value(line);
          if (!kv) continue;
          double* target = nullptr;
          if (kv->first.find("minimum") != std::string::npos) target = &spec.time_limits.min;
          if (kv->first.find("reference") != std::string::npos) target = &spec.time_limits.reference;
          if (kv->first.find("maximum") != std::string::npos) target = &spec.time_limits.max;
          if (target == nullptr) continue;
          const auto minutes = detail::parse_minutes(kv->second);
          if (!minutes) throw Error(Errc::MalformedSection, std::string(kSectionTime));
          *target = *minutes;
          any = true;
        }
        have_time = have_time || any;
        break;
      }
      case SectionKey::Agents: {
        static const std::regex entry(R"(^([A-Za-z]+)(?:\s*[xX×]\s*(\d+))?$)");
        for (const auto& line : section.lines) {
          std::smatch m;
          const std::string t = detail::trim(line);
          if (!std::regex_match(t, m, entry)) continue;
          const auto role = parse_role(m[1].str());
          if (!role) throw Error(Errc::MalformedSection, std::string(kSectionAgents) + ": unknown role " + t);
          spec.agent_roster[*role] += m[2].matched ? std::stoi(m[2].str()) : 1;
          have_agents = true;
        }
        break;
      }
      case SectionKey::Accuracy:
        have_accuracy = true;
        for (const auto& line : section.lines) {
          auto kv = detail::key_value(line);
          if (!kv) continue;
          if (kv->first == "tolerance") {
            if (detail::lower(kv->second) == "pm-assigned") {
              spec.accuracy.tolerance.reset();
            } else {
              try {
                spec.accuracy.tolerance = std::stod(kv->second);
              } catch (const std::exception&) {
                throw Error(Errc::MalformedSection, std::string(kSectionAccuracy));
              }
            }
          } else if (kv->first == "error metric") {
            spec.accuracy.error_metric = kv->second;
          }
        }
        break;
      case SectionKey::IoType:
        for (const auto& line : section.lines) {
          auto box = detail::checkbox(line);
          if (!box || !box->first) continue;
          const std::string label = detail::lower(box->second);
          if (label.starts_with("double")) spec.accuracy.value_type = "float64";
          else if (label.starts_with("float") || label.starts_with("single")) spec.accuracy.value_type = "float32";
          else if (label.starts_with("half")) spec.accuracy.value_type = "float16";
        }
        break;
      case SectionKey::Hardware: {
        static const std::regex gpus(R"((\d+)\s*GPUs?\s+per\s+node)", std::regex::icase);
        for (const auto& line : section.lines) {
          std::smatch m;
          if (std::regex_search(line, m, gpus)) {
            spec.hardware.gpus_per_node = std::stoi(m[1].str());
          }
        }
        break;
      }
      case SectionKey::Peak: {
        for (const auto& line : section.lines) {
          auto kv = detail::key_value(line);
          if (!kv) continue;
          const auto n = detail::first_number(kv->second);
          if (!n) throw Error(Errc::MalformedSection, std::string(kSectionPeak));
          double value = std::stod(*n);
          if (detail::lower(kv->second).find("tflops") != std::string::npos) value *= 1000.0;
          if (kv->first.find("gpu") != std::string::npos) {
            spec.hardware.peak_gflops_per_gpu = value;
            have_peak = true;
          } else if (kv->first.find("node") != std::string::npos) {
            node_peak = value;
          }
        }
        break;
      }
      case SectionKey::Priorities:
        for (const auto& line : section.lines) {
          auto box = detail::checkbox(line);
          if (box && box->first) spec.priorities.push_back(detail::slug(box->second));
        }
        break;
      case SectionKey::Publish:
        for (const auto& line : section.lines) {
          auto box = detail::checkbox(line);
          if (box && detail::lower(box->second).find("use enabled") != std::string::npos) {
            spec.publish.enabled = box->first;
          }
        }
        break;
      case SectionKey::Security:
        for (const auto& line : section.lines) {
          if (detail::lower(line).find("anonymize") != std::string::npos) spec.publish.anonymize = true;
        }
        break;
      case SectionKey::Prohibitions:
        for (const auto& line : section.lines) {
          // Bare list entries such as "- cuBLAS" under a Prohibitions heading.
          std::string t = detail::trim(line);
          if ((t.starts_with("* ") || t.starts_with("- ")) && t.find(' ', 2) == std::string::npos) {
            detail::add_forbidden(spec.forbidden_libraries, detail::trim(t.substr(2)));
          }
        }
        break;
      case SectionKey::AutoFilled:
        break;
      case SectionKey::Unknown: {
        if (section.level == 1 && section.lines.empty()) break;  // document title
        std::string body;
        for (const auto& line : section.lines) body += line + "\n";
        spec.notes.emplace_back(section.heading, body);
        break;
      }
    }
  }

  if (!have_project) detail::mark_missing(spec, kSectionProject);
  if (!have_budget) detail::mark_missing(spec, kSectionBudget);
  if (!have_rate) detail::mark_missing(spec, kSectionRate);
  if (!have_time) detail::mark_missing(spec, kSectionTime);
  if (!have_agents) detail::mark_missing(spec, kSectionAgents);
  if (!have_accuracy) detail::mark_missing(spec, kSectionAccuracy);
  if (!have_peak) detail::mark_missing(spec, kSectionPeak);
  spec.hardware.peak_gflops_node =
      node_peak ? *node_peak : spec.hardware.peak_gflops_per_gpu * spec.hardware.gpus_per_node;
  return spec;
}

namespace detail {
inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(15);
  os << v;
  return os.str();
}
}  // namespace detail

/// Canonical headed-section form. Parsing the output yields a spec whose
/// recognized fields equal the input's.
inline std::string serialize_spec(const RequirementSpec& spec) {
  using detail::format_number;
  std::ostringstream os;
  os << "# Requirements Definition Document\n";
  os << "## " << kSectionProject << "\n* **Project Name**: " << spec.project_name << "\n";
  os << "## " << kSectionBudget << "\n"
     << "* **Minimum Consumption Line**: " << spec.budget.min_points.to_string() << " points\n"
     << "* **Reference**: " << spec.budget.reference_points.to_string() << " points\n"
     << "* **Maximum**: " << spec.budget.max_points.to_string() << " points\n";
  os << "## " << kSectionRate << "\nPoints = elapsed seconds x " << spec.point_rate.to_string() << " x GPUs used.\n";
  os << "## " << kSectionTime << "\n"
     << "* Minimum: " << format_number(spec.time_limits.min) << " min\n"
     << "* Reference: " << format_number(spec.time_limits.reference) << " min\n"
     << "* Maximum: " << format_number(spec.time_limits.max) << " min\n";
  os << "## " << kSectionAgents << "\n";
  for (Role role : kAllRoles) {
    const int count = spec.roster_limit(role);
    if (count == 0) continue;
    os << to_string(role);
    if (count > 1) os << " x " << count;
    os << "\n";
  }
  os << "## " << kSectionAccuracy << "\n"
     << "* Tolerance: "
     << (spec.accuracy.tolerance ? format_number(*spec.accuracy.tolerance) : std::string("pm-assigned")) << "\n"
     << "* Error Metric: " << spec.accuracy.error_metric << "\n";
  os << "## Input/Output Type\n";
  if (spec.accuracy.value_type == "float64") os << "* [x] double (64-bit)\n";
  else if (spec.accuracy.value_type == "float32") os << "* [x] float (32-bit)\n";
  else os << "* [x] half (16-bit)\n";
  os << "## Available Hardware\n* [x] " << spec.hardware.gpus_per_node << " GPUs per node\n";
  os << "## " << kSectionPeak << "\n"
     << "* Per GPU: " << format_number(spec.hardware.peak_gflops_per_gpu) << " GFLOPS\n"
     << "* Node: " << format_number(spec.hardware.peak_gflops_node) << " GFLOPS\n";
  os << "## Priorities\n";
  for (const auto& p : spec.priorities) os << "* [x] " << p << "\n";
  os << "## GitHub Integration\n* [" << (spec.publish.enabled ? "x" : " ") << "] Use enabled\n";
  os << "## Security Requirements\n";
  if (spec.publish.anonymize) os << "* Anonymize user information before publishing.\n";
  os << "## Prohibitions\n";
  if (!spec.forbidden_libraries.empty()) {
    os << "* The use of ";
    for (std::size_t i = 0; i < spec.forbidden_libraries.size(); ++i) {
      if (i > 0) os << ", ";
      os << '`' << spec.forbidden_libraries[i] << '`';
    }
    os << " is prohibited.\n";
  }
  for (const auto& [heading, body] : spec.notes) os << "## " << heading << "\n" << body;
  return os.str();
}

enum class ViolationCode {
  BudgetOrdering,
  TimeOrdering,
  NonPositiveRate,
  NegativeCount,
  MissingManager,
  ExtraManager,
};

inline std::string_view to_string(ViolationCode code) {
  switch (code) {
    case ViolationCode::BudgetOrdering: return "BudgetOrdering";
    case ViolationCode::TimeOrdering: return "TimeOrdering";
    case ViolationCode::NonPositiveRate: return "NonPositiveRate";
    case ViolationCode::NegativeCount: return "NegativeCount";
    case ViolationCode::MissingManager: return "MissingManager";
    case ViolationCode::ExtraManager: return "ExtraManager";
  }
  return "?";
}

struct SpecViolation {
  ViolationCode code;
  std::string detail;
};

/// Ordering and range checks; an empty result means the spec is runnable.
inline std::vector<SpecViolation> validate_spec(const RequirementSpec& spec, bool multi_agent = true) {
  std::vector<SpecViolation> out;
  const auto& b = spec.budget;
  if (b.min_points.is_negative() || !(b.min_points <= b.reference_points && b.reference_points <= b.max_points)) {
    out.push_back({ViolationCode::BudgetOrdering, b.min_points.to_string() + "/" + b.reference_points.to_string() +
                                                      "/" + b.max_points.to_string()});
  }
  const auto& t = spec.time_limits;
  if (t.min < 0 || !(t.min <= t.reference && t.reference <= t.max)) {
    out.push_back({ViolationCode::TimeOrdering, detail::format_number(t.min) + "/" + detail::format_number(t.reference) +
                                                    "/" + detail::format_number(t.max)});
  }
  if (spec.point_rate <= Decimal(0)) out.push_back({ViolationCode::NonPositiveRate, spec.point_rate.to_string()});
  for (const auto& [role, count] : spec.agent_roster) {
    if (count < 0) out.push_back({ViolationCode::NegativeCount, std::string(to_string(role))});
  }
  if (spec.hardware.gpus_per_node < 0) out.push_back({ViolationCode::NegativeCount, "gpus_per_node"});
  if (multi_agent) {
    const int pms = spec.roster_limit(Role::PM);
    if (pms == 0) out.push_back({ViolationCode::MissingManager, "multi-agent mode needs one PM"});
    if (pms > 1) out.push_back({ViolationCode::ExtraManager, std::to_string(pms) + " PMs"});
  }
  return out;
}

}  // namespace vibetune::requirements
