#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vibetune/error.hpp"
#include "vibetune/text.hpp"

namespace vibetune::tuning {

using Params = std::map<std::string, int>;

enum class Status { Pending, Valid, Invalid, Failed };

inline std::string_view to_string(Status s) {
  switch (s) {
    case Status::Pending: return "Pending";
    case Status::Valid: return "Valid";
    case Status::Invalid: return "Invalid";
    case Status::Failed: return "Failed";
  }
  return "?";
}

inline std::optional<Status> parse_status(std::string_view text) {
  for (Status s : {Status::Pending, Status::Valid, Status::Invalid, Status::Failed}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

struct Metrics {
  double gflops = 0;
  double efficiency_pct = 0;
  /// Relative 2-norm error against the reference result.
  double error_norm = 0;
  double elapsed_s = 0;
  int gpus = 0;
  bool operator==(const Metrics&) const = default;
};

struct CandidateVersion {
  std::string version;
  std::optional<std::string> parent;
  Params params;
  std::string source_ref;
  std::string optimization_label;
  Status status = Status::Pending;
  std::optional<Metrics> metrics;
  /// Set by a CD violation review; excluded from SOTA until the PM rules.
  bool flagged = false;
  std::string note;
  bool operator==(const CandidateVersion&) const = default;
};

struct LogEntry {
  std::int64_t tick = 0;
  CandidateVersion snapshot;
};

struct SotaPoint {
  std::string version;
  double gflops = 0;
  bool operator==(const SotaPoint&) const = default;
};

inline nlohmann::json to_json(const Metrics& m) {
  return {{"gflops", m.gflops}, {"efficiency_pct", m.efficiency_pct}, {"error_norm", m.error_norm},
          {"elapsed_s", m.elapsed_s}, {"gpus", m.gpus}};
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
  Metrics m;
  m.gflops = j.value("gflops", 0.0);
  m.efficiency_pct = j.value("efficiency_pct", 0.0);
  m.error_norm = j.value("error_norm", 0.0);
  m.elapsed_s = j.value("elapsed_s", 0.0);
  m.gpus = j.value("gpus", 0);
  return m;
}

inline nlohmann::json to_json(const CandidateVersion& c) {
  nlohmann::json j{{"version", c.version},   {"params", c.params},
                   {"source_ref", c.source_ref}, {"label", c.optimization_label},
                   {"status", to_string(c.status)}, {"flagged", c.flagged}, {"note", c.note}};
  j["parent"] = c.parent ? nlohmann::json(*c.parent) : nlohmann::json(nullptr);
  j["metrics"] = c.metrics ? to_json(*c.metrics) : nlohmann::json(nullptr);
  return j;
}

/// Append-only candidate history. Status changes append a new snapshot of the
/// candidate; earlier snapshots are never touched.
class ChangeLog {
 public:
  const CandidateVersion& register_candidate(const std::string& version, std::optional<std::string> parent,
                                             Params params, std::string source_ref, std::string label,
                                             std::int64_t tick = 0) {
    if (latest_.contains(version)) throw Error(Errc::DuplicateVersion, version);
    CandidateVersion c;
    c.version = version;
    c.parent = std::move(parent);
    c.params = std::move(params);
    c.source_ref = std::move(source_ref);
    c.optimization_label = std::move(label);
    order_.push_back(version);
    return append(tick, std::move(c));
  }

  /// Allowed: Pending -> {Valid, Invalid, Failed}; Valid -> Invalid; and
  /// Invalid -> Invalid to attach measurements that arrive after invalidation.
  const CandidateVersion& record_result(const std::string& version, std::optional<Metrics> metrics, Status verdict,
                                        std::int64_t tick = 0, std::string note = {}) {
    const CandidateVersion* current = latest(version);
    if (current == nullptr) throw Error(Errc::UnknownVersion, version);
    const Status from = current->status;
    const bool ok = (from == Status::Pending && verdict != Status::Pending) ||
                    (from == Status::Valid && verdict == Status::Invalid) ||
                    (from == Status::Invalid && verdict == Status::Invalid);
    if (!ok) {
      throw Error(Errc::IllegalTransition,
                  version + ": " + std::string(to_string(from)) + " -> " + std::string(to_string(verdict)));
    }
    if (verdict == Status::Valid) {
      if (!metrics) throw Error(Errc::IllegalTransition, version + ": Valid requires metrics");
      if (metrics->error_norm > tolerance_) {
        throw Error(Errc::IllegalTransition, version + ": error norm above tolerance");
      }
    }
    CandidateVersion next = *current;
    next.status = verdict;
    if (metrics) next.metrics = metrics;
    if (!note.empty()) next.note = std::move(note);
    return append(tick, std::move(next));
  }

  const CandidateVersion& flag(const std::string& version, std::string reason, std::int64_t tick = 0) {
    const CandidateVersion* current = latest(version);
    if (current == nullptr) throw Error(Errc::UnknownVersion, version);
    CandidateVersion next = *current;
    next.flagged = true;
    next.note = std::move(reason);
    return append(tick, std::move(next));
  }

  const CandidateVersion* latest(const std::string& version) const {
    const auto it = latest_.find(version);
    return it == latest_.end() ? nullptr : &entries_[it->second].snapshot;
  }

  bool contains(const std::string& version) const { return latest_.contains(version); }

  const std::vector<LogEntry>& entries() const { return entries_; }

  /// Versions in registration order.
  const std::vector<std::string>& versions() const { return order_; }

  /// Maximum-gflops Valid, unflagged candidate; ties go to the one that
  /// became Valid first.
  std::optional<SotaPoint> sota() const {
    std::optional<SotaPoint> best;
    std::size_t best_at = 0;
    for (const auto& version : order_) {
      const CandidateVersion& c = *latest(version);
      if (c.status != Status::Valid || c.flagged || !c.metrics) continue;
      const std::size_t became_valid = valid_since_.at(version);
      if (!best || c.metrics->gflops > best->gflops ||
          (c.metrics->gflops == best->gflops && became_valid < best_at)) {
        best = SotaPoint{version, c.metrics->gflops};
        best_at = became_valid;
      }
    }
    return best;
  }

  double tolerance() const { return tolerance_; }
  void set_tolerance(double tolerance) { tolerance_ = tolerance; }

  nlohmann::json snapshot_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& version : order_) j.push_back(to_json(*latest(version)));
    nlohmann::json out{{"candidates", j}};
    const auto s = sota();
    out["sota"] = s ? nlohmann::json(s->version) : nlohmann::json(nullptr);
    return out;
  }

 private:
  const CandidateVersion& append(std::int64_t tick, CandidateVersion c) {
    const std::string version = c.version;
    const bool valid = c.status == Status::Valid;
    entries_.push_back({tick, std::move(c)});
    latest_[version] = entries_.size() - 1;
    if (valid && !valid_since_.contains(version)) valid_since_[version] = entries_.size() - 1;
    return entries_.back().snapshot;
  }

  std::vector<LogEntry> entries_;
  std::vector<std::string> order_;
  std::map<std::string, std::size_t> latest_;
  std::map<std::string, std::size_t> valid_since_;
  double tolerance_ = 1e-12;
};

inline std::optional<SotaPoint> sota(const ChangeLog& log) { return log.sota(); }

// ============================================================================
// Versions
// ============================================================================

struct VersionTriple {
  int major = 1;
  int minor = 0;
  int patch = 0;
  auto operator<=>(const VersionTriple&) const = default;
};

inline std::optional<VersionTriple> parse_version(std::string_view text) {
  if (!text.empty() && (text[0] == 'v' || text[0] == 'V')) text.remove_prefix(1);
  const auto parts = text::split(text, '.');
  if (parts.size() != 3) return std::nullopt;
  VersionTriple v;
  try {
    std::size_t used = 0;
    v.major = std::stoi(parts[0], &used);
    if (used != parts[0].size()) return std::nullopt;
    v.minor = std::stoi(parts[1], &used);
    if (used != parts[1].size()) return std::nullopt;
    v.patch = std::stoi(parts[2], &used);
    if (used != parts[2].size()) return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
  return v;
}

inline std::string format_version(const VersionTriple& v) {
  return std::to_string(v.major) + "." + std::to_string(v.minor) + "." + std::to_string(v.patch);
}

/// A new optimization idea: next free minor number, patch 0.
inline std::string next_minor_version(const ChangeLog& log) {
  std::optional<VersionTriple> top;
  for (const auto& version : log.versions()) {
    const auto v = parse_version(version);
    if (v && (!top || *v > *top)) top = v;
  }
  if (!top) return "1.0.0";
  return format_version({top->major, top->minor + 1, 0});
}

/// A parameter refinement of `parent`: same minor, next free patch.
inline std::string next_patch_version(const ChangeLog& log, std::string_view parent) {
  const auto base = parse_version(parent);
  if (!base) return next_minor_version(log);
  int patch = base->patch;
  for (const auto& version : log.versions()) {
    const auto v = parse_version(version);
    if (v && v->major == base->major && v->minor == base->minor) patch = std::max(patch, v->patch);
  }
  return format_version({base->major, base->minor, patch + 1});
}

// ============================================================================
// Parameter search
// ============================================================================

struct ParameterSpace {
  struct Dimension {
    std::string name;
    std::vector<int> values;
  };
  std::vector<Dimension> dims;

  std::size_t size() const {
    if (dims.empty()) return 0;
    std::size_t n = 1;
    for (const auto& d : dims) n *= d.values.size();
    return n;
  }

  /// Lattice point `index` in declared order; the last dimension varies fastest.
  Params at(std::size_t index) const {
    Params p;
    for (auto it = dims.rbegin(); it != dims.rend(); ++it) {
      const std::size_t n = it->values.size();
      p[it->name] = it->values[index % n];
      index /= n;
    }
    return p;
  }

  bool contains(const Params& params) const {
    for (const auto& d : dims) {
      const auto it = params.find(d.name);
      if (it == params.end() || std::find(d.values.begin(), d.values.end(), it->second) == d.values.end()) {
        return false;
      }
    }
    return true;
  }

  Params restrict(const Params& params) const {
    Params out;
    for (const auto& d : dims) {
      const auto it = params.find(d.name);
      if (it != params.end()) out[d.name] = it->second;
    }
    return out;
  }
};

inline nlohmann::json to_json(const ParameterSpace& space) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& d : space.dims) j.push_back({{"name", d.name}, {"values", d.values}});
  return j;
}

inline ParameterSpace space_from_json(const nlohmann::json& j) {
  ParameterSpace space;
  for (const auto& d : j) space.dims.push_back({d.at("name").get<std::string>(), d.at("values").get<std::vector<int>>()});
  return space;
}

/// Lattice indices not yet tried by any candidate in `history`, ascending.
inline std::vector<std::size_t> unvisited(const ParameterSpace& space, const ChangeLog& history) {
  std::set<Params> seen;
  for (const auto& version : history.versions()) seen.insert(space.restrict(history.latest(version)->params));
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (!seen.contains(space.at(i))) out.push_back(i);
  }
  return out;
}

/// Plug-in point for search algorithms over a discrete parameter space.
class SearchStrategy {
 public:
  virtual ~SearchStrategy() = default;
  virtual std::string name() const = 0;
  /// Throws ExhaustedSpace when every lattice point has been visited.
  virtual Params next(const ParameterSpace& space, const ChangeLog& history, std::uint64_t seed) const = 0;
};

class GridStrategy final : public SearchStrategy {
 public:
  std::string name() const override { return "grid"; }
  Params next(const ParameterSpace& space, const ChangeLog& history, std::uint64_t) const override {
    const auto open = unvisited(space, history);
    if (open.empty()) throw Error(Errc::ExhaustedSpace, "grid");
    return space.at(open.front());
  }
};

class RandomStrategy final : public SearchStrategy {
 public:
  std::string name() const override { return "random"; }
  Params next(const ParameterSpace& space, const ChangeLog& history, std::uint64_t seed) const override {
    const auto open = unvisited(space, history);
    if (open.empty()) throw Error(Errc::ExhaustedSpace, "random");
    // The draw depends only on the seed and how much has been visited, so a
    // replayed history reproduces the same sequence.
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (space.size() - open.size() + 1)));
    std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
    return space.at(open[pick(rng)]);
  }
};

inline std::unique_ptr<SearchStrategy> make_strategy(std::string_view name) {
  if (name == "grid") return std::make_unique<GridStrategy>();
  if (name == "random") return std::make_unique<RandomStrategy>();
  return nullptr;
}

inline Params next_params(const SearchStrategy& strategy, const ParameterSpace& space, const ChangeLog& history,
                          std::uint64_t seed) {
  return strategy.next(space, history, seed);
}

// ============================================================================
// Export
// ============================================================================

/// One row per version (latest snapshot): version,gflops,efficiency_pct,error_norm,status,label,tick.
inline std::string changelog_csv(const ChangeLog& log) {
  std::ostringstream os;
  os << "version,gflops,efficiency_pct,error_norm,status,label,tick\n";
  std::map<std::string, std::int64_t> last_tick;
  for (const auto& e : log.entries()) last_tick[e.snapshot.version] = e.tick;
  for (const auto& version : log.versions()) {
    const auto& c = *log.latest(version);
    os << c.version << ',';
    const bool rejected = c.status == Status::Invalid || c.status == Status::Failed;
    if (c.metrics && !rejected) {
      os << text::shortest(c.metrics->gflops) << ',' << text::shortest(c.metrics->efficiency_pct) << ','
         << text::shortest(c.metrics->error_norm);
    } else if (c.metrics) {
      // Rejected candidates never carry performance into exports.
      os << ",," << text::shortest(c.metrics->error_norm);
    } else {
      os << ",,";
    }
    std::string label = c.optimization_label;
    std::replace(label.begin(), label.end(), ',', ';');
    os << ',' << to_string(c.status) << ',' << label << ',' << last_tick[version] << '\n';
  }
  return os.str();
}

inline std::string changelog_jsonl(const ChangeLog& log) {
  std::string out;
  for (const auto& e : log.entries()) {
    nlohmann::json j = to_json(e.snapshot);
    j["tick"] = e.tick;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace vibetune::tuning
