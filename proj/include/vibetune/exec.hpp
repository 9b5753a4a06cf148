#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vibetune/decimal.hpp"
#include "vibetune/error.hpp"
#include "vibetune/requirements.hpp"

namespace vibetune::exec {

// ============================================================================
// Points and budget
// ============================================================================

/// elapsed seconds x rate x GPUs, exact.
inline Decimal compute_points(const Decimal& elapsed_s, int gpus, const Decimal& rate) {
  if (elapsed_s.is_negative() || gpus < 0 || rate.is_negative()) {
    throw Error(Errc::NegativeInput, "elapsed=" + elapsed_s.to_string() + " gpus=" + std::to_string(gpus) +
                                         " rate=" + rate.to_string());
  }
  return elapsed_s * rate * Decimal(gpus);
}

enum class BudgetStatus { UnderMin, InRange, NearMax, Exceeded };

inline std::string_view to_string(BudgetStatus s) {
  switch (s) {
    case BudgetStatus::UnderMin: return "UnderMin";
    case BudgetStatus::InRange: return "InRange";
    case BudgetStatus::NearMax: return "NearMax";
    case BudgetStatus::Exceeded: return "Exceeded";
  }
  return "?";
}

enum class JobState { Pending, Running, Done, Error };

inline std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::Pending: return "Pending";
    case JobState::Running: return "Running";
    case JobState::Done: return "Done";
    case JobState::Error: return "Error";
  }
  return "?";
}

struct JobOutputs {
  std::string stdout_ref;
  std::string stderr_ref;
  std::map<std::string, double> metrics;
  bool operator==(const JobOutputs&) const = default;
};

struct JobRecord {
  std::uint64_t id = 0;
  std::string version;
  std::string backend;
  std::string resource_group;
  int gpus = 0;
  std::int64_t submitted = 0;
  std::int64_t started = 0;
  std::int64_t ended = 0;
  Decimal elapsed_s;
  Decimal points;
  JobState state = JobState::Pending;
  std::string error;
  JobOutputs outputs;
  bool operator==(const JobRecord&) const = default;
};

class BudgetLedger {
 public:
  /// Charges a finished job. Jobs that never ran (errors before execution,
  /// poll timeouts) carry zero points.
  void charge(const JobRecord& job) {
    if (job.points.is_negative()) throw Error(Errc::NegativeInput, "job points");
    spent_ += job.points;
    ++job_count_;
  }

  const Decimal& spent_points() const { return spent_; }
  std::size_t job_count() const { return job_count_; }

 private:
  Decimal spent_;
  std::size_t job_count_ = 0;
};

/// NearMax starts at 90% of the maximum.
inline BudgetStatus budget_status(const Decimal& spent, const requirements::Budget& budget) {
  if (spent > budget.max_points) return BudgetStatus::Exceeded;
  if (spent < budget.min_points) return BudgetStatus::UnderMin;
  if (spent < budget.max_points * Decimal::parse("0.9")) return BudgetStatus::InRange;
  return BudgetStatus::NearMax;
}

inline BudgetStatus budget_status(const BudgetLedger& ledger, const requirements::RequirementSpec& spec) {
  return budget_status(ledger.spent_points(), spec.budget);
}

// ============================================================================
// Performance math
// ============================================================================

inline std::uint64_t gemm_flops(std::int64_t m, std::int64_t n, std::int64_t k) {
  if (m < 1 || n < 1 || k < 1) {
    throw Error(Errc::NonPositiveDim, std::to_string(m) + "x" + std::to_string(n) + "x" + std::to_string(k));
  }
  return 2ULL * static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(k);
}

inline double gflops(std::uint64_t flops, double seconds) { return static_cast<double>(flops) / seconds / 1e9; }

inline double efficiency_pct(double gflops, double peak_gflops) {
  if (!(peak_gflops > 0)) throw Error(Errc::NonPositivePeak, std::to_string(peak_gflops));
  return 100.0 * gflops / peak_gflops;
}

// ============================================================================
// Accuracy verification
// ============================================================================

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

/// C = alpha * A * B + beta * C with explicit leading dimensions, in the
/// loop order of the untuned reference kernel.
inline void gemm_naive(int m, int n, int k, double alpha, std::span<const double> a, int lda,
                       std::span<const double> b, int ldb, double beta, std::span<double> c, int ldc) {
  for (int i = 0; i < m; i++) {
    for (int j = 0; j < n; j++) {
      double sum = 0.0;
      for (int p = 0; p < k; p++) {
        sum += a[static_cast<std::size_t>(i * lda + p)] * b[static_cast<std::size_t>(p * ldb + j)];
      }
      c[static_cast<std::size_t>(i * ldc + j)] = alpha * sum + beta * c[static_cast<std::size_t>(i * ldc + j)];
    }
  }
}

inline double frobenius_norm(const Matrix& m) {
  double sum = 0.0;
  for (double v : m.data) sum += v * v;
  return std::sqrt(sum);
}

/// Frobenius norm of (result - reference).
inline double verify_error_norm(const Matrix& result, const Matrix& reference) {
  if (result.rows != reference.rows || result.cols != reference.cols) {
    throw Error(Errc::ShapeMismatch, std::to_string(result.rows) + "x" + std::to_string(result.cols) + " vs " +
                                         std::to_string(reference.rows) + "x" + std::to_string(reference.cols));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < result.data.size(); ++i) {
    const double d = result.data[i] - reference.data[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

/// norm(result - reference) / norm(reference); the absolute norm when the
/// reference is all zeros.
inline double relative_error(const Matrix& result, const Matrix& reference) {
  const double err = verify_error_norm(result, reference);
  const double ref = frobenius_norm(reference);
  return ref > 0 ? err / ref : err;
}

inline bool accuracy_ok(const Matrix& result, const Matrix& reference, double tolerance) {
  return relative_error(result, reference) <= tolerance;
}

// ============================================================================
// Forbidden-library lint
// ============================================================================

enum class HitKind { Identifier, Header, LinkFlag };

inline std::string_view to_string(HitKind k) {
  switch (k) {
    case HitKind::Identifier: return "identifier";
    case HitKind::Header: return "header";
    case HitKind::LinkFlag: return "link-flag";
  }
  return "?";
}

struct LintViolation {
  std::string library;  // as spelled in the forbidden list
  std::size_t line = 0;  // 1-based
  HitKind kind = HitKind::Identifier;
  std::string excerpt;
  bool operator==(const LintViolation&) const = default;
};

namespace detail {
inline bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}
}  // namespace detail

/// Case-insensitive scan of source or build-script text. A library token
/// counts when it starts an identifier, names a header, or follows `-l`.
/// Text after `//` is ignored. One violation per (line, library).
inline std::vector<LintViolation> lint_forbidden(std::string_view source, const std::vector<std::string>& forbidden) {
  std::vector<LintViolation> out;
  std::istringstream in{std::string(source)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string code = line;
    if (const auto comment = code.find("//"); comment != std::string::npos) code.resize(comment);
    const std::string low = detail::lower(code);
    const bool include_line = low.find("#include") != std::string::npos;
    for (const auto& lib : forbidden) {
      const std::string needle = detail::lower(lib);
      if (needle.empty()) continue;
      for (std::size_t pos = low.find(needle); pos != std::string::npos; pos = low.find(needle, pos + 1)) {
        const bool link = pos >= 2 && low.compare(pos - 2, 2, "-l") == 0;
        const bool word_start = pos == 0 || !detail::ident_char(low[pos - 1]);
        if (!link && !word_start) continue;
        HitKind kind = HitKind::Identifier;
        if (link) kind = HitKind::LinkFlag;
        else if (include_line) kind = HitKind::Header;
        std::string excerpt = line;
        if (excerpt.size() > 120) excerpt.resize(120);
        out.push_back({lib, line_no, kind, excerpt});
        break;
      }
    }
  }
  return out;
}

// ============================================================================
// Metric exchange
// ============================================================================

/// Collects `METRIC name=value` lines; other output is ignored.
inline std::map<std::string, double> parse_metric_lines(std::string_view output) {
  std::map<std::string, double> metrics;
  std::istringstream in{std::string(output)};
  std::string line;
  while (std::getline(in, line)) {
    const auto start = line.find("METRIC ");
    if (start != 0) continue;
    const std::string rest = line.substr(7);
    const auto eq = rest.find('=');
    if (eq == std::string::npos) continue;
    try {
      std::size_t used = 0;
      const std::string value = rest.substr(eq + 1);
      const double v = std::stod(value, &used);
      metrics[rest.substr(0, eq)] = v;
    } catch (const std::exception&) {
      continue;
    }
  }
  return metrics;
}

}  // namespace vibetune::exec
