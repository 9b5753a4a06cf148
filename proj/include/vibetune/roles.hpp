#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vibetune/agents.hpp"
#include "vibetune/backends.hpp"
#include "vibetune/exec.hpp"
#include "vibetune/requirements.hpp"
#include "vibetune/text.hpp"
#include "vibetune/tuning.hpp"

namespace vibetune::roles {

using agents::Action;
using agents::ActionKind;
using agents::Observation;
using agents::TerminateScope;
using requirements::Role;

/// Knobs shared by every scripted role in one run.
struct PolicyConfig {
  double tolerance = 1e-12;
  int stall_window = 5;
  std::int64_t report_period = 50;
  std::int64_t spawn_interval = 20;
  double target_efficiency_pct = 60.0;
  int gpus_per_job = 4;
  std::string strategy = "random";
  std::uint64_t seed = 0;
  tuning::ParameterSpace space;
  /// When set, this PG's candidate number N (0-based) uses a library call.
  std::optional<int> plant_violation_at;
  std::string plant_agent = "PG1.1";
  /// Roles whose compaction drops the remembered prohibition list.
  std::set<Role> lossy_roles;
  /// Login user id that must never reach published artifacts.
  std::string remote_user;
};

inline tuning::ParameterSpace default_space() {
  return {{{"BLOCK_M", {32, 64, 128}},
           {"BLOCK_N", {32, 64, 128}},
           {"BLOCK_K", {8, 16, 32}},
           {"THREAD_M", {2, 4, 8}},
           {"THREAD_N", {2, 4, 8}}}};
}

/// Optimization ideas tried in order before parameter tuning starts.
inline const std::vector<std::string>& technique_ladder() {
  static const std::vector<std::string> ladder = {"Baseline",          "Warp optimization",   "Register blocking",
                                                  "Double buffering",  "Bigger tiling sizes", "Boundary condition"};
  return ladder;
}

/// Techniques that hand the work to an external library, keyed to it.
inline const std::map<std::string, std::string>& library_techniques() {
  static const std::map<std::string, std::string> libs = {{"cuBLAS+Tensor Core", "cuBLAS"}};
  return libs;
}

// ============================================================================
// Message conventions
// ============================================================================

inline std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

inline std::string vtag(const std::string& version) {
  return !version.empty() && version[0] == 'v' ? version : "v" + version;
}

inline std::string prohibition_notice(const std::vector<std::string>& libs) {
  return "Prohibited libraries: " + join(libs, ", ") + ".";
}

inline std::optional<std::vector<std::string>> parse_prohibition_notice(const std::string& body) {
  static const std::string key = "Prohibited libraries: ";
  const auto pos = body.find(key);
  if (pos == std::string::npos) return std::nullopt;
  auto end = body.find('.', pos);
  std::string list = body.substr(pos + key.size(), end == std::string::npos ? std::string::npos : end - pos - key.size());
  std::vector<std::string> out;
  for (auto& item : text::split(list, ',')) {
    const auto b = item.find_first_not_of(' ');
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, item.find_last_not_of(' ') - b + 1));
  }
  return out;
}

inline std::string tolerance_notice(double tol) {
  return "Target accuracy: relative 2-norm error <= " + text::shortest(tol) + " (float64).";
}

inline std::string violation_warning(const std::string& version, const std::string& library) {
  return "Violation: " + vtag(version) + " calls " + library + ", which the requirements forbid.";
}

struct ViolationReport {
  std::string version;
  std::string library;
};

inline std::optional<ViolationReport> parse_violation_warning(const std::string& body) {
  static const std::regex re(R"(Violation: v(\S+) calls (\S+), which the requirements forbid)");
  std::smatch m;
  if (!std::regex_search(body, m, re)) return std::nullopt;
  return ViolationReport{m[1].str(), m[2].str()};
}

inline std::string format_sota(const tuning::ChangeLog& log) {
  const auto s = log.sota();
  if (!s) return "none";
  const auto* c = log.latest(s->version);
  return vtag(s->version) + ", " + text::fixed(s->gflops, 1) + " GFLOPS, " +
         text::fixed(c->metrics->efficiency_pct, 2) + "%";
}

// ============================================================================
// Candidate sources
// ============================================================================

/// CUDA source for one candidate. Library techniques call into the library
/// instead of the hand-written kernel.
inline std::string render_kernel_source(const std::string& version, const std::string& label,
                                        const tuning::Params& params) {
  std::ostringstream os;
  os << "// dgemm candidate " << vtag(version) << ": " << label << "\n";
  for (const auto& [name, value] : params) os << "#define " << name << " " << value << "\n";
  os << "#include <cuda_runtime.h>\n";
  if (library_techniques().contains(label)) {
    os << "#include <cublas_v2.h>\n\n"
          "void dgemm(int m, int n, int k, double alpha, const double* A, const double* B,\n"
          "           double beta, double* C, cublasHandle_t handle) {\n"
          "  cublasSetMathMode(handle, CUBLAS_TF32_TENSOR_OP_MATH);\n"
          "  cublasDgemm(handle, CUBLAS_OP_N, CUBLAS_OP_N, n, m, k, &alpha, B, n, A, k, &beta, C, n);\n"
          "}\n";
    return os.str();
  }
  os << "\n__global__ void dgemm_kernel(int m, int n, int k, double alpha, const double* A, int lda,\n"
        "                             const double* B, int ldb, double beta, double* C, int ldc) {\n"
        "  __shared__ double As[BLOCK_M * BLOCK_K];\n"
        "  __shared__ double Bs[BLOCK_K * BLOCK_N];\n"
        "  const int row0 = blockIdx.y * BLOCK_M + threadIdx.y * THREAD_M;\n"
        "  const int col0 = blockIdx.x * BLOCK_N + threadIdx.x * THREAD_N;\n"
        "  double acc[THREAD_M][THREAD_N] = {};\n"
        "  for (int k0 = 0; k0 < k; k0 += BLOCK_K) {\n"
        "    // cooperative tile load into As / Bs, then THREAD_M x THREAD_N outer products\n"
        "    __syncthreads();\n"
        "  }\n"
        "  for (int i = 0; i < THREAD_M; ++i)\n"
        "    for (int j = 0; j < THREAD_N; ++j)\n"
        "      if (row0 + i < m && col0 + j < n)\n"
        "        C[(row0 + i) * ldc + col0 + j] = alpha * acc[i][j] + beta * C[(row0 + i) * ldc + col0 + j];\n"
        "}\n";
  return os.str();
}

inline std::string render_build_script(const std::string& label) {
  std::string script = "NVCC ?= nvcc\n\ngemm: kernel.cu\n\t$(NVCC) -O3 -arch=sm_70 -o gemm kernel.cu";
  if (library_techniques().contains(label)) script += " -lcublas";
  return script + "\n";
}

// ============================================================================
// Anonymization
// ============================================================================

inline const std::regex& absolute_path_regex() {
  static const std::regex re(R"((^|[\s"'(=:])(/(?:home|Users|work|data|group|gs|vol)\d*/[^\s"'<>)]*))");
  return re;
}

/// Problems that would leak the operator's identity if published.
inline std::vector<std::string> anonymization_findings(const std::string& source, const std::string& user) {
  std::vector<std::string> out;
  if (!user.empty()) {
    const std::regex word("(^|[^A-Za-z0-9_])" + user + "([^A-Za-z0-9_]|$)");
    if (std::regex_search(source, word)) out.push_back("AnonymizationViolation: user id");
  }
  if (std::regex_search(source, absolute_path_regex())) out.push_back("AnonymizationViolation: absolute path");
  return out;
}

/// Replaces the user id with `<user>` and absolute paths with their last
/// component.
inline std::string anonymize(std::string text, const std::string& user) {
  std::string out;
  std::smatch m;
  std::string rest = text;
  while (std::regex_search(rest, m, absolute_path_regex())) {
    out += m.prefix().str() + m[1].str();
    const std::string path = m[2].str();
    const auto slash = path.find_last_of('/', path.size() > 1 ? path.size() - 2 : 0);
    std::string tail = path.substr(slash + 1);
    out += tail.empty() ? "." : tail;
    rest = m.suffix().str();
  }
  out += rest;
  if (!user.empty()) out = text::replace_all(std::move(out), user, "<user>");
  return out;
}

// ============================================================================
// Memory and shared rules
// ============================================================================

/// What one scripted agent remembers between decisions.
struct RoleMemory {
  bool started = false;
  std::vector<std::string> prohibitions;
  std::optional<double> tolerance;
  // PM
  std::int64_t next_spawn_tick = 0;
  std::set<std::string> invalidated;
  /// Reported versions still waiting for their measurement, with the library.
  std::map<std::string, std::string> invalidate_on_result;
  bool near_max_warned = false;
  // SE
  std::int64_t last_report_tick = 0;
  std::optional<std::string> last_sota;
  // PG
  std::optional<std::string> awaiting;
  int generated = 0;
  std::optional<std::string> reduce_from;
  bool library_tried = false;
  // CD
  std::set<std::string> reviewed;
  // CD and solo PG
  std::set<std::string> publish_requested;
};

/// Consecutive terminal results, most recent last, since the running valid
/// best last improved. Replays the ChangeLog in order.
inline int jobs_since_improvement(const tuning::ChangeLog& log) {
  std::set<std::string> resolved;
  std::map<std::string, tuning::Status> status;
  std::map<std::string, double> gflops;
  double best = -1;
  int since = 0;
  for (const auto& e : log.entries()) {
    const auto& c = e.snapshot;
    status[c.version] = c.status;
    if (c.metrics) gflops[c.version] = c.metrics->gflops;
    const bool terminal = c.status != tuning::Status::Pending;
    if (!terminal || resolved.contains(c.version)) continue;
    resolved.insert(c.version);
    if (c.status == tuning::Status::Valid && !c.flagged && c.metrics && c.metrics->gflops > best) {
      best = c.metrics->gflops;
      since = 0;
    } else {
      ++since;
    }
  }
  return since;
}

inline bool stalled(const tuning::ChangeLog& log, double elapsed_minutes, double reference_minutes, int window) {
  return elapsed_minutes >= reference_minutes && jobs_since_improvement(log) >= window;
}

inline bool budget_exhausted(const Observation& obs) {
  return obs.budget == exec::BudgetStatus::Exceeded || obs.spent_points >= obs.spec->budget.max_points;
}

/// Project-level stop conditions shared by the PM and the solo PG.
inline std::optional<std::string> termination_reason(const Observation& obs, const PolicyConfig& cfg) {
  if (obs.stop_requested) return "operator requested stop";
  if (obs.budget == exec::BudgetStatus::Exceeded) return "budget exceeded";
  if (obs.spent_points >= obs.spec->budget.max_points) return "budget exhausted";
  if (obs.elapsed_minutes >= obs.spec->time_limits.max) return "time limit reached";
  if (const auto s = obs.changelog->sota()) {
    const auto* c = obs.changelog->latest(s->version);
    if (c->metrics->efficiency_pct >= cfg.target_efficiency_pct) return "performance target met";
  }
  if (stalled(*obs.changelog, obs.elapsed_minutes, obs.spec->time_limits.reference, cfg.stall_window)) {
    return "no improvement";
  }
  return std::nullopt;
}

// ============================================================================
// PM
// ============================================================================

inline std::vector<Action> pm_step(const Observation& obs, RoleMemory& mem, const PolicyConfig& cfg) {
  std::vector<Action> out;
  const auto& spec = *obs.spec;

  // (1) violation reports from the CD
  std::vector<ViolationReport> reports;
  for (const auto& msg : obs.inbox) {
    if (const auto v = parse_violation_warning(msg.body)) reports.push_back(*v);
  }
  for (const auto& v : reports) {
    if (mem.invalidated.contains(v.version)) continue;
    mem.invalidated.insert(v.version);
    mem.invalidate_on_result[v.version] = v.library;
    out.push_back(Action::send(std::string(bus::kBroadcast),
                               "Stop work on " + vtag(v.version) + ": it is invalid because it uses " + v.library +
                                   ". " + prohibition_notice(spec.forbidden_libraries) +
                                   " Keep every kernel hand-written."));
  }
  // A flagged candidate is retracted once its measurement is in; until then
  // the flag alone keeps it out of the SOTA.
  for (auto it = mem.invalidate_on_result.begin(); it != mem.invalidate_on_result.end();) {
    const auto* c = obs.changelog->latest(it->first);
    if (c == nullptr || c->status == tuning::Status::Pending) {
      ++it;
      continue;
    }
    if (c->status == tuning::Status::Valid) out.push_back(Action::mark_invalid(it->first, it->second + " usage"));
    it = mem.invalidate_on_result.erase(it);
  }
  if (obs.closing) {
    if (out.empty()) out.push_back(Action::noop());
    return out;
  }
  if (!out.empty()) return out;

  // (2) graceful stop
  if (mem.started) {
    if (auto reason = termination_reason(obs, cfg)) {
      out.push_back(Action::terminate(TerminateScope::Project, *reason));
      return out;
    }
  } else if (budget_exhausted(obs) || obs.stop_requested) {
    out.push_back(Action::terminate(TerminateScope::Project, obs.stop_requested ? "operator requested stop"
                                                                                : "budget exhausted"));
    return out;
  }

  // (4) project start: staff the team, then announce accuracy and prohibitions
  if (!mem.started) {
    mem.started = true;
    mem.tolerance = spec.accuracy.tolerance.value_or(cfg.tolerance);
    mem.next_spawn_tick = obs.tick + cfg.spawn_interval;
    for (Role r : {Role::SE, Role::PG, Role::CD}) {
      if (spec.roster_limit(r) > 0) out.push_back(Action::spawn(r));
    }
    std::string notice = tolerance_notice(*mem.tolerance);
    if (!spec.forbidden_libraries.empty()) notice += " " + prohibition_notice(spec.forbidden_libraries);
    out.push_back(Action::send(std::string(bus::kBroadcast), notice));
    return out;
  }

  // (3) grow the PG pool while the budget allows
  int pgs = 0;
  for (const auto& m : obs.team) pgs += m.role == Role::PG ? 1 : 0;
  const bool budget_ok = obs.budget == exec::BudgetStatus::UnderMin || obs.budget == exec::BudgetStatus::InRange;
  if (obs.tick >= mem.next_spawn_tick && pgs < spec.roster_limit(Role::PG) && budget_ok) {
    mem.next_spawn_tick = obs.tick + cfg.spawn_interval;
    out.push_back(Action::spawn(Role::PG));
    return out;
  }
  if (obs.budget == exec::BudgetStatus::NearMax && !mem.near_max_warned) {
    mem.near_max_warned = true;
    out.push_back(Action::send(std::string(bus::kBroadcast),
                               "Budget is near the maximum consumption line. Submit only the most promising candidates."));
    return out;
  }
  out.push_back(Action::noop());
  return out;
}

// ============================================================================
// SE
// ============================================================================

inline std::string se_report_body(const Observation& obs) {
  std::ostringstream os;
  os << "Context Usage Report (tick " << obs.tick << ")\n";
  for (const auto& m : obs.team) {
    os << "- " << m.id << ": " << m.context_tokens << " tokens in context, " << m.cumulative_tokens << " total, "
       << m.compactions << " compactions, " << agents::to_string(m.state) << "\n";
  }
  os << "SOTA: " << format_sota(*obs.changelog) << "\n";
  os << "Budget: " << obs.spent_points.to_string() << " points spent (" << exec::to_string(obs.budget) << ")\n";
  return os.str();
}

inline std::vector<Action> se_step(const Observation& obs, RoleMemory& mem, const PolicyConfig& cfg) {
  std::vector<Action> out;
  if (obs.closing) return {Action::noop()};
  if (!mem.started) {
    mem.started = true;
    mem.last_report_tick = obs.tick;
  }
  const tuning::ChangeLog& log = *obs.changelog;
  const auto sota = log.sota();
  const std::optional<std::string> current = sota ? std::optional(sota->version) : std::nullopt;
  if (current != mem.last_sota) {
    const bool reverted =
        mem.last_sota && log.latest(*mem.last_sota) && log.latest(*mem.last_sota)->status != tuning::Status::Valid;
    if (reverted) {
      out.push_back(Action::send("PM", vtag(*mem.last_sota) + " no longer counts. Best valid result is now " +
                                           format_sota(log) + "."));
    } else if (current) {
      out.push_back(Action::send("PM", "SOTA update: " + format_sota(log) + "."));
    }
    mem.last_sota = current;
  }
  for (const auto& version : obs.new_results) {
    const auto* c = log.latest(version);
    if (c && c->status == tuning::Status::Valid && !c->metrics) {
      out.push_back(Action::send("PM", "Plot data missing for " + vtag(version) + "."));
    }
  }
  if (obs.tick - mem.last_report_tick >= cfg.report_period) {
    mem.last_report_tick = obs.tick;
    out.push_back(Action::report(se_report_body(obs)));
  }
  if (out.empty()) out.push_back(Action::noop());
  return out;
}

// ============================================================================
// PG
// ============================================================================

namespace detail {

inline tuning::Params scale_blocks(tuning::Params p, double factor) {
  for (const char* name : {"BLOCK_M", "BLOCK_N", "BLOCK_K"}) {
    if (p.contains(name)) p[name] = std::max(1, static_cast<int>(p[name] * factor));
  }
  return p;
}

inline bool label_claimed(const tuning::ChangeLog& log, const std::string& label) {
  for (const auto& v : log.versions()) {
    if (log.latest(v)->optimization_label == label) return true;
  }
  return false;
}

inline tuning::ChangeLog history_for_label(const tuning::ChangeLog& log, const std::string& label) {
  tuning::ChangeLog out;
  for (const auto& v : log.versions()) {
    const auto* c = log.latest(v);
    if (c->optimization_label == label) out.register_candidate(v, c->parent, c->params, c->source_ref, label);
  }
  return out;
}

inline Action generate(const std::string& version, std::optional<std::string> parent, tuning::Params params,
                       const std::string& label) {
  Action a;
  a.kind = ActionKind::GenerateCandidate;
  a.version = version;
  a.parent = std::move(parent);
  a.params = std::move(params);
  a.label = label;
  a.source = render_kernel_source(version, label, a.params);
  a.build_script = render_build_script(label);
  return a;
}

}  // namespace detail

struct CandidatePlan {
  std::string version;
  std::optional<std::string> parent;
  tuning::Params params;
  std::string label;
};

/// Next candidate this PG would try, or none when nothing is left.
inline std::optional<CandidatePlan> plan_candidate(const Observation& obs, RoleMemory& mem, const PolicyConfig& cfg) {
  const tuning::ChangeLog& log = *obs.changelog;
  const auto sota = log.sota();
  const tuning::CandidateVersion* best = sota ? log.latest(sota->version) : nullptr;
  const std::optional<std::string> parent = sota ? std::optional(sota->version) : std::nullopt;

  if (mem.reduce_from) {
    const auto* failed = log.latest(*mem.reduce_from);
    const std::string from = *mem.reduce_from;
    mem.reduce_from.reset();
    if (failed) {
      return CandidatePlan{tuning::next_patch_version(log, from), from, detail::scale_blocks(failed->params, 0.5),
                           "Reduced tiling"};
    }
  }

  const bool planted = cfg.plant_violation_at && obs.self_id == cfg.plant_agent && mem.generated == *cfg.plant_violation_at;
  if (best && (planted || !mem.library_tried)) {
    for (const auto& [label, library] : library_techniques()) {
      const bool remembered_forbidden =
          std::find(mem.prohibitions.begin(), mem.prohibitions.end(), library) != mem.prohibitions.end();
      if (planted || !remembered_forbidden) {
        mem.library_tried = true;
        return CandidatePlan{tuning::next_minor_version(log), parent, best->params, label};
      }
    }
  }

  for (const auto& label : technique_ladder()) {
    if (detail::label_claimed(log, label)) continue;
    if (label == "Baseline") {
      return CandidatePlan{tuning::next_minor_version(log), std::nullopt, cfg.space.at(0), label};
    }
    if (!best) return std::nullopt;  // wait for a valid base to build on
    tuning::Params params = best->params;
    if (label == "Bigger tiling sizes") params = detail::scale_blocks(params, 2.0);
    return CandidatePlan{tuning::next_minor_version(log), parent, params, label};
  }

  if (!best) return std::nullopt;
  const tuning::ChangeLog history = detail::history_for_label(log, best->optimization_label);
  const auto strategy = tuning::make_strategy(cfg.strategy);
  try {
    tuning::Params params =
        tuning::next_params(*strategy, cfg.space, history, exec::mix_seed(cfg.seed, obs.self_id));
    return CandidatePlan{tuning::next_patch_version(log, sota->version), parent, params, best->optimization_label};
  } catch (const Error& e) {
    if (e.code() != Errc::ExhaustedSpace) throw;
    return std::nullopt;
  }
}

/// Solo-mode duties the PG takes over from the PM and CD.
inline std::vector<Action> solo_duties(const Observation& obs, RoleMemory& mem, const PolicyConfig& cfg) {
  std::vector<Action> out;
  if (const auto s = obs.changelog->sota();
      s && obs.spec->publish.enabled && !mem.publish_requested.contains(s->version) &&
      std::find(obs.published.begin(), obs.published.end(), s->version) == obs.published.end()) {
    mem.publish_requested.insert(s->version);
    out.push_back(Action::publish(s->version));
  }
  if (obs.closing) return out;
  if (auto reason = termination_reason(obs, cfg)) {
    out.push_back(Action::terminate(TerminateScope::Project, *reason));
  }
  return out;
}

inline std::vector<Action> pg_step(const Observation& obs, RoleMemory& mem, const PolicyConfig& cfg) {
  std::vector<Action> out;
  if (!mem.started) {
    mem.started = true;
    mem.prohibitions = obs.spec->forbidden_libraries;
    mem.tolerance = obs.spec->accuracy.tolerance.value_or(cfg.tolerance);
  }
  for (const auto& msg : obs.inbox) {
    if (auto libs = parse_prohibition_notice(msg.body)) mem.prohibitions = *libs;
  }
  for (const auto& r : obs.my_results) {
    if (mem.awaiting == r.version) mem.awaiting.reset();
    if (r.status == tuning::Status::Failed && r.error.find("ResourceOverflow") != std::string::npos) {
      mem.reduce_from = r.version;
    }
    if (!obs.solo && !obs.closing && r.status == tuning::Status::Valid && r.metrics) {
      out.push_back(Action::send("SE1", vtag(r.version) + " finished: " + text::fixed(r.metrics->gflops, 1) +
                                            " GFLOPS, error " + text::shortest(r.metrics->error_norm) + "."));
    }
  }

  if (obs.solo) {
    auto duties = solo_duties(obs, mem, cfg);
    const bool stopping = std::any_of(duties.begin(), duties.end(),
                                      [](const Action& a) { return a.kind == ActionKind::Terminate; });
    out.insert(out.end(), duties.begin(), duties.end());
    if (stopping) return out;
  }

  if (!obs.closing && !mem.awaiting && obs.my_inflight == 0 && !budget_exhausted(obs)) {
    if (auto plan = plan_candidate(obs, mem, cfg)) {
      out.push_back(detail::generate(plan->version, plan->parent, plan->params, plan->label));
      out.push_back(Action::submit(plan->version, cfg.gpus_per_job));
      mem.awaiting = plan->version;
      ++mem.generated;
    }
  }
  if (out.empty()) out.push_back(Action::noop());
  return out;
}

// ============================================================================
// CD
// ============================================================================

inline std::vector<Action> cd_step(const Observation& obs, RoleMemory& mem, const PolicyConfig& cfg) {
  std::vector<Action> out;
  if (!mem.started) {
    mem.started = true;
    mem.prohibitions = obs.spec->forbidden_libraries;
  }
  for (const auto& msg : obs.inbox) {
    if (auto libs = parse_prohibition_notice(msg.body)) mem.prohibitions = *libs;
  }
  const tuning::ChangeLog& log = *obs.changelog;
  std::set<std::string> dirty;
  for (const auto& version : log.versions()) {
    if (mem.reviewed.contains(version)) continue;
    mem.reviewed.insert(version);
    const std::string source = obs.read_source ? obs.read_source(version) : std::string();
    std::vector<std::string> findings;
    std::set<std::string> libs;
    for (const auto& hit : exec::lint_forbidden(source, mem.prohibitions)) {
      if (libs.insert(hit.library).second) findings.push_back("RequirementViolation: " + hit.library);
    }
    for (auto& f : anonymization_findings(source, cfg.remote_user)) findings.push_back(std::move(f));
    if (!findings.empty()) {
      dirty.insert(version);
      out.push_back(Action::review(version, findings));
    }
  }

  if (const auto s = log.sota(); s && obs.spec->publish.enabled && !dirty.contains(s->version) &&
                                 !mem.publish_requested.contains(s->version)) {
    const std::string source = obs.read_source ? obs.read_source(s->version) : std::string();
    if (exec::lint_forbidden(source, mem.prohibitions).empty()) {
      mem.publish_requested.insert(s->version);
      out.push_back(Action::publish(s->version));
    }
  }
  if (out.empty()) out.push_back(Action::noop());
  return out;
}

// ============================================================================
// Scripted brain
// ============================================================================

/// Token charge per decision: a fixed base, a per-message read cost, and a
/// per-action cost.
struct TokenCosts {
  std::int64_t base = 400;
  std::int64_t per_message = 150;
  std::int64_t per_result = 200;

  std::int64_t action(ActionKind k) const {
    switch (k) {
      case ActionKind::GenerateCandidate: return 8000;
      case ActionKind::SendMessage: return 300;
      case ActionKind::ReviewCandidate: return 2000;
      case ActionKind::SubmitJob: return 500;
      case ActionKind::EmitReport: return 1500;
      case ActionKind::SpawnAgent: return 1000;
      case ActionKind::MarkInvalid: return 500;
      case ActionKind::Publish: return 800;
      case ActionKind::Terminate: return 200;
      case ActionKind::NoOp: return 100;
    }
    return 0;
  }
};

inline std::vector<Action> role_step(Role role, const Observation& obs, RoleMemory& mem, const PolicyConfig& cfg) {
  switch (role) {
    case Role::PM: return pm_step(obs, mem, cfg);
    case Role::SE: return se_step(obs, mem, cfg);
    case Role::PG: return pg_step(obs, mem, cfg);
    case Role::CD: return cd_step(obs, mem, cfg);
  }
  return {Action::noop()};
}

class ScriptedBrain final : public agents::Brain {
 public:
  ScriptedBrain(Role role, PolicyConfig cfg, TokenCosts costs = {})
      : role_(role), cfg_(std::move(cfg)), costs_(costs) {}

  std::string kind() const override { return "scripted"; }

  agents::Decision decide(const Observation& obs) override {
    agents::Decision d;
    d.actions = role_step(role_, obs, mem_, cfg_);
    d.tokens_charged = costs_.base + costs_.per_message * static_cast<std::int64_t>(obs.inbox.size()) +
                       costs_.per_result * static_cast<std::int64_t>(obs.my_results.size());
    for (const auto& a : d.actions) d.tokens_charged += costs_.action(a.kind);
    return d;
  }

  agents::CompactionSummary compact(const agents::AgentDescriptor& self, std::int64_t tick) override {
    const bool lossy = cfg_.lossy_roles.contains(role_);
    std::ostringstream os;
    os << "Summary for " << self.id << " at tick " << tick << ": " << mem_.generated << " candidates generated";
    if (mem_.awaiting) os << ", awaiting " << vtag(*mem_.awaiting);
    if (mem_.tolerance) os << ", tolerance " << text::shortest(*mem_.tolerance);
    if (lossy) {
      mem_.prohibitions.clear();
      mem_.library_tried = false;
    } else if (!mem_.prohibitions.empty()) {
      os << ". " << prohibition_notice(mem_.prohibitions);
    }
    const std::string summary = os.str();
    return {summary, 15000 + static_cast<std::int64_t>(summary.size() / 4)};
  }

  const RoleMemory& memory() const { return mem_; }
  Role role() const { return role_; }

 private:
  Role role_;
  PolicyConfig cfg_;
  TokenCosts costs_;
  RoleMemory mem_;
};

// ============================================================================
// Prompt templates for remote brains
// ============================================================================

inline std::string default_prompt_template(Role role) {
  std::string duty;
  switch (role) {
    case Role::PM:
      duty = "You are the project manager. Define requirements, allocate resources, manage the budget, spawn "
             "programmers, invalidate candidates reported as violating the requirements and stop the project "
             "when the budget or time limit is reached.";
      break;
    case Role::SE:
      duty = "You are the system engineer. Monitor the agents, track the best valid result and write periodic "
             "reports on context usage, performance and budget.";
      break;
    case Role::PG:
      duty = "You are a programmer. Propose the next kernel variant, generate its source and submit it as a batch "
             "job. Never run computations on the login node.";
      break;
    case Role::CD:
      duty = "You are the code deployer. Review every new candidate for prohibited libraries and leaked user "
             "information, report violations to the PM and publish clean best candidates.";
      break;
  }
  return duty +
         "\n\n## Requirements\n{requirements}\n\n## Prohibitions\n{prohibitions}\n\n## Recent messages\n"
         "{recent_messages}\n\n## Candidate history\n{changelog_digest}\n\n## Budget\n{budget_status}\n\n"
         "## Best valid candidate\n{sota_status}\n\n"
         "Reply with a JSON array of actions. Each action is an object with a \"kind\" field, one of SendMessage, "
         "GenerateCandidate, SubmitJob, ReviewCandidate, SpawnAgent, MarkInvalid, EmitReport, Publish, Terminate, "
         "NoOp, plus the fields that kind needs (to, body, version, parent, params, label, source, build_script, "
         "gpus, role, findings, scope).\n";
}

inline std::string changelog_digest(const tuning::ChangeLog& log, std::size_t last_n = 10) {
  std::ostringstream os;
  const auto& versions = log.versions();
  const std::size_t start = versions.size() > last_n ? versions.size() - last_n : 0;
  for (std::size_t i = start; i < versions.size(); ++i) {
    const auto& c = *log.latest(versions[i]);
    os << "- " << vtag(c.version) << " [" << c.optimization_label << "] " << tuning::to_string(c.status);
    if (c.metrics) os << " " << text::fixed(c.metrics->gflops, 1) << " GFLOPS";
    if (c.flagged) os << " (flagged)";
    os << "\n";
  }
  if (versions.empty()) os << "(none)\n";
  return os.str();
}

/// Fills every slot. The prohibition list is restated verbatim each turn.
inline std::string render_prompt(const std::string& templ, const Observation& obs) {
  std::ostringstream messages;
  for (const auto& m : obs.inbox) messages << "- from " << m.sender << ": " << m.body << "\n";
  if (obs.inbox.empty()) messages << "(none)\n";
  const std::string prohibitions =
      obs.spec->forbidden_libraries.empty() ? "(none)" : prohibition_notice(obs.spec->forbidden_libraries);
  const std::map<std::string, std::string> vars = {
      {"requirements", requirements::serialize_spec(*obs.spec)},
      {"prohibitions", prohibitions},
      {"recent_messages", messages.str()},
      {"changelog_digest", changelog_digest(*obs.changelog)},
      {"budget_status", obs.spent_points.to_string() + " points spent (" + std::string(exec::to_string(obs.budget)) +
                            ")"},
      {"sota_status", format_sota(*obs.changelog)},
  };
  return exec::expand(templ, vars);
}

}  // namespace vibetune::roles
