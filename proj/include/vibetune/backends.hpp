#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <sys/wait.h>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "vibetune/decimal.hpp"
#include "vibetune/error.hpp"
#include "vibetune/exec.hpp"
#include "vibetune/text.hpp"
#include "vibetune/tuning.hpp"

namespace vibetune::exec {

/// What a backend needs to build and run one candidate.
struct JobRequest {
  std::string version;
  tuning::Params params;
  std::string label;
  std::string source;
  std::string source_name = "kernel.cu";
  std::string build_script;  // Makefile text, optional
  std::string run_script;    // batch script text, remote backends
  int gpus = 1;
  std::string resource_group = "default";
  Decimal point_rate = requirements::kDefaultPointRate;
};

struct Capabilities {
  int max_gpus = 4;
  bool supports_remote = false;
};

struct PollResult {
  JobState state = JobState::Pending;
  std::optional<JobRecord> record;  // set once state is Done or Error
};

/// Execution target. submit() never blocks on the job itself; completion is
/// observed through poll(), which the orchestrator calls once per tick.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string tag() const = 0;
  virtual Capabilities capabilities() const = 0;
  virtual std::uint64_t submit(const JobRequest& request, std::int64_t tick) = 0;
  virtual PollResult poll(std::uint64_t handle, std::int64_t tick) = 0;
};

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::out | std::ios::trunc | std::ios::binary);
  out << content;
  if (!out) throw Error(Errc::StorageFailure, "cannot write " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ============================================================================
// Simulated backend
// ============================================================================

struct Technique {
  double base_gflops = 0;
  /// Shared-memory copies of the A/B tiles (2 with double buffering, 0 for
  /// library calls that bring their own kernels).
  int smem_buffers = 1;
  bool boundary_bug = false;
};

/// Deterministic performance model standing in for the GPU cluster.
///
///   gflops = base_gflops(label) * prod_p 1 / (1 + sensitivity * |log2(p / optimum_p)|)
///
/// Tile footprints above the shared-memory limit fail the job. A technique
/// marked with boundary_bug computes wrong results on partial tiles.
struct SimScenario {
  double peak_gflops = 7800.0;
  std::map<std::string, Technique> techniques = {
      {"Baseline", {1803.7, 1, false}},
      {"Warp optimization", {1888.5, 1, false}},
      {"Register blocking", {2185.2, 1, false}},
      {"Double buffering", {3365.2, 2, false}},
      {"Bigger tiling sizes", {3500.0, 2, false}},
      {"Reduced tiling", {3365.2, 2, false}},
      {"Boundary condition", {3380.0, 2, false}},
      {"cuBLAS+Tensor Core", {5868.9, 0, false}},
  };
  tuning::Params optimum = {{"BLOCK_M", 64}, {"BLOCK_N", 64}, {"BLOCK_K", 16}, {"THREAD_M", 4}, {"THREAD_N", 4}};
  double sensitivity = 0.15;
  std::int64_t smem_limit_bytes = 48 * 1024;
  std::int64_t problem_m = 8192;
  std::int64_t problem_n = 8192;
  std::int64_t problem_k = 8192;
  int repetitions = 10;
  double overhead_min_s = 20.0;
  double overhead_max_s = 40.0;
  int max_queue_ticks = 1;
  double tick_seconds = 60.0;
};

inline double tile_match(const SimScenario& scenario, const tuning::Params& params) {
  double factor = 1.0;
  for (const auto& [name, best] : scenario.optimum) {
    const auto it = params.find(name);
    if (it == params.end() || it->second <= 0) throw Error(Errc::UnknownParams, "missing or non-positive " + name);
    factor *= 1.0 / (1.0 + scenario.sensitivity * std::fabs(std::log2(static_cast<double>(it->second) / best)));
  }
  return factor;
}

/// Closed-form throughput of a candidate under the scenario.
inline double model_gflops(const SimScenario& scenario, const std::string& label, const tuning::Params& params) {
  const auto t = scenario.techniques.find(label);
  if (t == scenario.techniques.end()) throw Error(Errc::UnknownParams, "unknown technique '" + label + "'");
  return t->second.base_gflops * tile_match(scenario, params);
}

inline std::int64_t smem_footprint_bytes(const SimScenario& scenario, const std::string& label,
                                         const tuning::Params& params) {
  const auto& t = scenario.techniques.at(label);
  auto get = [&](const char* name) {
    const auto it = params.find(name);
    return it == params.end() ? 0 : static_cast<std::int64_t>(it->second);
  };
  const std::int64_t bm = get("BLOCK_M"), bn = get("BLOCK_N"), bk = get("BLOCK_K");
  return (bm * bk + bk * bn) * static_cast<std::int64_t>(sizeof(double)) * t.smem_buffers;
}

/// Blocked GEMM over small matrices, mirroring what a tiled kernel does.
/// With `boundary_bug`, partial tiles at the matrix edge are skipped.
inline exec::Matrix tiled_gemm(const exec::Matrix& a, const exec::Matrix& b, const exec::Matrix& c, double alpha,
                               double beta, int block_m, int block_n, int block_k, bool boundary_bug) {
  const auto m = static_cast<int>(a.rows), n = static_cast<int>(b.cols), k = static_cast<int>(a.cols);
  exec::Matrix acc(a.rows, b.cols, 0.0);
  for (int i0 = 0; i0 < m; i0 += block_m) {
    for (int j0 = 0; j0 < n; j0 += block_n) {
      for (int k0 = 0; k0 < k; k0 += block_k) {
        const bool partial = i0 + block_m > m || j0 + block_n > n || k0 + block_k > k;
        if (boundary_bug && partial && (i0 > 0 || j0 > 0 || k0 > 0)) continue;
        for (int i = i0; i < std::min(i0 + block_m, m); ++i) {
          for (int j = j0; j < std::min(j0 + block_n, n); ++j) {
            double sum = 0.0;
            for (int p = k0; p < std::min(k0 + block_k, k); ++p) sum += a(i, p) * b(p, j);
            acc(i, j) += sum;
          }
        }
      }
    }
  }
  exec::Matrix out = c;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = alpha * acc.data[i] + beta * c.data[i];
  return out;
}

/// Random verification problem of the given shape, drawn from `seed`.
struct VerificationProblem {
  exec::Matrix a, b, c;
  double alpha = 1.0;
  double beta = 1.0;
};

inline VerificationProblem make_problem(int m, int n, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  VerificationProblem p{exec::Matrix(m, k), exec::Matrix(k, n), exec::Matrix(m, n), 1.0, 0.5};
  for (double& v : p.a.data) v = dist(rng);
  for (double& v : p.b.data) v = dist(rng);
  for (double& v : p.c.data) v = dist(rng);
  return p;
}

inline exec::Matrix reference_result(const VerificationProblem& p) {
  exec::Matrix out = p.c;
  exec::gemm_naive(static_cast<int>(p.a.rows), static_cast<int>(p.b.cols), static_cast<int>(p.a.cols), p.alpha,
                   p.a.data, static_cast<int>(p.a.cols), p.b.data, static_cast<int>(p.b.cols), p.beta, out.data,
                   static_cast<int>(out.cols));
  return out;
}

struct SimOutcome {
  JobRecord record;
  int duration_ticks = 2;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view salt) {
  std::uint64_t h = seed ^ 0xcbf29ce484222325ULL;
  for (char c : salt) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Runs one candidate through the performance model. Throws UnknownParams for
/// requests the model cannot evaluate and ResourceOverflow when the tiles do
/// not fit in shared memory.
inline SimOutcome simulate_job(const SimScenario& scenario, const JobRequest& request, std::uint64_t seed) {
  const auto technique = scenario.techniques.find(request.label);
  if (technique == scenario.techniques.end()) {
    throw Error(Errc::UnknownParams, "unknown technique '" + request.label + "'");
  }
  const double gf = model_gflops(scenario, request.label, request.params);
  const std::int64_t footprint = smem_footprint_bytes(scenario, request.label, request.params);
  if (footprint > scenario.smem_limit_bytes) {
    throw Error(Errc::ResourceOverflow, "resource overflow: " + std::to_string(footprint) + " bytes of shared memory");
  }

  std::mt19937_64 rng(mix_seed(seed, request.version));
  std::uniform_real_distribution<double> overhead(scenario.overhead_min_s, scenario.overhead_max_s);
  std::uniform_int_distribution<int> queue(0, scenario.max_queue_ticks);
  const double overhead_s = overhead(rng);
  const int queue_ticks = queue(rng);

  const std::uint64_t flops = gemm_flops(scenario.problem_m, scenario.problem_n, scenario.problem_k);
  const double kernel_s = static_cast<double>(flops) / (gf * 1e9);

  // Accuracy check on a small odd-shaped problem so partial tiles exist.
  const auto problem = make_problem(7, 5, 3, mix_seed(seed, request.version + "/verify"));
  const auto get = [&](const char* name, int fallback) {
    const auto it = request.params.find(name);
    return it == request.params.end() ? fallback : std::max(1, it->second / 16);
  };
  const exec::Matrix got = tiled_gemm(problem.a, problem.b, problem.c, problem.alpha, problem.beta,
                                      get("BLOCK_M", 4), get("BLOCK_N", 4), get("BLOCK_K", 2),
                                      technique->second.boundary_bug);
  const double rel_err = exec::relative_error(got, reference_result(problem));

  SimOutcome out;
  JobRecord& r = out.record;
  r.version = request.version;
  r.backend = "simulated";
  r.resource_group = request.resource_group;
  r.gpus = request.gpus;
  r.elapsed_s = Decimal::from_double(kernel_s * scenario.repetitions + overhead_s, 3);
  r.points = compute_points(r.elapsed_s, request.gpus, request.point_rate);
  r.state = JobState::Done;
  r.outputs.metrics = {{"gflops", gf},
                       {"kernel_time_s", kernel_s},
                       {"error_norm", rel_err},
                       {"efficiency_pct", efficiency_pct(gf, scenario.peak_gflops)},
                       {"elapsed_s", r.elapsed_s.to_double()}};
  std::ostringstream so;
  for (const auto& [name, value] : r.outputs.metrics) so << "METRIC " << name << "=" << text::shortest(value) << "\n";
  r.outputs.stdout_ref = so.str();
  out.duration_ticks =
      1 + queue_ticks + static_cast<int>(std::ceil(r.elapsed_s.to_double() / scenario.tick_seconds));
  out.duration_ticks = std::max(out.duration_ticks, 2);
  return out;
}

/// Synchronous form: the completed JobRecord for one simulated submission.
inline JobRecord submit_simulated(const SimScenario& scenario, const JobRequest& request, std::uint64_t seed) {
  return simulate_job(scenario, request, seed).record;
}

class SimulatedBackend final : public Backend {
 public:
  SimulatedBackend(SimScenario scenario, std::uint64_t seed) : scenario_(std::move(scenario)), seed_(seed) {}

  std::string tag() const override { return "simulated"; }
  Capabilities capabilities() const override { return {4, false}; }

  std::uint64_t submit(const JobRequest& request, std::int64_t tick) override {
    const std::uint64_t handle = jobs_.size() + 1;
    Pending p;
    try {
      SimOutcome o = simulate_job(scenario_, request, seed_);
      p.record = std::move(o.record);
      p.done_at = tick + o.duration_ticks;
    } catch (const Error& e) {
      p.record.version = request.version;
      p.record.backend = tag();
      p.record.resource_group = request.resource_group;
      p.record.gpus = request.gpus;
      p.record.state = JobState::Error;
      p.record.error = e.what();
      p.done_at = tick + 1;
    }
    p.record.id = handle;
    p.record.submitted = tick;
    p.record.started = tick;
    p.record.ended = p.done_at;
    jobs_.push_back(std::move(p));
    return handle;
  }

  PollResult poll(std::uint64_t handle, std::int64_t tick) override {
    if (handle == 0 || handle > jobs_.size()) throw Error(Errc::UnknownParams, "unknown job handle");
    const Pending& p = jobs_[handle - 1];
    if (tick < p.done_at) return {tick == p.record.submitted ? JobState::Pending : JobState::Running, std::nullopt};
    return {p.record.state, p.record};
  }

  const SimScenario& scenario() const { return scenario_; }

 private:
  struct Pending {
    JobRecord record;
    std::int64_t done_at = 0;
  };
  SimScenario scenario_;
  std::uint64_t seed_;
  std::vector<Pending> jobs_;
};

// ============================================================================
// Shell helpers
// ============================================================================

struct CommandResult {
  int exit_code = 0;
  std::string output;  // stdout and stderr combined
};

using CommandRunner = std::function<CommandResult(const std::string&)>;

inline CommandResult run_shell(const std::string& command) {
  CommandResult result;
  const std::string wrapped = "( " + command + " ) 2>&1";
  FILE* pipe = popen(wrapped.c_str(), "r");
  if (pipe == nullptr) return {127, "popen failed"};
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) result.output.append(buf.data(), n);
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128;
  return result;
}

inline std::string expand(std::string templ, const std::map<std::string, std::string>& vars) {
  for (const auto& [key, value] : vars) templ = text::replace_all(std::move(templ), "{" + key + "}", value);
  return templ;
}

/// Creates `jobs/<id>/{src,build,out}` under `root` and writes the sources.
inline std::filesystem::path prepare_sandbox(const std::filesystem::path& root, std::uint64_t job_id,
                                             const JobRequest& request) {
  const auto dir = root / "jobs" / std::to_string(job_id);
  for (const char* sub : {"src", "build", "out"}) std::filesystem::create_directories(dir / sub);
  write_file(dir / "src" / request.source_name, request.source);
  if (!request.build_script.empty()) write_file(dir / "src" / "Makefile", request.build_script);
  if (!request.run_script.empty()) write_file(dir / "src" / "job.sh", request.run_script);
  return dir;
}

// ============================================================================
// Local backend
// ============================================================================

/// Builds and runs one candidate on this host. Command templates may use
/// {src}, {build}, {out} and {source}. Elapsed time is the wall time of the
/// run step only.
inline JobRecord submit_local(const JobRequest& request, const std::string& build_cmd, const std::string& run_cmd,
                              const std::filesystem::path& sandbox_root, std::uint64_t job_id = 1,
                              const CommandRunner& runner = run_shell) {
  const auto dir = prepare_sandbox(sandbox_root, job_id, request);
  const std::map<std::string, std::string> vars = {{"src", (dir / "src").string()},
                                                   {"build", (dir / "build").string()},
                                                   {"out", (dir / "out").string()},
                                                   {"source", (dir / "src" / request.source_name).string()}};
  const CommandResult build = runner(expand(build_cmd, vars));
  write_file(dir / "out" / "build.log", build.output);
  if (build.exit_code != 0) throw Error(Errc::BuildFailed, build.output);

  const auto start = std::chrono::steady_clock::now();
  const CommandResult run = runner(expand(run_cmd, vars));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file(dir / "out" / "stdout.txt", run.output);
  if (run.exit_code != 0) throw Error(Errc::RunFailed, run.output);

  JobRecord r;
  r.id = job_id;
  r.version = request.version;
  r.backend = "local";
  r.resource_group = request.resource_group;
  r.gpus = request.gpus;
  r.outputs.metrics = parse_metric_lines(run.output);
  r.outputs.stdout_ref = (dir / "out" / "stdout.txt").string();
  r.outputs.stderr_ref = (dir / "out" / "build.log").string();
  if (r.outputs.metrics.empty()) throw Error(Errc::MetricParseError, "no METRIC lines in output");
  r.elapsed_s = Decimal::from_double(seconds, 3);
  r.points = compute_points(r.elapsed_s, r.gpus, request.point_rate);
  r.state = JobState::Done;
  return r;
}

namespace detail {
inline JobRecord error_record(const JobRequest& request, std::uint64_t id, const std::string& backend,
                              const std::string& message) {
  JobRecord r;
  r.id = id;
  r.version = request.version;
  r.backend = backend;
  r.resource_group = request.resource_group;
  r.gpus = request.gpus;
  r.state = JobState::Error;
  r.error = message;
  return r;
}
}  // namespace detail

/// Runs submit_local on a worker thread per job.
class LocalBackend final : public Backend {
 public:
  LocalBackend(std::filesystem::path sandbox_root, std::string build_cmd, std::string run_cmd)
      : root_(std::move(sandbox_root)), build_cmd_(std::move(build_cmd)), run_cmd_(std::move(run_cmd)) {}

  std::string tag() const override { return "local"; }
  Capabilities capabilities() const override { return {1, false}; }

  std::uint64_t submit(const JobRequest& request, std::int64_t tick) override {
    const std::uint64_t handle = jobs_.size() + 1;
    auto future = std::async(std::launch::async, [this, request, handle] {
      try {
        return submit_local(request, build_cmd_, run_cmd_, root_, handle);
      } catch (const Error& e) {
        return detail::error_record(request, handle, "local", e.what());
      }
    });
    jobs_.push_back({std::move(future), tick, std::nullopt});
    return handle;
  }

  PollResult poll(std::uint64_t handle, std::int64_t tick) override {
    if (handle == 0 || handle > jobs_.size()) throw Error(Errc::UnknownParams, "unknown job handle");
    auto& job = jobs_[handle - 1];
    if (!job.result) {
      if (job.future.wait_for(std::chrono::seconds(0)) != std::future_status::ready) return {JobState::Running, {}};
      job.result = job.future.get();
      job.result->submitted = job.submitted;
      job.result->started = job.submitted;
      job.result->ended = tick;
    }
    return {job.result->state, job.result};
  }

 private:
  struct Job {
    std::future<JobRecord> future;
    std::int64_t submitted = 0;
    std::optional<JobRecord> result;
  };
  std::filesystem::path root_;
  std::string build_cmd_;
  std::string run_cmd_;
  std::vector<Job> jobs_;
};

// ============================================================================
// Remote batch backend
// ============================================================================

/// Connection and scheduler command templates. Placeholders: {host}, {user},
/// {workdir}, {job}, {local}, {script}, {jobid}. Only the build step runs on
/// the login node; execution always goes through the scheduler.
struct RemoteProfile {
  std::string host;
  std::string user_alias;
  std::string workdir;
  std::string transfer_cmd = "scp -r {local}/src {user}@{host}:{workdir}/{job}";
  std::string build_cmd = "ssh {user}@{host} 'cd {workdir}/{job} && make'";
  std::string submit_cmd = "ssh {user}@{host} 'cd {workdir}/{job} && pjsub {script}'";
  std::string submit_id_regex = R"(Job (\d+) submitted)";
  std::string poll_cmd = "ssh {user}@{host} 'pjstat -H {jobid}'";
  std::string done_regex = R"(\b(END|EXT)\b)";
  std::string error_regex = R"(\b(ERR|CCL|RJT)\b)";
  std::string elapsed_regex = R"(elapsed=(\d+(?:\.\d+)?))";
  std::string fetch_cmd = "scp '{user}@{host}:{workdir}/{job}/out/*' {local}/out/";
  std::string script = "job.sh";
  int poll_interval_ms = 1000;
  int poll_limit = 600;
};

inline nlohmann::json to_json(const RemoteProfile& p) {
  return {{"host", p.host},
          {"user_alias", p.user_alias},
          {"workdir", p.workdir},
          {"transfer_cmd", p.transfer_cmd},
          {"build_cmd", p.build_cmd},
          {"submit_cmd", p.submit_cmd},
          {"submit_id_regex", p.submit_id_regex},
          {"poll_cmd", p.poll_cmd},
          {"done_regex", p.done_regex},
          {"error_regex", p.error_regex},
          {"elapsed_regex", p.elapsed_regex},
          {"fetch_cmd", p.fetch_cmd},
          {"script", p.script},
          {"poll_interval_ms", p.poll_interval_ms},
          {"poll_limit", p.poll_limit}};
}

inline RemoteProfile remote_profile_from_json(const nlohmann::json& j) {
  RemoteProfile p;
  p.host = j.value("host", p.host);
  p.user_alias = j.value("user_alias", p.user_alias);
  p.workdir = j.value("workdir", p.workdir);
  p.transfer_cmd = j.value("transfer_cmd", p.transfer_cmd);
  p.build_cmd = j.value("build_cmd", p.build_cmd);
  p.submit_cmd = j.value("submit_cmd", p.submit_cmd);
  p.submit_id_regex = j.value("submit_id_regex", p.submit_id_regex);
  p.poll_cmd = j.value("poll_cmd", p.poll_cmd);
  p.done_regex = j.value("done_regex", p.done_regex);
  p.error_regex = j.value("error_regex", p.error_regex);
  p.elapsed_regex = j.value("elapsed_regex", p.elapsed_regex);
  p.fetch_cmd = j.value("fetch_cmd", p.fetch_cmd);
  p.script = j.value("script", p.script);
  p.poll_interval_ms = j.value("poll_interval_ms", p.poll_interval_ms);
  p.poll_limit = j.value("poll_limit", p.poll_limit);
  return p;
}

/// transfer -> build on login node -> submit -> poll -> fetch -> parse.
/// Points come from the scheduler-reported elapsed time.
inline JobRecord submit_remote(const JobRequest& request, const RemoteProfile& profile,
                               const std::filesystem::path& sandbox_root, std::uint64_t job_id = 1,
                               const CommandRunner& runner = run_shell) {
  const auto dir = prepare_sandbox(sandbox_root, job_id, request);
  std::map<std::string, std::string> vars = {{"host", profile.host},     {"user", profile.user_alias},
                                             {"workdir", profile.workdir}, {"job", "job" + std::to_string(job_id)},
                                             {"local", dir.string()},     {"script", profile.script}};

  if (auto r = runner(expand(profile.transfer_cmd, vars)); r.exit_code != 0) {
    throw Error(Errc::TransferFailed, r.output);
  }
  if (auto r = runner(expand(profile.build_cmd, vars)); r.exit_code != 0) throw Error(Errc::BuildFailed, r.output);

  const CommandResult submitted = runner(expand(profile.submit_cmd, vars));
  std::smatch m;
  if (submitted.exit_code != 0 || !std::regex_search(submitted.output, m, std::regex(profile.submit_id_regex))) {
    throw Error(Errc::SubmitRejected, submitted.output);
  }
  vars["jobid"] = m[1].str();

  const std::regex done(profile.done_regex);
  const std::regex failed(profile.error_regex);
  std::string status_text;
  bool finished = false;
  for (int i = 0; i < profile.poll_limit; ++i) {
    const CommandResult polled = runner(expand(profile.poll_cmd, vars));
    status_text = polled.output;
    if (std::regex_search(status_text, failed)) throw Error(Errc::RunFailed, status_text);
    if (std::regex_search(status_text, done)) {
      finished = true;
      break;
    }
    if (profile.poll_interval_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(profile.poll_interval_ms));
  }
  if (!finished) throw Error(Errc::PollTimeout, "job " + vars["jobid"] + " still running after " +
                                                    std::to_string(profile.poll_limit) + " polls");

  if (auto r = runner(expand(profile.fetch_cmd, vars)); r.exit_code != 0) throw Error(Errc::FetchFailed, r.output);

  std::string output;
  for (const auto& entry : std::filesystem::directory_iterator(dir / "out")) {
    if (entry.is_regular_file()) output += read_file(entry.path()) + "\n";
  }
  JobRecord r;
  r.id = job_id;
  r.version = request.version;
  r.backend = "remote";
  r.resource_group = request.resource_group;
  r.gpus = request.gpus;
  r.outputs.metrics = parse_metric_lines(output);
  r.outputs.stdout_ref = (dir / "out").string();
  if (r.outputs.metrics.empty()) throw Error(Errc::MetricParseError, "no METRIC lines in fetched output");
  std::smatch em;
  if (!std::regex_search(status_text, em, std::regex(profile.elapsed_regex))) {
    throw Error(Errc::MetricParseError, "scheduler reported no elapsed time");
  }
  r.elapsed_s = Decimal::parse(em[1].str());
  r.points = compute_points(r.elapsed_s, r.gpus, request.point_rate);
  r.state = JobState::Done;
  return r;
}

/// Runs submit_remote on a worker thread per job. Failed or timed-out jobs
/// come back as Error records with zero points.
class RemoteBackend final : public Backend {
 public:
  RemoteBackend(std::filesystem::path sandbox_root, RemoteProfile profile, CommandRunner runner = run_shell)
      : root_(std::move(sandbox_root)), profile_(std::move(profile)), runner_(std::move(runner)) {}

  std::string tag() const override { return "remote"; }
  Capabilities capabilities() const override { return {4, true}; }

  std::uint64_t submit(const JobRequest& request, std::int64_t tick) override {
    const std::uint64_t handle = jobs_.size() + 1;
    auto future = std::async(std::launch::async, [this, request, handle] {
      try {
        return submit_remote(request, profile_, root_, handle, runner_);
      } catch (const Error& e) {
        return detail::error_record(request, handle, "remote", e.what());
      }
    });
    jobs_.push_back({std::move(future), tick, std::nullopt});
    return handle;
  }

  PollResult poll(std::uint64_t handle, std::int64_t tick) override {
    if (handle == 0 || handle > jobs_.size()) throw Error(Errc::UnknownParams, "unknown job handle");
    auto& job = jobs_[handle - 1];
    if (!job.result) {
      if (job.future.wait_for(std::chrono::seconds(0)) != std::future_status::ready) return {JobState::Running, {}};
      job.result = job.future.get();
      job.result->submitted = job.submitted;
      job.result->started = job.submitted;
      job.result->ended = tick;
    }
    return {job.result->state, job.result};
  }

 private:
  struct Job {
    std::future<JobRecord> future;
    std::int64_t submitted = 0;
    std::optional<JobRecord> result;
  };
  std::filesystem::path root_;
  RemoteProfile profile_;
  CommandRunner runner_;
  std::vector<Job> jobs_;
};

}  // namespace vibetune::exec
