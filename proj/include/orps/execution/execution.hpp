#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "orps/errors.hpp"
#include "orps/execution/protocol.hpp"
#include "orps/execution/subprocess.hpp"
#include "orps/util/json_io.hpp"
#include "orps/util/parallel.hpp"
#include "orps/util/text.hpp"

namespace orps {

using protocol::ResourceLimits;
using protocol::StaticMetrics;
using protocol::TestOutcome;
using protocol::TestStatus;

struct PerfProfile {
  bool counters_available = false;
  std::optional<std::uint64_t> time_enabled_ns;
  std::optional<std::uint64_t> instructions;
  std::optional<std::uint64_t> branch_misses;
  std::uint64_t page_faults = 0;
  std::uint64_t wall_ns = 0;

  // The quantity Time is computed from.
  std::uint64_t time_basis_ns() const {
    return counters_available ? time_enabled_ns.value_or(0) : wall_ns;
  }

  friend bool operator==(const PerfProfile&, const PerfProfile&) = default;
};

struct ExecutionReport {
  bool valid = false;
  int tests_total = 0;
  int tests_passed = 0;
  int tests_truncated = 0;
  bool limits_enforced = true;
  std::string diagnostic;
  std::vector<TestOutcome> per_test;
  std::optional<StaticMetrics> static_metrics;
  std::optional<PerfProfile> profile;
  std::string feedback_text;

  double pass_fraction() const {
    return tests_total == 0 ? 0.0 : static_cast<double>(tests_passed) / tests_total;
  }
  bool all_passed() const { return valid && tests_total > 0 && tests_passed == tests_total; }
};

// relative_time = 100 x candidate / reference. 100 is parity, lower is faster.
inline double relative_time(const PerfProfile& candidate, const PerfProfile& reference) {
  if (candidate.counters_available != reference.counters_available) throw IncomparableProfiles();
  const auto ref = reference.time_basis_ns();
  if (ref == 0) throw DegenerateReference();
  return 100.0 * static_cast<double>(candidate.time_basis_ns()) / static_cast<double>(ref);
}

inline constexpr std::size_t kFeedbackLimit = 2000;
inline constexpr std::size_t kFeedbackFailures = 3;

inline std::string format_static(const StaticMetrics& s) {
  return fmt::format("Static metrics: lines={} ast_nodes={} cyclomatic={} cognitive={}\n",
                     s.code_length_lines, s.ast_node_count, s.cyclomatic, s.cognitive);
}

inline std::string format_profile(const PerfProfile& p) {
  if (p.counters_available)
    return fmt::format(
        "Profile: time_enabled_ns={} instructions={} branch_misses={} page_faults={}\n",
        p.time_enabled_ns.value_or(0), p.instructions.value_or(0), p.branch_misses.value_or(0),
        p.page_faults);
  return fmt::format("Profile (no hardware counters): wall_ns={} page_faults={}\n", p.wall_ns,
                     p.page_faults);
}

// Deterministic execution summary fed back into the reasoning chain.
inline std::string format_feedback(const ExecutionReport& report,
                                   const std::optional<PerfProfile>& reference = std::nullopt) {
  std::string out;
  if (!report.valid) {
    out += "Execution: program failed to load; no tests ran.\n";
    if (!report.diagnostic.empty())
      out += "Diagnostic: " + text::truncate_utf8(report.diagnostic, 600, "...") + "\n";
  } else if (report.tests_total == 0) {
    out += "Execution: program loaded; no tests were run.\n";
  } else if (report.tests_passed == report.tests_total) {
    out += fmt::format("Execution: all tests passed ({}/{}).\n", report.tests_passed,
                       report.tests_total);
  } else {
    out += fmt::format("Execution: {}/{} tests passed.\n", report.tests_passed, report.tests_total);
    std::vector<const TestOutcome*> failing;
    for (const auto& t : report.per_test)
      if (t.status != TestStatus::pass) failing.push_back(&t);
    out += "Failing tests:\n";
    for (std::size_t i = 0; i < failing.size() && i < kFeedbackFailures; ++i) {
      const auto& t = *failing[i];
      std::string msg = text::trimmed(t.message);
      for (auto& c : msg)
        if (c == '\n' || c == '\r') c = ' ';
      out += fmt::format("  - test #{} [{}]: {}\n", t.index, protocol::to_string(t.status),
                         text::truncate_utf8(msg, 200, "..."));
    }
    if (failing.size() > kFeedbackFailures)
      out += fmt::format("  +{} more failing tests\n", failing.size() - kFeedbackFailures);
  }
  if (report.tests_truncated > 0)
    out += fmt::format("Note: {} tests supplied; only the first {} were executed.\n",
                       report.tests_total + report.tests_truncated, report.tests_total);
  if (report.static_metrics) out += format_static(*report.static_metrics);
  if (report.profile) {
    out += format_profile(*report.profile);
    if (reference) {
      try {
        out += fmt::format("Relative time vs reference: {:.1f}%\n",
                           relative_time(*report.profile, *reference));
      } catch (const Error& e) {
        out += std::string("Relative time vs reference: unavailable (") + e.what() + ")\n";
      }
    }
  }
  return text::truncate_utf8(out, kFeedbackLimit, "...\n");
}

enum class ProfileSource {
  automatic,        // hardware counters when the platform grants them
  counters,         // require counters; fall back only if attach fails
  runner_reported,  // per-test timings reported by the runner
};

inline ProfileSource profile_source_from_string(const std::string& s) {
  if (s == "auto") return ProfileSource::automatic;
  if (s == "counters") return ProfileSource::counters;
  if (s == "runner") return ProfileSource::runner_reported;
  throw ConfigError("unknown profiler '" + s + "' (expected auto|counters|runner)");
}

inline const char* to_string(ProfileSource s) {
  switch (s) {
    case ProfileSource::automatic: return "auto";
    case ProfileSource::counters: return "counters";
    case ProfileSource::runner_reported: return "runner";
  }
  return "auto";
}

struct ExecutionConfig {
  std::vector<std::string> runner_command;
  ResourceLimits limits;
  std::size_t max_parallel = default_parallelism();
  ProfileSource profile_source = ProfileSource::automatic;
  int profile_repetitions = 3;
};

// Host-side manager for guest-runner processes.
class ExecutionService {
public:
  explicit ExecutionService(ExecutionConfig cfg)
      : cfg_(std::move(cfg)),
        slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(cfg_.max_parallel, 1, 1024))) {
    if (cfg_.runner_command.empty()) throw ConfigError("runner command not configured");
    cfg_.limits.validate();
    if (cfg_.profile_repetitions < 1) throw ConfigError("profile repetitions must be >= 1");
  }

  const ExecutionConfig& config() const noexcept { return cfg_; }
  const ResourceLimits& limits() const noexcept { return cfg_.limits; }

  ExecutionReport execute_candidate(const std::string& code, const std::vector<std::string>& tests) {
    return execute_candidate(code, tests, cfg_.limits);
  }

  // Never throws for guest misbehaviour; only infrastructure failures raise.
  ExecutionReport execute_candidate(const std::string& code, const std::vector<std::string>& tests,
                                    const ResourceLimits& limits) {
    protocol::RunnerJob job;
    job.mode = protocol::JobMode::execute;
    job.code = code;
    job.limits = limits;
    const auto keep = std::min<std::size_t>(tests.size(), static_cast<std::size_t>(limits.max_tests));
    job.tests.assign(tests.begin(), tests.begin() + static_cast<std::ptrdiff_t>(keep));

    auto runner = run_job(job, false).report;

    ExecutionReport report;
    report.valid = runner.load_ok;
    report.tests_total = static_cast<int>(job.tests.size());
    report.tests_truncated = static_cast<int>(tests.size() - keep);
    report.limits_enforced = runner.limits_enforced;
    report.diagnostic = runner.diagnostic;
    report.static_metrics = runner.static_metrics;
    if (report.valid)
      report.tests_passed = static_cast<int>(std::count_if(
          runner.per_test.begin(), runner.per_test.end(),
          [](const TestOutcome& t) { return t.status == TestStatus::pass; }));
    report.per_test = std::move(runner.per_test);
    report.feedback_text = format_feedback(report);
    return report;
  }

  std::optional<StaticMetrics> compute_static_metrics(const std::string& code) {
    protocol::RunnerJob job;
    job.mode = protocol::JobMode::static_only;
    job.code = code;
    job.limits = cfg_.limits;
    return run_job(job, false).report.static_metrics;
  }

  // Syntax check of test sources; element i is true iff tests[i] parses.
  std::vector<bool> check_tests(const std::vector<std::string>& tests) {
    std::vector<bool> ok(tests.size(), false);
    const auto batch = static_cast<std::size_t>(cfg_.limits.max_tests);
    for (std::size_t start = 0; start < tests.size(); start += batch) {
      protocol::RunnerJob job;
      job.mode = protocol::JobMode::check_only;
      job.limits = cfg_.limits;
      auto end = std::min(tests.size(), start + batch);
      job.tests.assign(tests.begin() + static_cast<std::ptrdiff_t>(start),
                       tests.begin() + static_cast<std::ptrdiff_t>(end));
      auto report = run_job(job, false).report;
      for (std::size_t i = 0; i < report.per_test.size(); ++i)
        ok[start + i] = report.per_test[i].status == TestStatus::pass;
    }
    return ok;
  }

  PerfProfile profile_candidate(const std::string& code, const std::vector<std::string>& tests) {
    return profile_candidate(code, tests, cfg_.limits);
  }

  // Single-flight: measurements never overlap, even when executions run in
  // parallel. Median of profile_repetitions runs, per field.
  PerfProfile profile_candidate(const std::string& code, const std::vector<std::string>& tests,
                                const ResourceLimits& limits) {
    std::lock_guard lock(profile_mutex_);
    InFlight guard(profile_in_flight_, profile_high_water_);
    ++profile_calls_;

    protocol::RunnerJob job;
    job.mode = protocol::JobMode::execute;
    job.code = code;
    job.limits = limits;
    const auto keep = std::min<std::size_t>(tests.size(), static_cast<std::size_t>(limits.max_tests));
    job.tests.assign(tests.begin(), tests.begin() + static_cast<std::ptrdiff_t>(keep));

    const bool want_counters =
        cfg_.profile_source == ProfileSource::counters ||
        (cfg_.profile_source == ProfileSource::automatic && process::PerfCounters::hardware_available());

    std::vector<PerfProfile> samples;
    for (int rep = 0; rep < cfg_.profile_repetitions; ++rep) {
      auto run = run_job(job, want_counters);
      PerfProfile p;
      std::uint64_t runner_wall_ns = 0, runner_faults = 0;
      for (const auto& t : run.report.per_test) {
        runner_wall_ns += static_cast<std::uint64_t>(std::llround(t.wall_ms * 1e6));
        runner_faults += static_cast<std::uint64_t>(t.page_faults);
      }
      if (run.process.counters) {
        p.counters_available = true;
        p.time_enabled_ns = run.process.counters->task_clock_ns;
        p.instructions = run.process.counters->instructions;
        p.branch_misses = run.process.counters->branch_misses;
        p.page_faults = run.process.counters->page_faults;
        p.wall_ns = static_cast<std::uint64_t>(run.process.wall_ns);
      } else {
        p.wall_ns = runner_wall_ns;
        p.page_faults = runner_faults;
      }
      samples.push_back(p);
    }
    return median_profile(samples);
  }

  // Test instrumentation for the single-flight guarantee.
  int profile_high_water() const noexcept { return profile_high_water_.load(); }
  int profile_calls() const noexcept { return profile_calls_.load(); }

  static PerfProfile median_profile(const std::vector<PerfProfile>& samples) {
    if (samples.empty()) return {};
    auto median = [&](auto get) {
      std::vector<std::uint64_t> v;
      for (const auto& s : samples) v.push_back(get(s));
      std::sort(v.begin(), v.end());
      return v[v.size() / 2];
    };
    PerfProfile out;
    // A run that lost its counters mid-way makes the whole set fall back.
    out.counters_available = std::all_of(samples.begin(), samples.end(),
                                         [](const PerfProfile& p) { return p.counters_available; });
    out.wall_ns = median([](const PerfProfile& p) { return p.wall_ns; });
    out.page_faults = median([](const PerfProfile& p) { return p.page_faults; });
    if (out.counters_available) {
      out.time_enabled_ns = median([](const PerfProfile& p) { return p.time_enabled_ns.value_or(0); });
      out.instructions = median([](const PerfProfile& p) { return p.instructions.value_or(0); });
      out.branch_misses = median([](const PerfProfile& p) { return p.branch_misses.value_or(0); });
    }
    return out;
  }

private:
  struct JobRun {
    protocol::RunnerReport report;
    process::ProcessResult process;
  };

  struct InFlight {
    InFlight(std::atomic<int>& n, std::atomic<int>& high) : n_(n) {
      int now = ++n_;
      int prev = high.load();
      while (now > prev && !high.compare_exchange_weak(prev, now)) {
      }
    }
    ~InFlight() { --n_; }
    std::atomic<int>& n_;
  };

  std::chrono::milliseconds job_timeout(const protocol::RunnerJob& job) const {
    const double per_test = job.limits.cpu_seconds + 2.0;
    const double total = per_test * static_cast<double>(job.tests.size() + 1) + 10.0;
    return std::chrono::milliseconds(static_cast<long long>(total * 1000));
  }

  JobRun run_job(const protocol::RunnerJob& job, bool attach_counters) {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<1024>& s;
      ~Release() { s.release(); }
    } release{slots_};

    process::SpawnOptions opts;
    opts.argv = cfg_.runner_command;
    opts.stdin_data = dump_json(protocol::to_json(job));
    opts.timeout = job_timeout(job);
    opts.attach_counters = attach_counters;
    auto proc = process::run(opts);

    if (proc.timed_out) throw ExecutorFault("runner did not finish within the job deadline");
    if (proc.term_signal != 0)
      throw ExecutorFault("runner killed by signal " + std::to_string(proc.term_signal));
    if (proc.exit_code != 0) {
      std::string detail = text::trimmed(proc.out.empty() ? proc.err : proc.out);
      try {
        auto fault = json::parse(proc.out);
        if (fault.is_object() && fault.contains("error") && fault["error"].is_string())
          detail = fault["error"].get<std::string>();
      } catch (const json::exception&) {
      }
      throw ExecutorFault("runner harness fault (exit " + std::to_string(proc.exit_code) +
                          "): " + text::truncate_utf8(detail, 500, "..."));
    }
    json doc;
    try {
      doc = json::parse(proc.out);
    } catch (const json::exception& e) {
      throw ExecutorFault(std::string("runner protocol violation: report is not JSON (") +
                          e.what() + ")");
    }
    auto report = protocol::report_from_json(doc, job.tests.size());
    return JobRun{std::move(report), std::move(proc)};
  }

  ExecutionConfig cfg_;
  std::counting_semaphore<1024> slots_;
  std::mutex profile_mutex_;
  std::atomic<int> profile_in_flight_{0};
  std::atomic<int> profile_high_water_{0};
  std::atomic<int> profile_calls_{0};
};

// ---- report serialization ----------------------------------------------------

inline json to_json(const PerfProfile& p) {
  json doc{{"counters_available", p.counters_available},
           {"page_faults", p.page_faults},
           {"wall_ns", p.wall_ns}};
  if (p.time_enabled_ns) doc["time_enabled_ns"] = *p.time_enabled_ns;
  if (p.instructions) doc["instructions"] = *p.instructions;
  if (p.branch_misses) doc["branch_misses"] = *p.branch_misses;
  return doc;
}

inline PerfProfile profile_from_json(const json& doc) {
  PerfProfile p;
  p.counters_available = doc.at("counters_available").get<bool>();
  p.page_faults = doc.at("page_faults").get<std::uint64_t>();
  p.wall_ns = doc.at("wall_ns").get<std::uint64_t>();
  if (doc.contains("time_enabled_ns")) p.time_enabled_ns = doc["time_enabled_ns"].get<std::uint64_t>();
  if (doc.contains("instructions")) p.instructions = doc["instructions"].get<std::uint64_t>();
  if (doc.contains("branch_misses")) p.branch_misses = doc["branch_misses"].get<std::uint64_t>();
  return p;
}

inline json to_json(const ExecutionReport& r) {
  json per_test = json::array();
  for (const auto& t : r.per_test) per_test.push_back(protocol::to_json(t));
  json doc{{"valid", r.valid},
           {"tests_total", r.tests_total},
           {"tests_passed", r.tests_passed},
           {"tests_truncated", r.tests_truncated},
           {"limits_enforced", r.limits_enforced},
           {"diagnostic", r.diagnostic},
           {"per_test", std::move(per_test)},
           {"feedback_text", r.feedback_text}};
  if (r.static_metrics) doc["static"] = protocol::to_json(*r.static_metrics);
  if (r.profile) doc["profile"] = to_json(*r.profile);
  return doc;
}

inline ExecutionReport execution_report_from_json(const json& doc) {
  ExecutionReport r;
  r.valid = doc.at("valid").get<bool>();
  r.tests_total = doc.at("tests_total").get<int>();
  r.tests_passed = doc.at("tests_passed").get<int>();
  r.tests_truncated = doc.value("tests_truncated", 0);
  r.limits_enforced = doc.value("limits_enforced", true);
  r.diagnostic = doc.value("diagnostic", "");
  r.feedback_text = doc.value("feedback_text", "");
  for (const auto& t : doc.at("per_test")) {
    TestOutcome o;
    o.index = t.at("index").get<int>();
    o.status = protocol::test_status_from_string(t.at("status").get<std::string>())
                   .value_or(TestStatus::error);
    o.message = t.value("message", "");
    o.wall_ms = t.value("wall_ms", 0.0);
    o.cpu_ms = t.value("cpu_ms", 0.0);
    o.peak_memory_bytes = t.value("peak_memory_bytes", std::int64_t{0});
    o.page_faults = t.value("page_faults", std::int64_t{0});
    r.per_test.push_back(std::move(o));
  }
  if (doc.contains("static")) {
    const auto& s = doc["static"];
    r.static_metrics = StaticMetrics{s.at("code_length_lines").get<std::int64_t>(),
                                     s.at("ast_node_count").get<std::int64_t>(),
                                     s.at("cyclomatic").get<std::int64_t>(),
                                     s.at("cognitive").get<std::int64_t>()};
  }
  if (doc.contains("profile")) r.profile = profile_from_json(doc["profile"]);
  return r;
}

}  // namespace orps
