#pragma once

// Host side of the runner protocol: one JSON job document on the runner's
// stdin, one JSON report document on its stdout. Field names and types match
// schema/runner_protocol.schema.json; any deviation in a report is a protocol
// violation and surfaces as ExecutorFault.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "orps/errors.hpp"
#include "orps/util/json_io.hpp"

namespace orps::protocol {

inline constexpr int kVersion = 1;

struct ResourceLimits {
  double cpu_seconds = 5.0;
  std::int64_t memory_bytes = 512LL * 1024 * 1024;
  int max_tests = 15;

  void validate() const {
    if (!(cpu_seconds > 0) || memory_bytes <= 0 || max_tests < 1)
      throw ConfigError("resource limits must be positive and max_tests >= 1");
  }
};

enum class JobMode { execute, static_only, check_only };

inline const char* to_string(JobMode m) {
  switch (m) {
    case JobMode::execute: return "execute";
    case JobMode::static_only: return "static_only";
    case JobMode::check_only: return "check_only";
  }
  return "execute";
}

inline JobMode job_mode_from_string(const std::string& s) {
  if (s == "execute") return JobMode::execute;
  if (s == "static_only") return JobMode::static_only;
  if (s == "check_only") return JobMode::check_only;
  throw Error("unknown job mode '" + s + "'");
}

struct RunnerJob {
  JobMode mode = JobMode::execute;
  std::string code;
  std::vector<std::string> tests;
  ResourceLimits limits;
};

enum class TestStatus { pass, fail, error, timeout };

inline const char* to_string(TestStatus s) {
  switch (s) {
    case TestStatus::pass: return "pass";
    case TestStatus::fail: return "fail";
    case TestStatus::error: return "error";
    case TestStatus::timeout: return "timeout";
  }
  return "error";
}

inline std::optional<TestStatus> test_status_from_string(const std::string& s) {
  if (s == "pass") return TestStatus::pass;
  if (s == "fail") return TestStatus::fail;
  if (s == "error") return TestStatus::error;
  if (s == "timeout") return TestStatus::timeout;
  return std::nullopt;
}

struct TestOutcome {
  int index = 0;
  TestStatus status = TestStatus::error;
  std::string message;
  double wall_ms = 0;
  double cpu_ms = 0;
  std::int64_t peak_memory_bytes = 0;
  std::int64_t page_faults = 0;
};

struct StaticMetrics {
  std::int64_t code_length_lines = 0;
  std::int64_t ast_node_count = 0;
  std::int64_t cyclomatic = 0;
  std::int64_t cognitive = 0;

  friend bool operator==(const StaticMetrics&, const StaticMetrics&) = default;
};

struct RunnerReport {
  bool load_ok = false;
  std::string diagnostic;
  bool limits_enforced = true;
  std::vector<TestOutcome> per_test;
  std::optional<StaticMetrics> static_metrics;
};

// ---- serialization -----------------------------------------------------------

inline json to_json(const ResourceLimits& l) {
  return json{{"cpu_seconds", l.cpu_seconds},
              {"memory_bytes", l.memory_bytes},
              {"max_tests", l.max_tests}};
}

inline json to_json(const RunnerJob& job) {
  return json{{"protocol_version", kVersion},
              {"mode", to_string(job.mode)},
              {"code", job.code},
              {"tests", job.tests},
              {"limits", to_json(job.limits)}};
}

inline json to_json(const StaticMetrics& s) {
  return json{{"code_length_lines", s.code_length_lines},
              {"ast_node_count", s.ast_node_count},
              {"cyclomatic", s.cyclomatic},
              {"cognitive", s.cognitive}};
}

inline json to_json(const TestOutcome& t) {
  return json{{"index", t.index},
              {"status", to_string(t.status)},
              {"message", t.message},
              {"wall_ms", t.wall_ms},
              {"cpu_ms", t.cpu_ms},
              {"peak_memory_bytes", t.peak_memory_bytes},
              {"page_faults", t.page_faults}};
}

inline json to_json(const RunnerReport& r) {
  json per_test = json::array();
  for (const auto& t : r.per_test) per_test.push_back(to_json(t));
  json doc{{"protocol_version", kVersion},
           {"load_ok", r.load_ok},
           {"diagnostic", r.diagnostic},
           {"limits_enforced", r.limits_enforced},
           {"per_test", std::move(per_test)}};
  if (r.static_metrics) doc["static"] = to_json(*r.static_metrics);
  return doc;
}

// ---- strict parsing ------------------------------------------------------------

namespace detail {

[[noreturn]] inline void violation(const std::string& what) {
  throw ExecutorFault("runner protocol violation: " + what);
}

inline const json& field(const json& obj, const char* name) {
  auto it = obj.find(name);
  if (it == obj.end()) violation(std::string("missing field '") + name + "'");
  return *it;
}

inline std::int64_t nonneg_int(const json& obj, const char* name) {
  const auto& v = field(obj, name);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    violation(std::string("field '") + name + "' must be a non-negative integer");
  return v.get<std::int64_t>();
}

inline double nonneg_number(const json& obj, const char* name) {
  const auto& v = field(obj, name);
  if (!v.is_number() || !std::isfinite(v.get<double>()) || v.get<double>() < 0)
    violation(std::string("field '") + name + "' must be a non-negative number");
  return v.get<double>();
}

inline void only_known(const json& obj, std::initializer_list<const char*> allowed,
                       const char* where) {
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) violation(std::string("unexpected field '") + key + "' in " + where);
  }
}

}  // namespace detail

inline RunnerJob job_from_json(const json& doc) {
  using detail::field;
  if (!doc.is_object()) throw Error("job must be an object");
  if (field(doc, "protocol_version") != kVersion) throw Error("unsupported protocol_version");
  RunnerJob job;
  job.mode = job_mode_from_string(field(doc, "mode").get<std::string>());
  job.code = field(doc, "code").get<std::string>();
  job.tests = field(doc, "tests").get<std::vector<std::string>>();
  const auto& l = field(doc, "limits");
  job.limits.cpu_seconds = field(l, "cpu_seconds").get<double>();
  job.limits.memory_bytes = field(l, "memory_bytes").get<std::int64_t>();
  job.limits.max_tests = field(l, "max_tests").get<int>();
  return job;
}

// Parses and checks a report against the job it answers. per_test must hold
// exactly one entry per submitted test, in index order.
inline RunnerReport report_from_json(const json& doc, std::size_t expected_tests) {
  using namespace detail;
  if (!doc.is_object()) violation("report is not an object");
  only_known(doc, {"protocol_version", "load_ok", "diagnostic", "limits_enforced", "per_test",
                   "static"},
             "report");
  const auto& version = field(doc, "protocol_version");
  if (!version.is_number_integer() || version.get<int>() != kVersion)
    violation("unsupported protocol_version");

  RunnerReport r;
  const auto& load_ok = field(doc, "load_ok");
  if (!load_ok.is_boolean()) violation("load_ok must be boolean");
  r.load_ok = load_ok.get<bool>();

  if (auto it = doc.find("diagnostic"); it != doc.end()) {
    if (!it->is_string()) violation("diagnostic must be a string");
    r.diagnostic = it->get<std::string>();
  }
  if (auto it = doc.find("limits_enforced"); it != doc.end()) {
    if (!it->is_boolean()) violation("limits_enforced must be boolean");
    r.limits_enforced = it->get<bool>();
  }

  const auto& per_test = field(doc, "per_test");
  if (!per_test.is_array()) violation("per_test must be an array");
  if (per_test.size() != expected_tests)
    violation("per_test has " + std::to_string(per_test.size()) + " entries, expected " +
              std::to_string(expected_tests));
  for (std::size_t i = 0; i < per_test.size(); ++i) {
    const auto& t = per_test[i];
    if (!t.is_object()) violation("per_test entry is not an object");
    only_known(t, {"index", "status", "message", "wall_ms", "cpu_ms", "peak_memory_bytes",
                   "page_faults"},
               "per_test entry");
    TestOutcome o;
    o.index = static_cast<int>(nonneg_int(t, "index"));
    if (static_cast<std::size_t>(o.index) != i) violation("per_test indices out of order");
    const auto& status = field(t, "status");
    if (!status.is_string()) violation("status must be a string");
    auto parsed = test_status_from_string(status.get<std::string>());
    if (!parsed) violation("unknown status '" + status.get<std::string>() + "'");
    o.status = *parsed;
    const auto& message = field(t, "message");
    if (!message.is_string()) violation("message must be a string");
    o.message = message.get<std::string>();
    o.wall_ms = nonneg_number(t, "wall_ms");
    o.cpu_ms = nonneg_number(t, "cpu_ms");
    o.peak_memory_bytes = nonneg_int(t, "peak_memory_bytes");
    if (t.contains("page_faults")) o.page_faults = nonneg_int(t, "page_faults");
    r.per_test.push_back(std::move(o));
  }

  if (!r.load_ok)
    for (const auto& t : r.per_test)
      if (t.status != TestStatus::error) violation("load_ok=false requires every status = error");

  if (auto it = doc.find("static"); it != doc.end()) {
    if (!it->is_object()) violation("static must be an object");
    only_known(*it, {"code_length_lines", "ast_node_count", "cyclomatic", "cognitive"}, "static");
    StaticMetrics s;
    s.code_length_lines = nonneg_int(*it, "code_length_lines");
    s.ast_node_count = nonneg_int(*it, "ast_node_count");
    s.cyclomatic = nonneg_int(*it, "cyclomatic");
    s.cognitive = nonneg_int(*it, "cognitive");
    r.static_metrics = s;
  }
  return r;
}

}  // namespace orps::protocol
