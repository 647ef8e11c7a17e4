#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "orps/errors.hpp"
#include "orps/execution/execution.hpp"
#include "orps/gateway/chat.hpp"
#include "orps/problem.hpp"
#include "orps/search/types.hpp"
#include "orps/util/json_io.hpp"

namespace orps {

struct ProblemOutcome {
  std::string problem_id;
  std::vector<std::string> tags;
  std::string final_code;
  bool valid = false;
  int tests_total = 0;
  int tests_passed = 0;
  std::vector<TestStatus> per_test;  // raw hidden-test records
  std::optional<double> relative_time;
  std::string time_note;  // why relative_time is absent
  std::optional<StaticMetrics> static_metrics;
  std::optional<StaticMetrics> reference_static;
  std::optional<PerfProfile> profile;
  std::optional<PerfProfile> reference_profile;
  UsageByRole usage;  // budget spent on this problem
  int rounds_executed = 0;
  std::string error;  // set when the method failed before producing code

  double fraction() const {
    return tests_total == 0 ? 0.0 : static_cast<double>(tests_passed) / tests_total;
  }
  bool all_pass() const { return valid && tests_total > 0 && tests_passed == tests_total; }
};

// Outcome for a problem where the method produced no code at all.
inline ProblemOutcome failed_outcome(const ProblemRecord& p, std::string error, UsageByRole usage = {}) {
  ProblemOutcome o;
  o.problem_id = p.id;
  o.tags = p.tags;
  o.tests_total = static_cast<int>(p.hidden_tests.size());
  o.per_test.assign(p.hidden_tests.size(), TestStatus::error);
  o.time_note = "no solution";
  o.error = std::move(error);
  o.usage = std::move(usage);
  return o;
}

// Scores code on the hidden tests. Time is measured on the hidden tests that
// both the candidate and the reference pass, so both programs do the same
// work.
inline ProblemOutcome evaluate_solution(const ProblemRecord& problem, const std::string& code,
                                        ExecutionService& executor) {
  if (problem.hidden_tests.empty()) throw PreconditionViolation("evaluate_solution needs hidden tests");
  ProblemOutcome o;
  o.problem_id = problem.id;
  o.tags = problem.tags;
  o.final_code = code;

  // Hidden tests run in chunks of max_tests so none are dropped.
  const auto chunk = static_cast<std::size_t>(executor.limits().max_tests);
  auto run_all = [&](const std::string& src, bool& valid, std::vector<TestStatus>& statuses,
                     std::optional<StaticMetrics>& stat) {
    valid = true;
    statuses.clear();
    for (std::size_t start = 0; start < problem.hidden_tests.size(); start += chunk) {
      auto end = std::min(problem.hidden_tests.size(), start + chunk);
      std::vector<std::string> part(problem.hidden_tests.begin() + static_cast<std::ptrdiff_t>(start),
                                    problem.hidden_tests.begin() + static_cast<std::ptrdiff_t>(end));
      auto report = executor.execute_candidate(src, part);
      if (start == 0) stat = report.static_metrics;
      if (!report.valid) {
        valid = false;
        statuses.assign(problem.hidden_tests.size(), TestStatus::error);
        return;
      }
      for (const auto& t : report.per_test) statuses.push_back(t.status);
    }
  };

  o.tests_total = static_cast<int>(problem.hidden_tests.size());
  if (text::trim(code).empty()) {
    o.per_test.assign(problem.hidden_tests.size(), TestStatus::error);
    o.time_note = "no solution";
    return o;
  }
  run_all(code, o.valid, o.per_test, o.static_metrics);
  o.tests_passed = static_cast<int>(std::count(o.per_test.begin(), o.per_test.end(), TestStatus::pass));

  if (!o.valid) {
    o.time_note = "candidate invalid";
    return o;
  }
  if (!problem.reference_solution) {
    o.time_note = "no reference solution";
    return o;
  }
  bool ref_valid = false;
  std::vector<TestStatus> ref_status;
  run_all(*problem.reference_solution, ref_valid, ref_status, o.reference_static);
  if (!ref_valid) {
    o.time_note = "reference invalid";
    return o;
  }
  std::vector<std::string> workload;
  for (std::size_t i = 0; i < problem.hidden_tests.size(); ++i)
    if (o.per_test[i] == TestStatus::pass && ref_status[i] == TestStatus::pass)
      workload.push_back(problem.hidden_tests[i]);
  if (workload.empty()) {
    o.time_note = "no hidden test passed by both candidate and reference";
    return o;
  }
  if (workload.size() > chunk) workload.resize(chunk);
  o.profile = executor.profile_candidate(code, workload);
  o.reference_profile = executor.profile_candidate(*problem.reference_solution, workload);
  try {
    o.relative_time = relative_time(*o.profile, *o.reference_profile);
  } catch (const IncomparableProfiles&) {
    o.time_note = "incomparable profiles";
  } catch (const DegenerateReference&) {
    o.time_note = "reference time is zero";
  }
  return o;
}

struct TagStats {
  int problems = 0;
  int solved = 0;
  double pass_at_1 = 0;
};

struct BenchmarkReport {
  int problems = 0;
  double pass_at_1 = 0;
  double tests = 0;
  double valid = 0;
  std::optional<double> time;
  double time_coverage = 0;
  int failed = 0;  // problems where the method raised before producing code
  std::map<std::string, TagStats> per_tag;
  std::vector<ProblemOutcome> rows;  // sorted by problem id
  UsageByRole usage;
};

// Deterministic fold in problem-id order, so input order never matters.
inline BenchmarkReport aggregate(std::vector<ProblemOutcome> outcomes) {
  if (outcomes.empty()) throw PreconditionViolation("aggregate needs at least one outcome");
  std::sort(outcomes.begin(), outcomes.end(),
            [](const ProblemOutcome& a, const ProblemOutcome& b) { return a.problem_id < b.problem_id; });
  BenchmarkReport r;
  r.problems = static_cast<int>(outcomes.size());
  int all_pass = 0, valid = 0, timed = 0;
  double fraction_sum = 0, time_sum = 0;
  for (const auto& o : outcomes) {
    if (o.all_pass()) ++all_pass;
    if (o.valid) ++valid;
    if (!o.error.empty()) ++r.failed;
    fraction_sum += o.valid ? o.fraction() : 0.0;
    if (o.relative_time) {
      ++timed;
      time_sum += *o.relative_time;
    }
    for (const auto& tag : o.tags) {
      auto& t = r.per_tag[tag];
      ++t.problems;
      if (o.all_pass()) ++t.solved;
    }
    for (const auto& [role, u] : o.usage) r.usage[role] += u;
  }
  const double n = r.problems;
  r.pass_at_1 = 100.0 * all_pass / n;
  r.tests = 100.0 * fraction_sum / n;
  r.valid = 100.0 * valid / n;
  if (timed > 0) r.time = time_sum / timed;
  r.time_coverage = timed / n;
  for (auto& [_, t] : r.per_tag) t.pass_at_1 = 100.0 * t.solved / t.problems;
  r.rows = std::move(outcomes);
  return r;
}

// ---- serialization ---------------------------------------------------------

inline json to_json(const ProblemOutcome& o) {
  json statuses = json::array();
  for (auto s : o.per_test) statuses.push_back(protocol::to_string(s));
  json doc{{"problem_id", o.problem_id},
           {"tags", o.tags},
           {"final_code", o.final_code},
           {"valid", o.valid},
           {"all_pass", o.all_pass()},
           {"tests_total", o.tests_total},
           {"tests_passed", o.tests_passed},
           {"per_test", std::move(statuses)},
           {"relative_time", o.relative_time ? json(*o.relative_time) : json(nullptr)},
           {"time_note", o.time_note},
           {"usage", to_json(o.usage)},
           {"rounds_executed", o.rounds_executed},
           {"error", o.error}};
  if (o.static_metrics) doc["static"] = protocol::to_json(*o.static_metrics);
  if (o.reference_static) doc["reference_static"] = protocol::to_json(*o.reference_static);
  if (o.profile) doc["profile"] = to_json(*o.profile);
  if (o.reference_profile) doc["reference_profile"] = to_json(*o.reference_profile);
  return doc;
}

inline StaticMetrics static_from_json(const json& s) {
  return StaticMetrics{s.at("code_length_lines").get<std::int64_t>(), s.at("ast_node_count").get<std::int64_t>(),
                       s.at("cyclomatic").get<std::int64_t>(), s.at("cognitive").get<std::int64_t>()};
}

inline ProblemOutcome outcome_from_json(const json& doc) {
  ProblemOutcome o;
  o.problem_id = doc.at("problem_id").get<std::string>();
  o.tags = doc.at("tags").get<std::vector<std::string>>();
  o.final_code = doc.at("final_code").get<std::string>();
  o.valid = doc.at("valid").get<bool>();
  o.tests_total = doc.at("tests_total").get<int>();
  o.tests_passed = doc.at("tests_passed").get<int>();
  for (const auto& s : doc.at("per_test"))
    o.per_test.push_back(protocol::test_status_from_string(s.get<std::string>()).value_or(TestStatus::error));
  if (!doc.at("relative_time").is_null()) o.relative_time = doc["relative_time"].get<double>();
  o.time_note = doc.value("time_note", "");
  o.usage = usage_from_json(doc.at("usage"));
  o.rounds_executed = doc.value("rounds_executed", 0);
  o.error = doc.value("error", "");
  if (doc.contains("static")) o.static_metrics = static_from_json(doc["static"]);
  if (doc.contains("reference_static")) o.reference_static = static_from_json(doc["reference_static"]);
  if (doc.contains("profile")) o.profile = profile_from_json(doc["profile"]);
  if (doc.contains("reference_profile")) o.reference_profile = profile_from_json(doc["reference_profile"]);
  return o;
}

inline json to_json(const BenchmarkReport& r) {
  json tags = json::object();
  for (const auto& [tag, t] : r.per_tag)
    tags[tag] = json{{"problems", t.problems}, {"solved", t.solved}, {"pass_at_1", t.pass_at_1}};
  json rows = json::array();
  for (const auto& o : r.rows) rows.push_back(to_json(o));
  return json{{"problems", r.problems},
              {"pass_at_1", r.pass_at_1},
              {"tests", r.tests},
              {"valid", r.valid},
              {"time", r.time ? json(*r.time) : json(nullptr)},
              {"time_slower_than_reference", r.time && *r.time > 100.0},
              {"time_coverage", r.time_coverage},
              {"failed", r.failed},
              {"per_tag", std::move(tags)},
              {"usage", to_json(r.usage)},
              {"rows", std::move(rows)}};
}

}  // namespace orps
