#include <random>

#include <gtest/gtest.h>

#include "orps/eval/dataset.hpp"
#include "orps/eval/methods.hpp"
#include "orps/eval/report.hpp"
#include "support/harness.hpp"

using namespace orps;

namespace {

ProblemOutcome outcome(const std::string& id, bool valid, int passed, int total, std::optional<double> time = {}) {
  ProblemOutcome o;
  o.problem_id = id;
  o.valid = valid;
  o.tests_total = total;
  o.tests_passed = passed;
  for (int i = 0; i < total; ++i) o.per_test.push_back(i < passed ? TestStatus::pass : TestStatus::fail);
  o.relative_time = time;
  return o;
}

ProblemRecord timed_problem() {
  ProblemRecord p;
  p.id = "t";
  p.prompt = "Implement solve(x).";
  for (const char* tag : {"a", "b", "c", "d", "e"}) p.hidden_tests.push_back(std::string("assert solve(1) == 1  # tag=") + tag);
  p.reference_solution = "# fake: solves=* cost=2.0\ndef solve(x):\n    return x\n";
  return p;
}

EvalConfig eval_config() {
  EvalConfig c;
  c.search.beam_width = 3;
  c.search.max_rounds = 5;
  c.search.expansion_factor = 4;
  c.search.rng_seed = 7;
  c.search.max_parallel = 8;
  c.problem_parallel = 4;
  return c;
}

std::uint64_t logged_programmer_completions(const ScriptedBackend& backend) {
  std::uint64_t n = 0;
  for (const auto& r : backend.requests())
    if (r.tag.role == Role::programmer) n += static_cast<std::uint64_t>(r.n);
  return n;
}

double pass_at_1(const std::string& fixture, const Method& m, const EvalConfig& cfg = eval_config()) {
  auto ds = load_dataset(support::fixtures() / fixture / "dataset.jsonl");
  auto s = support::scripted(support::fixtures() / fixture / "script");
  auto ex = support::fake_executor(8);
  return aggregate(run_method(ds, m, cfg, *s.gateway, *ex).outcomes).pass_at_1;
}

}  // namespace

TEST(Aggregate, WorkedExample) {
  auto r = aggregate({outcome("x", true, 5, 5), outcome("y", true, 3, 5), outcome("z", false, 0, 5)});
  EXPECT_NEAR(r.pass_at_1, 100.0 / 3, 1e-9);
  EXPECT_NEAR(r.valid, 200.0 / 3, 1e-9);
  EXPECT_NEAR(r.tests, 160.0 / 3, 1e-9);
  EXPECT_FALSE(r.time);
  EXPECT_EQ(r.time_coverage, 0);
}

TEST(Aggregate, TimeMeanOverTimedProblemsOnly) {
  auto r = aggregate({outcome("x", true, 5, 5, 80.0), outcome("y", true, 5, 5, 140.0), outcome("z", true, 2, 5)});
  ASSERT_TRUE(r.time);
  EXPECT_DOUBLE_EQ(*r.time, 110.0);
  EXPECT_NEAR(r.time_coverage, 2.0 / 3, 1e-12);
  EXPECT_TRUE(to_json(r)["time_slower_than_reference"].get<bool>());
}

TEST(Aggregate, InvalidProblemsContributeZeroTests) {
  auto broken = outcome("x", false, 2, 4);
  EXPECT_EQ(aggregate({broken}).tests, 0);
  EXPECT_THROW(aggregate({}), PreconditionViolation);
}

TEST(Aggregate, PerTagAndUsage) {
  auto a = outcome("a", true, 2, 2), b = outcome("b", true, 1, 2);
  a.tags = {"math", "easy"};
  b.tags = {"math"};
  a.usage["programmer"].completions = 3;
  b.usage["programmer"].completions = 4;
  auto r = aggregate({a, b});
  EXPECT_EQ(r.per_tag.at("math").problems, 2);
  EXPECT_EQ(r.per_tag.at("math").solved, 1);
  EXPECT_DOUBLE_EQ(r.per_tag.at("easy").pass_at_1, 100);
  EXPECT_EQ(r.usage.at("programmer").completions, 7u);
}

TEST(Aggregate, InputOrderIrrelevant) {
  std::mt19937_64 rng(11);
  std::vector<ProblemOutcome> rows;
  for (int i = 0; i < 60; ++i) {
    int total = 1 + static_cast<int>(rng() % 9);
    rows.push_back(outcome("p" + std::to_string(i), rng() % 4 != 0, static_cast<int>(rng() % (total + 1)), total,
                           rng() % 2 ? std::optional<double>(50.0 + static_cast<double>(rng() % 1000) / 7.0) : std::nullopt));
  }
  const auto expected = dump_json(to_json(aggregate(rows)));
  for (int iter = 0; iter < 20; ++iter) {
    std::shuffle(rows.begin(), rows.end(), rng);
    EXPECT_EQ(dump_json(to_json(aggregate(rows))), expected);
  }
}

TEST(Evaluate, CorrectCodeAgainstReference) {
  auto ex = support::fake_executor();
  auto o = evaluate_solution(timed_problem(), "# fake: solves=*\ndef solve(x):\n    return x\n", *ex);
  EXPECT_TRUE(o.valid);
  EXPECT_EQ(o.tests_passed, 5);
  EXPECT_TRUE(o.all_pass());
  ASSERT_TRUE(o.relative_time);
  EXPECT_DOUBLE_EQ(*o.relative_time, 50.0);  // 1 ms per test against 2 ms
  EXPECT_TRUE(o.static_metrics);
  EXPECT_TRUE(o.reference_static);
}

TEST(Evaluate, TimeMeasuredOnTestsBothProgramsPass) {
  auto ex = support::fake_executor();
  auto o = evaluate_solution(timed_problem(), "# fake: solves=a,b\ndef solve(x):\n    return x\n", *ex);
  EXPECT_EQ(o.tests_passed, 2);
  ASSERT_TRUE(o.profile && o.reference_profile);
  EXPECT_EQ(o.profile->wall_ns, 2'000'000u);
  EXPECT_EQ(o.reference_profile->wall_ns, 4'000'000u);
  EXPECT_DOUBLE_EQ(*o.relative_time, 50.0);
}

TEST(Evaluate, InvalidOrMissingPieces) {
  auto ex = support::fake_executor();
  auto crash = evaluate_solution(timed_problem(), "# fake: crash-on-load\n", *ex);
  EXPECT_FALSE(crash.valid);
  EXPECT_EQ(crash.fraction(), 0);
  EXPECT_EQ(crash.time_note, "candidate invalid");

  auto p = timed_problem();
  p.reference_solution.reset();
  auto no_ref = evaluate_solution(p, "# fake: solves=*\nx = 1\n", *ex);
  EXPECT_TRUE(no_ref.all_pass());
  EXPECT_FALSE(no_ref.relative_time);
  EXPECT_EQ(no_ref.time_note, "no reference solution");

  EXPECT_EQ(evaluate_solution(timed_problem(), "  ", *ex).time_note, "no solution");
  p.hidden_tests.clear();
  EXPECT_THROW(evaluate_solution(p, "x = 1\n", *ex), PreconditionViolation);
}

TEST(Evaluate, HiddenTestsBeyondRunnerCapAreAllRun) {
  auto ex = support::fake_executor();
  auto p = timed_problem();
  p.hidden_tests.assign(20, "assert solve(1) == 1  # tag=a");
  auto o = evaluate_solution(p, "# fake: solves=a\nx = 1\n", *ex);
  EXPECT_EQ(o.tests_total, 20);
  EXPECT_EQ(o.tests_passed, 20);
  EXPECT_EQ(o.per_test.size(), 20u);
}

TEST(OutcomeJson, RoundTrip) {
  auto ex = support::fake_executor();
  auto o = evaluate_solution(timed_problem(), "# fake: solves=a,b\nx = 1\n", *ex);
  o.usage["critic"].completions = 2;
  o.rounds_executed = 3;
  EXPECT_EQ(to_json(outcome_from_json(to_json(o))), to_json(o));
}

TEST(Methods, NamesAndParsing) {
  EXPECT_EQ(method_from_string("orps-wt").kind, MethodKind::orps_with_tests);
  EXPECT_EQ(method_from_string("orps-minus-execution").name(), "orps_minus_execution");
  EXPECT_EQ(method_from_string("bon", 60).name(), "bon(60)");
  EXPECT_THROW(method_from_string("beam"), ConfigError);
}

TEST(Methods, CotSolvesCorrectFixture) {
  support::TempDir dir;
  support::put_script(dir.path(), "_default", "programmer.cot", 1, "0.txt",
                      "=== Programmer Thoughts ===\nIdentity.\n=== Solution ===\n```python\n# fake: solves=*\ndef solve(x):\n    return x\n```");
  auto s = support::scripted(dir.path());
  auto ex = support::fake_executor();
  Dataset ds{{timed_problem()}, ""};
  auto run = run_method(ds, Method{MethodKind::cot, 0}, eval_config(), *s.gateway, *ex);
  EXPECT_EQ(aggregate(run.outcomes).pass_at_1, 100);
  EXPECT_EQ(programmer_completions(run), 1u);
  auto reqs = s.backend->requests();
  ASSERT_EQ(reqs.size(), 1u);
  EXPECT_EQ(reqs[0].tag.variant, "cot");
  EXPECT_EQ(reqs[0].seed, problem_seed(7, "t"));
}

TEST(Methods, AcceptanceFixtureScores) {
  EXPECT_EQ(pass_at_1("acceptance", Method{MethodKind::orps, 0}), 100);
  EXPECT_EQ(pass_at_1("acceptance", Method{MethodKind::orps_minus_reasoning, 0}), 80);
  EXPECT_EQ(pass_at_1("acceptance", Method{MethodKind::orps_minus_execution, 0}), 60);
  EXPECT_EQ(pass_at_1("acceptance", Method{MethodKind::bon, 52}), 40);
  EXPECT_EQ(pass_at_1("acceptance", Method{MethodKind::cot, 0}), 20);
}

TEST(Methods, BudgetParityCountedFromRequestLog) {
  auto cfg = eval_config();
  // Oracle: N programmer samples for the root, then N for each of K beam
  // nodes in the remaining T - 1 rounds.
  const long long per_problem = 4 + (5 - 1) * 3 * 4;
  EXPECT_EQ(orps_programmer_budget(cfg.search), per_problem);

  auto ds = load_dataset(support::fixtures() / "budget" / "dataset.jsonl");
  for (const auto& m : {Method{MethodKind::orps_with_tests, 0}, Method{MethodKind::orps, 0},
                        Method{MethodKind::bon, static_cast<int>(per_problem)}}) {
    auto s = support::scripted(support::fixtures() / "budget" / "script");
    auto ex = support::fake_executor(8);
    auto run = run_method(ds, m, cfg, *s.gateway, *ex);
    const auto logged = logged_programmer_completions(*s.backend);
    EXPECT_EQ(logged, 3u * per_problem) << m.name();
    EXPECT_EQ(programmer_completions(run), logged) << m.name();
    for (const auto& o : run.outcomes) EXPECT_FALSE(o.all_pass()) << m.name();
  }
}

TEST(Methods, ExecutionAblationNeverBeatsFullSearch) {
  EXPECT_LE(pass_at_1("acceptance", Method{MethodKind::orps_minus_execution, 0}),
            pass_at_1("acceptance", Method{MethodKind::orps, 0}));
}

TEST(Methods, UnparseableSearchBecomesFailedOutcome) {
  support::TempDir dir;
  support::put_script(dir.path(), "_default", "programmer", 1, "0.txt", "no code at all");
  auto s = support::scripted(dir.path());
  auto ex = support::fake_executor();
  auto p = timed_problem();
  p.visible_tests = {"assert solve(1) == 1  # tag=a"};
  auto o = run_problem(p, Method{MethodKind::orps_with_tests, 0}, eval_config(), *s.gateway, *ex);
  EXPECT_FALSE(o.valid);
  EXPECT_FALSE(o.error.empty());
  EXPECT_EQ(o.usage.at("programmer").completions, 4u);
}

TEST(Methods, GatewayOutagePropagates) {
  support::TempDir dir;
  auto s = support::scripted(dir.path());
  auto ex = support::fake_executor();
  EXPECT_THROW(run_problem(timed_problem(), Method{MethodKind::cot, 0}, eval_config(), *s.gateway, *ex),
               GatewayUnavailable);
}

TEST(Methods, GeneratedTestsAreReusedOnResume) {
  auto ds = load_dataset(support::fixtures() / "acceptance" / "dataset.jsonl");
  support::TempDir store_dir;
  TreeStore store(store_dir.path());
  const auto& p = ds.problems.front();
  std::string first;
  for (bool resume : {false, true}) {
    auto s = support::scripted(support::fixtures() / "acceptance" / "script");
    auto ex = support::fake_executor();
    auto o = run_problem(p, Method{MethodKind::orps, 0}, eval_config(), *s.gateway, *ex, ProblemContext{&store, resume});
    int writer_calls = 0;
    for (const auto& r : s.backend->requests()) writer_calls += r.tag.role == Role::test_writer;
    EXPECT_EQ(writer_calls, resume ? 0 : 1);
    if (!resume)
      first = dump_json(to_json(o));
    else
      EXPECT_EQ(dump_json(to_json(o)), first);
  }
  EXPECT_TRUE(std::filesystem::exists(store_dir / "visible_tests.json"));
}

TEST(Scaling, ShapeNeverExceedsBudget) {
  SearchConfig defaults;
  for (int b = 1; b <= 300; ++b) {
    auto c = scale_to_budget(defaults, b);
    EXPECT_LE(orps_programmer_budget(c), b) << b;
    EXPECT_NO_THROW(c.validate());
  }
  auto one = scale_to_budget(defaults, 1);
  EXPECT_EQ(one.beam_width, 1);
  EXPECT_EQ(one.max_rounds, 1);
  EXPECT_EQ(one.expansion_factor, 1);
  EXPECT_EQ(orps_programmer_budget(scale_to_budget(defaults, 260)), 260);
  EXPECT_THROW(scale_to_budget(defaults, 0), BudgetTooSmall);
}

TEST(Scaling, SweepRowsAndBudgetOneMatchesCot) {
  auto ds = load_dataset(support::fixtures() / "acceptance" / "dataset.jsonl");
  auto s = support::scripted(support::fixtures() / "acceptance" / "script");
  auto ex = support::fake_executor(8);
  auto sweep = scaling_sweep(ds, {1, 5, 20}, eval_config(), *s.gateway, *ex);
  ASSERT_EQ(sweep.rows.size(), 6u);
  ASSERT_EQ(sweep.runs.size(), 6u);
  const double expected[] = {20, 20, 40, 40, 40, 40};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(sweep.rows[i].method, i % 2 ? "bon" : "orps");
    EXPECT_EQ(sweep.rows[i].pass_at_1, expected[i]) << i;
    EXPECT_LE(sweep.rows[i].programmer_completions, 5u * static_cast<unsigned>(sweep.rows[i].budget));
  }
  EXPECT_EQ(sweep.rows[0].pass_at_1, pass_at_1("acceptance", Method{MethodKind::cot, 0}));
  EXPECT_THROW(scaling_sweep(ds, {5, 1}, eval_config(), *s.gateway, *ex), PreconditionViolation);
}

TEST(Dataset, RoundTripAndDigest) {
  support::TempDir dir;
  auto p = timed_problem();
  p.visible_tests = {"assert solve(2) == 2"};
  p.entry_point = "solve";
  p.tags = {"x"};
  write_dataset(dir / "d.jsonl", {p});
  auto ds = load_dataset(dir / "d.jsonl");
  ASSERT_EQ(ds.problems.size(), 1u);
  EXPECT_EQ(to_json(ds.problems[0]), to_json(p));
  EXPECT_EQ(ds.digest, hash::sha256_hex(read_file(dir / "d.jsonl")));
}

TEST(Dataset, Errors) {
  support::TempDir dir;
  auto write = [&](const std::string& body) {
    write_file_atomic(dir / "d.jsonl", body);
    return dir / "d.jsonl";
  };
  EXPECT_THROW(load_dataset(dir / "missing.jsonl"), DatasetError);
  EXPECT_THROW(load_dataset(write("")), DatasetError);
  EXPECT_THROW(load_dataset(write("{\"id\": \"a\", \"prompt\": \"p\", \"hidden_tests\": []}\n")), DatasetError);
  const std::string ok = "{\"id\": \"a\", \"prompt\": \"p\", \"hidden_tests\": [\"assert 1\"]}\n";
  EXPECT_THROW(load_dataset(write(ok + ok)), DatasetError);
  try {
    load_dataset(write(ok + "{not json\n"));
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  EXPECT_THROW(load_dataset(write("{\"id\": 3, \"prompt\": \"p\", \"hidden_tests\": [\"t\"]}\n")), DatasetError);
}

TEST(Import, HumanEval) {
  auto p = import_humaneval(json{{"task_id", "HumanEval/0"},
                                 {"prompt", "def add(a, b):\n"},
                                 {"canonical_solution", "    return a + b\n"},
                                 {"test", "def check(f):\n    assert f(1, 2) == 3\n"},
                                 {"entry_point", "add"}});
  EXPECT_EQ(p.id, "HumanEval/0");
  EXPECT_EQ(*p.reference_solution, "def add(a, b):\n    return a + b\n");
  ASSERT_EQ(p.hidden_tests.size(), 1u);
  EXPECT_TRUE(p.hidden_tests[0].ends_with("check(add)\n"));
  EXPECT_TRUE(p.visible_tests.empty());
  EXPECT_THROW(import_humaneval(json{{"task_id", "x"}, {"prompt", "p"}}), DatasetError);
}

TEST(Import, MbppAndLbpp) {
  auto m = import_mbpp(json{{"task_id", 11},
                            {"text", "Remove first and last occurrence."},
                            {"code", "def f(s): return s"},
                            {"test_list", {"assert f('a') == 'a'", "assert f('') == ''"}},
                            {"test_setup_code", "import re"}});
  EXPECT_EQ(m.id, "11");
  EXPECT_EQ(m.hidden_tests.size(), 2u);
  EXPECT_EQ(m.hidden_tests[0], "import re\nassert f('a') == 'a'");
  EXPECT_EQ(m.visible_tests, m.hidden_tests);

  auto l = import_lbpp(json{{"title", "lbpp/3"},
                            {"instruction", "Sort it."},
                            {"signature", "def g(xs):"},
                            {"completion", "def g(xs): return sorted(xs)"},
                            {"test_list", {"assert g([2, 1]) == [1, 2]"}},
                            {"categories", {"sorting"}}});
  EXPECT_EQ(l.id, "lbpp/3");
  EXPECT_NE(l.prompt.find("Signature:\ndef g(xs):"), std::string::npos);
  EXPECT_EQ(l.tags, std::vector<std::string>{"sorting"});
}

TEST(Import, RecordsFileFormats) {
  support::TempDir dir;
  write_file_atomic(dir / "a.json", R"([{"task_id": 1, "text": "t", "test_list": ["assert 1"]}])");
  write_file_atomic(dir / "b.jsonl", "{\"task_id\": 1, \"text\": \"t\", \"test_list\": [\"assert 1\"]}\n\n{\"task_id\": 2, \"text\": \"u\", \"test_list\": [\"assert 2\"]}\n");
  EXPECT_EQ(import_records("mbpp", dir / "a.json").size(), 1u);
  EXPECT_EQ(import_records("mbpp", dir / "b.jsonl").size(), 2u);
  EXPECT_THROW(import_records("apps", dir / "a.json"), ConfigError);
  EXPECT_THROW(import_records("mbpp", dir / "missing.jsonl"), DatasetError);
  write_file_atomic(dir / "c.jsonl", "{\"task_id\": 1, \"text\": \"t\", \"test_list\": []}\n");
  EXPECT_THROW(import_records("mbpp", dir / "c.jsonl"), DatasetError);
}
