#include <map>
#include <thread>

#include <gtest/gtest.h>

#include "orps/cli/commands.hpp"
#include "orps/execution/subprocess.hpp"
#include "support/harness.hpp"

using namespace orps;
namespace fs = std::filesystem;

namespace {

EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars = std::move(vars)](const char* name) -> std::optional<std::string> {
    auto it = vars.find(name);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

RunOptions acceptance_run(const fs::path& out, const std::string& method = "orps") {
  RunOptions o;
  o.dataset = support::fixtures() / "acceptance" / "dataset.jsonl";
  o.mock_script = support::fixtures() / "acceptance" / "script";
  o.method = method;
  o.overrides.beam_width = 3;
  o.overrides.rounds = 5;
  o.overrides.samples = 4;
  o.overrides.seed = 7;
  o.overrides.runner = support::fake_runner();
  o.out = out;
  o.env = env_of({});
  return o;
}

int cli(const std::vector<std::string>& args) {
  process::SpawnOptions opts;
  opts.argv = {support::cli(), "-q"};
  opts.argv.insert(opts.argv.end(), args.begin(), args.end());
  opts.timeout = std::chrono::milliseconds(120000);
  return process::run(opts).exit_code;
}

std::vector<std::string> acceptance_args(const fs::path& out) {
  return {"run",           "--dataset",     (support::fixtures() / "acceptance" / "dataset.jsonl").string(),
          "--mock-script", (support::fixtures() / "acceptance" / "script").string(),
          "--runner",      support::fake_runner(),
          "--beam-width",  "3",
          "--rounds",      "5",
          "--samples",     "4",
          "--seed",        "7",
          "--out",         out.string(),
          "--run-id",      "cli"};
}

}  // namespace

TEST(Config, DefaultsMatchDocumentedValues) {
  auto c = resolve_config(std::nullopt, env_of({}), {});
  EXPECT_EQ(c.eval.search.beam_width, 3);
  EXPECT_EQ(c.eval.search.max_rounds, 5);
  EXPECT_EQ(c.eval.search.expansion_factor, 20);
  EXPECT_EQ(c.eval.search.context_budget, 18000u);
  EXPECT_EQ(c.eval.search.generation_budget, 1500u);
  EXPECT_EQ(c.limits.cpu_seconds, 5);
  EXPECT_EQ(c.limits.memory_bytes, 512LL * 1024 * 1024);
  EXPECT_EQ(c.limits.max_tests, 15);
}

TEST(Config, CommittedExampleHoldsDefaults) {
  const auto example = support::fixtures().parent_path().parent_path() / "config" / "orps.example.json";
  auto defaults = config_snapshot(resolve_config(std::nullopt, env_of({}), {}));
  auto loaded = resolve_config(example, env_of({}), {});
  auto snap = config_snapshot(loaded);
  for (const char* section : {"search", "critic", "limits", "evaluation", "seed"})
    EXPECT_EQ(snap.at(section), defaults.at(section)) << section;
  EXPECT_EQ(loaded.runner_command, std::vector<std::string>{"orps-runner"});
  EXPECT_EQ(loaded.profiler, ProfileSource::automatic);
}

TEST(Config, EachLayerOverridesTheOneBelow) {
  support::TempDir dir;
  write_file_atomic(dir / "c.json", R"({"search": {"beam_width": 4, "rounds": 6, "samples": 7}, "seed": 11})");
  auto file = std::optional<fs::path>(dir / "c.json");

  auto from_file = resolve_config(file, env_of({}), {});
  EXPECT_EQ(from_file.eval.search.beam_width, 4);
  EXPECT_EQ(from_file.eval.search.max_rounds, 6);
  EXPECT_EQ(from_file.eval.search.expansion_factor, 7);
  EXPECT_EQ(from_file.seed, 11u);

  auto env = env_of({{"ORPS_ROUNDS", "8"}, {"ORPS_SEED", "12"}});
  auto with_env = resolve_config(file, env, {});
  EXPECT_EQ(with_env.eval.search.beam_width, 4);
  EXPECT_EQ(with_env.eval.search.max_rounds, 8);
  EXPECT_EQ(with_env.seed, 12u);

  ConfigOverrides flags;
  flags.seed = 13;
  auto with_flags = resolve_config(file, env, flags);
  EXPECT_EQ(with_flags.eval.search.max_rounds, 8);
  EXPECT_EQ(with_flags.seed, 13u);
  EXPECT_EQ(with_flags.eval.search.rng_seed, 13u);
}

TEST(Config, RejectsBadInput) {
  support::TempDir dir;
  auto bad = [&](const std::string& body) {
    write_file_atomic(dir / "c.json", body);
    return std::optional<fs::path>(dir / "c.json");
  };
  EXPECT_THROW(resolve_config(bad(R"({"serch": {}})"), env_of({}), {}), ConfigError);
  EXPECT_THROW(resolve_config(bad(R"({"search": {"beam_width": "3"}})"), env_of({}), {}), ConfigError);
  EXPECT_THROW(resolve_config(bad("{"), env_of({}), {}), ConfigError);
  EXPECT_THROW(resolve_config(dir / "missing.json", env_of({}), {}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, env_of({{"ORPS_BEAM_WIDTH", "three"}}), {}), ConfigError);
  ConfigOverrides zero;
  zero.beam_width = 0;
  EXPECT_THROW(resolve_config(std::nullopt, env_of({}), zero), ConfigError);
  EXPECT_THROW(resolve_config(bad(R"({"search": {"generation_tokens": 20000}})"), env_of({}), {}), ConfigError);
}

TEST(Config, SnapshotOmitsSecrets) {
  auto c = resolve_config(std::nullopt, env_of({{"ORPS_API_KEY", "sk-secret"}}), {});
  EXPECT_EQ(dump_json(config_snapshot(c)).find("sk-secret"), std::string::npos);
}

TEST(ProblemDirs, DistinctAndSafe) {
  EXPECT_EQ(problem_dir_name("p1"), "problem_p1");
  auto a = problem_dir_name("HumanEval/1"), b = problem_dir_name("HumanEval_1");
  EXPECT_NE(a, b);
  EXPECT_EQ(a.find('/'), std::string::npos);
}

TEST(Run, WritesReportAndPerProblemOutcomes) {
  support::TempDir out;
  auto dir = execute_run(acceptance_run(out.path()));
  for (const char* f : {"manifest.json", "report.json", "report.md", "curves.csv", "radar.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  auto report = read_json_file(dir / "report.json");
  EXPECT_EQ(report.at("method"), "orps");
  EXPECT_EQ(report.at("metrics").at("pass_at_1"), 100.0);
  for (int i = 1; i <= 5; ++i)
    EXPECT_TRUE(fs::exists(dir / problem_dir_name("p" + std::to_string(i)) / "outcome.json"));
  auto manifest = read_json_file(dir / "manifest.json");
  EXPECT_EQ(manifest.at("status"), "done");
  for (const auto& p : manifest.at("problems")) EXPECT_EQ(p.at("status"), "done");
}

TEST(Run, RerunIsByteIdentical) {
  support::TempDir a, b;
  auto da = execute_run(acceptance_run(a.path()));
  auto db = execute_run(acceptance_run(b.path()));
  EXPECT_EQ(da.filename(), db.filename());
  for (const char* f : {"report.json", "report.md", "curves.csv", "radar.csv"})
    EXPECT_EQ(read_file(da / f), read_file(db / f)) << f;
}

TEST(Run, ResumeSkipsFinishedProblems) {
  support::TempDir out;
  auto opts = acceptance_run(out.path());
  auto dir = execute_run(opts);
  const auto full_report = read_file(dir / "report.json");
  std::map<std::string, fs::file_time_type> kept;
  for (const char* id : {"p1", "p2"}) kept[id] = fs::last_write_time(dir / problem_dir_name(id) / "outcome.json");
  for (const char* id : {"p3", "p4", "p5"}) fs::remove(dir / problem_dir_name(id) / "outcome.json");

  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  opts.resume = true;
  EXPECT_EQ(execute_run(opts), dir);
  for (const auto& [id, t] : kept) EXPECT_EQ(fs::last_write_time(dir / problem_dir_name(id) / "outcome.json"), t) << id;
  for (const char* id : {"p3", "p4", "p5"}) EXPECT_TRUE(fs::exists(dir / problem_dir_name(id) / "outcome.json"));
  EXPECT_EQ(read_file(dir / "report.json"), full_report);
}

TEST(Run, ResumeRefusesChangedConfig) {
  support::TempDir out;
  auto opts = acceptance_run(out.path());
  opts.run_id = "fixed";
  execute_run(opts);
  opts.resume = true;
  opts.overrides.seed = 8;
  EXPECT_THROW(execute_run(opts), ConfigError);
}

TEST(Run, BonSampleCountInManifest) {
  support::TempDir out;
  auto opts = acceptance_run(out.path(), "bon");
  opts.bon_n = 60;
  auto dir = execute_run(opts);
  EXPECT_EQ(read_json_file(dir / "manifest.json").at("method"), "bon(60)");

  auto defaulted = acceptance_run(out.path(), "bon");
  auto ddir = execute_run(defaulted);
  EXPECT_EQ(read_json_file(ddir / "manifest.json").at("method"), "bon(52)");
  EXPECT_EQ(read_json_file(ddir / "manifest.json").at("orps_programmer_budget"), 52);
}

TEST(Run, SweepWritesCurves) {
  support::TempDir out;
  auto opts = acceptance_run(out.path());
  opts.sweep_budgets = {1, 5};
  auto dir = execute_run(opts);
  auto csv = read_file(dir / "curves.csv");
  EXPECT_EQ(text::count_occurrences(csv, "\n"), 5u);  // header plus four rows
  EXPECT_TRUE(fs::exists(dir / "sweep" / "orps_5.json"));
  EXPECT_TRUE(fs::exists(dir / "sweep" / "bon_1.json"));
}

TEST(Report, RegeneratesIdenticalFiles) {
  support::TempDir out;
  auto dir = execute_run(acceptance_run(out.path()));
  const auto before = read_file(dir / "report.json");
  const auto md = read_file(dir / "report.md");
  fs::remove(dir / "report.json");
  EXPECT_EQ(cmd_report(dir), 0);
  EXPECT_EQ(read_file(dir / "report.json"), before);
  EXPECT_EQ(read_file(dir / "report.md"), md);
}

TEST(Report, EmptyOrIncompleteRunIsDatasetError) {
  support::TempDir out;
  EXPECT_EQ(cmd_report(out.path()), exit_dataset);
  auto dir = execute_run(acceptance_run(out.path()));
  fs::remove(dir / problem_dir_name("p4") / "outcome.json");
  EXPECT_EQ(cmd_report(dir), exit_dataset);
}

TEST(Import, WritesDataset) {
  support::TempDir dir;
  write_file_atomic(dir / "mbpp.jsonl", "{\"task_id\": 2, \"text\": \"t\", \"test_list\": [\"assert 1\"]}\n");
  EXPECT_EQ(cmd_import("mbpp", dir / "mbpp.jsonl", dir / "out.jsonl"), 0);
  EXPECT_EQ(load_dataset(dir / "out.jsonl").problems.at(0).id, "2");
  EXPECT_EQ(cmd_import("apps", dir / "mbpp.jsonl", dir / "x.jsonl"), exit_config);
  EXPECT_EQ(cmd_import("mbpp", dir / "none.jsonl", dir / "x.jsonl"), exit_dataset);
}

TEST(Binary, ExitCodes) {
  support::TempDir out;
  auto args = acceptance_args(out.path());
  EXPECT_EQ(cli(args), 0);
  EXPECT_TRUE(fs::exists(out / "cli" / "report.json"));
  EXPECT_EQ(cli({"report", (out / "cli").string()}), 0);

  auto bad_config = args;
  bad_config.insert(bad_config.end(), {"--beam-width", "0"});
  EXPECT_EQ(cli(bad_config), 1);
  EXPECT_EQ(cli({"run", "--dataset", "x.jsonl", "--method", "beam"}), 1);
  EXPECT_EQ(cli({"run", "--nonsense"}), 1);

  auto bad_dataset = args;
  bad_dataset[2] = (out / "missing.jsonl").string();
  EXPECT_EQ(cli(bad_dataset), 2);
  EXPECT_EQ(cli({"report", (out / "nothing").string()}), 2);

  // No script entry for this problem: the gateway is unavailable.
  support::TempDir empty_script;
  auto outage = args;
  outage[4] = empty_script.path().string();
  EXPECT_EQ(cli(outage), 3);

  auto broken_runner = args;
  broken_runner[6] = "/nonexistent/runner";
  EXPECT_EQ(cli(broken_runner), 3);
}
