// orps: search-based code generation and benchmark runs.
//
//   orps run --dataset d.jsonl [--method orps|orps-wt|cot|bon|orps-minus-execution|orps-minus-reasoning]
//   orps report <run-dir>
//   orps import --format humaneval|mbpp|lbpp --input dump.jsonl --output d.jsonl

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "orps/cli/commands.hpp"

namespace {

std::vector<int> parse_budgets(const std::string& s) {
  std::vector<int> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("orps"));
  spdlog::set_pattern("%H:%M:%S %^%l%$ %v");

  CLI::App app{"Outcome-refining process supervision: beam search over reasoning, code and execution feedback"};
  app.require_subcommand(1);
  app.fallthrough();
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  orps::RunOptions run;
  std::string config, mock_script, runner, profiler, run_id, budgets, out = "runs";
  int beam_width = 0, rounds = 0, samples = 0;
  std::uint64_t seed = 0;
  std::size_t max_parallel = 0;
  auto* run_cmd = app.add_subcommand("run", "Run a method over a dataset");
  run_cmd->add_option("--config", config, "JSON config file");
  run_cmd->add_option("--dataset", run.dataset, "Problem set (JSONL)")->required();
  run_cmd->add_option("--method", run.method, "orps | orps-wt | cot | bon | orps-minus-execution | orps-minus-reasoning");
  run_cmd->add_option("--bon-n", run.bon_n, "Samples for bon (default: the ORPS completion ceiling)");
  run_cmd->add_option("--beam-width", beam_width, "K");
  run_cmd->add_option("--rounds", rounds, "T");
  run_cmd->add_option("--samples", samples, "N");
  run_cmd->add_option("--seed", seed, "Top-level seed");
  run_cmd->add_option("--mock-script", mock_script, "Scripted model directory instead of a live endpoint");
  run_cmd->add_option("--runner", runner, "Guest runner command");
  run_cmd->add_option("--profiler", profiler, "auto | counters | runner");
  run_cmd->add_option("--max-parallel", max_parallel, "Concurrent model requests and runner processes");
  run_cmd->add_flag("--resume", run.resume, "Continue the run, skipping finished problems");
  run_cmd->add_option("--out", out, "Directory holding run directories");
  run_cmd->add_option("--run-id", run_id, "Run directory name (default: derived from config and dataset)");
  run_cmd->add_option("--sweep", budgets, "Also run a scaling sweep over these completion budgets, e.g. 1,5,20");

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "Regenerate report files from a finished run");
  report_cmd->add_option("run_dir", report_dir, "Run directory")->required();

  std::string format, input, output;
  auto* import_cmd = app.add_subcommand("import", "Convert a benchmark dump to the dataset format");
  import_cmd->add_option("--format", format, "humaneval | mbpp | lbpp")->required();
  import_cmd->add_option("--input", input, "Source JSONL or JSON array")->required();
  import_cmd->add_option("--output", output, "Destination JSONL")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : orps::exit_config;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  if (*run_cmd) {
    if (!config.empty()) run.config = config;
    if (!mock_script.empty()) run.mock_script = mock_script;
    if (!run_id.empty()) run.run_id = run_id;
    run.out = out;
    auto& o = run.overrides;
    if (run_cmd->count("--beam-width")) o.beam_width = beam_width;
    if (run_cmd->count("--rounds")) o.rounds = rounds;
    if (run_cmd->count("--samples")) o.samples = samples;
    if (run_cmd->count("--seed")) o.seed = seed;
    if (run_cmd->count("--max-parallel")) o.max_parallel = max_parallel;
    if (!runner.empty()) o.runner = runner;
    if (!profiler.empty()) o.profiler = profiler;
    try {
      run.sweep_budgets = parse_budgets(budgets);
    } catch (const std::exception&) {
      spdlog::error("configuration error: --sweep expects comma-separated integers");
      return orps::exit_config;
    }
    return orps::cmd_run(run);
  }
  if (*report_cmd) return orps::cmd_report(report_dir);
  return orps::cmd_import(format, input, output);
}
