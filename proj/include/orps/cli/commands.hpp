#pragma once

// Run directory layout (one directory per run id, owned through run.lock):
//
//   <out>/<run-id>/manifest.json
//   <out>/<run-id>/problem_<id>/round_<t>/...     search tree, see tree_store.hpp
//   <out>/<run-id>/problem_<id>/outcome.json      scored result, marks the problem done
//   <out>/<run-id>/sweep/<method>_<budget>.json   scaling-sweep outcomes
//   <out>/<run-id>/report.{json,md}, curves.csv, radar.csv

#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "orps/cli/config.hpp"
#include "orps/errors.hpp"
#include "orps/eval/dataset.hpp"
#include "orps/eval/methods.hpp"
#include "orps/eval/metrics.hpp"
#include "orps/eval/report.hpp"
#include "orps/execution/execution.hpp"
#include "orps/gateway/openai.hpp"
#include "orps/gateway/scripted.hpp"
#include "orps/search/tree_store.hpp"
#include "orps/util/hash.hpp"
#include "orps/util/json_io.hpp"

namespace orps {

enum ExitCode : int { exit_ok = 0, exit_config = 1, exit_dataset = 2, exit_infrastructure = 3 };

struct RunOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path dataset;
  std::string method = "orps";
  int bon_n = 0;  // 0: match the ORPS completion ceiling
  ConfigOverrides overrides;
  std::optional<std::filesystem::path> mock_script;
  bool resume = false;
  std::filesystem::path out = "runs";
  std::optional<std::string> run_id;
  std::vector<int> sweep_budgets;
  EnvLookup env = process_env();
};

// Exclusive ownership of a run directory for the life of the object.
class RunLock {
public:
  explicit RunLock(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto path = (dir / "run.lock").string();
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) throw ConfigError("cannot open lockfile " + path);
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw ConfigError("run directory " + dir.string() + " is in use by another process");
    }
  }
  ~RunLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

private:
  int fd_ = -1;
};

// Directory name for a problem id; ids that need escaping get a hash suffix
// so distinct ids never collide.
inline std::string problem_dir_name(const std::string& id) {
  std::string safe;
  bool changed = false;
  for (char c : id) {
    bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    safe += ok ? c : '_';
    changed = changed || !ok;
  }
  if (changed || safe.empty()) safe += fmt::format("-{:08x}", static_cast<std::uint32_t>(hash::fnv1a(id)));
  return "problem_" + safe;
}

inline std::string utc_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Manifest writes are serialized; problems finish concurrently.
class Manifest {
public:
  Manifest(std::filesystem::path path, json doc) : path_(std::move(path)), doc_(std::move(doc)) {}

  void set_status(const std::string& problem_id, const std::string& status) {
    std::lock_guard lock(mutex_);
    for (auto& p : doc_["problems"])
      if (p["id"] == problem_id) p["status"] = status;
    save_locked();
  }
  void set_run_status(const std::string& status) {
    std::lock_guard lock(mutex_);
    doc_["status"] = status;
    save_locked();
  }
  void save() {
    std::lock_guard lock(mutex_);
    save_locked();
  }
  const json& doc() const { return doc_; }

private:
  void save_locked() {
    doc_["updated_at"] = utc_now();
    write_json_file(path_, doc_);
  }

  std::filesystem::path path_;
  json doc_;
  std::mutex mutex_;
};

inline std::string curve_file_name(const std::string& method, int budget) {
  return fmt::format("{}_{}.json", method, budget);
}

// Rebuilds every report file from the manifest and persisted outcomes.
inline RunReport load_run_report(const std::filesystem::path& run_dir) {
  namespace fs = std::filesystem;
  const auto manifest_path = run_dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw DatasetError("no manifest in " + run_dir.string());
  try {
    const auto manifest = read_json_file(manifest_path);
    RunReport r;
    r.method = manifest.at("method").get<std::string>();
    r.dataset_digest = manifest.at("dataset_digest").get<std::string>();
    r.config = manifest.at("config");
    r.orps_programmer_budget = manifest.at("orps_programmer_budget").get<long long>();
    std::vector<ProblemOutcome> outcomes;
    for (const auto& p : manifest.at("problems")) {
      const auto path = run_dir / p.at("dir").get<std::string>() / "outcome.json";
      if (!fs::exists(path))
        throw DatasetError("run is incomplete: problem " + p.at("id").get<std::string>() + " has no outcome");
      outcomes.push_back(outcome_from_json(read_json_file(path)));
    }
    r.metrics = aggregate(std::move(outcomes));
    r.programmer_completions = r.metrics.usage.count("programmer") ? r.metrics.usage.at("programmer").completions : 0;
    for (const auto& b : manifest.value("sweep_budgets", json::array()))
      for (const char* m : {"orps", "bon"}) {
        const auto doc = read_json_file(run_dir / "sweep" / curve_file_name(m, b.get<int>()));
        std::vector<ProblemOutcome> rows;
        for (const auto& o : doc.at("outcomes")) rows.push_back(outcome_from_json(o));
        MethodRun run{Method{}, rows};
        r.curves.push_back(CurveRow{m, b.get<int>(), aggregate(rows).pass_at_1, programmer_completions(run)});
      }
    return r;
  } catch (const json::exception& e) {
    throw DatasetError("corrupt run data in " + run_dir.string() + ": " + e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw DatasetError("unreadable run data in " + run_dir.string() + ": " + e.what());
  }
}

inline std::unique_ptr<ExecutionService> make_executor(const AppConfig& cfg, bool mock) {
  ExecutionConfig ec;
  ec.runner_command = cfg.runner_command;
  if (ec.runner_command.empty()) throw ConfigError("runner command not configured (--runner or ORPS_RUNNER)");
  ec.limits = cfg.limits;
  ec.max_parallel = cfg.max_parallel;
  ec.profile_source = cfg.profiler.value_or(mock ? ProfileSource::runner_reported : ProfileSource::automatic);
  ec.profile_repetitions = cfg.profile_repetitions;
  return std::make_unique<ExecutionService>(std::move(ec));
}

inline std::unique_ptr<ModelGateway> make_gateway(const AppConfig& cfg, const std::optional<std::filesystem::path>& script) {
  std::shared_ptr<ModelBackend> backend;
  RetryPolicy retry = cfg.retry;
  if (script) {
    backend = std::make_shared<ScriptedBackend>(*script);
    retry.initial_backoff = std::chrono::milliseconds(0);
  } else {
    if (cfg.base_url.empty() || cfg.model.empty())
      throw ConfigError("live model needs a base URL and model name (or use --mock-script)");
    backend = std::make_shared<OpenAIBackend>(EndpointConfig{
        cfg.base_url, cfg.model, cfg.api_key,
        std::chrono::seconds(static_cast<long long>(cfg.request_timeout_s))});
  }
  return std::make_unique<ModelGateway>(std::move(backend), retry, cfg.max_parallel);
}

// Runs a method over a dataset inside its run directory and writes the
// report. Returns the run directory; throws on configuration, dataset or
// infrastructure errors.
inline std::filesystem::path execute_run(const RunOptions& opt) {
  namespace fs = std::filesystem;
  const AppConfig cfg = resolve_config(opt.config, opt.env, opt.overrides);
  Method method = method_from_string(opt.method, opt.bon_n);
  if (method.kind == MethodKind::bon && method.bon_n == 0)
    method.bon_n = static_cast<int>(orps_programmer_budget(cfg.eval.search));
  if (method.kind == MethodKind::bon && method.bon_n < 1) throw ConfigError("--bon-n must be >= 1");
  for (std::size_t i = 1; i < opt.sweep_budgets.size(); ++i)
    if (opt.sweep_budgets[i] < opt.sweep_budgets[i - 1]) throw ConfigError("sweep budgets must be ascending");
  for (int b : opt.sweep_budgets)
    if (b < 1) throw ConfigError("sweep budgets must be >= 1");

  const Dataset dataset = load_dataset(opt.dataset);
  const json snapshot = config_snapshot(cfg);
  const std::string run_id =
      opt.run_id.value_or("run-" + hash::sha256_hex(dump_json(snapshot) + "\n" + dataset.digest + "\n" +
                                                     method.name() + "\n" + dump_json(json(opt.sweep_budgets)))
                                       .substr(0, 12));
  const fs::path run_dir = opt.out / run_id;
  RunLock lock(run_dir);

  const auto manifest_path = run_dir / "manifest.json";
  json manifest_doc;
  if (opt.resume && fs::exists(manifest_path)) {
    manifest_doc = read_json_file(manifest_path);
    if (manifest_doc.value("dataset_digest", "") != dataset.digest)
      throw DatasetError("resume requires the dataset the run started with (digest mismatch)");
    if (manifest_doc.value("config", json()) != snapshot || manifest_doc.value("method", "") != method.name())
      throw ConfigError("resume requires the configuration and method the run started with");
  } else {
    for (const auto& e : fs::directory_iterator(run_dir))
      if (e.path().filename() != "run.lock") fs::remove_all(e.path());
    json problems = json::array();
    for (const auto& p : dataset.problems)
      problems.push_back(json{{"id", p.id}, {"dir", problem_dir_name(p.id)}, {"status", "pending"}});
    manifest_doc = json{{"run_id", run_id},
                        {"method", method.name()},
                        {"dataset", opt.dataset.string()},
                        {"dataset_digest", dataset.digest},
                        {"config", snapshot},
                        {"orps_programmer_budget", orps_programmer_budget(cfg.eval.search)},
                        {"sweep_budgets", opt.sweep_budgets},
                        {"problems", std::move(problems)},
                        {"status", "running"},
                        {"created_at", utc_now()}};
  }
  Manifest manifest(manifest_path, manifest_doc);
  manifest.set_run_status("running");

  auto gateway = make_gateway(cfg, opt.mock_script);
  auto executor = make_executor(cfg, opt.mock_script.has_value());

  std::vector<TreeStore> stores;
  for (const auto& p : dataset.problems) stores.emplace_back(run_dir / problem_dir_name(p.id));
  auto store_of = [&](const ProblemRecord& p) -> const TreeStore& {
    for (std::size_t i = 0; i < dataset.problems.size(); ++i)
      if (dataset.problems[i].id == p.id) return stores[i];
    throw Error("unknown problem " + p.id);
  };

  try {
    run_method(
        dataset, method, cfg.eval, *gateway, *executor,
        [&](const ProblemRecord& p) {
          const auto& store = store_of(p);
          if (!opt.resume) fs::remove_all(store.dir());
          manifest.set_status(p.id, "running");
          return ProblemContext{&store, opt.resume};
        },
        [&](const ProblemRecord& p) -> std::optional<ProblemOutcome> {
          if (!opt.resume) return std::nullopt;
          const auto path = store_of(p).dir() / "outcome.json";
          if (!fs::exists(path)) return std::nullopt;
          spdlog::info("problem {}: already done, skipping", p.id);
          return outcome_from_json(read_json_file(path));
        },
        [&](std::size_t i, const ProblemOutcome& o) {
          write_json_file(stores[i].dir() / "outcome.json", to_json(o));
          manifest.set_status(o.problem_id, o.error.empty() ? "done" : "failed");
          spdlog::info("problem {}: {} ({}/{} hidden tests)", o.problem_id,
                       o.all_pass() ? "solved" : o.error.empty() ? "unsolved" : "failed", o.tests_passed,
                       o.tests_total);
        });

    if (!opt.sweep_budgets.empty()) {
      fs::create_directories(run_dir / "sweep");
      auto sweep = scaling_sweep(dataset, opt.sweep_budgets, cfg.eval, *gateway, *executor);
      for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
        json rows = json::array();
        for (const auto& o : sweep.runs[i].outcomes) rows.push_back(to_json(o));
        write_json_file(run_dir / "sweep" / curve_file_name(sweep.rows[i].method, sweep.rows[i].budget),
                        json{{"method", sweep.rows[i].method}, {"budget", sweep.rows[i].budget}, {"outcomes", rows}});
      }
    }
  } catch (...) {
    manifest.set_run_status("failed");
    throw;
  }
  manifest.set_run_status("done");
  write_report_files(run_dir, load_run_report(run_dir));
  return run_dir;
}

template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return exit_config;
  } catch (const DatasetError& e) {
    spdlog::error("dataset error: {}", e.what());
    return exit_dataset;
  } catch (const GatewayUnavailable& e) {
    spdlog::error("model gateway failure: {}", e.what());
    return exit_infrastructure;
  } catch (const ExecutorFault& e) {
    spdlog::error("execution infrastructure failure: {}", e.what());
    return exit_infrastructure;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return exit_infrastructure;
  }
}

inline int cmd_run(const RunOptions& opt) {
  return guarded([&] {
    auto dir = execute_run(opt);
    std::cout << dir.string() << "\n";
    return static_cast<int>(exit_ok);
  });
}

inline int cmd_report(const std::filesystem::path& run_dir) {
  return guarded([&] {
    write_report_files(run_dir, load_run_report(run_dir));
    std::cout << (run_dir / "report.md").string() << "\n";
    return static_cast<int>(exit_ok);
  });
}

inline int cmd_import(const std::string& format, const std::filesystem::path& input,
                      const std::filesystem::path& output) {
  return guarded([&] {
    auto problems = import_records(format, input);
    write_dataset(output, problems);
    std::cout << fmt::format("imported {} problems into {}\n", problems.size(), output.string());
    return static_cast<int>(exit_ok);
  });
}

}  // namespace orps
