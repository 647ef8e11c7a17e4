#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <unistd.h>

#include "orps/execution/execution.hpp"
#include "orps/gateway/chat.hpp"
#include "orps/gateway/scripted.hpp"

namespace orps::support {

inline std::filesystem::path fixtures() { return ORPS_FIXTURES_DIR; }
inline std::filesystem::path schema_path() { return ORPS_SCHEMA_PATH; }
inline std::string fake_runner() { return ORPS_FAKE_RUNNER; }
inline std::string cli() { return ORPS_CLI; }

inline ExecutionConfig fake_exec_config(std::size_t parallel = 4) {
  ExecutionConfig cfg;
  cfg.runner_command = {fake_runner()};
  cfg.max_parallel = parallel;
  cfg.profile_source = ProfileSource::runner_reported;
  return cfg;
}

inline std::unique_ptr<ExecutionService> fake_executor(std::size_t parallel = 4) {
  return std::make_unique<ExecutionService>(fake_exec_config(parallel));
}

struct Scripted {
  std::shared_ptr<ScriptedBackend> backend;
  std::unique_ptr<ModelGateway> gateway;
};

inline Scripted scripted(const std::filesystem::path& dir) {
  Scripted s;
  s.backend = std::make_shared<ScriptedBackend>(dir);
  s.backend->record_requests(true);
  RetryPolicy retry;
  retry.initial_backoff = std::chrono::milliseconds(0);
  s.gateway = std::make_unique<ModelGateway>(s.backend, retry, 8);
  return s;
}

// Scratch directory removed on destruction.
class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("orps-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
  std::filesystem::path path_;
};

// Writes a script file (problem, role dir, round, index) under root.
inline void put_script(const std::filesystem::path& root, const std::string& problem, const std::string& role,
                       int round, const std::string& name, const std::string& text) {
  auto dir = root / problem / role / ("round_" + std::to_string(round));
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / name, text);
}

}  // namespace orps::support
