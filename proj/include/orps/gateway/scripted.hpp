#pragma once

// Deterministic offline model. A script directory holds one response file per
// (problem, role, round, index):
//
//   <script>/<problem-id>/<role>[.<variant>]/round_<r>/<index>.txt
//   <script>/<problem-id>/critic/round_<r>/<index>.retry.txt   (second attempt)
//   <script>/_default/...                                       (any problem)
//
// Resolution, in order:
//   - problem directory, else _default
//   - "<role>.<variant>" when the request carries a variant and that directory
//     exists, else "<role>"
//   - round_<r>, else the highest round_<k> with k < r
//   - <index>.txt (or <index>.retry.txt for attempt > 0, falling back to
//     <index>.txt), else the round's files cycled: sorted[index % count]
//
// A request that resolves to nothing fails with GatewayUnavailable.

#include <filesystem>
#include <atomic>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "orps/errors.hpp"
#include "orps/gateway/chat.hpp"
#include "orps/util/json_io.hpp"
#include "orps/util/text.hpp"

namespace orps {

class ScriptedBackend : public ModelBackend {
public:
  explicit ScriptedBackend(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw ConfigError("mock script directory not found: " + root.string());
    for (const auto& problem : fs::directory_iterator(root)) {
      if (!problem.is_directory()) continue;
      auto& roles = script_[problem.path().filename().string()];
      for (const auto& role : fs::directory_iterator(problem.path())) {
        if (!role.is_directory()) continue;
        auto& rounds = roles[role.path().filename().string()];
        for (const auto& round : fs::directory_iterator(role.path())) {
          auto name = round.path().filename().string();
          if (!round.is_directory() || !text::starts_with(name, "round_")) continue;
          int r = parse_int(name.substr(6)).value_or(-1);
          if (r < 0) continue;
          auto& entries = rounds[r];
          for (const auto& file : fs::directory_iterator(round.path())) {
            auto fname = file.path().filename().string();
            bool retry = fname.size() > 10 && fname.ends_with(".retry.txt");
            std::string stem = retry ? fname.substr(0, fname.size() - 10)
                                     : (fname.ends_with(".txt") ? fname.substr(0, fname.size() - 4) : "");
            auto idx = parse_int(stem);
            if (!idx) continue;
            (retry ? entries.retry : entries.main)[*idx] = read_file(file.path());
          }
        }
      }
    }
  }

  std::vector<Completion> complete(const ChatRequest& request) override {
    if (record_) {
      std::lock_guard lock(log_mutex_);
      log_.push_back(request);
    }
    const auto prompt_tokens = estimate_prompt_tokens(request.messages);
    std::vector<Completion> out;
    out.reserve(static_cast<std::size_t>(request.n));
    for (int k = 0; k < request.n; ++k) {
      Completion c;
      c.text = text::truncate_utf8(lookup(request.tag, request.tag.first_index + k),
                                   bytes_for_tokens(request.max_new_tokens));
      c.prompt_tokens = prompt_tokens;
      c.completion_tokens = estimate_tokens(c.text);
      c.latency_ms = 0;
      out.push_back(std::move(c));
    }
    return out;
  }

  // Playback resolution without side effects.
  std::string lookup(const RequestTag& tag, int index) const {
    auto problem = script_.find(tag.problem_id);
    if (problem == script_.end()) problem = script_.find("_default");
    if (problem == script_.end()) miss(tag, index);

    const auto& roles = problem->second;
    auto role = roles.end();
    if (!tag.variant.empty()) role = roles.find(std::string(to_string(tag.role)) + "." + tag.variant);
    if (role == roles.end()) role = roles.find(to_string(tag.role));
    if (role == roles.end()) miss(tag, index);

    const auto& rounds = role->second;
    auto round = rounds.upper_bound(tag.round);
    if (round == rounds.begin()) miss(tag, index);
    --round;

    const auto& entries = round->second;
    if (tag.attempt > 0)
      if (auto it = entries.retry.find(index); it != entries.retry.end()) return it->second;
    if (auto it = entries.main.find(index); it != entries.main.end()) return it->second;
    if (entries.main.empty()) miss(tag, index);
    auto it = entries.main.begin();
    std::advance(it, static_cast<long>(static_cast<std::size_t>(index) % entries.main.size()));
    return it->second;
  }

  void record_requests(bool on) { record_ = on; }

  std::vector<ChatRequest> requests() const {
    std::lock_guard lock(log_mutex_);
    return log_;
  }

private:
  struct Entries {
    std::map<int, std::string> main;
    std::map<int, std::string> retry;
  };

  static std::optional<int> parse_int(const std::string& s) {
    if (s.empty() || s.size() > 9) return std::nullopt;
    int v = 0;
    for (char c : s) {
      if (c < '0' || c > '9') return std::nullopt;
      v = v * 10 + (c - '0');
    }
    return v;
  }

  [[noreturn]] static void miss(const RequestTag& tag, int index) {
    throw GatewayUnavailable("mock script has no response for problem '" + tag.problem_id +
                             "', role " + to_string(tag.role) +
                             (tag.variant.empty() ? "" : "." + tag.variant) + ", round " +
                             std::to_string(tag.round) + ", index " + std::to_string(index));
  }

  std::map<std::string, std::map<std::string, std::map<int, Entries>>> script_;
  std::atomic<bool> record_{false};
  mutable std::mutex log_mutex_;
  std::vector<ChatRequest> log_;
};

}  // namespace orps
