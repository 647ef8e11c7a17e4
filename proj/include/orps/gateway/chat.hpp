#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "orps/errors.hpp"
#include "orps/util/tokens.hpp"

namespace orps {

enum class Role { programmer, critic, test_writer };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::programmer: return "programmer";
    case Role::critic: return "critic";
    case Role::test_writer: return "test_writer";
  }
  return "programmer";
}

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;
};

// Identifies a request for playback and accounting. Live backends ignore it.
struct RequestTag {
  std::string problem_id;
  Role role = Role::programmer;
  std::string variant;  // prompt variant, e.g. "code_only", "no_feedback", "cot"
  int round = 0;
  int first_index = 0;  // index of the first completion requested
  int attempt = 0;      // retry of a malformed answer
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  int n = 1;
  TokenCount max_new_tokens = 1500;
  double temperature = 0.7;
  std::uint64_t seed = 0;
  RequestTag tag;
};

struct Completion {
  std::string text;
  TokenCount prompt_tokens = 0;
  TokenCount completion_tokens = 0;
  double latency_ms = 0;
};

// Retryable transport failure (5xx, connection reset, timeout).
class TransientError : public Error {
public:
  using Error::Error;
};

class ModelBackend {
public:
  virtual ~ModelBackend() = default;
  // May return fewer than request.n completions; throws TransientError,
  // GatewayUnavailable or ContextOverflow.
  virtual std::vector<Completion> complete(const ChatRequest& request) = 0;
};

struct UsageCounters {
  std::uint64_t completions = 0;
  std::uint64_t requests = 0;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;

  UsageCounters& operator+=(const UsageCounters& o) {
    completions += o.completions;
    requests += o.requests;
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    return *this;
  }
  friend bool operator==(const UsageCounters&, const UsageCounters&) = default;
};

// Per-role usage, keyed by role name so it serializes in a stable order.
using UsageByRole = std::map<std::string, UsageCounters>;

inline UsageCounters total(const UsageByRole& usage) {
  UsageCounters t;
  for (const auto& [_, u] : usage) t += u;
  return t;
}

// Thread-safe per-role usage accumulator owned by one search or method run.
class UsageLedger {
public:
  void add(Role role, const std::vector<Completion>& out) {
    std::lock_guard lock(mutex_);
    auto& u = usage_[to_string(role)];
    ++u.requests;
    u.completions += out.size();
    for (const auto& c : out) {
      u.prompt_tokens += c.prompt_tokens;
      u.completion_tokens += c.completion_tokens;
    }
  }
  void merge(const UsageByRole& other) {
    std::lock_guard lock(mutex_);
    for (const auto& [role, u] : other) usage_[role] += u;
  }
  UsageByRole snapshot() const {
    std::lock_guard lock(mutex_);
    return usage_;
  }

private:
  mutable std::mutex mutex_;
  UsageByRole usage_;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

// Front door to a chat backend: bounded parallelism, retries with
// exponential backoff, and usage accounting.
class ModelGateway {
public:
  ModelGateway(std::shared_ptr<ModelBackend> backend, RetryPolicy retry = {},
               std::size_t max_parallel = 8)
      : backend_(std::move(backend)),
        retry_(retry),
        slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(max_parallel, 1, 1024))) {
    if (!backend_) throw ConfigError("model gateway needs a backend");
  }

  std::vector<Completion> complete_chat(const ChatRequest& request) {
    if (request.n < 1) throw PreconditionViolation("complete_chat requires n >= 1");
    if (request.messages.empty()) throw PreconditionViolation("complete_chat requires messages");

    slots_.acquire();
    struct Release {
      std::counting_semaphore<1024>& s;
      ~Release() { s.release(); }
    } release{slots_};

    auto backoff = retry_.initial_backoff;
    for (int attempt = 0;; ++attempt) {
      try {
        auto out = backend_->complete(request);
        if (static_cast<int>(out.size()) > request.n) out.resize(static_cast<std::size_t>(request.n));
        for (auto& c : out)
          c.completion_tokens = std::min<TokenCount>(c.completion_tokens, request.max_new_tokens);
        record(request.tag.role, out);
        return out;
      } catch (const TransientError& e) {
        if (attempt >= retry_.max_retries)
          throw GatewayUnavailable(std::string("model endpoint unavailable after ") +
                                   std::to_string(attempt + 1) + " attempts: " + e.what());
        spdlog::warn("transient model error (attempt {}): {}", attempt + 1, e.what());
        if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
        backoff = std::chrono::milliseconds(
            static_cast<long long>(static_cast<double>(backoff.count()) * retry_.multiplier));
      }
    }
  }

  UsageByRole usage() const {
    std::lock_guard lock(mutex_);
    return usage_;
  }

private:
  void record(Role role, const std::vector<Completion>& out) {
    std::lock_guard lock(mutex_);
    auto& u = usage_[to_string(role)];
    ++u.requests;
    u.completions += out.size();
    for (const auto& c : out) {
      u.prompt_tokens += c.prompt_tokens;
      u.completion_tokens += c.completion_tokens;
    }
  }

  std::shared_ptr<ModelBackend> backend_;
  RetryPolicy retry_;
  std::counting_semaphore<1024> slots_;
  mutable std::mutex mutex_;
  UsageByRole usage_;
};

inline TokenCount estimate_prompt_tokens(const std::vector<ChatMessage>& messages) {
  TokenCount n = 0;
  for (const auto& m : messages) n += estimate_tokens(m.content) + 4;
  return n;
}

}  // namespace orps
