#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace orps {

inline std::size_t default_parallelism() {
  auto n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

// Runs body(i) for i in [0, count) on at most max_parallel threads. If any
// invocation throws, the exception with the lowest index is rethrown after
// all workers finish, so failure reporting is deterministic.
inline void parallel_for(std::size_t count, std::size_t max_parallel,
                         const std::function<void(std::size_t)>& body) {
  if (count == 0) return;
  max_parallel = std::clamp<std::size_t>(max_parallel, 1, count);
  std::vector<std::exception_ptr> errors(count);
  if (max_parallel == 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    workers.reserve(max_parallel);
    for (std::size_t w = 0; w < max_parallel; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace orps
