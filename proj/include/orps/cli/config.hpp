#pragma once

// Run configuration. Layers apply in a fixed order, each overriding the one
// before: built-in defaults < config file < environment < command-line flags.
//
// Environment: ORPS_API_KEY, ORPS_BASE_URL, ORPS_MODEL, ORPS_RUNNER,
// ORPS_SEED, ORPS_BEAM_WIDTH, ORPS_ROUNDS, ORPS_SAMPLES, ORPS_MAX_PARALLEL,
// ORPS_PROFILER.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "orps/errors.hpp"
#include "orps/eval/methods.hpp"
#include "orps/execution/execution.hpp"
#include "orps/gateway/openai.hpp"
#include "orps/util/json_io.hpp"

namespace orps {

struct AppConfig {
  EvalConfig eval;
  ResourceLimits limits;
  std::vector<std::string> runner_command;
  std::optional<ProfileSource> profiler;  // unset: auto, or runner-reported under a mock script
  int profile_repetitions = 3;
  std::string base_url;
  std::string model;
  std::string api_key;
  double request_timeout_s = 600;
  RetryPolicy retry;
  std::uint64_t seed = 0;
  std::size_t max_parallel = 8;
};

// Flag values; unset fields leave lower layers untouched.
struct ConfigOverrides {
  std::optional<int> beam_width, rounds, samples;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_parallel;
  std::optional<std::string> runner, profiler, base_url, model;
};

using EnvLookup = std::function<std::optional<std::string>(const char*)>;

inline EnvLookup process_env() {
  return [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

inline std::vector<std::string> split_command(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

namespace detail {

template <typename T>
T number_from(const std::string& what, const std::string& text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError(what + ": '" + text + "' is not a valid integer");
  return v;
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

template <typename T>
void take(const json& obj, const char* key, T& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type");
  }
}

}  // namespace detail

inline void apply_config_file(AppConfig& c, const json& doc) {
  using detail::take;
  if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
  detail::reject_unknown(doc, {"search", "critic", "limits", "runner", "model", "evaluation", "seed", "max_parallel"}, "");
  take(doc, "seed", c.seed, "");
  take(doc, "max_parallel", c.max_parallel, "");

  if (auto it = doc.find("search"); it != doc.end()) {
    const auto& s = *it;
    detail::reject_unknown(s, {"beam_width", "rounds", "samples", "context_tokens", "generation_tokens",
                               "completion", "reward_threshold", "profile_candidates", "programmer_temperature"},
                           "search.");
    auto& sc = c.eval.search;
    take(s, "beam_width", sc.beam_width, "search.");
    take(s, "rounds", sc.max_rounds, "search.");
    take(s, "samples", sc.expansion_factor, "search.");
    take(s, "context_tokens", sc.context_budget, "search.");
    take(s, "generation_tokens", sc.generation_budget, "search.");
    take(s, "profile_candidates", sc.profile_candidates, "search.");
    take(s, "programmer_temperature", c.eval.roles.programmer_temperature, "search.");
    std::string policy;
    take(s, "completion", policy, "search.");
    if (policy == "reward_threshold") {
      double v = 0;
      if (!s.contains("reward_threshold")) throw ConfigError("search.completion reward_threshold needs search.reward_threshold");
      take(s, "reward_threshold", v, "search.");
      sc.completion = CompletionPolicy::reward_threshold(v);
    } else if (policy == "all_visible_tests_pass") {
      sc.completion = CompletionPolicy::all_visible_tests_pass();
    } else if (!policy.empty()) {
      throw ConfigError("search.completion must be all_visible_tests_pass or reward_threshold");
    }
  }
  if (auto it = doc.find("critic"); it != doc.end()) {
    detail::reject_unknown(*it, {"score_min", "score_max", "temperature"}, "critic.");
    take(*it, "score_min", c.eval.roles.score_range.min, "critic.");
    take(*it, "score_max", c.eval.roles.score_range.max, "critic.");
    take(*it, "temperature", c.eval.roles.critic_temperature, "critic.");
  }
  if (auto it = doc.find("limits"); it != doc.end()) {
    detail::reject_unknown(*it, {"cpu_seconds", "memory_mib", "max_tests"}, "limits.");
    take(*it, "cpu_seconds", c.limits.cpu_seconds, "limits.");
    std::int64_t mib = c.limits.memory_bytes / (1024 * 1024);
    take(*it, "memory_mib", mib, "limits.");
    c.limits.memory_bytes = mib * 1024 * 1024;
    take(*it, "max_tests", c.limits.max_tests, "limits.");
  }
  if (auto it = doc.find("runner"); it != doc.end()) {
    detail::reject_unknown(*it, {"command", "profiler", "profile_repetitions"}, "runner.");
    if (auto cmd = it->find("command"); cmd != it->end()) {
      if (cmd->is_string())
        c.runner_command = split_command(cmd->get<std::string>());
      else
        take(*it, "command", c.runner_command, "runner.");
    }
    std::string prof;
    take(*it, "profiler", prof, "runner.");
    if (!prof.empty()) c.profiler = profile_source_from_string(prof);
    take(*it, "profile_repetitions", c.profile_repetitions, "runner.");
  }
  if (auto it = doc.find("model"); it != doc.end()) {
    detail::reject_unknown(*it, {"base_url", "name", "timeout_seconds", "max_retries", "initial_backoff_ms"}, "model.");
    take(*it, "base_url", c.base_url, "model.");
    take(*it, "name", c.model, "model.");
    take(*it, "timeout_seconds", c.request_timeout_s, "model.");
    take(*it, "max_retries", c.retry.max_retries, "model.");
    long long backoff = c.retry.initial_backoff.count();
    take(*it, "initial_backoff_ms", backoff, "model.");
    c.retry.initial_backoff = std::chrono::milliseconds(backoff);
  }
  if (auto it = doc.find("evaluation"); it != doc.end()) {
    detail::reject_unknown(*it, {"generated_tests", "problem_parallel"}, "evaluation.");
    take(*it, "generated_tests", c.eval.generated_tests, "evaluation.");
    take(*it, "problem_parallel", c.eval.problem_parallel, "evaluation.");
  }
}

inline void apply_env(AppConfig& c, const EnvLookup& env) {
  if (auto v = env("ORPS_API_KEY")) c.api_key = *v;
  if (auto v = env("ORPS_BASE_URL")) c.base_url = *v;
  if (auto v = env("ORPS_MODEL")) c.model = *v;
  if (auto v = env("ORPS_RUNNER")) c.runner_command = split_command(*v);
  if (auto v = env("ORPS_PROFILER")) c.profiler = profile_source_from_string(*v);
  if (auto v = env("ORPS_SEED")) c.seed = detail::number_from<std::uint64_t>("ORPS_SEED", *v);
  if (auto v = env("ORPS_BEAM_WIDTH")) c.eval.search.beam_width = detail::number_from<int>("ORPS_BEAM_WIDTH", *v);
  if (auto v = env("ORPS_ROUNDS")) c.eval.search.max_rounds = detail::number_from<int>("ORPS_ROUNDS", *v);
  if (auto v = env("ORPS_SAMPLES")) c.eval.search.expansion_factor = detail::number_from<int>("ORPS_SAMPLES", *v);
  if (auto v = env("ORPS_MAX_PARALLEL")) c.max_parallel = detail::number_from<std::size_t>("ORPS_MAX_PARALLEL", *v);
}

inline void apply_overrides(AppConfig& c, const ConfigOverrides& o) {
  if (o.beam_width) c.eval.search.beam_width = *o.beam_width;
  if (o.rounds) c.eval.search.max_rounds = *o.rounds;
  if (o.samples) c.eval.search.expansion_factor = *o.samples;
  if (o.seed) c.seed = *o.seed;
  if (o.max_parallel) c.max_parallel = *o.max_parallel;
  if (o.runner) c.runner_command = split_command(*o.runner);
  if (o.profiler) c.profiler = profile_source_from_string(*o.profiler);
  if (o.base_url) c.base_url = *o.base_url;
  if (o.model) c.model = *o.model;
}

inline AppConfig resolve_config(const std::optional<std::filesystem::path>& file, const EnvLookup& env,
                                const ConfigOverrides& flags) {
  AppConfig c;
  if (file) {
    json doc;
    try {
      doc = json::parse(read_file(*file));
    } catch (const json::exception& e) {
      throw ConfigError("config file " + file->string() + " is not valid JSON: " + e.what());
    } catch (const std::exception&) {
      throw ConfigError("cannot read config file " + file->string());
    }
    apply_config_file(c, doc);
  }
  apply_env(c, env);
  apply_overrides(c, flags);

  if (c.max_parallel < 1) throw ConfigError("max_parallel must be >= 1");
  c.eval.search.rng_seed = c.seed;
  c.eval.search.max_parallel = c.max_parallel;
  c.eval.search.validate();
  c.eval.roles.score_range.validate();
  c.eval.roles.generation_budget = c.eval.search.generation_budget;
  if (c.eval.generated_tests < 1) throw ConfigError("evaluation.generated_tests must be >= 1");
  if (c.eval.problem_parallel < 1) throw ConfigError("evaluation.problem_parallel must be >= 1");
  try {
    c.limits.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

// Everything that can change results. Secrets and parallelism are left out,
// so the snapshot (and the run id derived from it) is stable across machines.
inline json config_snapshot(const AppConfig& c) {
  const auto& s = c.eval.search;
  json completion{{"policy", s.completion.kind == CompletionPolicy::Kind::all_visible_tests_pass
                                 ? "all_visible_tests_pass"
                                 : "reward_threshold"}};
  if (s.completion.kind == CompletionPolicy::Kind::reward_threshold) completion["threshold"] = s.completion.threshold;
  return json{{"search",
               {{"beam_width", s.beam_width},
                {"rounds", s.max_rounds},
                {"samples", s.expansion_factor},
                {"context_tokens", s.context_budget},
                {"generation_tokens", s.generation_budget},
                {"completion", completion},
                {"profile_candidates", s.profile_candidates},
                {"programmer_temperature", c.eval.roles.programmer_temperature}}},
              {"critic",
               {{"score_min", c.eval.roles.score_range.min},
                {"score_max", c.eval.roles.score_range.max},
                {"temperature", c.eval.roles.critic_temperature}}},
              {"limits",
               {{"cpu_seconds", c.limits.cpu_seconds},
                {"memory_mib", c.limits.memory_bytes / (1024 * 1024)},
                {"max_tests", c.limits.max_tests}}},
              {"evaluation", {{"generated_tests", c.eval.generated_tests}}},
              {"model", {{"name", c.model}}},
              {"seed", c.seed}};
}

}  // namespace orps
