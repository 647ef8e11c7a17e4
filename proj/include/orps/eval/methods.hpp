#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "orps/errors.hpp"
#include "orps/eval/dataset.hpp"
#include "orps/eval/metrics.hpp"
#include "orps/execution/execution.hpp"
#include "orps/gateway/chat.hpp"
#include "orps/gateway/parsing.hpp"
#include "orps/gateway/roles.hpp"
#include "orps/gateway/templates.hpp"
#include "orps/search/search.hpp"
#include "orps/search/tree_store.hpp"
#include "orps/util/hash.hpp"
#include "orps/util/parallel.hpp"

namespace orps {

enum class MethodKind { orps, orps_with_tests, cot, bon, orps_minus_execution, orps_minus_reasoning };

struct Method {
  MethodKind kind = MethodKind::orps;
  int bon_n = 0;  // bon only

  std::string name() const {
    switch (kind) {
      case MethodKind::orps: return "orps";
      case MethodKind::orps_with_tests: return "orps_with_tests";
      case MethodKind::cot: return "cot";
      case MethodKind::bon: return fmt::format("bon({})", bon_n);
      case MethodKind::orps_minus_execution: return "orps_minus_execution";
      case MethodKind::orps_minus_reasoning: return "orps_minus_reasoning";
    }
    return "orps";
  }
  bool is_search() const { return kind != MethodKind::cot && kind != MethodKind::bon; }
};

// Accepts both the CLI spellings (orps-wt) and report names (orps_with_tests).
inline Method method_from_string(std::string s, int bon_n = 0) {
  std::replace(s.begin(), s.end(), '-', '_');
  Method m;
  if (s == "orps") m.kind = MethodKind::orps;
  else if (s == "orps_wt" || s == "orps_with_tests") m.kind = MethodKind::orps_with_tests;
  else if (s == "cot") m.kind = MethodKind::cot;
  else if (s == "bon") m.kind = MethodKind::bon;
  else if (s == "orps_minus_execution") m.kind = MethodKind::orps_minus_execution;
  else if (s == "orps_minus_reasoning") m.kind = MethodKind::orps_minus_reasoning;
  else throw ConfigError("unknown method '" + s + "'");
  m.bon_n = bon_n;
  return m;
}

struct EvalConfig {
  SearchConfig search;  // rng_seed here is the top-level seed
  RoleSettings roles;
  int generated_tests = 10;
  std::size_t problem_parallel = 2;
};

// Most programmer completions one ORPS run can draw: N in round 1, then K*N
// per round. Critic and test-writer calls are not counted.
inline long long orps_programmer_budget(const SearchConfig& c) {
  return static_cast<long long>(c.expansion_factor) *
         (1 + static_cast<long long>(c.max_rounds - 1) * c.beam_width);
}

inline std::uint64_t problem_seed(std::uint64_t seed, const std::string& problem_id) {
  return hash::mix(seed, hash::fnv1a(problem_id));
}

// Per-problem persistence hooks; a null store runs in memory only.
struct ProblemContext {
  const TreeStore* store = nullptr;
  bool resume = false;
};

namespace detail {

inline std::vector<std::string> visible_tests_for(const ProblemRecord& problem, const EvalConfig& cfg,
                                                  ModelGateway& gateway, ExecutionService& executor,
                                                  const ProblemContext& ctx, UsageLedger& usage) {
  if (ctx.store && ctx.resume)
    if (auto saved = ctx.store->load_visible_tests()) {
      usage.merge(saved->second);
      return saved->first;
    }
  ProblemRecord bare = problem;
  bare.visible_tests.clear();
  UsageLedger local;
  auto tests = generate_tests(gateway, executor, cfg.roles, bare, cfg.generated_tests, &local);
  if (ctx.store) ctx.store->save_visible_tests(tests, local.snapshot());
  usage.merge(local.snapshot());
  return tests;
}

inline ChatRequest single_shot_request(const ProblemRecord& problem, const EvalConfig& cfg, int n) {
  const auto tpl = templates::programmer_cot();
  ChatRequest req;
  req.messages = assemble(tpl, PromptPieces{render_problem_statement(problem), "", ""});
  req.n = n;
  req.max_new_tokens = cfg.search.generation_budget;
  req.temperature = cfg.roles.programmer_temperature;
  req.seed = problem_seed(cfg.search.rng_seed, problem.id);
  req.tag = RequestTag{problem.id, Role::programmer, tpl.variant, 1, 0, 0};
  return req;
}

inline ProblemOutcome run_search_method(const ProblemRecord& problem, const Method& method, const EvalConfig& cfg,
                                        ModelGateway& gateway, ExecutionService& executor,
                                        const ProblemContext& ctx, UsageLedger& usage) {
  SearchConfig sc = cfg.search;
  sc.rng_seed = problem_seed(cfg.search.rng_seed, problem.id);
  sc.ablation.disable_execution_feedback = method.kind == MethodKind::orps_minus_execution;
  sc.ablation.disable_reasoning = method.kind == MethodKind::orps_minus_reasoning;

  ProblemRecord working = problem;
  if (method.kind == MethodKind::orps_minus_execution)
    working.visible_tests.clear();
  else if (method.kind != MethodKind::orps_with_tests)
    working.visible_tests = visible_tests_for(problem, cfg, gateway, executor, ctx, usage);

  SearchOptions opts;
  opts.roles = cfg.roles;
  opts.store = ctx.store;
  opts.resume = ctx.resume;
  SearchResult result;
  try {
    result = run_search(working, sc, gateway, executor, opts);
  } catch (const EmptyExpansion& e) {
    spdlog::warn("{}", e.what());
    usage.merge(e.partial()->token_usage);
    auto o = failed_outcome(problem, e.what(), usage.snapshot());
    o.rounds_executed = e.partial()->rounds_executed;
    return o;
  }
  usage.merge(result.token_usage);
  auto o = evaluate_solution(problem, result.best ? result.best->code : "", executor);
  o.rounds_executed = result.rounds_executed;
  return o;
}

inline ProblemOutcome run_cot(const ProblemRecord& problem, const EvalConfig& cfg, ModelGateway& gateway,
                              ExecutionService& executor, UsageLedger& usage) {
  auto out = gateway.complete_chat(single_shot_request(problem, cfg, 1));
  usage.add(Role::programmer, out);
  if (out.empty()) return failed_outcome(problem, "no completion returned", usage.snapshot());
  try {
    return evaluate_solution(problem, parse_programmer(out.front().text).code, executor);
  } catch (const MissingCode& e) {
    return failed_outcome(problem, e.what(), usage.snapshot());
  }
}

inline ProblemOutcome run_bon(const ProblemRecord& problem, int n, const EvalConfig& cfg, ModelGateway& gateway,
                              ExecutionService& executor, const ProblemContext& ctx, UsageLedger& usage) {
  if (n < 1) throw ConfigError("bon needs n >= 1");
  auto tests = problem.visible_tests.empty()
                   ? visible_tests_for(problem, cfg, gateway, executor, ctx, usage)
                   : problem.visible_tests;
  auto out = gateway.complete_chat(single_shot_request(problem, cfg, n));
  usage.add(Role::programmer, out);

  std::vector<std::optional<std::string>> codes(out.size());
  std::vector<double> fractions(out.size(), -1.0);
  parallel_for(out.size(), cfg.search.max_parallel, [&](std::size_t i) {
    try {
      codes[i] = parse_programmer(out[i].text).code;
    } catch (const MissingCode&) {
      return;
    }
    auto report = executor.execute_candidate(*codes[i], tests);
    fractions[i] = report.valid ? report.pass_fraction() : 0.0;
  });
  std::optional<std::size_t> pick;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (codes[i] && (!pick || fractions[i] > fractions[*pick])) pick = i;
  if (!pick) return failed_outcome(problem, "no parseable candidate among " + std::to_string(n), usage.snapshot());
  return evaluate_solution(problem, *codes[*pick], executor);
}

}  // namespace detail

// One problem under one method. Failures are folded into an invalid outcome;
// only infrastructure faults propagate.
inline ProblemOutcome run_problem(const ProblemRecord& problem, const Method& method, const EvalConfig& cfg,
                                  ModelGateway& gateway, ExecutionService& executor,
                                  const ProblemContext& ctx = {}) {
  UsageLedger usage;
  ProblemOutcome o;
  try {
    switch (method.kind) {
      case MethodKind::cot:
        o = detail::run_cot(problem, cfg, gateway, executor, usage);
        break;
      case MethodKind::bon:
        o = detail::run_bon(problem, method.bon_n, cfg, gateway, executor, ctx, usage);
        break;
      default:
        o = detail::run_search_method(problem, method, cfg, gateway, executor, ctx, usage);
        break;
    }
  } catch (const GatewayUnavailable&) {
    throw;
  } catch (const ExecutorFault&) {
    throw;
  } catch (const Error& e) {
    spdlog::warn("problem {} failed under {}: {}", problem.id, method.name(), e.what());
    return failed_outcome(problem, e.what(), usage.snapshot());
  }
  o.usage = usage.snapshot();
  return o;
}

struct MethodRun {
  Method method;
  std::vector<ProblemOutcome> outcomes;  // dataset order
};

// Called after each problem finishes; used for persistence and progress.
using OutcomeSink = std::function<void(std::size_t index, const ProblemOutcome&)>;

inline MethodRun run_method(const Dataset& dataset, const Method& method, const EvalConfig& cfg,
                            ModelGateway& gateway, ExecutionService& executor,
                            const std::function<ProblemContext(const ProblemRecord&)>& context_for = {},
                            const std::function<std::optional<ProblemOutcome>(const ProblemRecord&)>& cached = {},
                            const OutcomeSink& sink = {}) {
  cfg.search.validate();
  MethodRun run{method, std::vector<ProblemOutcome>(dataset.problems.size())};
  parallel_for(dataset.problems.size(), cfg.problem_parallel, [&](std::size_t i) {
    const auto& p = dataset.problems[i];
    if (cached)
      if (auto done = cached(p)) {
        run.outcomes[i] = std::move(*done);
        return;
      }
    run.outcomes[i] = run_problem(p, method, cfg, gateway, executor, context_for ? context_for(p) : ProblemContext{});
    if (sink) sink(i, run.outcomes[i]);
  });
  return run;
}

inline std::uint64_t programmer_completions(const MethodRun& run) {
  std::uint64_t n = 0;
  for (const auto& o : run.outcomes)
    if (auto it = o.usage.find("programmer"); it != o.usage.end()) n += it->second.completions;
  return n;
}

// Search shape that spends at most b programmer completions.
inline SearchConfig scale_to_budget(SearchConfig c, int b) {
  if (b < 1) throw BudgetTooSmall("scaling budget must be >= 1");
  c.beam_width = std::min(c.beam_width, b);
  c.max_rounds = std::min(c.max_rounds, 1 + (b - 1) / c.beam_width);
  c.expansion_factor = std::max(1, b / (1 + (c.max_rounds - 1) * c.beam_width));
  return c;
}

struct CurveRow {
  std::string method;
  int budget = 0;
  double pass_at_1 = 0;
  std::uint64_t programmer_completions = 0;
};

struct ScalingSweep {
  std::vector<CurveRow> rows;
  std::vector<MethodRun> runs;  // parallel to rows
};

inline ScalingSweep scaling_sweep(const Dataset& dataset, const std::vector<int>& budgets, const EvalConfig& cfg,
                                  ModelGateway& gateway, ExecutionService& executor) {
  if (!std::is_sorted(budgets.begin(), budgets.end())) throw PreconditionViolation("budgets must be ascending");
  ScalingSweep sweep;
  for (int b : budgets) {
    EvalConfig scaled = cfg;
    scaled.search = scale_to_budget(cfg.search, b);
    for (const auto& m : {Method{MethodKind::orps, 0}, Method{MethodKind::bon, b}}) {
      auto run = run_method(dataset, m, m.kind == MethodKind::orps ? scaled : cfg, gateway, executor);
      auto report = aggregate(run.outcomes);
      sweep.rows.push_back(CurveRow{m.kind == MethodKind::orps ? "orps" : "bon", b, report.pass_at_1,
                                    programmer_completions(run)});
      sweep.runs.push_back(std::move(run));
    }
  }
  return sweep;
}

}  // namespace orps
