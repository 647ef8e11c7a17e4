#pragma once

#include <algorithm>
#include <chrono>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "orps/errors.hpp"
#include "orps/execution/execution.hpp"
#include "orps/gateway/chat.hpp"
#include "orps/gateway/parsing.hpp"
#include "orps/gateway/roles.hpp"
#include "orps/gateway/templates.hpp"
#include "orps/problem.hpp"
#include "orps/search/context.hpp"
#include "orps/search/tree_store.hpp"
#include "orps/search/types.hpp"
#include "orps/util/hash.hpp"
#include "orps/util/parallel.hpp"

namespace orps {

namespace detail {

struct RankKey {
  double reward;
  double pass;
  int has_profile;  // 0 = profiled, sorts first
  int time_class;   // counters before runner-reported
  std::uint64_t time;
  NodeId id;
};

inline RankKey rank_key(const TraceNode& n) {
  RankKey k{n.step_reward.value_or(-std::numeric_limits<double>::infinity()),
            n.execution ? n.execution->pass_fraction() : -1.0,
            1,
            1,
            0,
            n.id};
  if (n.execution && n.execution->profile) {
    k.has_profile = 0;
    k.time_class = n.execution->profile->counters_available ? 0 : 1;
    k.time = n.execution->profile->time_basis_ns();
  }
  return k;
}

inline bool ranks_before(const TraceNode& a, const TraceNode& b) {
  auto ka = rank_key(a), kb = rank_key(b);
  return std::tie(kb.reward, kb.pass, ka.has_profile, ka.time_class, ka.time, ka.id) <
         std::tie(ka.reward, ka.pass, kb.has_profile, kb.time_class, kb.time, kb.id);
}

inline TokenCount room_after(TokenCount budget, TokenCount used) { return used >= budget ? 0 : budget - used; }

}  // namespace detail

// Top min(K, |candidates|) by step_reward, then pass fraction, then measured
// time (unprofiled last), then id. A total order, so input order is irrelevant.
inline std::vector<NodePtr> select_beam(std::vector<NodePtr> candidates, int k) {
  if (candidates.empty()) throw PreconditionViolation("select_beam needs at least one candidate");
  if (k < 1) throw PreconditionViolation("select_beam needs K >= 1");
  std::sort(candidates.begin(), candidates.end(),
            [](const NodePtr& a, const NodePtr& b) { return detail::ranks_before(*a, *b); });
  candidates.resize(std::min(candidates.size(), static_cast<std::size_t>(k)));
  return candidates;
}

// Complete nodes first, by step_reward; otherwise by (pass fraction,
// step_reward). Ties keep beam order.
inline NodePtr final_best(const std::vector<NodePtr>& beam) {
  if (beam.empty()) return nullptr;
  NodePtr best;
  for (const auto& n : beam)
    if (n->complete && (!best || n->step_reward.value_or(0) > best->step_reward.value_or(0))) best = n;
  if (best) return best;
  auto key = [](const NodePtr& n) {
    return std::make_pair(n->execution ? n->execution->pass_fraction() : 0.0,
                          n->step_reward.value_or(-std::numeric_limits<double>::infinity()));
  };
  best = beam.front();
  for (const auto& n : beam)
    if (key(n) > key(best)) best = n;
  return best;
}

inline bool satisfies_completion(const TraceNode& n, const CompletionPolicy& policy) {
  if (!n.execution || !n.execution->valid) return false;
  if (policy.kind == CompletionPolicy::Kind::all_visible_tests_pass) return n.execution->all_passed();
  return n.step_reward && *n.step_reward >= policy.threshold;
}

struct ExpandSlot {
  int round = 1;
  int beam_index = 0;
  NodeId first_id = 1;
};

struct Expansion {
  std::vector<TraceNode> children;
  int parse_failures = 0;
  int critique_anomalies = 0;
};

// One node becomes up to N children: programmer sample, parse, execute,
// critique. Children are returned in candidate order with ids first_id,
// first_id + 1, ...
inline Expansion expand(const NodePtr& node, const ProblemRecord& problem, const SearchConfig& cfg,
                        ModelGateway& gateway, ExecutionService& executor, const ExpandSlot& slot,
                        const RoleSettings& roles_in = {}, UsageLedger* usage = nullptr) {
  if (node->complete) throw PreconditionViolation("expand called on a complete node");
  RoleSettings roles = roles_in;
  roles.generation_budget = cfg.generation_budget;
  const bool use_execution = !cfg.ablation.disable_execution_feedback;
  const auto statement = render_problem_statement(problem);
  const auto parent_chain = chain_segments(*node);

  const auto tpl = cfg.ablation.disable_reasoning ? templates::programmer_code_only() : templates::programmer();
  const TokenCount overhead = estimate_tokens(tpl.system_text) + estimate_tokens(tpl.instruction) + 16;
  const auto chain_budget = detail::room_after(cfg.context_budget, cfg.generation_budget + overhead);
  if (chain_budget == 0) throw BudgetTooSmall("context budget leaves no room for the reasoning chain");

  ChatRequest req;
  req.messages = assemble(tpl, PromptPieces{render_chain(statement, parent_chain, chain_budget), "", ""});
  req.n = cfg.expansion_factor;
  req.max_new_tokens = cfg.generation_budget;
  req.temperature = roles.programmer_temperature;
  req.seed = hash::mix(hash::mix(cfg.rng_seed, static_cast<std::uint64_t>(slot.round)),
                       static_cast<std::uint64_t>(slot.beam_index));
  req.tag = RequestTag{problem.id, Role::programmer, tpl.variant, slot.round,
                       slot.beam_index * cfg.expansion_factor, 0};
  auto completions = gateway.complete_chat(req);
  if (usage) usage->add(Role::programmer, completions);

  std::vector<std::optional<TraceNode>> drafts(completions.size());
  std::vector<ParsedCritique> critiques(completions.size());
  parallel_for(completions.size(), cfg.max_parallel, [&](std::size_t c) {
    ProgrammerOutput parsed;
    try {
      parsed = parse_programmer(completions[c].text);
    } catch (const MissingCode&) {
      return;
    }
    TraceNode child;
    child.parent = node->id;
    child.parent_node = node;
    child.depth = node->depth + 1;
    child.code = parsed.code;
    const int r = slot.round;
    child.segments.push_back({SegmentKind::reasoning, cfg.ablation.disable_reasoning ? "" : parsed.reasoning, r});
    child.segments.push_back({SegmentKind::code, parsed.code, r});

    std::optional<std::string> feedback;
    if (use_execution) {
      auto report = executor.execute_candidate(parsed.code, problem.visible_tests);
      if (cfg.profile_candidates && report.valid && report.tests_passed > 0) {
        std::vector<std::string> passing;
        for (const auto& t : report.per_test)
          if (t.status == TestStatus::pass) passing.push_back(problem.visible_tests[static_cast<std::size_t>(t.index)]);
        report.profile = executor.profile_candidate(parsed.code, passing);
        report.feedback_text = format_feedback(report);
      }
      feedback = report.feedback_text;
      child.segments.push_back({SegmentKind::execution_feedback, report.feedback_text, r});
      child.execution = std::move(report);
    }

    // The critic sees the chain up to and including the new reasoning; the
    // code and the report travel as separate prompt parts.
    auto critic_chain = parent_chain;
    critic_chain.push_back(child.segments.front());
    const auto critic_tpl = templates::critic(roles.score_range, use_execution);
    const TokenCount critic_overhead = estimate_tokens(critic_tpl.system_text) +
                                       estimate_tokens(critic_tpl.instruction) +
                                       estimate_tokens(parsed.code) +
                                       estimate_tokens(feedback.value_or("")) + 32;
    const auto critic_budget = detail::room_after(cfg.context_budget, cfg.generation_budget + critic_overhead);
    if (critic_budget == 0) throw BudgetTooSmall("context budget leaves no room for the critic prompt");
    RequestTag tag{problem.id, Role::critic, "", r,
                   slot.beam_index * cfg.expansion_factor + static_cast<int>(c), 0};
    auto pc = critique(gateway, roles, render_chain(statement, critic_chain, critic_budget), parsed.code,
                       feedback, tag, usage);
    child.step_reward = pc.score;
    child.critique_anomaly = pc.anomaly;
    child.segments.push_back(
        {SegmentKind::critique, fmt::format("{}\nScore: {}", pc.critique_text, pc.score), r});
    child.complete = satisfies_completion(child, cfg.completion);
    drafts[c] = std::move(child);
  });

  Expansion out;
  NodeId next = slot.first_id;
  for (auto& d : drafts) {
    if (!d) {
      ++out.parse_failures;
      continue;
    }
    d->id = next++;
    if (d->critique_anomaly) ++out.critique_anomalies;
    out.children.push_back(std::move(*d));
  }
  return out;
}

struct SearchOptions {
  RoleSettings roles;
  const TreeStore* store = nullptr;  // persist each round when set
  bool resume = false;               // continue from the store's latest round
};

inline SearchResult run_search(const ProblemRecord& problem, const SearchConfig& cfg, ModelGateway& gateway,
                               ExecutionService& executor, const SearchOptions& opts = {}) {
  cfg.validate();
  opts.roles.score_range.validate();
  if (text::trim(problem.prompt).empty()) throw PreconditionViolation("problem has no prompt");
  if (!cfg.ablation.disable_execution_feedback &&
      cfg.completion.kind == CompletionPolicy::Kind::all_visible_tests_pass && problem.visible_tests.empty())
    throw PreconditionViolation("completion on visible tests needs at least one visible test");

  const auto started = std::chrono::steady_clock::now();
  auto root = std::make_shared<const TraceNode>();
  SearchState st;
  st.tree.push_back(root);
  st.beam.push_back(root);
  if (opts.store && opts.resume)
    if (auto restored = opts.store->load(root)) {
      st = std::move(*restored);
      spdlog::info("problem {}: resuming after round {}", problem.id, st.rounds_executed);
    }
  UsageLedger usage;
  usage.merge(st.usage);

  auto finish = [&] {
    auto result = std::make_shared<SearchResult>();
    result->best = final_best(st.beam);
    result->tree = st.tree;
    result->rounds_executed = st.rounds_executed;
    result->beam_history = st.beam_history;
    result->token_usage = usage.snapshot();
    result->parse_failures = st.parse_failures;
    result->critique_anomalies = st.critique_anomalies;
    result->wall_time = std::chrono::steady_clock::now() - started;
    return result;
  };
  auto any_complete = [&] {
    return std::any_of(st.beam.begin(), st.beam.end(), [](const NodePtr& n) { return n->complete; });
  };

  for (int round = st.rounds_executed + 1; round <= cfg.max_rounds && !any_complete(); ++round) {
    std::vector<Expansion> expansions(st.beam.size());
    parallel_for(st.beam.size(), cfg.max_parallel, [&](std::size_t b) {
      expansions[b] = expand(st.beam[b], problem, cfg, gateway, executor,
                             ExpandSlot{round, static_cast<int>(b), 0}, opts.roles, &usage);
    });

    std::vector<NodePtr> created;
    for (auto& e : expansions) {
      st.parse_failures += e.parse_failures;
      st.critique_anomalies += e.critique_anomalies;
      for (auto& child : e.children) {
        child.id = st.next_id++;
        created.push_back(std::make_shared<const TraceNode>(std::move(child)));
      }
    }
    if (created.empty())
      throw EmptyExpansion(fmt::format("problem {}: every candidate in round {} was unparseable", problem.id, round),
                           finish());

    st.tree.insert(st.tree.end(), created.begin(), created.end());
    st.beam = select_beam(created, cfg.beam_width);
    std::vector<NodeId> ids;
    for (const auto& n : st.beam) ids.push_back(n->id);
    st.beam_history.push_back(std::move(ids));
    st.rounds_executed = round;
    st.usage = usage.snapshot();
    if (opts.store) opts.store->save_round(round, created, st);
    spdlog::debug("problem {}: round {} created {} nodes, best reward {}", problem.id, round, created.size(),
                  st.beam.front()->step_reward.value_or(0));
  }
  return std::move(*finish());
}

}  // namespace orps
