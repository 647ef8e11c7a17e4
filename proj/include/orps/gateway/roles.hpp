#pragma once

// Role-level operations on top of the raw gateway: critic scoring and test
// generation.

#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "orps/execution/execution.hpp"
#include "orps/gateway/chat.hpp"
#include "orps/gateway/parsing.hpp"
#include "orps/gateway/templates.hpp"
#include "orps/problem.hpp"
#include "orps/util/hash.hpp"

namespace orps {

struct RoleSettings {
  ScoreRange score_range{1, 10};
  double programmer_temperature = 0.7;
  double critic_temperature = 0.2;
  double test_writer_temperature = 0.2;
  TokenCount generation_budget = 1500;
};

// Generative judgment of one step: analysis first, then a $$score$$. A
// malformed score is retried once; a second failure scores score_min and is
// flagged as an anomaly.
inline ParsedCritique critique(ModelGateway& gateway, const RoleSettings& settings,
                               const std::string& chain_context, const std::string& code,
                               const std::optional<std::string>& feedback, RequestTag tag,
                               UsageLedger* usage = nullptr) {
  if (chain_context.empty() || code.empty())
    throw PreconditionViolation("critique needs a chain context and code");
  const auto tpl = templates::critic(settings.score_range, feedback.has_value());
  ChatRequest req;
  req.messages = assemble(tpl, PromptPieces{chain_context, code, feedback.value_or("")});
  req.n = 1;
  req.max_new_tokens = settings.generation_budget;
  req.temperature = settings.critic_temperature;
  tag.role = Role::critic;
  tag.variant = tpl.variant;

  for (int attempt = 0; attempt < 2; ++attempt) {
    tag.attempt = attempt;
    req.tag = tag;
    req.seed = hash::mix(static_cast<std::uint64_t>(tag.round) * 1000003u + static_cast<std::uint64_t>(tag.first_index),
                         static_cast<std::uint64_t>(attempt));
    auto out = gateway.complete_chat(req);
    if (usage) usage->add(Role::critic, out);
    if (out.empty()) continue;
    try {
      ParsedCritique pc;
      pc.score = parse_score(out.front().text, settings.score_range);
      pc.critique_text = parse_critique_text(out.front().text);
      return pc;
    } catch (const MalformedScore&) {
      if (attempt == 0) continue;
      spdlog::warn("critic score malformed twice (problem {}, round {}, index {}); using score_min",
                   tag.problem_id, tag.round, tag.first_index);
      ParsedCritique pc;
      pc.score = settings.score_range.min;
      pc.critique_text = parse_critique_text(out.front().text);
      pc.anomaly = true;
      return pc;
    }
  }
  ParsedCritique pc;
  pc.score = settings.score_range.min;
  pc.anomaly = true;
  return pc;
}

// Self-generated visible tests: parsed from the test-writer role, syntax
// checked by the runner, deduplicated, and capped so that together with the
// dataset's visible tests no more than max_tests remain.
inline std::vector<std::string> generate_tests(ModelGateway& gateway, ExecutionService& executor,
                                               const RoleSettings& settings,
                                               const ProblemRecord& problem, int count,
                                               UsageLedger* usage = nullptr) {
  if (count < 1) throw PreconditionViolation("generate_tests requires count >= 1");
  const auto tpl = templates::test_writer(count);
  ChatRequest req;
  req.messages = assemble(tpl, PromptPieces{render_problem_statement(problem), "", ""});
  req.n = 1;
  req.max_new_tokens = settings.generation_budget;
  req.temperature = settings.test_writer_temperature;
  req.tag.problem_id = problem.id;
  req.tag.role = Role::test_writer;
  req.tag.round = 0;
  req.seed = hash::fnv1a(problem.id);

  auto out = gateway.complete_chat(req);
  if (usage) usage->add(Role::test_writer, out);

  std::vector<std::string> candidates;
  for (const auto& c : out)
    for (auto& t : parse_test_cases(c.text))
      if (std::find(candidates.begin(), candidates.end(), t) == candidates.end() &&
          std::find(problem.visible_tests.begin(), problem.visible_tests.end(), t) ==
              problem.visible_tests.end())
        candidates.push_back(std::move(t));

  const auto valid = executor.check_tests(candidates);
  const int room = std::max(0, executor.limits().max_tests - static_cast<int>(problem.visible_tests.size()));
  const auto cap = static_cast<std::size_t>(std::min(count, room));

  std::vector<std::string> tests;
  for (std::size_t i = 0; i < candidates.size() && tests.size() < cap; ++i)
    if (valid[i]) tests.push_back(candidates[i]);
  if (tests.empty()) throw NoValidTests();
  return tests;
}

}  // namespace orps
