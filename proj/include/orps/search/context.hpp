#pragma once

#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "orps/errors.hpp"
#include "orps/problem.hpp"
#include "orps/search/types.hpp"
#include "orps/util/tokens.hpp"

namespace orps {

inline std::string render_segment(const Segment& s) {
  switch (s.kind) {
    case SegmentKind::reasoning:
      return fmt::format("\n=== Round {} - Programmer Thoughts ===\n{}\n", s.round, s.text);
    case SegmentKind::code:
      return fmt::format("\n=== Round {} - Solution ===\n```python\n{}\n```\n", s.round, s.text);
    case SegmentKind::execution_feedback:
      return fmt::format("\n=== Round {} - Execution Feedback ===\n{}\n", s.round, s.text);
    case SegmentKind::critique:
      return fmt::format("\n=== Round {} - Critic Thoughts ===\n{}\n", s.round, s.text);
  }
  return {};
}

inline std::string elision_marker(std::size_t omitted) {
  return fmt::format("\n[... {} earlier segments omitted to fit the context budget ...]\n", omitted);
}

// Problem statement, then as many of the newest segments as fit. Whatever
// is dropped from the middle is replaced by one elision marker. Empty
// segments (ablated reasoning) are not rendered.
inline std::string render_chain(const std::string& problem_statement, std::span<const Segment> chain,
                                TokenCount budget) {
  if (budget < 1) throw PreconditionViolation("render_context requires budget > 0");
  const TokenCount header = estimate_tokens(problem_statement);
  if (header > budget)
    throw BudgetTooSmall(fmt::format("problem statement needs ~{} tokens; budget is {}", header, budget));

  std::vector<std::string> rendered;
  TokenCount total = 0;
  for (const auto& s : chain) {
    if (s.text.empty()) continue;
    rendered.push_back(render_segment(s));
    total += estimate_tokens(rendered.back());
  }
  if (header + total <= budget) {
    std::string out = problem_statement;
    for (const auto& r : rendered) out += r;
    return out;
  }

  const TokenCount marker_cost = estimate_tokens(elision_marker(rendered.size()));
  if (header + marker_cost > budget)
    throw BudgetTooSmall("budget cannot hold the problem statement and an elision marker");
  TokenCount room = budget - header - marker_cost;
  std::size_t keep = 0;
  for (auto it = rendered.rbegin(); it != rendered.rend(); ++it) {
    auto cost = estimate_tokens(*it);
    if (cost > room) break;
    room -= cost;
    ++keep;
  }
  std::string out = problem_statement + elision_marker(rendered.size() - keep);
  for (std::size_t i = rendered.size() - keep; i < rendered.size(); ++i) out += rendered[i];
  return out;
}

inline std::string render_context(const TraceNode& node, const ProblemRecord& problem, TokenCount budget) {
  const auto chain = chain_segments(node);
  return render_chain(render_problem_statement(problem), chain, budget);
}

}  // namespace orps
