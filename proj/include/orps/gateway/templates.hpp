#pragma once

// Prompt templates for the three model roles. Each template names the output
// format its parser expects; the assembly rule lists which pieces of the
// problem and chain go into the user message, in order.

#include <string>
#include <vector>

#include <fmt/format.h>

#include "orps/gateway/chat.hpp"
#include "orps/gateway/parsing.hpp"

namespace orps {

enum class PromptPart {
  chain_context,       // problem statement + rendered reasoning chain
  current_code,        // candidate under review
  execution_feedback,  // rendered execution report
  instruction,         // closing instruction
};

struct RoleTemplate {
  Role role = Role::programmer;
  std::string variant;
  std::string system_text;
  std::vector<PromptPart> assembly_rule;
  std::string instruction;
};

namespace templates {

inline RoleTemplate programmer() {
  return {Role::programmer,
          "",
          "You are an expert programmer working through a programming problem step by step.\n"
          "Each turn you study the reasoning chain so far: earlier thoughts, code, execution "
          "results and reviewer critiques. Decide whether the current approach is sound or "
          "whether a different algorithm is needed, then write an improved, complete "
          "solution.\n\n"
          "Respond in exactly this format:\n"
          "=== Programmer Thoughts ===\n"
          "<analysis of the problem, of the latest attempt and its feedback, and your plan>\n"
          "=== Solution ===\n"
          "```python\n<complete solution code>\n```",
          {PromptPart::chain_context, PromptPart::instruction},
          "Write the next step now, following the required format."};
}

// Reasoning ablation: code only, no thoughts section.
inline RoleTemplate programmer_code_only() {
  return {Role::programmer,
          "code_only",
          "You are an expert programmer. Using the problem and any earlier attempts with their "
          "execution results and reviews, write an improved, complete solution.\n\n"
          "Respond with the code only, in exactly this format and with no explanation:\n"
          "=== Solution ===\n"
          "```python\n<complete solution code>\n```",
          {PromptPart::chain_context, PromptPart::instruction},
          "Write the solution code now."};
}

inline RoleTemplate programmer_cot() {
  return {Role::programmer,
          "cot",
          "You are an expert programmer. Think through the problem step by step, explaining the "
          "key observations, the algorithm and its complexity, then give the complete solution "
          "in a single ```python fenced block.",
          {PromptPart::chain_context, PromptPart::instruction},
          "Reason step by step, then give the solution."};
}

inline RoleTemplate critic(const ScoreRange& range, bool with_feedback) {
  std::string system = fmt::format(
      "You are a rigorous reviewer evaluating one step of a programmer's reasoning chain.\n"
      "Analyse the soundness of the reasoning, whether the implementation follows it, "
      "{}, algorithmic complexity and code structure. Explain your analysis first, then "
      "give a single score from {} (worst) to {} (best).\n\n"
      "Respond in exactly this format:\n"
      "=== Critic Thoughts ===\n"
      "<your analysis>\n"
      "=== Score ===\n"
      "$$<score>$$",
      with_feedback
          ? "and what the execution report shows about correctness, performance and resource use"
          : "and likely correctness on the problem's requirements",
      static_cast<long long>(range.min), static_cast<long long>(range.max));
  std::vector<PromptPart> rule{PromptPart::chain_context, PromptPart::current_code};
  if (with_feedback) rule.push_back(PromptPart::execution_feedback);
  rule.push_back(PromptPart::instruction);
  return {Role::critic, with_feedback ? "" : "no_feedback", std::move(system), std::move(rule),
          "Review the latest step now, following the required format."};
}

inline RoleTemplate test_writer(int count) {
  return {Role::test_writer,
          "",
          fmt::format("You write unit tests for programming problems. Given a problem, write up "
                      "to {} independent Python assert statements that a correct solution must "
                      "satisfy. Cover edge cases. Put every assert on its own line inside one "
                      "```python fenced block. Do not write the solution.",
                      count),
          {PromptPart::chain_context, PromptPart::instruction},
          "Write the asserts now."};
}

}  // namespace templates

struct PromptPieces {
  std::string chain_context;
  std::string current_code;
  std::string execution_feedback;
};

inline std::vector<ChatMessage> assemble(const RoleTemplate& tpl, const PromptPieces& pieces) {
  std::string user;
  for (auto part : tpl.assembly_rule) {
    switch (part) {
      case PromptPart::chain_context:
        user += pieces.chain_context;
        if (!user.empty() && user.back() != '\n') user += '\n';
        break;
      case PromptPart::current_code:
        user += "\n=== Code Under Review ===\n```python\n" + pieces.current_code + "\n```\n";
        break;
      case PromptPart::execution_feedback:
        user += "\n=== Execution Report ===\n" + pieces.execution_feedback;
        if (!user.empty() && user.back() != '\n') user += '\n';
        break;
      case PromptPart::instruction:
        user += "\n" + tpl.instruction + "\n";
        break;
    }
  }
  return {ChatMessage{"system", tpl.system_text}, ChatMessage{"user", std::move(user)}};
}

}  // namespace orps
