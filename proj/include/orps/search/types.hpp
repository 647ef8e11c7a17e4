#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "orps/errors.hpp"
#include "orps/execution/execution.hpp"
#include "orps/gateway/chat.hpp"
#include "orps/util/json_io.hpp"
#include "orps/util/tokens.hpp"

namespace orps {

using NodeId = std::int64_t;

struct CompletionPolicy {
  enum class Kind { all_visible_tests_pass, reward_threshold };
  Kind kind = Kind::all_visible_tests_pass;
  double threshold = 0;  // reward_threshold only

  static CompletionPolicy all_visible_tests_pass() { return {}; }
  static CompletionPolicy reward_threshold(double v) { return {Kind::reward_threshold, v}; }
};

struct AblationFlags {
  bool disable_execution_feedback = false;
  bool disable_reasoning = false;
};

struct SearchConfig {
  int beam_width = 3;         // K
  int max_rounds = 5;         // T
  int expansion_factor = 20;  // N
  TokenCount context_budget = 18000;
  TokenCount generation_budget = 1500;
  CompletionPolicy completion;
  AblationFlags ablation;
  std::uint64_t rng_seed = 0;
  bool profile_candidates = true;  // profile programs that pass visible tests
  std::size_t max_parallel = 8;

  void validate() const {
    if (beam_width < 1) throw ConfigError("beam_width must be >= 1");
    if (max_rounds < 1) throw ConfigError("max_rounds must be >= 1");
    if (expansion_factor < 1) throw ConfigError("expansion_factor must be >= 1");
    if (context_budget < 1) throw ConfigError("context_budget must be >= 1");
    if (generation_budget < 1) throw ConfigError("generation_budget must be >= 1");
    if (generation_budget > context_budget)
      throw ConfigError("generation_budget must not exceed context_budget");
  }
};

enum class SegmentKind { reasoning, code, execution_feedback, critique };

inline const char* to_string(SegmentKind k) {
  switch (k) {
    case SegmentKind::reasoning: return "reasoning";
    case SegmentKind::code: return "code";
    case SegmentKind::execution_feedback: return "execution_feedback";
    case SegmentKind::critique: return "critique";
  }
  return "reasoning";
}

inline SegmentKind segment_kind_from_string(const std::string& s) {
  if (s == "reasoning") return SegmentKind::reasoning;
  if (s == "code") return SegmentKind::code;
  if (s == "execution_feedback") return SegmentKind::execution_feedback;
  if (s == "critique") return SegmentKind::critique;
  throw Error("unknown segment kind '" + s + "'");
}

struct Segment {
  SegmentKind kind = SegmentKind::reasoning;
  std::string text;
  int round = 1;

  friend bool operator==(const Segment&, const Segment&) = default;
};

// Immutable once published. Holds only the segments of its own step; the
// full chain is reconstructed through parent_node.
struct TraceNode {
  NodeId id = 0;
  std::optional<NodeId> parent;
  int depth = 0;
  std::vector<Segment> segments;
  std::string code;
  std::optional<double> step_reward;
  std::optional<ExecutionReport> execution;
  bool complete = false;
  bool critique_anomaly = false;
  std::shared_ptr<const TraceNode> parent_node;
};

using NodePtr = std::shared_ptr<const TraceNode>;

// Segments from the root to node, oldest first.
inline std::vector<Segment> chain_segments(const TraceNode& node) {
  std::vector<const TraceNode*> path;
  for (const TraceNode* n = &node; n; n = n->parent_node.get()) path.push_back(n);
  std::vector<Segment> out;
  for (auto it = path.rbegin(); it != path.rend(); ++it)
    out.insert(out.end(), (*it)->segments.begin(), (*it)->segments.end());
  return out;
}

// Sum of step rewards along the path, root excluded.
inline double chain_reward(const TraceNode& node) {
  if (node.depth < 1) throw PreconditionViolation("chain_reward needs a node of depth >= 1");
  double sum = 0;
  for (const TraceNode* n = &node; n; n = n->parent_node.get())
    if (n->depth >= 1) sum += n->step_reward.value_or(0);
  return sum;
}

struct SearchResult {
  NodePtr best;
  std::vector<NodePtr> tree;  // every node including the root, id order
  int rounds_executed = 0;
  std::vector<std::vector<NodeId>> beam_history;
  UsageByRole token_usage;
  std::chrono::duration<double> wall_time{0};
  int parse_failures = 0;
  int critique_anomalies = 0;
};

// ---- serialization ---------------------------------------------------------

inline json to_json(const Segment& s) {
  return json{{"kind", to_string(s.kind)}, {"text", s.text}, {"round", s.round}};
}

inline json to_json(const TraceNode& n) {
  json segs = json::array();
  for (const auto& s : n.segments) segs.push_back(to_json(s));
  json doc{{"id", n.id},
           {"parent", n.parent ? json(*n.parent) : json(nullptr)},
           {"depth", n.depth},
           {"segments", std::move(segs)},
           {"code", n.code},
           {"step_reward", n.step_reward ? json(*n.step_reward) : json(nullptr)},
           {"complete", n.complete},
           {"critique_anomaly", n.critique_anomaly}};
  if (n.execution) doc["execution"] = to_json(*n.execution);
  return doc;
}

// The parent pointer is left unset; the caller links nodes after loading.
inline TraceNode trace_node_from_json(const json& doc) {
  TraceNode n;
  n.id = doc.at("id").get<NodeId>();
  if (!doc.at("parent").is_null()) n.parent = doc["parent"].get<NodeId>();
  n.depth = doc.at("depth").get<int>();
  for (const auto& s : doc.at("segments"))
    n.segments.push_back(Segment{segment_kind_from_string(s.at("kind").get<std::string>()),
                                 s.at("text").get<std::string>(), s.at("round").get<int>()});
  n.code = doc.at("code").get<std::string>();
  if (!doc.at("step_reward").is_null()) n.step_reward = doc["step_reward"].get<double>();
  n.complete = doc.at("complete").get<bool>();
  n.critique_anomaly = doc.value("critique_anomaly", false);
  if (doc.contains("execution")) n.execution = execution_report_from_json(doc["execution"]);
  return n;
}

inline json to_json(const UsageByRole& usage) {
  json doc = json::object();
  for (const auto& [role, u] : usage)
    doc[role] = json{{"requests", u.requests},
                     {"completions", u.completions},
                     {"prompt_tokens", u.prompt_tokens},
                     {"completion_tokens", u.completion_tokens}};
  return doc;
}

inline UsageByRole usage_from_json(const json& doc) {
  UsageByRole usage;
  for (const auto& [role, u] : doc.items())
    usage[role] = UsageCounters{u.at("completions").get<std::uint64_t>(),
                                u.at("requests").get<std::uint64_t>(),
                                u.at("prompt_tokens").get<std::uint64_t>(),
                                u.at("completion_tokens").get<std::uint64_t>()};
  return usage;
}

// Canonical form: wall_time is left out so reruns serialize identically.
inline json to_json(const SearchResult& r) {
  json nodes = json::array();
  for (const auto& n : r.tree) nodes.push_back(to_json(*n));
  json doc{{"best", r.best ? json(r.best->id) : json(nullptr)},
           {"rounds_executed", r.rounds_executed},
           {"beam_history", r.beam_history},
           {"token_usage", to_json(r.token_usage)},
           {"parse_failures", r.parse_failures},
           {"critique_anomalies", r.critique_anomalies},
           {"tree", std::move(nodes)}};
  return doc;
}

}  // namespace orps
