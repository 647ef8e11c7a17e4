#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "orps/errors.hpp"
#include "orps/util/text.hpp"

namespace orps {

inline constexpr std::string_view kProgrammerThoughtsMarker = "=== Programmer Thoughts ===";
inline constexpr std::string_view kSolutionMarker = "=== Solution ===";
inline constexpr std::string_view kCriticThoughtsMarker = "=== Critic Thoughts ===";
inline constexpr std::string_view kScoreMarker = "=== Score ===";

struct ProgrammerOutput {
  std::string reasoning;
  std::string code;
};

struct ScoreRange {
  double min = 1;
  double max = 10;

  void validate() const {
    if (!std::isfinite(min) || !std::isfinite(max) || !(min < max))
      throw ConfigError("score range requires finite score_min < score_max");
  }
  double clamp(double v) const { return std::clamp(v, min, max); }
};

struct ParsedCritique {
  std::string critique_text;
  double score = 0;
  bool anomaly = false;  // score fell back to score_min after malformed output
};

namespace detail {

struct FencedBlock {
  std::size_t open = 0;  // position of the opening fence
  std::string content;
};

// Pairs ``` fences in order. A dangling opening fence runs to end of text.
inline std::vector<FencedBlock> fenced_blocks(std::string_view text) {
  std::vector<FencedBlock> blocks;
  std::size_t pos = 0;
  while ((pos = text.find("```", pos)) != std::string_view::npos) {
    FencedBlock b;
    b.open = pos;
    auto body = pos + 3;
    while (body < text.size() && text[body] == '`') ++body;
    auto eol = text.find('\n', body);
    auto info = text.substr(body, eol == std::string_view::npos ? std::string_view::npos : eol - body);
    // "```python\n" -> skip the info string; "```code```" keeps the inline body
    bool inline_body = info.find("```") != std::string_view::npos;
    std::size_t content_start = (eol == std::string_view::npos || inline_body) ? body : eol + 1;
    auto close = text.find("```", content_start);
    if (close == std::string_view::npos) {
      b.content = std::string(text.substr(std::min(content_start, text.size())));
      blocks.push_back(std::move(b));
      break;
    }
    b.content = std::string(text.substr(content_start, close - content_start));
    blocks.push_back(std::move(b));
    pos = close + 3;
    while (pos < text.size() && text[pos] == '`') ++pos;
  }
  return blocks;
}

inline std::string strip_fences(std::string s) {
  std::string::size_type p;
  while ((p = s.find("```")) != std::string::npos) s.erase(p, 3);
  return s;
}

}  // namespace detail

// Splits a programmer completion into (reasoning, code). Code is the last
// fenced block, else whatever follows the solution marker.
inline ProgrammerOutput parse_programmer(std::string_view text) {
  const auto thoughts = text.find(kProgrammerThoughtsMarker);
  const auto solution = text.find(kSolutionMarker);
  const auto blocks = detail::fenced_blocks(text);

  ProgrammerOutput out;
  if (!blocks.empty()) {
    out.code = text::trimmed(detail::strip_fences(blocks.back().content));
  } else if (solution != std::string_view::npos) {
    out.code = text::trimmed(text.substr(solution + kSolutionMarker.size()));
  }
  if (out.code.empty()) throw MissingCode();

  std::size_t reasoning_begin = 0;
  if (thoughts != std::string_view::npos) reasoning_begin = thoughts + kProgrammerThoughtsMarker.size();
  std::size_t reasoning_end = text.size();
  if (solution != std::string_view::npos && solution >= reasoning_begin)
    reasoning_end = std::min(reasoning_end, solution);
  for (const auto& b : blocks)
    if (b.open >= reasoning_begin) {
      reasoning_end = std::min(reasoning_end, b.open);
      break;
    }

  std::string reasoning = text::trimmed(text.substr(reasoning_begin, reasoning_end - reasoning_begin));
  // The example format prefixes the solution marker with a comment sign.
  while (!reasoning.empty() && (reasoning.back() == '#' || text::is_space(reasoning.back())))
    reasoning.pop_back();
  out.reasoning = detail::strip_fences(std::move(reasoning));
  return out;
}

// The last $$...$$ group holding a finite number, clamped into range.
inline double parse_score(std::string_view text, const ScoreRange& range = {}) {
  std::optional<double> last;
  std::size_t pos = 0;
  while ((pos = text.find("$$", pos)) != std::string_view::npos) {
    auto close = text.find("$$", pos + 2);
    if (close == std::string_view::npos) break;
    auto inner = text::trim(text.substr(pos + 2, close - pos - 2));
    if (!inner.empty() && inner.front() == '+') inner.remove_prefix(1);
    double v = 0;
    auto [ptr, ec] = std::from_chars(inner.data(), inner.data() + inner.size(), v);
    if (ec == std::errc() && ptr == inner.data() + inner.size() && !inner.empty() && std::isfinite(v))
      last = v;
    pos += 2;
  }
  if (!last) throw MalformedScore();
  return range.clamp(*last);
}

// Critic analysis: text between the thoughts and score markers, or all text
// before the score marker when the thoughts marker is missing.
inline std::string parse_critique_text(std::string_view text) {
  auto begin = text.find(kCriticThoughtsMarker);
  begin = begin == std::string_view::npos ? 0 : begin + kCriticThoughtsMarker.size();
  auto end = text.rfind(kScoreMarker);
  if (end == std::string_view::npos || end < begin) {
    end = text.rfind("$$");
    if (end != std::string_view::npos) end = text.rfind("$$", end == 0 ? 0 : end - 1);
    if (end == std::string_view::npos || end < begin) end = text.size();
  }
  std::string out = text::trimmed(text.substr(begin, end - begin));
  while (!out.empty() && (out.back() == '#' || text::is_space(out.back()))) out.pop_back();
  return out;
}

// One assertion per line starting with "assert", taken from fenced blocks when
// present, else from the whole text. Exact duplicates keep the first copy.
inline std::vector<std::string> parse_test_cases(std::string_view text) {
  std::vector<std::string> sources;
  auto blocks = detail::fenced_blocks(text);
  if (blocks.empty())
    sources.emplace_back(text);
  else
    for (auto& b : blocks) sources.push_back(std::move(b.content));

  std::vector<std::string> tests;
  for (const auto& src : sources)
    for (auto line : text::split_lines(src)) {
      auto t = text::trim(line);
      if (!text::starts_with(t, "assert ") && !text::starts_with(t, "assert(")) continue;
      std::string test(t);
      if (std::find(tests.begin(), tests.end(), test) == tests.end()) tests.push_back(std::move(test));
    }
  return tests;
}

}  // namespace orps
