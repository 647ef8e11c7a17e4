#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "orps/errors.hpp"
#include "orps/util/json_io.hpp"

namespace orps {

struct ProblemRecord {
  std::string id;
  std::string prompt;
  std::vector<std::string> visible_tests;
  std::vector<std::string> hidden_tests;  // scoring only; never shown to a model
  std::optional<std::string> reference_solution;
  std::optional<std::string> entry_point;
  std::vector<std::string> tags;
};

inline json to_json(const ProblemRecord& p) {
  json doc{{"id", p.id},
           {"prompt", p.prompt},
           {"visible_tests", p.visible_tests},
           {"hidden_tests", p.hidden_tests}};
  if (p.reference_solution) doc["reference_solution"] = *p.reference_solution;
  if (p.entry_point) doc["entry_point"] = *p.entry_point;
  if (!p.tags.empty()) doc["tags"] = p.tags;
  return doc;
}

inline ProblemRecord problem_from_json(const json& doc) {
  if (!doc.is_object()) throw DatasetError("problem record must be a JSON object");
  auto str = [&](const char* key) -> std::string {
    auto it = doc.find(key);
    if (it == doc.end() || !it->is_string())
      throw DatasetError(std::string("problem record needs string field '") + key + "'");
    return it->get<std::string>();
  };
  auto list = [&](const char* key) -> std::vector<std::string> {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return {};
    if (!it->is_array()) throw DatasetError(std::string("field '") + key + "' must be an array");
    std::vector<std::string> out;
    for (const auto& v : *it) {
      if (!v.is_string()) throw DatasetError(std::string("field '") + key + "' must hold strings");
      out.push_back(v.get<std::string>());
    }
    return out;
  };
  ProblemRecord p;
  p.id = str("id");
  if (p.id.empty()) throw DatasetError("problem id must be non-empty");
  p.prompt = str("prompt");
  p.visible_tests = list("visible_tests");
  p.hidden_tests = list("hidden_tests");
  if (auto it = doc.find("reference_solution"); it != doc.end() && it->is_string())
    p.reference_solution = it->get<std::string>();
  if (auto it = doc.find("entry_point"); it != doc.end() && it->is_string())
    p.entry_point = it->get<std::string>();
  p.tags = list("tags");
  return p;
}

// Problem text as shown to a model. Visible tests that also belong to the
// hidden set are counted but never printed, so no hidden test source can
// reach a prompt.
inline std::string render_problem_statement(const ProblemRecord& p, bool show_visible_tests = true) {
  std::string out = "=== Problem ===\n" + p.prompt;
  if (out.back() != '\n') out += '\n';
  if (show_visible_tests && !p.visible_tests.empty()) {
    std::string shown;
    std::size_t withheld = 0;
    for (const auto& t : p.visible_tests) {
      if (t.empty()) continue;
      if (std::find(p.hidden_tests.begin(), p.hidden_tests.end(), t) != p.hidden_tests.end()) {
        ++withheld;
        continue;
      }
      shown += t;
      if (shown.back() != '\n') shown += '\n';
    }
    if (!shown.empty()) out += "\n=== Visible Tests ===\n" + shown;
    if (withheld > 0)
      out += "(" + std::to_string(withheld) + " further visible tests are run but not shown)\n";
  }
  return out;
}

}  // namespace orps
