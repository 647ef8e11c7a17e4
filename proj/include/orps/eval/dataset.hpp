#pragma once

// Problem sets are JSONL: one ProblemRecord object per line. The importers
// below turn public benchmark dumps into that shape.
//
//   humaneval  task_id, prompt, canonical_solution, test, entry_point
//   mbpp       task_id, text, code, test_list[, test_setup_code]
//   lbpp       task_id|title, instruction, completion, test_list[, signature,
//              test_setup, categories]
//
// For mbpp and lbpp the dataset tests double as visible tests, which only the
// with-tests method shows to the search; they are never printed into a prompt
// while they are also hidden.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "orps/errors.hpp"
#include "orps/problem.hpp"
#include "orps/util/hash.hpp"
#include "orps/util/json_io.hpp"
#include "orps/util/text.hpp"

namespace orps {

struct Dataset {
  std::vector<ProblemRecord> problems;
  std::string digest;  // sha256 of the file bytes
};

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream probe(path);
  if (!probe) throw DatasetError("cannot read dataset " + path.string());
  probe.close();
  const auto bytes = read_file(path);
  Dataset ds;
  ds.digest = hash::sha256_hex(bytes);
  std::set<std::string> ids;
  int lineno = 0;
  for (auto line : text::split_lines(bytes)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::exception& e) {
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    ProblemRecord p;
    try {
      p = problem_from_json(doc);
    } catch (const DatasetError& e) {
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (p.hidden_tests.empty())
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": problem '" + p.id +
                         "' has no hidden tests");
    if (!ids.insert(p.id).second) throw DatasetError("duplicate problem id '" + p.id + "'");
    ds.problems.push_back(std::move(p));
  }
  if (ds.problems.empty()) throw DatasetError("dataset " + path.string() + " holds no problems");
  return ds;
}

inline void write_dataset(const std::filesystem::path& path, const std::vector<ProblemRecord>& problems) {
  std::string out;
  for (const auto& p : problems) out += dump_json(to_json(p)) + "\n";
  write_file_atomic(path, out);
}

namespace detail {

inline std::string id_of(const json& doc, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    auto it = doc.find(k);
    if (it == doc.end()) continue;
    if (it->is_string()) return it->get<std::string>();
    if (it->is_number_integer()) return std::to_string(it->get<long long>());
  }
  throw DatasetError("record has no id field");
}

inline std::string str_or(const json& doc, const char* key, std::string fallback = "") {
  auto it = doc.find(key);
  return it != doc.end() && it->is_string() ? it->get<std::string>() : fallback;
}

inline std::vector<std::string> str_list(const json& doc, const char* key) {
  std::vector<std::string> out;
  auto it = doc.find(key);
  if (it == doc.end()) return out;
  if (it->is_string()) {
    for (auto line : text::split_lines(it->get<std::string>()))
      if (!text::trim(line).empty()) out.emplace_back(text::trim(line));
    return out;
  }
  if (!it->is_array()) return out;
  for (const auto& v : *it)
    if (v.is_string()) out.push_back(v.get<std::string>());
  return out;
}

inline std::string with_setup(const std::string& setup, const std::string& test) {
  return text::trim(setup).empty() ? test : setup + "\n" + test;
}

}  // namespace detail

inline ProblemRecord import_humaneval(const json& doc) {
  ProblemRecord p;
  p.id = detail::id_of(doc, {"task_id", "id"});
  p.prompt = detail::str_or(doc, "prompt");
  p.entry_point = detail::str_or(doc, "entry_point");
  if (auto sol = detail::str_or(doc, "canonical_solution"); !sol.empty()) p.reference_solution = p.prompt + sol;
  const auto test = detail::str_or(doc, "test");
  if (test.empty() || p.entry_point->empty()) throw DatasetError("humaneval record '" + p.id + "' lacks test or entry_point");
  // The check function is kept whole; asserts inside it may span lines.
  p.hidden_tests.push_back(test + "\ncheck(" + *p.entry_point + ")\n");
  return p;
}

inline ProblemRecord import_mbpp(const json& doc) {
  ProblemRecord p;
  p.id = detail::id_of(doc, {"task_id", "id"});
  p.prompt = detail::str_or(doc, "text", detail::str_or(doc, "prompt"));
  if (auto code = detail::str_or(doc, "code"); !code.empty()) p.reference_solution = code;
  const auto setup = detail::str_or(doc, "test_setup_code");
  for (const auto& t : detail::str_list(doc, "test_list")) p.hidden_tests.push_back(detail::with_setup(setup, t));
  p.visible_tests = p.hidden_tests;
  return p;
}

inline ProblemRecord import_lbpp(const json& doc) {
  ProblemRecord p;
  p.id = detail::id_of(doc, {"task_id", "id", "title"});
  p.prompt = detail::str_or(doc, "instruction", detail::str_or(doc, "prompt"));
  if (auto sig = detail::str_or(doc, "signature"); !sig.empty()) p.prompt += "\n\nSignature:\n" + sig;
  if (auto sol = detail::str_or(doc, "completion"); !sol.empty()) p.reference_solution = sol;
  const auto setup = detail::str_or(doc, "test_setup");
  for (const auto& t : detail::str_list(doc, "test_list")) p.hidden_tests.push_back(detail::with_setup(setup, t));
  p.visible_tests = p.hidden_tests;
  p.tags = detail::str_list(doc, "categories");
  return p;
}

// Reads a JSONL (or JSON array) dump in the named format.
inline std::vector<ProblemRecord> import_records(const std::string& format, const std::filesystem::path& input) {
  ProblemRecord (*convert)(const json&) = nullptr;
  if (format == "humaneval")
    convert = import_humaneval;
  else if (format == "mbpp")
    convert = import_mbpp;
  else if (format == "lbpp")
    convert = import_lbpp;
  else
    throw ConfigError("unknown import format '" + format + "' (expected humaneval|mbpp|lbpp)");

  std::string bytes;
  try {
    bytes = read_file(input);
  } catch (const std::exception&) {
    throw DatasetError("cannot read " + input.string());
  }
  std::vector<json> docs;
  try {
    auto trimmed = text::trim(bytes);
    if (!trimmed.empty() && trimmed.front() == '[') {
      for (auto& d : json::parse(trimmed)) docs.push_back(std::move(d));
    } else {
      for (auto line : text::split_lines(bytes))
        if (!text::trim(line).empty()) docs.push_back(json::parse(line));
    }
  } catch (const json::exception& e) {
    throw DatasetError(input.string() + ": invalid JSON: " + e.what());
  }

  std::vector<ProblemRecord> out;
  for (const auto& d : docs) {
    if (!d.is_object()) throw DatasetError("import records must be JSON objects");
    auto p = convert(d);
    if (p.prompt.empty() || p.hidden_tests.empty())
      throw DatasetError("record '" + p.id + "' lacks a prompt or tests");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace orps
