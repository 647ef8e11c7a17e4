// Protocol-conformant stand-in for the Python guest runner.
//
// Reads one job document on stdin and writes one report document on stdout,
// exactly as schema/runner_protocol.schema.json describes. It never executes
// guest code. Outcomes are driven by pragma comments so fixtures can script
// any scenario deterministically:
//
//   code pragmas   # fake: solves=a,b,c     tests tagged a, b or c pass ("*" = all)
//                  # fake: syntax-error     module fails to parse
//                  # fake: crash-on-load    module raises at import time
//                  # fake: timeout          every test exceeds the cpu limit
//                  # fake: memory=<bytes>   allocation size; above the limit -> error
//                  # fake: cost=<ms>        per-test wall time (default 1.0)
//                  # fake: faults=<n>       per-test page faults (default 100)
//                  # fake: harness-fault    runner exits nonzero with a fault document
//                  # fake: garbage-output   runner prints a non-JSON report
//   test pragmas   # tag=<name>             which solved tag makes the test pass
//                  # fake: test-error       the test body raises
//
// Anything with unbalanced brackets or an unterminated string literal is a
// syntax error, mirroring what a real parser would reject.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "orps/execution/protocol.hpp"
#include "orps/util/json_io.hpp"
#include "orps/util/text.hpp"

namespace {

using namespace orps;
using protocol::JobMode;
using protocol::TestStatus;

struct Pragmas {
  std::set<std::string> solves;
  bool syntax_error = false;
  bool crash_on_load = false;
  bool timeout = false;
  bool harness_fault = false;
  bool garbage_output = false;
  bool test_error = false;
  std::int64_t memory = 0;
  double cost_ms = 1.0;
  std::int64_t faults = 100;
  std::string tag;
};

Pragmas read_pragmas(std::string_view src) {
  Pragmas p;
  for (auto line : text::split_lines(src)) {
    if (auto pos = line.find("# tag="); pos != std::string_view::npos) {
      auto rest = line.substr(pos + 6);
      p.tag = std::string(rest.substr(0, rest.find_first_of(" \t")));
    }
    auto pos = line.find("# fake:");
    if (pos == std::string_view::npos) continue;
    std::istringstream words(std::string(line.substr(pos + 7)));
    std::string w;
    while (words >> w) {
      auto eq = w.find('=');
      std::string key = w.substr(0, eq);
      std::string val = eq == std::string::npos ? "" : w.substr(eq + 1);
      if (key == "solves") {
        std::stringstream items(val);
        std::string item;
        while (std::getline(items, item, ',')) if (!item.empty()) p.solves.insert(item);
      } else if (key == "syntax-error") {
        p.syntax_error = true;
      } else if (key == "crash-on-load") {
        p.crash_on_load = true;
      } else if (key == "timeout") {
        p.timeout = true;
      } else if (key == "harness-fault") {
        p.harness_fault = true;
      } else if (key == "garbage-output") {
        p.garbage_output = true;
      } else if (key == "test-error") {
        p.test_error = true;
      } else if (key == "memory" || key == "cost" || key == "faults") {
        try {
          if (key == "memory") p.memory = std::stoll(val);
          if (key == "cost") p.cost_ms = std::stod(val);
          if (key == "faults") p.faults = std::stoll(val);
        } catch (const std::exception&) {
          // malformed pragma values are ignored, like any other comment
        }
      }
    }
  }
  return p;
}

struct Token {
  std::string text;
  int line = 0;
  bool first_on_line = false;
  int indent = 0;
};

// Tokenizes Python-like source. Returns false on unbalanced brackets or an
// unterminated string, with the offending line in *error_line.
bool tokenize(std::string_view src, std::vector<Token>& out, int* error_line) {
  std::vector<char> brackets;
  int line = 1;
  bool at_line_start = true;
  int indent = 0;
  std::size_t i = 0;
  while (i < src.size()) {
    char c = src[i];
    if (c == '\n') {
      ++line;
      at_line_start = true;
      indent = 0;
      ++i;
      continue;
    }
    if (at_line_start && (c == ' ' || c == '\t')) {
      indent += c == '\t' ? 4 : 1;
      ++i;
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
      continue;
    }
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') ++i;
      continue;
    }
    Token tok;
    tok.line = line;
    tok.first_on_line = at_line_start && brackets.empty();
    tok.indent = indent;
    at_line_start = false;
    if (c == '"' || c == '\'') {
      bool triple = src.substr(i, 3) == std::string(3, c);
      std::size_t j = i + (triple ? 3 : 1);
      bool closed = false;
      while (j < src.size()) {
        if (src[j] == '\\') {
          j += 2;
          continue;
        }
        if (!triple && src[j] == '\n') break;
        if (triple ? src.substr(j, 3) == std::string(3, c) : src[j] == c) {
          j += triple ? 3 : 1;
          closed = true;
          break;
        }
        if (src[j] == '\n') ++line;
        ++j;
      }
      if (!closed) {
        *error_line = tok.line;
        return false;
      }
      tok.text = "<str>";
      i = j;
    } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_' || src[j] == '.'))
        ++j;
      tok.text = std::string(src.substr(i, j - i));
      i = j;
    } else if (static_cast<unsigned char>(c) >= 0x80) {
      std::size_t j = i;
      while (j < src.size() && static_cast<unsigned char>(src[j]) >= 0x80) ++j;
      tok.text = std::string(src.substr(i, j - i));
      i = j;
    } else {
      if (c == '(' || c == '[' || c == '{') brackets.push_back(c);
      if (c == ')' || c == ']' || c == '}') {
        char open = c == ')' ? '(' : c == ']' ? '[' : '{';
        if (brackets.empty() || brackets.back() != open) {
          *error_line = line;
          return false;
        }
        brackets.pop_back();
      }
      tok.text = std::string(1, c);
      ++i;
    }
    out.push_back(std::move(tok));
  }
  if (!brackets.empty()) {
    *error_line = line;
    return false;
  }
  return true;
}

std::int64_t line_count(std::string_view src) {
  if (src.empty()) return 0;
  auto n = static_cast<std::int64_t>(std::count(src.begin(), src.end(), '\n'));
  return src.back() == '\n' ? n : n + 1;
}

protocol::StaticMetrics approximate_static(std::string_view src, const std::vector<Token>& toks) {
  protocol::StaticMetrics s;
  s.code_length_lines = line_count(src);
  s.ast_node_count = static_cast<std::int64_t>(toks.size());
  static const std::set<std::string> branch{"if", "elif", "for", "while", "except", "and", "or", "assert"};
  s.cyclomatic = toks.empty() ? 0 : 1;
  for (const auto& t : toks)
    if (branch.count(t.text)) ++s.cyclomatic;

  static const std::set<std::string> nesting{"if", "for", "while", "except"};
  static const std::set<std::string> flat{"elif", "else"};
  std::vector<int> open_blocks;  // indents of enclosing control blocks
  std::string last_bool;
  int last_line = -1;
  for (const auto& t : toks) {
    if (t.line != last_line) {
      last_bool.clear();
      last_line = t.line;
    }
    if (t.first_on_line) {
      while (!open_blocks.empty() && open_blocks.back() >= t.indent) open_blocks.pop_back();
      if (nesting.count(t.text)) {
        s.cognitive += 1 + static_cast<std::int64_t>(open_blocks.size());
        open_blocks.push_back(t.indent);
      } else if (flat.count(t.text)) {
        s.cognitive += 1;
        open_blocks.push_back(t.indent);
      }
    }
    if (t.text == "and" || t.text == "or") {
      if (t.text != last_bool) ++s.cognitive;
      last_bool = t.text;
    }
  }
  return s;
}

int run(const std::string& input) {
  protocol::RunnerJob job;
  try {
    job = protocol::job_from_json(json::parse(input));
    job.limits.validate();
  } catch (const std::exception& e) {
    std::cout << dump_json(json{{"error", std::string("malformed job: ") + e.what()}}) << "\n";
    return 2;
  }
  if (static_cast<int>(job.tests.size()) > job.limits.max_tests) {
    std::cout << dump_json(json{{"error", "job carries more tests than limits.max_tests"}}) << "\n";
    return 2;
  }

  const Pragmas code = read_pragmas(job.code);
  if (code.harness_fault) {
    std::cout << dump_json(json{{"error", "simulated harness fault"}}) << "\n";
    return 3;
  }
  if (code.garbage_output) {
    std::cout << "Traceback (most recent call last): not a report\n";
    return 0;
  }

  std::vector<Token> toks;
  int error_line = 0;
  const bool parses = !code.syntax_error && tokenize(job.code, toks, &error_line);

  protocol::RunnerReport report;
  report.limits_enforced = true;
  if (parses) report.static_metrics = approximate_static(job.code, toks);

  if (!parses) {
    report.load_ok = false;
    report.diagnostic = "SyntaxError: invalid syntax (line " + std::to_string(std::max(error_line, 1)) + ")";
  } else if (job.mode == JobMode::execute && code.crash_on_load) {
    report.load_ok = false;
    report.diagnostic = "RuntimeError: module raised during import";
  } else if (job.mode == JobMode::static_only) {
    report.load_ok = true;
  } else {
    report.load_ok = true;
  }

  for (std::size_t i = 0; i < job.tests.size(); ++i) {
    protocol::TestOutcome t;
    t.index = static_cast<int>(i);
    const Pragmas test = read_pragmas(job.tests[i]);
    std::vector<Token> test_toks;
    int test_error_line = 0;
    const bool test_parses = !test.syntax_error && tokenize(job.tests[i], test_toks, &test_error_line);

    if (!report.load_ok) {
      t.status = TestStatus::error;
      t.message = report.diagnostic;
    } else if (job.mode == JobMode::static_only) {
      t.status = TestStatus::error;
      t.message = "not executed (static_only)";
    } else if (job.mode == JobMode::check_only) {
      t.status = test_parses ? TestStatus::pass : TestStatus::error;
      if (!test_parses) t.message = "SyntaxError: invalid syntax (line " + std::to_string(std::max(test_error_line, 1)) + ")";
    } else {
      t.wall_ms = code.cost_ms;
      t.cpu_ms = code.cost_ms * 0.9;
      t.peak_memory_bytes = 8 * 1024 * 1024 + code.memory;
      t.page_faults = code.faults;
      if (!test_parses) {
        t.status = TestStatus::error;
        t.message = "SyntaxError in test: invalid syntax";
      } else if (code.timeout) {
        t.status = TestStatus::timeout;
        t.wall_ms = job.limits.cpu_seconds * 1000.0 + 250.0;
        t.cpu_ms = job.limits.cpu_seconds * 1000.0;
        t.message = "TimeoutError: cpu limit exceeded";
      } else if (code.memory > job.limits.memory_bytes) {
        t.status = TestStatus::error;
        t.message = "MemoryError: allocation exceeds the address-space limit";
      } else if (test.test_error) {
        t.status = TestStatus::error;
        t.message = "NameError: name 'undefined_helper' is not defined";
      } else if (code.solves.count("*") || (!test.tag.empty() && code.solves.count(test.tag))) {
        t.status = TestStatus::pass;
      } else {
        t.status = TestStatus::fail;
        t.message = "AssertionError (test #" + std::to_string(i) + ")";
      }
    }
    report.per_test.push_back(std::move(t));
  }

  std::cout << dump_json(protocol::to_json(report)) << "\n";
  return 0;
}

}  // namespace

int main() {
  std::string input((std::istreambuf_iterator<char>(std::cin)), std::istreambuf_iterator<char>());
  try {
    return run(input);
  } catch (const std::exception& e) {
    std::cout << dump_json(orps::json{{"error", std::string("internal: ") + e.what()}}) << "\n";
    return 4;
  }
}
