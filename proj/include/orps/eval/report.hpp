#pragma once

// Rendered outputs of a run. Every file here is a pure function of persisted
// outcomes, so a run directory can be re-reported without a model or runner.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "orps/eval/methods.hpp"
#include "orps/eval/metrics.hpp"
#include "orps/util/json_io.hpp"

namespace orps {

struct RunReport {
  std::string method;
  std::string dataset_digest;
  json config;
  BenchmarkReport metrics;
  std::uint64_t programmer_completions = 0;
  long long orps_programmer_budget = 0;  // reference for budget parity
  std::vector<CurveRow> curves;
};

inline json to_json(const RunReport& r) {
  json curves = json::array();
  for (const auto& c : r.curves)
    curves.push_back(json{{"method", c.method},
                          {"budget", c.budget},
                          {"pass_at_1", c.pass_at_1},
                          {"programmer_completions", c.programmer_completions}});
  json budget{{"programmer_completions", r.programmer_completions},
              {"orps_programmer_budget", r.orps_programmer_budget},
              {"orps_programmer_budget_total", r.orps_programmer_budget * r.metrics.problems}};
  if (r.method.starts_with("bon("))
    budget["parity_with_orps"] =
        r.programmer_completions == static_cast<std::uint64_t>(r.orps_programmer_budget * r.metrics.problems);
  return json{{"method", r.method},
              {"dataset_digest", r.dataset_digest},
              {"config", r.config},
              {"metrics", to_json(r.metrics)},
              {"budget", std::move(budget)},
              {"curves", std::move(curves)}};
}

inline std::string fmt_pct(double v) { return fmt::format("{:.1f}", v); }

inline std::string render_markdown(const RunReport& r) {
  const auto& m = r.metrics;
  std::string out = "# Benchmark report\n\n";
  out += fmt::format("Method `{}` on {} problems (dataset sha256 {}).\n\n", r.method, m.problems,
                     r.dataset_digest.substr(0, 12));
  out += "| Method | Pass@1 | Tests | Valid | Time |\n|---|---:|---:|---:|---:|\n";
  out += fmt::format("| {} | {} | {} | {} | {} |\n\n", r.method, fmt_pct(m.pass_at_1), fmt_pct(m.tests),
                     fmt_pct(m.valid), m.time ? fmt_pct(*m.time) : "n/a");
  out += fmt::format("All metrics are percentages. Time is relative to the reference solution "
                     "(100 = parity, lower is faster) and covers {:.0f}% of problems.",
                     100.0 * m.time_coverage);
  if (m.time && *m.time > 100.0) out += " Generated code is slower than the reference on average.";
  out += "\n";
  if (m.failed > 0) out += fmt::format("{} problems failed before producing code.\n", m.failed);

  if (!m.per_tag.empty()) {
    out += "\n## Success by tag\n\n| Tag | Problems | Solved | Pass@1 |\n|---|---:|---:|---:|\n";
    for (const auto& [tag, t] : m.per_tag)
      out += fmt::format("| {} | {} | {} | {} |\n", tag, t.problems, t.solved, fmt_pct(t.pass_at_1));
  }

  out += "\n## Budget\n\n| Role | Requests | Completions | Prompt tokens | Completion tokens |\n"
         "|---|---:|---:|---:|---:|\n";
  for (const auto& [role, u] : m.usage)
    out += fmt::format("| {} | {} | {} | {} | {} |\n", role, u.requests, u.completions, u.prompt_tokens,
                       u.completion_tokens);
  out += fmt::format("\nProgrammer completions: {} (ORPS ceiling at this configuration: {} per problem).\n",
                     r.programmer_completions, r.orps_programmer_budget);

  if (!r.curves.empty()) {
    out += "\n## Scaling\n\n| Method | Budget | Pass@1 | Completions |\n|---|---:|---:|---:|\n";
    for (const auto& c : r.curves)
      out += fmt::format("| {} | {} | {} | {} |\n", c.method, c.budget, fmt_pct(c.pass_at_1),
                         c.programmer_completions);
  }

  out += "\n## Problems\n\n| Problem | Valid | Tests passed | Relative time | Note |\n|---|:-:|---:|---:|---|\n";
  for (const auto& o : m.rows) {
    std::string note = !o.error.empty() ? o.error : o.relative_time ? "" : o.time_note;
    for (auto& c : note)
      if (c == '|' || c == '\n') c = ' ';
    out += fmt::format("| {} | {} | {}/{} | {} | {} |\n", o.problem_id, o.valid ? "yes" : "no", o.tests_passed,
                       o.tests_total, o.relative_time ? fmt_pct(*o.relative_time) : "n/a",
                       text::truncate_utf8(note, 120, "..."));
  }
  return out;
}

inline std::string render_curves_csv(const std::vector<CurveRow>& rows) {
  std::string out = "method,budget,pass_at_1,programmer_completions\n";
  for (const auto& c : rows)
    out += fmt::format("{},{},{:.6f},{}\n", c.method, c.budget, c.pass_at_1, c.programmer_completions);
  return out;
}

// Profile and static metrics normalized against the reference solution:
// reference / candidate, so 1.0 is parity and higher is better. Averaged over
// problems where both values exist; two zeros count as parity.
inline std::string render_radar_csv(const std::string& method, const BenchmarkReport& m) {
  struct Acc {
    double sum = 0;
    int n = 0;
    void add(std::optional<double> ref, std::optional<double> cand) {
      if (!ref || !cand) return;
      if (*cand <= 0 && *ref > 0) return;
      sum += *cand <= 0 ? 1.0 : *ref / *cand;
      ++n;
    }
  };
  Acc time, instr, branch, faults, lines, nodes, cyclo, cogn;
  auto opt = [](auto v) { return std::optional<double>(static_cast<double>(v)); };
  for (const auto& o : m.rows) {
    if (o.profile && o.reference_profile && o.profile->counters_available == o.reference_profile->counters_available) {
      time.add(opt(o.reference_profile->time_basis_ns()), opt(o.profile->time_basis_ns()));
      faults.add(opt(o.reference_profile->page_faults), opt(o.profile->page_faults));
      if (o.profile->instructions && o.reference_profile->instructions)
        instr.add(opt(*o.reference_profile->instructions), opt(*o.profile->instructions));
      if (o.profile->branch_misses && o.reference_profile->branch_misses)
        branch.add(opt(*o.reference_profile->branch_misses), opt(*o.profile->branch_misses));
    }
    if (o.static_metrics && o.reference_static) {
      lines.add(opt(o.reference_static->code_length_lines), opt(o.static_metrics->code_length_lines));
      nodes.add(opt(o.reference_static->ast_node_count), opt(o.static_metrics->ast_node_count));
      cyclo.add(opt(o.reference_static->cyclomatic), opt(o.static_metrics->cyclomatic));
      cogn.add(opt(o.reference_static->cognitive), opt(o.static_metrics->cognitive));
    }
  }
  std::string out = "method,metric,normalized,problems\n";
  auto row = [&](const char* name, const Acc& a) {
    if (a.n == 0)
      out += fmt::format("{},{},,0\n", method, name);
    else
      out += fmt::format("{},{},{:.6f},{}\n", method, name, a.sum / a.n, a.n);
  };
  row("time_enabled", time);
  row("instructions", instr);
  row("branch_misses", branch);
  row("page_faults", faults);
  row("code_length", lines);
  row("ast_node_count", nodes);
  row("cyclomatic", cyclo);
  row("cognitive", cogn);
  return out;
}

inline void write_report_files(const std::filesystem::path& dir, const RunReport& r) {
  write_file_atomic(dir / "report.json", dump_json(to_json(r), 2) + "\n");
  write_file_atomic(dir / "report.md", render_markdown(r));
  write_file_atomic(dir / "curves.csv", render_curves_csv(r.curves));
  write_file_atomic(dir / "radar.csv", render_radar_csv(r.method, r.metrics));
}

}  // namespace orps
