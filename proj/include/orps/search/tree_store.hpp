#pragma once

// On-disk search tree for one problem:
//
//   <dir>/round_<t>/node_<id>.json   one document per node created in round t
//   <dir>/round_<t>/beam.json        beam snapshot, written last
//   <dir>/visible_tests.json         self-generated tests, when any
//
// A round counts as complete once its beam.json exists. Resume restores the
// latest run of consecutive complete rounds.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "orps/errors.hpp"
#include "orps/search/types.hpp"
#include "orps/util/json_io.hpp"

namespace orps {

struct SearchState {
  std::vector<NodePtr> tree;
  std::vector<NodePtr> beam;
  std::vector<std::vector<NodeId>> beam_history;
  int rounds_executed = 0;
  NodeId next_id = 1;
  UsageByRole usage;
  int parse_failures = 0;
  int critique_anomalies = 0;
};

class TreeStore {
public:
  explicit TreeStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const noexcept { return dir_; }

  void save_round(int round, const std::vector<NodePtr>& created, const SearchState& state) const {
    namespace fs = std::filesystem;
    const auto rdir = round_dir(round);
    fs::create_directories(rdir);
    for (const auto& n : created)
      write_json_file(rdir / fmt::format("node_{}.json", n->id), to_json(*n));
    json beam{{"round", round},
              {"beam", state.beam_history.back()},
              {"next_id", state.next_id},
              {"usage", to_json(state.usage)},
              {"parse_failures", state.parse_failures},
              {"critique_anomalies", state.critique_anomalies}};
    write_json_file(rdir / "beam.json", beam);
  }

  // Latest consecutive complete rounds, or nothing when round 1 is missing.
  std::optional<SearchState> load(const NodePtr& root) const {
    namespace fs = std::filesystem;
    SearchState st;
    std::map<NodeId, NodePtr> by_id{{root->id, root}};
    st.tree.push_back(root);
    json last_beam;
    for (int round = 1;; ++round) {
      const auto rdir = round_dir(round);
      if (!fs::exists(rdir / "beam.json")) break;
      std::vector<std::pair<NodeId, TraceNode>> loaded;
      for (const auto& e : fs::directory_iterator(rdir)) {
        auto name = e.path().filename().string();
        if (!name.starts_with("node_")) continue;
        auto n = trace_node_from_json(read_json_file(e.path()));
        loaded.emplace_back(n.id, std::move(n));
      }
      std::sort(loaded.begin(), loaded.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      for (auto& [id, n] : loaded) {
        if (!n.parent || !by_id.count(*n.parent))
          throw Error(fmt::format("persisted node {} in {} has no known parent", id, rdir.string()));
        n.parent_node = by_id.at(*n.parent);
        auto ptr = std::make_shared<const TraceNode>(std::move(n));
        by_id[id] = ptr;
        st.tree.push_back(ptr);
      }
      last_beam = read_json_file(rdir / "beam.json");
      std::vector<NodeId> ids = last_beam.at("beam").get<std::vector<NodeId>>();
      st.beam.clear();
      for (auto id : ids) {
        if (!by_id.count(id)) throw Error(fmt::format("beam of round {} names unknown node {}", round, id));
        st.beam.push_back(by_id.at(id));
      }
      st.beam_history.push_back(std::move(ids));
      st.rounds_executed = round;
    }
    if (st.rounds_executed == 0) return std::nullopt;
    st.next_id = last_beam.at("next_id").get<NodeId>();
    st.usage = usage_from_json(last_beam.at("usage"));
    st.parse_failures = last_beam.value("parse_failures", 0);
    st.critique_anomalies = last_beam.value("critique_anomalies", 0);
    return st;
  }

  void save_visible_tests(const std::vector<std::string>& tests, const UsageByRole& usage) const {
    std::filesystem::create_directories(dir_);
    write_json_file(dir_ / "visible_tests.json", json{{"tests", tests}, {"usage", to_json(usage)}});
  }

  std::optional<std::pair<std::vector<std::string>, UsageByRole>> load_visible_tests() const {
    const auto path = dir_ / "visible_tests.json";
    if (!std::filesystem::exists(path)) return std::nullopt;
    auto doc = read_json_file(path);
    return std::make_pair(doc.at("tests").get<std::vector<std::string>>(), usage_from_json(doc.at("usage")));
  }

private:
  std::filesystem::path round_dir(int round) const { return dir_ / fmt::format("round_{}", round); }

  std::filesystem::path dir_;
};

}  // namespace orps
