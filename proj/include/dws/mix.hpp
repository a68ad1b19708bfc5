#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "taskgraph.hpp"

// Independent tasks with a fixed share of non-stealable ones, all homed on
// one rank. Non-stealable tasks carry the higher priority, so a single
// priority queue offers them to the migration agent first.

namespace dws::mix {

inline constexpr std::uint32_t kTask = 0;

struct Config {
  std::size_t tasks = 400;
  double non_stealable = 0.5;
  NodeRank home = 0;
};

/// Spreads the non-stealable share evenly over the index range.
inline bool is_non_stealable(const Config& cfg, std::int64_t i) {
  const auto a = static_cast<std::int64_t>(static_cast<double>(i) * cfg.non_stealable);
  const auto b = static_cast<std::int64_t>(static_cast<double>(i + 1) * cfg.non_stealable);
  return b > a;
}

inline TaskGraphProgram build(const Config& cfg) {
  if (cfg.non_stealable < 0.0 || cfg.non_stealable > 1.0)
    throw Error(ErrorCode::InvalidConfig, "non-stealable share must lie in [0, 1]");
  TaskGraphProgram prog;
  prog.name = "mix";

  TaskTemplate t;
  t.id = kTask;
  t.name = "MIX";
  t.arity_in = 1;
  t.cost_class = "mix";
  t.body = [](Inputs, const TaskKey&) { return BodyResult{}; };
  t.is_stealable = [cfg](Inputs, const TaskKey& key) { return !is_non_stealable(cfg, key.index[0]); };
  t.priority = [cfg](const TaskKey& key) -> std::int64_t { return is_non_stealable(cfg, key.index[0]) ? 1 : 0; };
  t.local_successors = [](const TaskKey&, NodeRank, std::size_t) { return std::size_t{0}; };

  prog.templates = {std::move(t)};
  prog.home_node = [cfg](const TaskKey&, std::size_t nodes) {
    return static_cast<NodeRank>(cfg.home % nodes);
  };
  prog.initial = [cfg](NodeRank rank, std::size_t nodes) {
    std::vector<InitialActivation> acts;
    if (rank != cfg.home % nodes) return acts;
    for (std::size_t i = 0; i < cfg.tasks; ++i)
      acts.push_back({make_key(kTask, static_cast<std::int64_t>(i)), 0, make_words(DataKind::Words, {i})});
    return acts;
  };
  return prog;
}

}  // namespace dws::mix
