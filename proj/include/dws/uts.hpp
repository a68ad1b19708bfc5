#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "taskgraph.hpp"

// Unbalanced Tree Search. Each task is one tree node. The root has b0
// children; every other node fills each of its m child slots with
// probability q. Child existence is drawn from a counter-based hash of
// (node state, slot), so the tree is fixed by (seed, b0, m, q) alone.
//
// Key index: (node state, depth, lineage). The lineage is the root-child
// ordinal the node descends from; with parent affinity it fixes the home
// node, so a subtree stays where its root child landed unless stolen.

namespace dws::uts {

inline constexpr std::uint32_t kNode = 0;

enum class GMode {
  ExpectedSize,  // g caps the tree size (0 = default cap)
  Work,          // g = hash repetitions per node
};

enum class Mapping {
  ParentAffinity,  // root children cyclic, descendants follow their parent
  Hashed,          // every node homed by its state hash
};

struct Config {
  std::uint32_t b0 = 120;
  std::uint32_t m = 5;
  double q = 0.19;
  std::uint64_t g = 0;
  GMode g_mode = GMode::ExpectedSize;
  std::uint32_t max_depth = 64;
  std::size_t max_nodes = 100000;
  Mapping mapping = Mapping::ParentAffinity;
  std::uint64_t seed = 1;
};

/// Named desk-scale parameter sets.
inline Config preset(const std::string& name) {
  Config c;
  if (name == "desk") {
    c.b0 = 120, c.m = 5, c.q = 0.19;  // expected size 1 + b0 / (1 - mq) = 2401
  } else if (name == "tiny") {
    c.b0 = 8, c.m = 5, c.q = 0.19;
  } else if (name == "wide") {
    c.b0 = 2000, c.m = 5, c.q = 0.18;  // expected size 20001
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown UTS preset: " + name);
  }
  return c;
}

inline std::uint64_t root_state(std::uint64_t seed) { return mix64(seed ^ 0x75747372ULL); }

inline std::uint64_t child_state(std::uint64_t parent, std::uint32_t slot) {
  return mix64(parent + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(slot) + 1));
}

/// Whether non-root slot `slot` of `parent` holds a child.
inline bool child_exists(std::uint64_t parent, std::uint32_t slot, double q) {
  const auto h = mix64(parent ^ (0xd1b54a32d192ed03ULL * (static_cast<std::uint64_t>(slot) + 1)));
  return static_cast<double>(h >> 11) * 0x1.0p-53 < q;
}

inline TaskKey node_key(std::uint64_t state, std::int64_t depth, std::int64_t lineage) {
  return make_key(kNode, static_cast<std::int64_t>(state), depth, lineage);
}

/// Children of a node as (state, lineage) pairs, in slot order.
inline std::vector<std::pair<std::uint64_t, std::int64_t>> children(const Config& cfg,
                                                                   std::uint64_t state,
                                                                   std::int64_t depth,
                                                                   std::int64_t lineage) {
  std::vector<std::pair<std::uint64_t, std::int64_t>> out;
  if (static_cast<std::uint32_t>(depth) >= cfg.max_depth) return out;
  if (depth == 0) {
    for (std::uint32_t i = 0; i < cfg.b0; ++i) out.push_back({child_state(state, i), i});
    return out;
  }
  for (std::uint32_t i = 0; i < cfg.m; ++i)
    if (child_exists(state, i, cfg.q)) out.push_back({child_state(state, i), lineage});
  return out;
}

inline std::size_t node_cap(const Config& cfg) {
  return cfg.g_mode == GMode::ExpectedSize && cfg.g > 0 ? static_cast<std::size_t>(cfg.g)
                                                       : cfg.max_nodes;
}

/// Counts the tree with an explicit stack; throws TREE_TOO_LARGE past the cap.
inline std::size_t count_nodes(const Config& cfg) {
  const auto cap = node_cap(cfg);
  struct Frame {
    std::uint64_t state;
    std::int64_t depth, lineage;
  };
  std::vector<Frame> stack{{root_state(cfg.seed), 0, 0}};
  std::size_t n = 0;
  while (!stack.empty()) {
    auto f = stack.back();
    stack.pop_back();
    if (++n > cap)
      throw Error(ErrorCode::TreeTooLarge, "UTS tree exceeds " + std::to_string(cap) + " nodes");
    for (auto [s, l] : children(cfg, f.state, f.depth, f.lineage)) stack.push_back({s, f.depth + 1, l});
  }
  return n;
}

inline void validate(const Config& cfg) {
  if (cfg.b0 < 1) throw Error(ErrorCode::InvalidConfig, "b0 must be at least 1");
  if (!(cfg.q >= 0.0 && cfg.q <= 1.0)) throw Error(ErrorCode::InvalidConfig, "q must lie in [0, 1]");
}

/// Builds the program after a sequential pre-walk that enforces the size cap.
inline TaskGraphProgram build(const Config& cfg) {
  validate(cfg);
  count_nodes(cfg);
  auto shared = std::make_shared<const Config>(cfg);

  TaskGraphProgram prog;
  prog.name = "uts";

  TaskTemplate node;
  node.id = kNode;
  node.name = "UTS_NODE";
  node.arity_in = 1;
  node.cost_class = "uts";
  node.body = [shared](Inputs, const TaskKey& key) {
    const auto state = static_cast<std::uint64_t>(key.index[0]);
    BodyResult res;
    if (shared->g_mode == GMode::Work) {
      std::uint64_t h = state;
      for (std::uint64_t i = 0; i < shared->g; ++i) h = mix64(h);
      res.results.push_back({key, make_words(DataKind::Words, {h})});
    }
    for (auto [s, lineage] : children(*shared, state, key.index[1], key.index[2])) {
      auto child = node_key(s, key.index[1] + 1, lineage);
      res.outputs.push_back({child, 0, make_words(DataKind::UtsNode, {s, static_cast<std::uint64_t>(key.index[1] + 1)})});
    }
    return res;
  };
  node.is_stealable = [](Inputs, const TaskKey&) { return true; };
  node.priority = [](const TaskKey& key) { return key.index[1]; };

  auto home = [shared](const TaskKey& key, std::size_t nodes) -> NodeRank {
    if (key.index[1] == 0) return 0;
    if (shared->mapping == Mapping::Hashed)
      return static_cast<NodeRank>(static_cast<std::uint64_t>(key.index[0]) % nodes);
    return static_cast<NodeRank>(static_cast<std::uint64_t>(key.index[2]) % nodes);
  };
  node.local_successors = [shared, home](const TaskKey& key, NodeRank exec, std::size_t nodes) {
    if (key.index[1] == 0) {
      std::size_t n = 0;
      for (std::uint32_t i = 0; i < shared->b0; ++i)
        if (home(node_key(0, 1, i), nodes) == exec) ++n;
      return n;
    }
    const auto expected = static_cast<std::size_t>(std::lround(shared->m * shared->q));
    if (shared->mapping == Mapping::Hashed) return expected / nodes;
    return home(key, nodes) == exec ? expected : std::size_t{0};
  };

  prog.templates = {std::move(node)};
  prog.home_node = home;
  prog.initial = [shared](NodeRank rank, std::size_t) {
    std::vector<InitialActivation> acts;
    if (rank == 0) {
      const auto s = root_state(shared->seed);
      acts.push_back({node_key(s, 0, 0), 0, make_words(DataKind::UtsNode, {s, 0})});
    }
    return acts;
  };
  return prog;
}

}  // namespace dws::uts
