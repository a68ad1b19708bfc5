#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string_view>

#include "common.hpp"

namespace dws {

enum class ThiefPolicy { ReadyOnly, ReadyPlusSuccessors };

inline std::string_view to_string(ThiefPolicy p) {
  return p == ThiefPolicy::ReadyOnly ? "ready" : "ready+succ";
}

enum class VictimKind { Single, Chunk, Half };

inline std::string_view to_string(VictimKind k) {
  switch (k) {
    case VictimKind::Single: return "single";
    case VictimKind::Chunk: return "chunk";
    case VictimKind::Half: return "half";
  }
  return "?";
}

struct VictimPolicy {
  VictimKind kind = VictimKind::Chunk;
  std::size_t chunk_size = 1;  // Chunk only
  bool waiting_time_gate = true;
};

/// A node starves when nothing is ready, and under READY_PLUS_SUCCESSORS also
/// when no executing task is about to activate a local successor.
constexpr bool detect_starvation(ThiefPolicy policy, std::size_t ready_count,
                                 std::int64_t in_exec_successors) noexcept {
  if (ready_count != 0) return false;
  return policy == ThiefPolicy::ReadyOnly || in_exec_successors == 0;
}

/// Upper bound on tasks granted for one request when `stealable` tasks are
/// ready on the victim. Single is Chunk with a chunk of one.
constexpr std::size_t steal_bound(const VictimPolicy& policy, std::size_t stealable) noexcept {
  switch (policy.kind) {
    case VictimKind::Half: return (stealable + 1) / 2;
    case VictimKind::Chunk: return std::max<std::size_t>(policy.chunk_size, 1);
    case VictimKind::Single: return 1;
  }
  return 1;
}

/// Expected time a newly readied task waits for a worker:
/// (ready / workers + 1) * (elapsed / executed). Empty when nothing has run yet.
inline std::optional<double> waiting_time_ns(std::size_t ready_count, std::size_t workers,
                                             double elapsed_ns, std::uint64_t executed) {
  if (executed == 0 || workers == 0) return std::nullopt;
  const double avg = elapsed_ns / static_cast<double>(executed);
  return (static_cast<double>(ready_count) / static_cast<double>(workers) + 1.0) * avg;
}

/// The gate permits a steal only when moving a task is cheaper than letting
/// it queue. No estimate yet means the victim has not run anything: permit.
inline bool gate_permits(double migration_cost_ns, std::optional<double> waiting_ns) {
  return !waiting_ns || migration_cost_ns < *waiting_ns;
}

/// Per-task migration time, as an exponentially weighted average of observed
/// grant round trips divided by the number of tasks they carried.
class MigrationCostModel {
 public:
  explicit MigrationCostModel(double prior_ns = 1e6, double alpha = 0.25)
      : estimate_ns_(prior_ns), alpha_(alpha) {}

  double estimate_ns() const noexcept { return estimate_ns_; }
  std::uint64_t observations() const noexcept { return observations_; }

  void observe(double round_trip_ns, std::size_t tasks) {
    if (tasks == 0) return;
    const double sample = std::max(round_trip_ns / static_cast<double>(tasks), 1.0);
    estimate_ns_ = observations_ == 0 ? sample : alpha_ * sample + (1.0 - alpha_) * estimate_ns_;
    ++observations_;
  }

 private:
  double estimate_ns_;
  double alpha_;
  std::uint64_t observations_ = 0;
};

/// Uniform over every rank except the thief's own.
class VictimSelector {
 public:
  VictimSelector(NodeRank self, std::size_t nodes, std::uint64_t seed)
      : self_(self), nodes_(nodes), rng_(mix64(seed ^ (0x51ed270bULL + self))) {}

  NodeRank next() {
    std::uniform_int_distribution<std::size_t> pick(0, nodes_ - 2);
    auto r = static_cast<NodeRank>(pick(rng_));
    return r >= self_ ? r + 1 : r;
  }

 private:
  NodeRank self_;
  std::size_t nodes_;
  std::mt19937_64 rng_;
};

struct StealLedger {
  std::uint64_t requests_sent = 0;
  std::uint64_t requests_granted = 0;  // answered with at least one task
  std::uint64_t requests_denied = 0;
  std::uint64_t tasks_stolen_in = 0;
  std::uint64_t tasks_stolen_out = 0;
  std::uint64_t requests_served = 0;  // victim side
  std::uint64_t grants_served = 0;
};

}  // namespace dws
