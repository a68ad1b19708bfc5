#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"

namespace dws {

// ---------------------------------------------------------------------------
// Keys
// ---------------------------------------------------------------------------

/// Identifies one task instance for the whole distributed run. A task that
/// is migrated is recreated on the thief with an equal key.
struct TaskKey {
  std::uint32_t template_id = 0;
  std::array<std::int64_t, 3> index{0, 0, 0};

  friend bool operator==(const TaskKey&, const TaskKey&) = default;
  friend auto operator<=>(const TaskKey&, const TaskKey&) = default;
};

inline TaskKey make_key(std::uint32_t tmpl, std::int64_t a = 0, std::int64_t b = 0,
                        std::int64_t c = 0) {
  return TaskKey{tmpl, {a, b, c}};
}

inline std::string to_string(const TaskKey& key) {
  return std::to_string(key.template_id) + ":" + std::to_string(key.index[0]) + "," +
         std::to_string(key.index[1]) + "," + std::to_string(key.index[2]);
}

inline std::ostream& operator<<(std::ostream& os, const TaskKey& key) {
  return os << to_string(key);
}

struct TaskKeyHash {
  std::size_t operator()(const TaskKey& key) const noexcept {
    std::uint64_t h = mix64(key.template_id);
    for (auto v : key.index) h = mix64(h ^ static_cast<std::uint64_t>(v));
    return static_cast<std::size_t>(h);
  }
};

// ---------------------------------------------------------------------------
// Data items
// ---------------------------------------------------------------------------

enum class DataKind : std::uint8_t {
  DenseTile = 0,
  SparseTile = 1,  // zero tile, carried as a 1-byte marker
  UtsNode = 2,
  Words = 3,
};

/// Immutable payload travelling along a DAG edge. Shared by pointer inside a
/// node; copied byte-for-byte whenever it crosses the wire.
struct DataItem {
  DataKind kind = DataKind::Words;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<double> values;       // row-major tile for DenseTile
  std::vector<std::uint64_t> words;  // descriptor words (UTS node, generic)

  std::size_t size_bytes() const noexcept {
    if (kind == DataKind::SparseTile) return 1;
    return values.size() * sizeof(double) + words.size() * sizeof(std::uint64_t);
  }

  bool is_sparse() const noexcept { return kind == DataKind::SparseTile; }

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  friend bool operator==(const DataItem&, const DataItem&) = default;
};

using DataPtr = std::shared_ptr<const DataItem>;

inline DataPtr make_dense_tile(std::uint32_t rows, std::uint32_t cols, std::vector<double> values) {
  auto item = std::make_shared<DataItem>();
  item->kind = DataKind::DenseTile;
  item->rows = rows;
  item->cols = cols;
  item->values = std::move(values);
  return item;
}

inline DataPtr make_sparse_marker(std::uint32_t rows, std::uint32_t cols) {
  auto item = std::make_shared<DataItem>();
  item->kind = DataKind::SparseTile;
  item->rows = rows;
  item->cols = cols;
  return item;
}

inline DataPtr make_words(DataKind kind, std::vector<std::uint64_t> words) {
  auto item = std::make_shared<DataItem>();
  item->kind = kind;
  item->words = std::move(words);
  return item;
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

using Inputs = std::span<const DataPtr>;

/// One edge leaving a task: `item` fills input `slot` of `successor`.
struct Output {
  TaskKey successor;
  std::size_t slot = 0;
  DataPtr item;
};

/// A value published by a task for post-run inspection (e.g. a factor tile).
struct Result {
  TaskKey key;
  DataPtr item;
};

struct BodyResult {
  std::vector<Output> outputs;
  std::vector<Result> results;
  // Set by bodies that did no useful computation (e.g. a sparse-tile pass
  // through); the runtime's task delay skips them.
  bool trivial = false;
};

struct TaskTemplate {
  std::uint32_t id = 0;
  std::string name;
  std::size_t arity_in = 1;
  // Deterministic in (inputs, key).
  std::function<BodyResult(Inputs, const TaskKey&)> body;
  // Same view of the task as the body: its inputs and its key.
  std::function<bool(Inputs, const TaskKey&)> is_stealable;
  std::function<std::int64_t(const TaskKey&)> priority;
  // Expected number of successor activations that land on `exec_rank`.
  std::function<std::size_t(const TaskKey&, NodeRank exec_rank, std::size_t nodes)>
      local_successors;
  std::string cost_class;
};

// ---------------------------------------------------------------------------
// Instances
// ---------------------------------------------------------------------------

enum class TaskState : std::uint8_t { Waiting, Ready, Executing, Done, Migrated };

inline std::string_view to_string(TaskState s) {
  switch (s) {
    case TaskState::Waiting: return "WAITING";
    case TaskState::Ready: return "READY";
    case TaskState::Executing: return "EXECUTING";
    case TaskState::Done: return "DONE";
    case TaskState::Migrated: return "MIGRATED";
  }
  return "?";
}

enum class Activation { NotReady, NowReady };

class TaskInstance {
 public:
  TaskInstance(TaskKey key, std::size_t arity)
      : key_(key), inputs_(arity), deps_remaining_(static_cast<std::int64_t>(arity)) {}

  const TaskKey& key() const noexcept { return key_; }
  std::size_t arity() const noexcept { return inputs_.size(); }

  /// Only valid once the task is READY; inputs are never written after that.
  Inputs inputs() const noexcept { return inputs_; }

  std::int64_t deps_remaining() const {
    std::lock_guard lock(mutex_);
    return deps_remaining_;
  }

  TaskState state() const noexcept { return state_.load(std::memory_order_acquire); }
  void set_state(TaskState s) noexcept { state_.store(s, std::memory_order_release); }

  std::int64_t priority() const noexcept { return priority_; }
  void set_priority(std::int64_t p) noexcept { priority_ = p; }

  bool stealable() const noexcept { return stealable_; }
  void set_stealable(bool s) noexcept { stealable_ = s; }

  /// Stores `item` in `slot`. Safe under concurrent fills; exactly one caller
  /// observes NowReady.
  Activation fill_input(std::size_t slot, DataPtr item) {
    std::lock_guard lock(mutex_);
    if (slot >= inputs_.size())
      throw Error(ErrorCode::BadSlot, "slot " + std::to_string(slot) + " of task " +
                                          to_string(key_) + " (arity " +
                                          std::to_string(inputs_.size()) + ")");
    if (inputs_[slot] || state_.load() != TaskState::Waiting)
      throw Error(ErrorCode::DoubleFill,
                  "slot " + std::to_string(slot) + " of task " + to_string(key_));
    inputs_[slot] = std::move(item);
    if (--deps_remaining_ == 0) {
      state_.store(TaskState::Ready, std::memory_order_release);
      return Activation::NowReady;
    }
    return Activation::NotReady;
  }

  /// Builds an instance that already holds every input (stolen-task recreation).
  static std::shared_ptr<TaskInstance> recreate(TaskKey key, std::vector<DataPtr> inputs,
                                                std::int64_t priority) {
    auto task = std::make_shared<TaskInstance>(key, inputs.size());
    task->inputs_ = std::move(inputs);
    task->deps_remaining_ = 0;
    task->priority_ = priority;
    task->state_.store(TaskState::Ready);
    return task;
  }

 private:
  TaskKey key_;
  std::vector<DataPtr> inputs_;
  mutable std::mutex mutex_;
  std::int64_t deps_remaining_;
  std::atomic<TaskState> state_{TaskState::Waiting};
  std::int64_t priority_ = 0;
  bool stealable_ = false;
};

using TaskPtr = std::shared_ptr<TaskInstance>;

// Free-function form used by the runtime and tests.
inline Activation fill_input(TaskInstance& task, std::size_t slot, DataPtr item) {
  return task.fill_input(slot, std::move(item));
}

// ---------------------------------------------------------------------------
// Programs
// ---------------------------------------------------------------------------

/// Input delivered to a task before the run starts (initial data).
struct InitialActivation {
  TaskKey key;
  std::size_t slot = 0;
  DataPtr item;
};

struct TaskGraphProgram {
  std::string name;
  std::vector<TaskTemplate> templates;  // templates[i].id == i
  // Activations whose key is homed on `rank`.
  std::function<std::vector<InitialActivation>(NodeRank rank, std::size_t nodes)> initial;
  // Must be a pure function of (key, nodes).
  std::function<NodeRank(const TaskKey&, std::size_t nodes)> home_node;

  const TaskTemplate& find(std::uint32_t id) const {
    if (id >= templates.size() || templates[id].id != id)
      throw Error(ErrorCode::UnknownTemplate, "template id " + std::to_string(id));
    return templates[id];
  }

  const TaskTemplate& find(const TaskKey& key) const { return find(key.template_id); }
};

inline bool evaluate_stealable(const TaskTemplate& tmpl, const TaskInstance& task) {
  if (!tmpl.is_stealable) return false;
  return tmpl.is_stealable(task.inputs(), task.key());
}

struct RoutedOutput {
  TaskKey successor;
  std::size_t slot = 0;
  DataPtr item;
  NodeRank dest = 0;
};

/// Annotates body outputs with the home node of each successor. The executing
/// node plays no part: a stolen task routes exactly like an unstolen one.
inline std::vector<RoutedOutput> route_outputs(const TaskGraphProgram& program,
                                               std::span<const Output> outputs,
                                               std::size_t nodes) {
  std::vector<RoutedOutput> routed;
  routed.reserve(outputs.size());
  for (const auto& out : outputs) {
    program.find(out.successor);
    routed.push_back(
        RoutedOutput{out.successor, out.slot, out.item, program.home_node(out.successor, nodes)});
  }
  return routed;
}

}  // namespace dws

template <>
struct std::hash<dws::TaskKey> : dws::TaskKeyHash {};
