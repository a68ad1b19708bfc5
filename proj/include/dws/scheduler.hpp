#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string_view>
#include <vector>

#include "taskgraph.hpp"

namespace dws {

enum class SchedulerPolicy { AP, TwoQ };

inline std::string_view to_string(SchedulerPolicy p) {
  return p == SchedulerPolicy::AP ? "ap" : "2q";
}

enum class InsertOrigin : std::uint8_t { LocalActivation, StolenArrival, Reschedule };

inline std::string_view to_string(InsertOrigin o) {
  switch (o) {
    case InsertOrigin::LocalActivation: return "LOCAL_ACTIVATION";
    case InsertOrigin::StolenArrival: return "STOLEN_ARRIVAL";
    case InsertOrigin::Reschedule: return "RESCHEDULE";
  }
  return "?";
}

struct ReadyQueueStats {
  std::size_t ready_count = 0;
  std::uint64_t scheduled_total = 0;
  std::uint64_t rescheduled_total = 0;
};

/// Task handed to a worker, with the ready count polled right after removal.
struct Selection {
  TaskPtr task;
  std::size_t ready_after = 0;
};

/// Highest priority first; equal priorities fall back to ascending key so a
/// single worker always sees the same order.
struct PriorityOrder {
  bool operator()(const TaskPtr& a, const TaskPtr& b) const {
    if (a->priority() != b->priority()) return a->priority() > b->priority();
    return a->key() < b->key();
  }
};

/// Per-node store of READY tasks.
///
/// AP keeps one priority-ordered set for the whole node. 2Q splits it: a
/// priority-ordered front queue for non-stealable tasks and a FIFO back queue
/// holding stealable ones, which the migration agent can detach in bulk.
/// Workers and the migration agent may call any member concurrently.
class ReadyScheduler {
 public:
  using InsertObserver = std::function<void(const TaskInstance&, InsertOrigin)>;

  explicit ReadyScheduler(SchedulerPolicy policy, InsertObserver observer = {})
      : policy_(policy), observer_(std::move(observer)) {}

  SchedulerPolicy policy() const noexcept { return policy_; }

  void insert(TaskPtr task, InsertOrigin origin) {
    {
      std::lock_guard lock(mutex_);
      push_locked(task);
      ++scheduled_total_;
      if (origin == InsertOrigin::Reschedule) ++rescheduled_total_;
    }
    if (observer_) observer_(*task, origin);
  }

  std::optional<Selection> select() {
    std::lock_guard lock(mutex_);
    TaskPtr task;
    if (policy_ == SchedulerPolicy::AP) {
      if (ordered_.empty()) return std::nullopt;
      task = *ordered_.begin();
      ordered_.erase(ordered_.begin());
    } else if (!ordered_.empty()) {
      task = *ordered_.begin();
      ordered_.erase(ordered_.begin());
    } else if (!back_.empty()) {
      task = std::move(back_.front());
      back_.pop_front();
    } else {
      return std::nullopt;
    }
    if (task->stealable()) stealable_.fetch_sub(1, std::memory_order_relaxed);
    const auto after = ready_.fetch_sub(1, std::memory_order_acq_rel) - 1;
    return Selection{std::move(task), after};
  }

  /// Best-effort removal of at most `max_n` stealable tasks.
  ///
  /// AP inspects at most `max_n` tasks from the top of the priority order;
  /// non-stealable ones among them go straight back in as reschedules. 2Q
  /// detaches from the tail of the back queue and never touches the front.
  std::vector<TaskPtr> extract_for_steal(std::size_t max_n) {
    std::vector<TaskPtr> taken;
    if (max_n == 0) return taken;
    if (policy_ == SchedulerPolicy::TwoQ) {
      std::lock_guard lock(mutex_);
      const auto n = std::min(max_n, back_.size());
      taken.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        taken.push_back(std::move(back_.back()));
        back_.pop_back();
      }
      ready_.fetch_sub(n, std::memory_order_acq_rel);
      stealable_.fetch_sub(n, std::memory_order_relaxed);
      return taken;
    }

    std::vector<TaskPtr> keep_local;
    for (std::size_t inspected = 0; inspected < max_n; ++inspected) {
      TaskPtr task;
      {
        std::lock_guard lock(mutex_);
        if (ordered_.empty()) break;
        task = *ordered_.begin();
        ordered_.erase(ordered_.begin());
        ready_.fetch_sub(1, std::memory_order_acq_rel);
        if (task->stealable()) stealable_.fetch_sub(1, std::memory_order_relaxed);
      }
      if (task->stealable())
        taken.push_back(std::move(task));
      else
        keep_local.push_back(std::move(task));
    }
    for (auto& task : keep_local) insert(std::move(task), InsertOrigin::Reschedule);
    return taken;
  }

  std::size_t ready_count() const noexcept { return ready_.load(std::memory_order_acquire); }
  std::size_t stealable_count() const noexcept {
    return stealable_.load(std::memory_order_acquire);
  }

  ReadyQueueStats stats() const {
    std::lock_guard lock(mutex_);
    return {ready_count(), scheduled_total_, rescheduled_total_};
  }

 private:
  void push_locked(const TaskPtr& task) {
    if (policy_ == SchedulerPolicy::TwoQ && task->stealable())
      back_.push_back(task);
    else
      ordered_.insert(task);
    if (task->stealable()) stealable_.fetch_add(1, std::memory_order_relaxed);
    ready_.fetch_add(1, std::memory_order_acq_rel);
  }

  SchedulerPolicy policy_;
  InsertObserver observer_;
  mutable std::mutex mutex_;
  std::set<TaskPtr, PriorityOrder> ordered_;  // AP: everything; 2Q: front queue
  std::deque<TaskPtr> back_;                  // 2Q only
  std::atomic<std::size_t> ready_{0};
  std::atomic<std::size_t> stealable_{0};
  std::uint64_t scheduled_total_ = 0;
  std::uint64_t rescheduled_total_ = 0;
};

}  // namespace dws
