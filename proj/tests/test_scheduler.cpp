#include <algorithm>
#include <atomic>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include <gtest/gtest.h>

#include "dws/scheduler.hpp"

using namespace dws;

namespace {

TaskPtr task(std::int64_t id, std::int64_t priority, bool stealable) {
  auto t = TaskInstance::recreate(make_key(0, id), {}, priority);
  t->set_stealable(stealable);
  return t;
}

std::vector<std::int64_t> drain(ReadyScheduler& s) {
  std::vector<std::int64_t> ids;
  while (auto sel = s.select()) ids.push_back(sel->task->key().index[0]);
  return ids;
}

}  // namespace

TEST(AP, SelectsHighestPriorityThenSmallestKey) {
  ReadyScheduler s(SchedulerPolicy::AP);
  s.insert(task(5, 0, true), InsertOrigin::LocalActivation);
  s.insert(task(3, 2, false), InsertOrigin::LocalActivation);
  s.insert(task(1, 0, false), InsertOrigin::LocalActivation);
  s.insert(task(4, 2, true), InsertOrigin::LocalActivation);
  EXPECT_EQ(drain(s), (std::vector<std::int64_t>{3, 4, 1, 5}));
  EXPECT_FALSE(s.select());
}

TEST(TwoQ, FrontBeforeBackAndBackIsFifo) {
  ReadyScheduler s(SchedulerPolicy::TwoQ);
  s.insert(task(1, 9, true), InsertOrigin::LocalActivation);
  s.insert(task(2, 0, false), InsertOrigin::LocalActivation);
  s.insert(task(3, 5, true), InsertOrigin::LocalActivation);
  s.insert(task(4, 1, false), InsertOrigin::LocalActivation);
  EXPECT_EQ(s.stealable_count(), 2u);
  EXPECT_EQ(drain(s), (std::vector<std::int64_t>{4, 2, 1, 3}));
}

TEST(Select, ReportsReadyCountAfterRemoval) {
  ReadyScheduler s(SchedulerPolicy::AP);
  for (int i = 0; i < 4; ++i) s.insert(task(i, 0, true), InsertOrigin::LocalActivation);
  for (std::size_t left = 3;; --left) {
    auto sel = s.select();
    ASSERT_TRUE(sel);
    EXPECT_EQ(sel->ready_after, left);
    if (left == 0) break;
  }
}

TEST(TwoQ, ExtractDetachesFromTailOnly) {
  ReadyScheduler s(SchedulerPolicy::TwoQ);
  for (int i = 0; i < 6; ++i) s.insert(task(i, 0, i % 2 == 0), InsertOrigin::LocalActivation);
  auto taken = s.extract_for_steal(2);
  ASSERT_EQ(taken.size(), 2u);
  EXPECT_EQ(taken[0]->key().index[0], 4);
  EXPECT_EQ(taken[1]->key().index[0], 2);
  EXPECT_EQ(s.ready_count(), 4u);
  EXPECT_EQ(s.stealable_count(), 1u);
  EXPECT_EQ(s.stats().rescheduled_total, 0u);
  // Asking for more than exists returns what there is.
  EXPECT_EQ(s.extract_for_steal(10).size(), 1u);
  EXPECT_TRUE(s.extract_for_steal(10).empty());
  EXPECT_EQ(s.stats().rescheduled_total, 0u);
}

TEST(AP, ExtractReschedulesNonStealablesItInspects) {
  std::vector<InsertOrigin> origins;
  ReadyScheduler s(SchedulerPolicy::AP,
                   [&](const TaskInstance&, InsertOrigin o) { origins.push_back(o); });
  // Two non-stealable tasks on top, stealable ones below.
  s.insert(task(0, 5, false), InsertOrigin::LocalActivation);
  s.insert(task(1, 5, false), InsertOrigin::LocalActivation);
  s.insert(task(2, 1, true), InsertOrigin::LocalActivation);
  s.insert(task(3, 1, true), InsertOrigin::LocalActivation);
  origins.clear();

  auto taken = s.extract_for_steal(3);
  ASSERT_EQ(taken.size(), 1u);
  EXPECT_EQ(taken[0]->key().index[0], 2);
  EXPECT_EQ(origins, (std::vector<InsertOrigin>{InsertOrigin::Reschedule, InsertOrigin::Reschedule}));
  auto st = s.stats();
  EXPECT_EQ(st.ready_count, 3u);
  EXPECT_EQ(st.rescheduled_total, 2u);
  EXPECT_EQ(st.scheduled_total, 6u);
  EXPECT_EQ(drain(s), (std::vector<std::int64_t>{0, 1, 3}));
}

TEST(AP, ExtractInspectsAtMostBound) {
  ReadyScheduler s(SchedulerPolicy::AP);
  for (int i = 0; i < 5; ++i) s.insert(task(i, 10, false), InsertOrigin::LocalActivation);
  s.insert(task(9, 0, true), InsertOrigin::LocalActivation);
  EXPECT_TRUE(s.extract_for_steal(3).empty());
  EXPECT_EQ(s.stats().rescheduled_total, 3u);
  EXPECT_EQ(s.ready_count(), 6u);
}

TEST(Extract, ZeroBoundTakesNothing) {
  for (auto p : {SchedulerPolicy::AP, SchedulerPolicy::TwoQ}) {
    ReadyScheduler s(p);
    s.insert(task(0, 0, true), InsertOrigin::LocalActivation);
    EXPECT_TRUE(s.extract_for_steal(0).empty());
    EXPECT_EQ(s.ready_count(), 1u);
  }
}

// Workers and a stealing agent race; every inserted task must come out
// exactly once, through either a select or an extraction.
class SchedulerRace : public ::testing::TestWithParam<SchedulerPolicy> {};

TEST_P(SchedulerRace, EveryTaskLeavesExactlyOnce) {
  constexpr int kTasks = 4000;
  ReadyScheduler s(GetParam());
  std::mutex mu;
  std::multiset<std::int64_t> seen;
  std::atomic<bool> done_inserting{false};
  std::atomic<bool> thief_done{false};

  auto record = [&](std::int64_t id) {
    std::lock_guard lock(mu);
    seen.insert(id);
  };
  std::thread producer([&] {
    std::mt19937 rng(7);
    for (int i = 0; i < kTasks; ++i)
      s.insert(task(i, static_cast<std::int64_t>(rng() % 5), rng() % 2 == 0),
               InsertOrigin::LocalActivation);
    done_inserting = true;
  });
  std::vector<std::thread> workers;
  for (int w = 0; w < 3; ++w)
    workers.emplace_back([&] {
      for (;;) {
        if (auto sel = s.select()) {
          record(sel->task->key().index[0]);
        } else if (thief_done && s.ready_count() == 0) {
          return;
        }
      }
    });
  std::thread thief([&] {
    std::mt19937 rng(11);
    while (!done_inserting || s.ready_count() > 0)
      for (auto& t : s.extract_for_steal(1 + rng() % 4)) {
        EXPECT_TRUE(t->stealable());
        record(t->key().index[0]);
      }
    thief_done = true;
  });
  producer.join();
  for (auto& w : workers) w.join();
  thief.join();

  ASSERT_EQ(seen.size(), static_cast<std::size_t>(kTasks));
  for (int i = 0; i < kTasks; ++i) ASSERT_EQ(seen.count(i), 1u) << i;
  EXPECT_EQ(s.ready_count(), 0u);
  EXPECT_EQ(s.stealable_count(), 0u);
}

INSTANTIATE_TEST_SUITE_P(Policies, SchedulerRace,
                         ::testing::Values(SchedulerPolicy::AP, SchedulerPolicy::TwoQ));
