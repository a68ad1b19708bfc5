#include <atomic>
#include <thread>
#include <unordered_set>

#include <gtest/gtest.h>

#include "dws/taskgraph.hpp"

using namespace dws;

namespace {

DataPtr word(std::uint64_t v) { return make_words(DataKind::Words, {v}); }

TaskGraphProgram cyclic_program(std::int64_t T) {
  TaskGraphProgram p;
  p.name = "cyclic";
  TaskTemplate t;
  t.id = 0;
  t.name = "T";
  t.arity_in = 1;
  t.body = [](Inputs, const TaskKey&) { return BodyResult{}; };
  p.templates = {t};
  p.home_node = [T](const TaskKey& k, std::size_t nodes) {
    return static_cast<NodeRank>((k.index[0] * T + k.index[1]) % static_cast<std::int64_t>(nodes));
  };
  p.initial = [](NodeRank, std::size_t) { return std::vector<InitialActivation>{}; };
  return p;
}

}  // namespace

TEST(TaskInstance, BecomesReadyOnLastInput) {
  TaskInstance t(make_key(0, 1), 2);
  EXPECT_EQ(t.state(), TaskState::Waiting);
  EXPECT_EQ(t.fill_input(1, word(1)), Activation::NotReady);
  EXPECT_EQ(t.deps_remaining(), 1);
  EXPECT_EQ(t.fill_input(0, word(2)), Activation::NowReady);
  EXPECT_EQ(t.state(), TaskState::Ready);
  EXPECT_EQ(t.inputs()[0]->words[0], 2u);
  EXPECT_EQ(t.inputs()[1]->words[0], 1u);
}

TEST(TaskInstance, SecondFillOfSlotIsDoubleFill) {
  TaskInstance t(make_key(0, 1), 2);
  t.fill_input(0, word(1));
  try {
    t.fill_input(0, word(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DoubleFill);
  }
}

TEST(TaskInstance, FillAfterReadyIsDoubleFill) {
  TaskInstance t(make_key(0, 1), 1);
  t.fill_input(0, word(1));
  try {
    t.fill_input(0, word(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DoubleFill);
  }
}

TEST(TaskInstance, SlotOutOfRangeIsBadSlot) {
  TaskInstance t(make_key(0, 1), 2);
  try {
    fill_input(t, 2, word(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadSlot);
  }
}

TEST(TaskInstance, ConcurrentFillsReportReadyExactlyOnce) {
  constexpr std::size_t kArity = 32;
  for (int round = 0; round < 50; ++round) {
    TaskInstance t(make_key(0, round), kArity);
    std::atomic<int> ready{0};
    std::vector<std::thread> threads;
    for (std::size_t s = 0; s < kArity; ++s)
      threads.emplace_back([&, s] {
        if (t.fill_input(s, word(s)) == Activation::NowReady) ready.fetch_add(1);
      });
    for (auto& th : threads) th.join();
    ASSERT_EQ(ready.load(), 1);
    ASSERT_EQ(t.deps_remaining(), 0);
  }
}

TEST(TaskInstance, RecreateYieldsReadyInstanceWithSameKey) {
  auto t = TaskInstance::recreate(make_key(3, 1, 2, 3), {word(7), word(8)}, -4);
  EXPECT_EQ(t->key(), make_key(3, 1, 2, 3));
  EXPECT_EQ(t->state(), TaskState::Ready);
  EXPECT_EQ(t->priority(), -4);
  EXPECT_EQ(t->arity(), 2u);
}

TEST(TaskKey, OrderingAndHashing) {
  EXPECT_LT(make_key(0, 1), make_key(0, 2));
  EXPECT_LT(make_key(0, 9, 9, 9), make_key(1, 0));
  EXPECT_EQ(make_key(2, 1, 2, 3), make_key(2, 1, 2, 3));
  std::unordered_set<TaskKey> keys;
  for (std::int64_t i = 0; i < 1000; ++i) keys.insert(make_key(1, i, -i, i * 3));
  EXPECT_EQ(keys.size(), 1000u);
  EXPECT_EQ(to_string(make_key(1, 2, 3, 4)), "1:2,3,4");
}

TEST(Program, UnknownTemplateIsReported) {
  auto p = cyclic_program(4);
  try {
    p.find(7);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownTemplate);
  }
  std::vector<Output> outs{{make_key(9, 0), 0, word(0)}};
  EXPECT_THROW(route_outputs(p, outs, 2), Error);
}

TEST(RouteOutputs, CyclicHomeForLargeGrid) {
  auto p = cyclic_program(200);
  std::vector<Output> outs{{make_key(0, 1, 3), 0, word(0)}};
  auto routed = route_outputs(p, outs, 4);
  ASSERT_EQ(routed.size(), 1u);
  EXPECT_EQ(routed[0].dest, static_cast<NodeRank>((1 * 200 + 3) % 4));
  EXPECT_EQ(routed[0].dest, 3u);
}

TEST(RouteOutputs, DestinationDependsOnlyOnKeyAndNodeCount) {
  auto p = cyclic_program(7);
  std::vector<Output> outs;
  for (std::int64_t k = 0; k < 7; ++k)
    for (std::int64_t m = 0; m < 7; ++m) outs.push_back({make_key(0, k, m), 0, word(0)});
  for (std::size_t nodes : {1u, 2u, 3u, 5u}) {
    auto a = route_outputs(p, outs, nodes);
    auto b = route_outputs(p, outs, nodes);
    for (std::size_t i = 0; i < outs.size(); ++i) {
      EXPECT_EQ(a[i].dest, b[i].dest);
      EXPECT_EQ(a[i].dest, (outs[i].successor.index[0] * 7 + outs[i].successor.index[1]) %
                               static_cast<std::int64_t>(nodes));
    }
  }
}

TEST(Stealability, PredicateSeesInputsAndKey) {
  TaskTemplate t;
  t.arity_in = 2;
  t.is_stealable = [](Inputs in, const TaskKey& k) {
    return k.index[0] == 1 && !in[0]->is_sparse() && !in[1]->is_sparse();
  };
  TaskInstance dense(make_key(0, 1), 2);
  dense.fill_input(0, make_dense_tile(1, 1, {1.0}));
  dense.fill_input(1, make_dense_tile(1, 1, {2.0}));
  EXPECT_TRUE(evaluate_stealable(t, dense));

  TaskInstance sparse(make_key(0, 1), 2);
  sparse.fill_input(0, make_sparse_marker(1, 1));
  sparse.fill_input(1, make_dense_tile(1, 1, {2.0}));
  EXPECT_FALSE(evaluate_stealable(t, sparse));

  TaskTemplate none;
  EXPECT_FALSE(evaluate_stealable(none, dense));
}

TEST(DataItem, SizesAndEquality) {
  EXPECT_EQ(make_sparse_marker(16, 16)->size_bytes(), 1u);
  EXPECT_EQ(make_dense_tile(2, 2, {1, 2, 3, 4})->size_bytes(), 32u);
  EXPECT_EQ(*make_dense_tile(2, 2, {1, 2, 3, 4}), *make_dense_tile(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(make_dense_tile(2, 2, {1, 2, 3, 4})->at(1, 0), 3.0);
}
