#include <map>
#include <thread>

#include <gtest/gtest.h>

#include "dws/harness.hpp"
#include "dws/mix.hpp"

using namespace dws;
using namespace std::chrono_literals;

namespace {

// Task i forwards its word plus one to task i+1; task i lives on rank i % P.
TaskGraphProgram chain(std::int64_t n) {
  TaskGraphProgram p;
  p.name = "chain";
  TaskTemplate t;
  t.id = 0;
  t.name = "LINK";
  t.arity_in = 1;
  t.body = [n](Inputs in, const TaskKey& k) {
    BodyResult r;
    const auto v = in[0]->words[0] + 1;
    if (k.index[0] + 1 < n)
      r.outputs.push_back({make_key(0, k.index[0] + 1), 0, make_words(DataKind::Words, {v})});
    else
      r.results.push_back({k, make_words(DataKind::Words, {v})});
    return r;
  };
  t.is_stealable = [](Inputs, const TaskKey&) { return true; };
  t.priority = [](const TaskKey&) { return 0; };
  t.local_successors = [](const TaskKey&, NodeRank, std::size_t) { return std::size_t{0}; };
  p.templates = {t};
  p.home_node = [](const TaskKey& k, std::size_t nodes) {
    return static_cast<NodeRank>(k.index[0] % static_cast<std::int64_t>(nodes));
  };
  p.initial = [](NodeRank r, std::size_t) {
    std::vector<InitialActivation> a;
    if (r == 0) a.push_back({make_key(0, 0), 0, make_words(DataKind::Words, {0})});
    return a;
  };
  return p;
}

// `width` independent stealable tasks on rank 0, each with one successor
// that joins into a final task on rank 1.
TaskGraphProgram fan_in(std::int64_t width) {
  TaskGraphProgram p;
  p.name = "fan";
  TaskTemplate leaf;
  leaf.id = 0;
  leaf.name = "LEAF";
  leaf.arity_in = 1;
  leaf.body = [](Inputs in, const TaskKey& k) {
    BodyResult r;
    r.outputs.push_back({make_key(1, 0), static_cast<std::size_t>(k.index[0]),
                         make_words(DataKind::Words, {in[0]->words[0] * 2})});
    return r;
  };
  leaf.is_stealable = [](Inputs, const TaskKey&) { return true; };
  leaf.priority = [](const TaskKey&) { return 0; };
  TaskTemplate join;
  join.id = 1;
  join.name = "JOIN";
  join.arity_in = static_cast<std::size_t>(width);
  join.body = [](Inputs in, const TaskKey& k) {
    std::uint64_t s = 0;
    for (auto& d : in) s += d->words[0];
    BodyResult r;
    r.results.push_back({k, make_words(DataKind::Words, {s})});
    return r;
  };
  p.templates = {leaf, join};
  p.home_node = [](const TaskKey& k, std::size_t nodes) {
    return static_cast<NodeRank>(k.template_id == 0 ? 0 : 1 % nodes);
  };
  p.initial = [width](NodeRank r, std::size_t) {
    std::vector<InitialActivation> a;
    if (r == 0)
      for (std::int64_t i = 0; i < width; ++i)
        a.push_back({make_key(0, i), 0, make_words(DataKind::Words, {static_cast<std::uint64_t>(i)})});
    return a;
  };
  return p;
}

ClusterConfig cluster(std::size_t P) {
  ClusterConfig c;
  c.nodes = P;
  c.timeout = 30s;
  return c;
}

}  // namespace

TEST(Runtime, ChainCrossesNodesAndTerminates) {
  for (std::size_t P : {1u, 2u, 3u}) {
    auto prog = chain(50);
    auto run = run_cluster(prog, cluster(P));
    auto rep = audit(run, cluster(P).node, 50);
    ASSERT_TRUE(rep.ok()) << rep.violations.front();
    ASSERT_EQ(run.results.size(), 1u);
    EXPECT_EQ(run.results[0].item->words[0], 50u);
    for (std::size_t r = 0; r < P; ++r) EXPECT_EQ(run.counters[r].tasks_executed, (50 + P - 1 - r) / P);
  }
}

TEST(Runtime, StolenTasksRouteOutputsToHomeNodes) {
  auto prog = fan_in(64);
  auto cfg = cluster(2);
  cfg.node.victim = {VictimKind::Half, 1, false};
  cfg.node.task_delay = 500us;
  auto run = run_cluster(prog, cfg);
  auto rep = audit(run, cfg.node, 65);
  ASSERT_TRUE(rep.ok()) << rep.violations.front();
  ASSERT_EQ(run.results.size(), 1u);
  EXPECT_EQ(run.results[0].item->words[0], 64u * 63u);
  // Rank 1 stole and ran some leaves; the join still ran on rank 1, its home.
  EXPECT_GT(run.counters[1].ledger.tasks_stolen_in, 0u);
  for (const auto& ev : run.events[0]) EXPECT_FALSE(ev.kind == EventKind::Done && ev.key.template_id == 1);
  std::size_t joins = 0;
  for (const auto& ev : run.events[1]) joins += ev.kind == EventKind::Done && ev.key.template_id == 1;
  EXPECT_EQ(joins, 1u);
}

TEST(Runtime, ActivationForForeignKeyIsRejected) {
  auto prog = chain(4);
  InProcFabric fabric(2);
  auto t = fabric.endpoint(1);
  NodeRuntime node(prog, NodeConfig{}, *t, Clock::now());
  EXPECT_THROW(node.on_activate(make_key(0, 0), 0, make_words(DataKind::Words, {0})), Error);
  node.on_activate(make_key(0, 1), 0, make_words(DataKind::Words, {0}));
  try {
    node.on_activate(make_key(0, 1), 0, make_words(DataKind::Words, {0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DoubleFill);
  }
}

TEST(Runtime, DuplicateStolenKeyIsRejected) {
  auto prog = chain(4);
  InProcFabric fabric(2);
  auto t = fabric.endpoint(1);
  NodeRuntime node(prog, NodeConfig{}, *t, Clock::now());
  node.on_activate(make_key(0, 1), 0, make_words(DataKind::Words, {0}));
  StealGrantMsg g{1, {MigratedTask{make_key(0, 1), 0, {make_words(DataKind::Words, {0})}}}};
  try {
    node.recreate_stolen(g, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateKey);
  }
}

TEST(Runtime, NoWaitingEstimateBeforeFirstExecution) {
  auto prog = chain(4);
  InProcFabric fabric(1);
  auto t = fabric.endpoint(0);
  NodeRuntime node(prog, NodeConfig{}, *t, Clock::now());
  EXPECT_FALSE(node.waiting_time_estimate());
  EXPECT_EQ(node.in_exec_successors(), 0);
}

TEST(Runtime, FailingBodyAbortsTheRun) {
  auto prog = chain(10);
  prog.templates[0].body = [](Inputs, const TaskKey& k) -> BodyResult {
    if (k.index[0] == 3) throw Error(ErrorCode::TaskFailed, "boom");
    return {{{make_key(0, k.index[0] + 1), 0, make_words(DataKind::Words, {0})}}, {}, false};
  };
  auto run = run_cluster(prog, cluster(2));
  EXPECT_FALSE(run.completed);
  EXPECT_NE(run.error.find("boom"), std::string::npos);
  EXPECT_FALSE(audit(run, cluster(2).node).ok());
}

TEST(Runtime, TimeoutAbortsAllNodes) {
  auto prog = chain(2);
  prog.templates[0].body = [](Inputs, const TaskKey&) {
    std::this_thread::sleep_for(300ms);
    return BodyResult{};
  };
  auto cfg = cluster(2);
  cfg.timeout = 50ms;
  auto run = run_cluster(prog, cfg);
  EXPECT_FALSE(run.completed);
  EXPECT_NE(run.error.find("timeout"), std::string::npos);
}

TEST(Runtime, InExecSuccessorsReturnToZero) {
  auto prog = fan_in(32);
  prog.templates[0].local_successors = [](const TaskKey&, NodeRank, std::size_t) { return std::size_t{3}; };
  auto run = run_cluster(prog, cluster(2));
  ASSERT_TRUE(audit(run, cluster(2).node, 33).ok());
  for (const auto& c : run.counters) EXPECT_EQ(c.in_exec_successors, 0);
  bool saw_positive = false;
  for (const auto& ev : run.events[0])
    if (ev.kind == EventKind::ExecStart && ev.key.template_id == 0) {
      EXPECT_EQ(ev.b, 3);
      saw_positive = saw_positive || ev.c >= 3;
    }
  EXPECT_TRUE(saw_positive);
}

// Grants are held back on the wire; the thief still has to drain its last
// grant and execute those tasks before the cluster shuts down.
TEST(Runtime, DelayedGrantsAreDrainedBeforeShutdown) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto prog = mix::build({200, 0.0, 0});
    auto cfg = cluster(3);
    cfg.node.seed = seed;
    cfg.node.victim = {VictimKind::Half, 1, false};
    cfg.node.task_delay = 200us;
    cfg.delay = [](const Message& m) {
      return m.kind() == MessageKind::StealGrant ? std::chrono::microseconds(20000) : std::chrono::microseconds(0);
    };
    auto run = run_cluster(prog, cfg);
    auto rep = audit(run, cfg.node, 200);
    ASSERT_TRUE(rep.ok()) << rep.violations.front();
    std::uint64_t stolen = 0;
    for (const auto& c : run.counters) stolen += c.ledger.tasks_stolen_in;
    EXPECT_GT(stolen, 0u) << "seed " << seed;
  }
}

TEST(Runtime, SamplesFollowSelects) {
  auto prog = chain(20);
  auto run = run_cluster(prog, cluster(2));
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(run.samples[r].size(), run.counters[r].selects);
    std::size_t selects = 0;
    for (const auto& ev : run.events[r]) selects += ev.kind == EventKind::Select;
    EXPECT_EQ(selects, run.samples[r].size());
  }
}
