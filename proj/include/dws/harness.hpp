#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "metrics.hpp"
#include "runtime.hpp"
#include "socket_transport.hpp"
#include "transport.hpp"

// Runs P node runtimes inside one process and checks the post-run
// invariants over their combined logs.

namespace dws {

enum class Backend { InProc, Socket };

inline std::string_view to_string(Backend b) { return b == Backend::InProc ? "inproc" : "socket"; }

struct ClusterConfig {
  std::size_t nodes = 2;
  Backend backend = Backend::InProc;
  NodeConfig node;
  std::chrono::milliseconds timeout{60000};
  DelayFn delay;  // in-proc only: per-frame delivery delay
  std::string bind_host = "127.0.0.1";
};

struct RunResult {
  bool completed = false;  // every node agreed on termination before the timeout
  std::string error;
  std::int64_t makespan_ns = 0;  // start to last task completion
  std::int64_t wall_ns = 0;      // start to full shutdown
  std::vector<std::vector<Event>> events;
  std::vector<std::vector<ReadySample>> samples;
  std::vector<NodeCounters> counters;
  std::vector<Result> results;

  double makespan_s() const { return static_cast<double>(makespan_ns) * 1e-9; }
};

namespace detail {

inline void collect(RunResult& out, std::vector<std::unique_ptr<NodeRuntime>>& nodes) {
  for (auto& n : nodes) {
    out.events.push_back(n->events());
    out.samples.push_back(n->samples());
    out.counters.push_back(n->counters());
    auto r = n->results();
    out.results.insert(out.results.end(), r.begin(), r.end());
    if (out.error.empty()) out.error = n->error();
  }
  for (const auto& log : out.events)
    for (const auto& ev : log)
      if (ev.kind == EventKind::Done) out.makespan_ns = std::max(out.makespan_ns, ev.t_ns);
}

// Waits for every node; aborts all of them on the first error or at the
// deadline.
inline bool supervise(std::vector<std::unique_ptr<NodeRuntime>>& nodes, Clock::time_point deadline,
                      std::string& error) {
  for (;;) {
    bool all = true;
    for (auto& n : nodes) {
      if (auto e = n->error(); !e.empty()) {
        error = e;
        for (auto& m : nodes) m->request_abort(e);
        return false;
      }
      all = all && n->finished();
    }
    if (all) return true;
    if (Clock::now() > deadline) {
      error = "timeout: termination not reached";
      for (auto& m : nodes) m->request_abort(error);
      return false;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
}

}  // namespace detail

/// Runs `program` on `cfg.nodes` nodes and returns the combined record.
inline RunResult run_cluster(const TaskGraphProgram& program, const ClusterConfig& cfg) {
  if (cfg.nodes == 0) throw Error(ErrorCode::InvalidConfig, "at least one node required");
  RunResult out;

  std::unique_ptr<InProcFabric> fabric;
  std::vector<std::unique_ptr<Transport>> transports;
  if (cfg.backend == Backend::InProc) {
    fabric = std::make_unique<InProcFabric>(cfg.nodes, cfg.delay);
    for (NodeRank r = 0; r < cfg.nodes; ++r) transports.push_back(fabric->endpoint(r));
  } else {
    std::vector<PeerAddress> peers;
    std::vector<SocketTransport*> socks;
    for (NodeRank r = 0; r < cfg.nodes; ++r) {
      auto t = std::make_unique<SocketTransport>(r, cfg.nodes, cfg.bind_host, 0);
      peers.push_back({cfg.bind_host, t->port()});
      socks.push_back(t.get());
      transports.push_back(std::move(t));
    }
    std::vector<std::thread> joins;
    std::vector<std::string> errors(cfg.nodes);
    for (std::size_t r = 0; r < cfg.nodes; ++r)
      joins.emplace_back([&, r] {
        try {
          socks[r]->connect(peers, std::chrono::milliseconds(10000));
        } catch (const std::exception& e) {
          errors[r] = e.what();
        }
      });
    for (auto& j : joins) j.join();
    for (auto& e : errors)
      if (!e.empty()) throw Error(ErrorCode::PeerDown, e);
  }

  const auto origin = Clock::now();
  std::vector<std::unique_ptr<NodeRuntime>> nodes;
  for (NodeRank r = 0; r < cfg.nodes; ++r) {
    auto nc = cfg.node;
    nc.seed = mix64(cfg.node.seed ^ (0x5eed0000ULL + r));
    nodes.push_back(std::make_unique<NodeRuntime>(program, nc, *transports[r], origin));
  }
  try {
    for (auto& n : nodes) n->start();
  } catch (const std::exception& e) {
    for (auto& n : nodes) n->request_abort(e.what());
    out.error = e.what();
  }
  if (out.error.empty())
    out.completed = detail::supervise(nodes, origin + cfg.timeout, out.error);
  for (auto& n : nodes) n->wait();
  out.wall_ns = to_ns(Clock::now() - origin);
  detail::collect(out, nodes);
  nodes.clear();
  for (auto& t : transports) t->close();
  return out;
}

// ---------------------------------------------------------------------------
// Post-run audits
// ---------------------------------------------------------------------------

struct AuditReport {
  std::vector<std::string> violations;
  std::size_t done_keys = 0;
  std::size_t grants = 0;

  bool ok() const { return violations.empty(); }
  void fail(std::string what) {
    if (violations.size() < 50) violations.push_back(std::move(what));
  }
};

/// Checks exactly-once execution, per-rank task conservation, steal bounds,
/// gate soundness, the one-outstanding-request rule and clean quiescence.
/// `expected_tasks` (when nonzero) is the exact number of distinct tasks.
inline AuditReport audit(const RunResult& run, const NodeConfig& node, std::size_t expected_tasks = 0) {
  AuditReport rep;
  if (!run.completed) rep.fail("run did not complete: " + run.error);

  std::map<TaskKey, std::size_t> done;
  for (const auto& log : run.events) {
    // Arrivals minus departures per key; threads log concurrently, so only
    // the final balance is meaningful.
    std::map<TaskKey, std::int64_t> held;
    std::int64_t outstanding = 0;
    for (const auto& ev : log) {
      switch (ev.kind) {
        case EventKind::Schedule:
          if (ev.a != static_cast<std::int64_t>(InsertOrigin::Reschedule)) ++held[ev.key];
          break;
        case EventKind::Done:
          ++done[ev.key];
          --held[ev.key];
          break;
        case EventKind::Migrated:
          --held[ev.key];
          break;
        case EventKind::StealSent:
          if (++outstanding > 1) rep.fail("rank " + std::to_string(ev.rank) + " has two outstanding requests");
          break;
        case EventKind::GrantReceived:
        case EventKind::DenyReceived:
          --outstanding;
          break;
        case EventKind::StealGranted: {
          ++rep.grants;
          const auto S = static_cast<std::size_t>(ev.d);
          const auto bound = static_cast<std::int64_t>(steal_bound(node.victim, S));
          if (ev.e != bound || ev.c < 1 || ev.c > ev.e)
            rep.fail("grant req=" + std::to_string(ev.b) + " on rank " + std::to_string(ev.rank) +
                     " moved " + std::to_string(ev.c) + " tasks, bound " + std::to_string(bound));
          if (ev.f == 1 && ev.y >= 0.0 && !(ev.x < ev.y))
            rep.fail("gate violated on rank " + std::to_string(ev.rank) + ": cost " +
                     std::to_string(ev.x) + " >= wait " + std::to_string(ev.y));
          break;
        }
        default: break;
      }
    }
    for (const auto& [key, n] : held)
      if (n != 0) rep.fail("task " + to_string(key) + " left unbalanced on a rank");
  }
  for (const auto& [key, n] : done)
    if (n != 1) rep.fail("task " + to_string(key) + " executed " + std::to_string(n) + " times");
  rep.done_keys = done.size();
  if (expected_tasks && done.size() != expected_tasks)
    rep.fail("executed " + std::to_string(done.size()) + " distinct tasks, expected " +
             std::to_string(expected_tasks));

  std::uint64_t sent = 0, received = 0;
  for (std::size_t r = 0; r < run.counters.size(); ++r) {
    const auto& c = run.counters[r];
    sent += c.frames_sent;
    received += c.frames_received;
    if (run.completed && (c.pending_waiting || c.ready_left || c.live_tasks))
      rep.fail("rank " + std::to_string(r) + " ended with " + std::to_string(c.pending_waiting) +
               " waiting and " + std::to_string(c.ready_left) + " ready tasks");
    if (c.ledger.requests_sent != c.ledger.requests_granted + c.ledger.requests_denied)
      rep.fail("rank " + std::to_string(r) + " has unresolved steal requests");
  }
  if (run.completed && sent != received)
    rep.fail("frames sent " + std::to_string(sent) + " != received " + std::to_string(received));
  return rep;
}

// ---------------------------------------------------------------------------
// Aggregates and export
// ---------------------------------------------------------------------------

inline StealStats aggregate_steal_stats(const RunResult& run) {
  std::uint64_t sent = 0, granted = 0, stolen = 0, scheduled = 0, rescheduled = 0;
  for (const auto& c : run.counters) {
    sent += c.ledger.requests_sent;
    granted += c.ledger.requests_granted;
    stolen += c.ledger.tasks_stolen_in;
    scheduled += c.queue.scheduled_total;
    rescheduled += c.queue.rescheduled_total;
  }
  return steal_stats(sent, granted, stolen, scheduled, rescheduled);
}

inline std::vector<IntervalStats> run_intervals(const RunResult& run, std::int64_t interval_ns) {
  return compute_intervals(run.samples, interval_ns, run.makespan_ns);
}

inline nlohmann::json summary_json(const RunResult& run, const AuditReport& rep,
                                   const std::vector<IntervalStats>& intervals) {
  nlohmann::json j;
  j["completed"] = run.completed;
  j["error"] = run.error;
  j["makespan_ns"] = run.makespan_ns;
  j["makespan_s"] = run.makespan_s();
  j["wall_ns"] = run.wall_ns;
  j["nodes"] = run.counters.size();
  auto& ranks = j["ranks"] = nlohmann::json::array();
  for (const auto& c : run.counters)
    ranks.push_back({{"tasks_executed", c.tasks_executed},
                     {"requests_sent", c.ledger.requests_sent},
                     {"requests_granted", c.ledger.requests_granted},
                     {"requests_denied", c.ledger.requests_denied},
                     {"tasks_stolen_in", c.ledger.tasks_stolen_in},
                     {"tasks_stolen_out", c.ledger.tasks_stolen_out},
                     {"scheduled_total", c.queue.scheduled_total},
                     {"rescheduled_total", c.queue.rescheduled_total},
                     {"termination_rounds", c.termination_rounds},
                     {"migration_cost_ns", c.migration_cost_ns}});
  j["steal"] = to_json(aggregate_steal_stats(run));
  double max_e = 0.0, sum_e = 0.0;
  for (const auto& st : intervals) {
    max_e = std::max(max_e, st.potential);
    sum_e += st.potential;
  }
  j["intervals"] = {{"count", intervals.size()},
                    {"max_potential", max_e},
                    {"mean_potential", intervals.empty() ? 0.0 : sum_e / static_cast<double>(intervals.size())}};
  j["audit"] = {{"ok", rep.ok()}, {"distinct_tasks", rep.done_keys}, {"grants", rep.grants},
                {"violations", rep.violations}};
  return j;
}

/// Writes events_rank{r}.log and intervals.csv into `dir`.
inline void write_run_logs(const std::filesystem::path& dir, const RunResult& run,
                           const std::vector<IntervalStats>& intervals) {
  std::filesystem::create_directories(dir);
  for (std::size_t r = 0; r < run.events.size(); ++r) {
    std::ostringstream os;
    for (const auto& ev : run.events[r]) write_event(os, ev);
    write_file(dir / ("events_rank" + std::to_string(r) + ".log"), os.str());
  }
  std::ostringstream csv;
  write_intervals_csv(csv, intervals);
  write_file(dir / "intervals.csv", csv.str());
}

}  // namespace dws
