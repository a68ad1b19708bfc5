#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "event_log.hpp"
#include "metrics.hpp"
#include "migrate.hpp"
#include "scheduler.hpp"
#include "taskgraph.hpp"
#include "termination.hpp"
#include "transport.hpp"

namespace dws {

struct NodeConfig {
  std::size_t workers = 2;
  SchedulerPolicy scheduler = SchedulerPolicy::TwoQ;
  bool steal = true;
  ThiefPolicy thief = ThiefPolicy::ReadyPlusSuccessors;
  VictimPolicy victim{VictimKind::Chunk, 1, true};
  std::chrono::microseconds worker_backoff{100};
  std::chrono::microseconds poll_interval{200};
  double migration_prior_ns = 1e6;
  double ewma_alpha = 0.25;
  // Sleep added to every task body that does real work.
  std::chrono::microseconds task_delay{0};
  std::uint64_t seed = 1;
};

/// Counters read after the run for audits and reports.
struct NodeCounters {
  std::uint64_t tasks_executed = 0;
  std::uint64_t selects = 0;
  std::size_t pending_waiting = 0;
  std::size_t ready_left = 0;
  std::int64_t live_tasks = 0;
  std::int64_t in_exec_successors = 0;
  std::int64_t safra_counter = 0;
  std::uint64_t termination_rounds = 0;
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_received = 0;
  ReadyQueueStats queue;
  StealLedger ledger;
  double migration_cost_ns = 0.0;
};

/// One runtime node: W workers, a communication agent that owns the inbound
/// channel, and a migration agent that does all stealing work.
///
/// Lifecycle: construct, `start()`, then `wait()` returns once distributed
/// termination has been agreed (or the node aborted; see `error()`).
class NodeRuntime {
 public:
  NodeRuntime(const TaskGraphProgram& program, NodeConfig config, Transport& transport,
              Clock::time_point origin)
      : program_(program),
        cfg_(std::move(config)),
        transport_(transport),
        rank_(transport.rank()),
        nodes_(transport.size()),
        origin_(origin),
        scheduler_(cfg_.scheduler,
                   [this](const TaskInstance& t, InsertOrigin o) {
                     log({.kind = EventKind::Schedule, .key = t.key(),
                          .a = static_cast<std::int64_t>(o)});
                   }),
        safra_(rank_, nodes_),
        selector_(rank_, nodes_ < 2 ? 2 : nodes_, cfg_.seed),
        cost_model_(cfg_.migration_prior_ns, cfg_.ewma_alpha),
        samples_(cfg_.workers) {
    if (cfg_.workers == 0) throw Error(ErrorCode::InvalidConfig, "at least one worker required");
  }

  NodeRuntime(const NodeRuntime&) = delete;
  NodeRuntime& operator=(const NodeRuntime&) = delete;

  ~NodeRuntime() {
    request_abort("runtime destroyed");
    join();
  }

  NodeRank rank() const noexcept { return rank_; }
  std::size_t nodes() const noexcept { return nodes_; }
  const NodeConfig& config() const noexcept { return cfg_; }
  ReadyScheduler& scheduler() noexcept { return scheduler_; }

  void start() {
    for (auto& act : program_.initial(rank_, nodes_)) on_activate(act.key, act.slot, act.item);
    comm_ = std::thread([this] { comm_loop(); });
    migrate_ = std::thread([this] { migrate_loop(); });
    for (std::size_t w = 0; w < cfg_.workers; ++w)
      workers_.emplace_back([this, w] { worker_loop(w); });
  }

  void wait() { join(); }

  bool finished() const noexcept { return exit_.load(); }

  void request_abort(const std::string& reason) {
    {
      std::lock_guard lock(error_mutex_);
      if (!exit_.load() && error_.empty()) error_ = reason;
    }
    shutdown();
  }

  std::string error() const {
    std::lock_guard lock(error_mutex_);
    return error_;
  }

  // ---- activation ---------------------------------------------------------

  /// Delivers one input. Creates the instance on its first activation and
  /// schedules it when the last input arrives.
  void on_activate(const TaskKey& key, std::size_t slot, DataPtr item) {
    const auto& tmpl = program_.find(key);
    if (program_.home_node(key, nodes_) != rank_)
      throw Error(ErrorCode::InvalidConfig, "activation of " + to_string(key) + " reached rank " +
                                                std::to_string(rank_) + ", not its home node");
    TaskPtr ready;
    {
      std::lock_guard lock(tasks_mutex_);
      auto it = pending_.find(key);
      if (it == pending_.end()) {
        if (live_keys_.contains(key))
          throw Error(ErrorCode::DoubleFill, "activation for already scheduled task " + to_string(key));
        it = pending_.emplace(key, std::make_shared<TaskInstance>(key, tmpl.arity_in)).first;
      }
      if (it->second->fill_input(slot, std::move(item)) == Activation::NowReady) {
        ready = std::move(it->second);
        pending_.erase(it);
        live_keys_.insert(key);
      }
    }
    if (!ready) return;
    ready->set_stealable(evaluate_stealable(tmpl, *ready));
    ready->set_priority(tmpl.priority ? tmpl.priority(key) : 0);
    live_tasks_.fetch_add(1, std::memory_order_acq_rel);
    scheduler_.insert(std::move(ready), InsertOrigin::LocalActivation);
  }

  /// Recreates every task of a grant with its original key and priority.
  void recreate_stolen(const StealGrantMsg& grant, NodeRank victim) {
    std::vector<TaskPtr> tasks;
    {
      std::lock_guard lock(tasks_mutex_);
      for (const auto& rec : grant.tasks) {
        const auto& tmpl = program_.find(rec.key);
        if (rec.inputs.size() != tmpl.arity_in)
          throw Error(ErrorCode::MalformedFrame, "grant for " + to_string(rec.key) + " carries " +
                                                     std::to_string(rec.inputs.size()) + " inputs");
        if (pending_.contains(rec.key) || !live_keys_.insert(rec.key).second)
          throw Error(ErrorCode::DuplicateKey, to_string(rec.key) + " already on rank " +
                                                   std::to_string(rank_));
        auto task = TaskInstance::recreate(rec.key, rec.inputs, rec.priority);
        task->set_stealable(evaluate_stealable(tmpl, *task));
        tasks.push_back(std::move(task));
      }
    }
    live_tasks_.fetch_add(static_cast<std::int64_t>(tasks.size()), std::memory_order_acq_rel);
    for (auto& t : tasks) scheduler_.insert(std::move(t), InsertOrigin::StolenArrival);

    const auto rtt = static_cast<double>(now_ns() - request_sent_ns_.load());
    {
      std::lock_guard lock(ledger_mutex_);
      cost_model_.observe(rtt, grant.tasks.size());
      ledger_.requests_granted++;
      ledger_.tasks_stolen_in += grant.tasks.size();
    }
    log({.kind = EventKind::GrantReceived, .a = victim,
         .b = static_cast<std::int64_t>(grant.request_id),
         .c = static_cast<std::int64_t>(grant.tasks.size()), .x = rtt});
  }

  // ---- estimates ------------------------------------------------------------

  /// (ready / W + 1) * average execution time; empty until a task has run.
  std::optional<double> waiting_time_estimate() const {
    const auto first = first_exec_ns_.load(std::memory_order_acquire);
    const auto executed = tasks_executed_.load(std::memory_order_acquire);
    if (first < 0 || executed == 0) return std::nullopt;
    const double elapsed = static_cast<double>(now_ns() - first);
    return waiting_time_ns(scheduler_.ready_count(), cfg_.workers, elapsed, executed);
  }

  std::int64_t in_exec_successors() const noexcept {
    return in_exec_successors_.load(std::memory_order_acquire);
  }

  bool starving() const noexcept {
    return detect_starvation(cfg_.thief, scheduler_.ready_count(), in_exec_successors());
  }

  // ---- post-run views ---------------------------------------------------------

  std::vector<Event> events() const { return events_.snapshot(); }

  /// Ready-count polls of every worker, merged in time order.
  std::vector<ReadySample> samples() const {
    std::vector<ReadySample> all;
    for (const auto& buf : samples_) all.insert(all.end(), buf.begin(), buf.end());
    std::stable_sort(all.begin(), all.end(),
                     [](const ReadySample& a, const ReadySample& b) { return a.t_ns < b.t_ns; });
    return all;
  }

  std::vector<Result> results() const {
    std::lock_guard lock(results_mutex_);
    return results_;
  }

  NodeCounters counters() const {
    NodeCounters c;
    c.tasks_executed = tasks_executed_.load();
    c.selects = selects_.load();
    {
      std::lock_guard lock(tasks_mutex_);
      c.pending_waiting = pending_.size();
    }
    c.ready_left = scheduler_.ready_count();
    c.live_tasks = live_tasks_.load();
    c.in_exec_successors = in_exec_successors_.load();
    c.safra_counter = safra_.counter();
    c.termination_rounds = safra_.rounds();
    c.frames_sent = transport_.frames_sent();
    c.frames_received = transport_.frames_received();
    c.queue = scheduler_.stats();
    std::lock_guard lock(ledger_mutex_);
    c.ledger = ledger_;
    c.migration_cost_ns = cost_model_.estimate_ns();
    return c;
  }

 private:
  std::int64_t now_ns() const { return to_ns(Clock::now() - origin_); }

  void log(Event ev) { log_at(ev, now_ns()); }

  void log_at(Event ev, std::int64_t t_ns) {
    ev.t_ns = t_ns;
    ev.rank = rank_;
    events_.record(ev);
  }

  void send_basic(const Message& msg) {
    safra_.on_basic_send();
    transport_.send(msg);
  }

  void fatal(const std::string& what) { request_abort("rank " + std::to_string(rank_) + ": " + what); }

  void shutdown() {
    exit_.store(true);
    requests_cv_.notify_all();
  }

  void join() {
    for (auto& t : workers_)
      if (t.joinable()) t.join();
    if (migrate_.joinable()) migrate_.join();
    if (comm_.joinable()) comm_.join();
  }

  bool passive() const noexcept {
    return live_tasks_.load(std::memory_order_acquire) == 0 &&
           migrate_busy_.load(std::memory_order_acquire) == 0 &&
           !outstanding_.load(std::memory_order_acquire);
  }

  // ---- workers ----------------------------------------------------------------

  void worker_loop(std::size_t worker) {
    while (!exit_.load(std::memory_order_acquire)) {
      auto sel = scheduler_.select();
      if (!sel) {
        std::this_thread::sleep_for(cfg_.worker_backoff);
        continue;
      }
      try {
        execute(worker, *sel);
      } catch (const std::exception& e) {
        fatal("task " + to_string(sel->task->key()) + " failed: " + e.what());
        return;
      }
    }
  }

  void execute(std::size_t worker, const Selection& sel) {
    auto& task = *sel.task;
    const auto& tmpl = program_.find(task.key());
    const auto t_select = now_ns();
    samples_[worker].push_back({t_select, static_cast<std::int64_t>(sel.ready_after)});
    selects_.fetch_add(1, std::memory_order_relaxed);
    // Same timestamp as the sample so logs reproduce the interval metrics.
    log_at({.kind = EventKind::Select, .key = task.key(),
            .a = static_cast<std::int64_t>(sel.ready_after), .b = static_cast<std::int64_t>(worker)},
           t_select);

    std::int64_t expected = -1;
    first_exec_ns_.compare_exchange_strong(expected, t_select, std::memory_order_acq_rel);

    task.set_state(TaskState::Executing);
    const auto succ = static_cast<std::int64_t>(
        tmpl.local_successors ? tmpl.local_successors(task.key(), rank_, nodes_) : 0);
    const auto in_exec = in_exec_successors_.fetch_add(succ, std::memory_order_acq_rel) + succ;
    log({.kind = EventKind::ExecStart, .key = task.key(), .a = static_cast<std::int64_t>(worker),
         .b = succ, .c = in_exec});

    auto result = tmpl.body(task.inputs(), task.key());
    if (cfg_.task_delay.count() > 0 && !result.trivial) std::this_thread::sleep_for(cfg_.task_delay);

    if (!result.results.empty()) {
      std::lock_guard lock(results_mutex_);
      results_.insert(results_.end(), result.results.begin(), result.results.end());
    }
    for (auto& out : route_outputs(program_, result.outputs, nodes_)) {
      if (out.dest == rank_)
        on_activate(out.successor, out.slot, std::move(out.item));
      else
        send_basic(Message{rank_, out.dest,
                           ActivateMsg{out.successor, static_cast<std::uint32_t>(out.slot),
                                       std::move(out.item)}});
    }

    in_exec_successors_.fetch_sub(succ, std::memory_order_acq_rel);
    task.set_state(TaskState::Done);
    {
      std::lock_guard lock(tasks_mutex_);
      live_keys_.erase(task.key());
    }
    log({.kind = EventKind::Done, .key = task.key(), .a = static_cast<std::int64_t>(worker)});
    tasks_executed_.fetch_add(1, std::memory_order_acq_rel);
    live_tasks_.fetch_sub(1, std::memory_order_acq_rel);
  }

  // ---- communication agent ------------------------------------------------------

  void comm_loop() {
    try {
      while (!exit_.load(std::memory_order_acquire)) {
        if (auto msg = transport_.receive(std::chrono::microseconds(100))) dispatch(*msg);
        termination_step();
      }
    } catch (const std::exception& e) {
      fatal(e.what());
    }
  }

  void dispatch(const Message& msg) {
    if (msg.is_basic()) safra_.on_basic_receive();
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, ActivateMsg>) {
            on_activate(p.key, p.slot, p.item);
          } else if constexpr (std::is_same_v<T, StealRequestMsg>) {
            migrate_busy_.fetch_add(1, std::memory_order_acq_rel);
            {
              std::lock_guard lock(requests_mutex_);
              requests_.push_back(p);
            }
            requests_cv_.notify_one();
          } else if constexpr (std::is_same_v<T, StealGrantMsg>) {
            recreate_stolen(p, msg.src);
            outstanding_.store(false, std::memory_order_release);
          } else if constexpr (std::is_same_v<T, StealDenyMsg>) {
            {
              std::lock_guard lock(ledger_mutex_);
              ledger_.requests_denied++;
            }
            log({.kind = EventKind::DenyReceived, .a = msg.src,
                 .b = static_cast<std::int64_t>(p.request_id)});
            outstanding_.store(false, std::memory_order_release);
          } else if constexpr (std::is_same_v<T, TermTokenMsg>) {
            safra_.on_token(p);
          } else if constexpr (std::is_same_v<T, TermStopMsg>) {
            stopping_.store(true);
          } else if constexpr (std::is_same_v<T, TermStoppedMsg>) {
            ++stopped_count_;
          } else if constexpr (std::is_same_v<T, TermExitMsg>) {
            shutdown();
          }
        },
        msg.payload);
  }

  // Safra's ring first; once rank 0 has seen a clean round it asks every node
  // to stop stealing, waits for each to settle its last request, then
  // releases everybody.
  void termination_step() {
    if (!stopping_.load()) {
      if (!safra_.holds_token() || !passive()) return;
      auto step = safra_.on_passive();
      if (step.forward) {
        const auto& tok = std::get<TermTokenMsg>(step.forward->payload);
        log({.kind = EventKind::TokenPass, .a = static_cast<std::int64_t>(tok.round),
             .b = tok.count, .c = static_cast<std::int64_t>(tok.color)});
        transport_.send(*step.forward);
      }
      if (step.terminated) {
        log({.kind = EventKind::Terminated, .a = static_cast<std::int64_t>(safra_.rounds())});
        stopping_.store(true);
        for (NodeRank r = 1; r < nodes_; ++r) transport_.send(Message{rank_, r, TermStopMsg{}});
      }
      return;
    }
    if (!stopped_sent_ && passive()) {
      stopped_sent_ = true;
      if (rank_ == 0)
        ++stopped_count_;
      else
        transport_.send(Message{rank_, 0, TermStoppedMsg{}});
    }
    if (rank_ == 0 && stopped_count_ == nodes_) {
      for (NodeRank r = 1; r < nodes_; ++r) transport_.send(Message{rank_, r, TermExitMsg{}});
      shutdown();
    }
  }

  // ---- migration agent --------------------------------------------------------------

  void migrate_loop() {
    try {
      while (!exit_.load(std::memory_order_acquire)) {
        for (;;) {
          std::optional<StealRequestMsg> req;
          {
            std::lock_guard lock(requests_mutex_);
            if (!requests_.empty()) {
              req = requests_.front();
              requests_.pop_front();
            }
          }
          if (!req) break;
          handle_steal_request(*req);
          migrate_busy_.fetch_sub(1, std::memory_order_acq_rel);
        }
        maybe_steal();
        std::unique_lock lock(requests_mutex_);
        requests_cv_.wait_for(lock, cfg_.poll_interval,
                              [this] { return !requests_.empty() || exit_.load(); });
      }
    } catch (const std::exception& e) {
      fatal(e.what());
    }
  }

  void maybe_steal() {
    if (!cfg_.steal || nodes_ < 2 || stopping_.load() ||
        outstanding_.load(std::memory_order_acquire) || !starving())
      return;
    const auto victim = selector_.next();
    StealRequestMsg req{rank_, ++next_request_id_, 0};
    {
      std::lock_guard lock(ledger_mutex_);
      req.migration_cost_ns = static_cast<std::int64_t>(cost_model_.estimate_ns());
      ledger_.requests_sent++;
    }
    outstanding_.store(true, std::memory_order_release);
    request_sent_ns_.store(now_ns());
    log({.kind = EventKind::StealSent, .a = victim, .b = static_cast<std::int64_t>(req.request_id)});
    transport_.send(Message{rank_, victim, req});
  }

  void handle_steal_request(const StealRequestMsg& req) {
    const auto stealable = scheduler_.stealable_count();
    const auto bound = steal_bound(cfg_.victim, stealable);
    const auto cost = static_cast<double>(req.migration_cost_ns);
    const auto wait = waiting_time_estimate();
    const bool gate = cfg_.victim.waiting_time_gate;

    Event ev{.key = {}, .a = req.thief, .b = static_cast<std::int64_t>(req.request_id),
             .d = static_cast<std::int64_t>(stealable), .e = static_cast<std::int64_t>(bound),
             .f = gate ? 1 : 0, .x = cost, .y = wait ? *wait : -1.0};

    std::vector<TaskPtr> taken;
    if (!gate || gate_permits(cost, wait)) taken = scheduler_.extract_for_steal(bound);
    {
      std::lock_guard lock(ledger_mutex_);
      ledger_.requests_served++;
    }
    if (taken.empty()) {
      ev.kind = EventKind::StealDenied;
      log(ev);
      transport_.send(Message{rank_, req.thief, StealDenyMsg{req.request_id}});
      return;
    }

    StealGrantMsg grant{req.request_id, {}};
    grant.tasks.reserve(taken.size());
    for (auto& task : taken) {
      task->set_state(TaskState::Migrated);
      {
        std::lock_guard lock(tasks_mutex_);
        live_keys_.erase(task->key());
      }
      log({.kind = EventKind::Migrated, .key = task->key(), .a = req.thief,
           .b = static_cast<std::int64_t>(req.request_id)});
      grant.tasks.push_back(MigratedTask{task->key(), task->priority(),
                                         {task->inputs().begin(), task->inputs().end()}});
    }
    ev.kind = EventKind::StealGranted;
    ev.c = static_cast<std::int64_t>(taken.size());
    log(ev);
    {
      std::lock_guard lock(ledger_mutex_);
      ledger_.grants_served++;
      ledger_.tasks_stolen_out += taken.size();
    }
    send_basic(Message{rank_, req.thief, std::move(grant)});
    live_tasks_.fetch_sub(static_cast<std::int64_t>(taken.size()), std::memory_order_acq_rel);
  }

  const TaskGraphProgram& program_;
  NodeConfig cfg_;
  Transport& transport_;
  NodeRank rank_;
  std::size_t nodes_;
  Clock::time_point origin_;

  EventLog events_;
  ReadyScheduler scheduler_;
  SafraDetector safra_;

  mutable std::mutex tasks_mutex_;
  std::unordered_map<TaskKey, TaskPtr, TaskKeyHash> pending_;
  std::unordered_set<TaskKey, TaskKeyHash> live_keys_;  // READY or EXECUTING here

  std::atomic<std::int64_t> live_tasks_{0};
  std::atomic<std::int64_t> in_exec_successors_{0};
  std::atomic<std::int64_t> first_exec_ns_{-1};
  std::atomic<std::uint64_t> tasks_executed_{0};
  std::atomic<std::uint64_t> selects_{0};

  // Migration agent state.
  std::mutex requests_mutex_;
  std::condition_variable requests_cv_;
  std::deque<StealRequestMsg> requests_;
  std::atomic<std::int64_t> migrate_busy_{0};
  std::atomic<bool> outstanding_{false};
  std::uint64_t next_request_id_ = 0;
  std::atomic<std::int64_t> request_sent_ns_{0};
  VictimSelector selector_;
  mutable std::mutex ledger_mutex_;
  MigrationCostModel cost_model_;
  StealLedger ledger_;

  // Termination (communication agent only, except the flags).
  std::atomic<bool> stopping_{false};
  bool stopped_sent_ = false;
  std::size_t stopped_count_ = 0;
  std::atomic<bool> exit_{false};

  std::vector<std::vector<ReadySample>> samples_;  // one buffer per worker
  mutable std::mutex results_mutex_;
  std::vector<Result> results_;

  mutable std::mutex error_mutex_;
  std::string error_;

  std::thread comm_;
  std::thread migrate_;
  std::vector<std::thread> workers_;
};

}  // namespace dws
