#pragma once

#include <cstdint>
#include <mutex>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "taskgraph.hpp"

namespace dws {

enum class EventKind : std::uint8_t {
  Schedule,       // a = origin
  Select,         // a = ready count after removal, b = worker
  ExecStart,      // a = worker, b = local successor estimate, c = in_exec_successors after add
  Done,           // a = worker
  Migrated,       // a = thief, b = request id
  StealSent,      // a = victim, b = request id
  StealGranted,   // victim side: a = thief, b = request id, c = tasks, d = S, e = bound,
                  // f = gate (0 off, 1 on), x = migration cost ns, y = waiting time ns (-1 none)
  StealDenied,    // victim side: same fields as StealGranted, c = 0
  GrantReceived,  // thief side: a = victim, b = request id, c = tasks, x = round trip ns
  DenyReceived,   // thief side: a = victim, b = request id
  TokenPass,      // a = round, b = token count, c = token color
  Terminated,     // a = rounds
};

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::Schedule: return "SCHEDULE";
    case EventKind::Select: return "SELECT";
    case EventKind::ExecStart: return "EXEC_START";
    case EventKind::Done: return "DONE";
    case EventKind::Migrated: return "MIGRATED";
    case EventKind::StealSent: return "STEAL_SENT";
    case EventKind::StealGranted: return "STEAL_GRANTED";
    case EventKind::StealDenied: return "STEAL_DENIED";
    case EventKind::GrantReceived: return "GRANT_RECEIVED";
    case EventKind::DenyReceived: return "DENY_RECEIVED";
    case EventKind::TokenPass: return "TOKEN_PASS";
    case EventKind::Terminated: return "TERMINATED";
  }
  return "?";
}

struct Event {
  std::int64_t t_ns = 0;  // since the run-wide start instant
  NodeRank rank = 0;
  EventKind kind = EventKind::Schedule;
  TaskKey key{};
  std::int64_t a = 0, b = 0, c = 0, d = 0, e = 0, f = 0;
  double x = 0.0, y = 0.0;
};

/// One line per event: timestamp_ns, rank, kind, key, detail (tab separated).
inline void write_event(std::ostream& os, const Event& ev) {
  os << ev.t_ns << '\t' << ev.rank << '\t' << to_string(ev.kind) << '\t' << to_string(ev.key)
     << '\t';
  switch (ev.kind) {
    case EventKind::Schedule: os << "origin=" << ev.a; break;
    case EventKind::Select: os << "ready=" << ev.a << " worker=" << ev.b; break;
    case EventKind::ExecStart:
      os << "worker=" << ev.a << " succ=" << ev.b << " in_exec_succ=" << ev.c;
      break;
    case EventKind::Done: os << "worker=" << ev.a; break;
    case EventKind::Migrated: os << "thief=" << ev.a << " req=" << ev.b; break;
    case EventKind::StealSent: os << "victim=" << ev.a << " req=" << ev.b; break;
    case EventKind::StealGranted:
    case EventKind::StealDenied:
      os << "thief=" << ev.a << " req=" << ev.b << " tasks=" << ev.c << " S=" << ev.d
         << " bound=" << ev.e << " gate=" << ev.f << " cost_ns=" << ev.x << " wait_ns=" << ev.y;
      break;
    case EventKind::GrantReceived:
      os << "victim=" << ev.a << " req=" << ev.b << " tasks=" << ev.c << " rtt_ns=" << ev.x;
      break;
    case EventKind::DenyReceived: os << "victim=" << ev.a << " req=" << ev.b; break;
    case EventKind::TokenPass:
      os << "round=" << ev.a << " count=" << ev.b << " color=" << ev.c;
      break;
    case EventKind::Terminated: os << "rounds=" << ev.a; break;
  }
  os << '\n';
}

class EventLog {
 public:
  void record(const Event& ev) {
    std::lock_guard lock(mutex_);
    events_.push_back(ev);
  }

  std::vector<Event> snapshot() const {
    std::lock_guard lock(mutex_);
    return events_;
  }

 private:
  mutable std::mutex mutex_;
  std::vector<Event> events_;
};

}  // namespace dws
