#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace dws {

// ---------------------------------------------------------------------------
// Per-interval load figures
// ---------------------------------------------------------------------------

enum class WorkloadFlag : std::uint8_t { Ok = 0, EmptyInterval = 1, AllZero = 2 };

inline std::string_view to_string(WorkloadFlag f) {
  switch (f) {
    case WorkloadFlag::Ok: return "ok";
    case WorkloadFlag::EmptyInterval: return "empty";
    case WorkloadFlag::AllZero: return "all_zero";
  }
  return "?";
}

struct Workload {
  double w = 0.0;
  WorkloadFlag flag = WorkloadFlag::Ok;
};

/// Mean of the polled ready counts over their maximum. An interval with no
/// polls, or only zero polls, has workload 0 and is flagged.
inline Workload workload(std::span<const std::int64_t> polled) {
  if (polled.empty()) return {0.0, WorkloadFlag::EmptyInterval};
  const auto max = *std::max_element(polled.begin(), polled.end());
  if (max <= 0) return {0.0, WorkloadFlag::AllZero};
  const double sum = std::accumulate(polled.begin(), polled.end(), 0.0);
  return {(sum / static_cast<double>(polled.size())) / static_cast<double>(max),
          WorkloadFlag::Ok};
}

/// Largest workload minus the mean workload across processes.
inline double imbalance(std::span<const double> workloads) {
  if (workloads.empty()) return 0.0;
  const auto max = *std::max_element(workloads.begin(), workloads.end());
  const double mean = std::accumulate(workloads.begin(), workloads.end(), 0.0) /
                      static_cast<double>(workloads.size());
  return std::max(0.0, max - mean);
}

/// Potential for work stealing in one interval: imbalance scaled by P.
constexpr double potential(double imbalance_value, std::size_t nodes) noexcept {
  return imbalance_value * static_cast<double>(nodes);
}

/// One ready-count poll taken right after a successful select.
struct ReadySample {
  std::int64_t t_ns = 0;
  std::int64_t ready = 0;
};

struct RankInterval {
  std::size_t samples = 0;
  Workload load;
};

struct IntervalStats {
  std::size_t b = 0;
  std::vector<RankInterval> ranks;
  double imbalance = 0.0;
  double potential = 0.0;
};

/// Buckets each rank's time-ordered samples into intervals of `interval_ns`
/// and evaluates workload, imbalance and potential for every interval up to
/// the last one that saw a sample (or the one containing `horizon_ns`).
inline std::vector<IntervalStats> compute_intervals(
    const std::vector<std::vector<ReadySample>>& per_rank, std::int64_t interval_ns,
    std::int64_t horizon_ns = 0) {
  if (interval_ns <= 0) throw Error(ErrorCode::InvalidConfig, "interval must be positive");
  const auto nodes = per_rank.size();
  std::int64_t last = horizon_ns > 0 ? (horizon_ns - 1) / interval_ns : -1;
  for (const auto& samples : per_rank)
    for (const auto& s : samples) last = std::max(last, s.t_ns / interval_ns);

  std::vector<IntervalStats> out;
  if (last < 0) return out;
  std::vector<std::vector<std::vector<std::int64_t>>> polled(
      static_cast<std::size_t>(last + 1), std::vector<std::vector<std::int64_t>>(nodes));
  for (std::size_t r = 0; r < nodes; ++r)
    for (const auto& s : per_rank[r])
      polled[static_cast<std::size_t>(std::max<std::int64_t>(0, s.t_ns / interval_ns))][r]
          .push_back(s.ready);

  for (std::size_t b = 0; b < polled.size(); ++b) {
    IntervalStats st;
    st.b = b;
    std::vector<double> ws;
    for (std::size_t r = 0; r < nodes; ++r) {
      RankInterval ri{polled[b][r].size(), workload(polled[b][r])};
      ws.push_back(ri.load.w);
      st.ranks.push_back(ri);
    }
    st.imbalance = imbalance(ws);
    st.potential = potential(st.imbalance, nodes);
    out.push_back(std::move(st));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Steal and scheduler effectiveness
// ---------------------------------------------------------------------------

struct StealStats {
  std::uint64_t requests_sent = 0;
  std::uint64_t requests_granted = 0;
  std::uint64_t tasks_stolen = 0;
  std::uint64_t scheduled_total = 0;
  std::uint64_t rescheduled_total = 0;
  double success_pct = 0.0;
  double avg_tasks_per_steal = 0.0;
  double rescheduled_pct = 0.0;
};

inline StealStats steal_stats(std::uint64_t sent, std::uint64_t granted, std::uint64_t stolen,
                              std::uint64_t scheduled, std::uint64_t rescheduled) {
  StealStats s{sent, granted, stolen, scheduled, rescheduled};
  s.success_pct = sent ? 100.0 * static_cast<double>(granted) / static_cast<double>(sent) : 0.0;
  s.avg_tasks_per_steal =
      granted ? static_cast<double>(stolen) / static_cast<double>(granted) : 0.0;
  s.rescheduled_pct =
      scheduled ? 100.0 * static_cast<double>(rescheduled) / static_cast<double>(scheduled) : 0.0;
  return s;
}

inline nlohmann::json to_json(const StealStats& s) {
  return {{"requests_sent", s.requests_sent},
          {"requests_granted", s.requests_granted},
          {"tasks_stolen", s.tasks_stolen},
          {"scheduled_total", s.scheduled_total},
          {"rescheduled_total", s.rescheduled_total},
          {"steal_success_pct", s.success_pct},
          {"avg_tasks_per_successful_steal", s.avg_tasks_per_steal},
          {"rescheduled_pct", s.rescheduled_pct}};
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline constexpr std::string_view kIntervalsHeader =
    "b,rank,n_samples,workload,flag,imbalance,potential";

/// One row per (interval, rank); the interval's imbalance and potential are
/// repeated on each of its rows.
inline void write_intervals_csv(std::ostream& os, const std::vector<IntervalStats>& intervals) {
  os << kIntervalsHeader << '\n';
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& st : intervals)
    for (std::size_t r = 0; r < st.ranks.size(); ++r)
      os << st.b << ',' << r << ',' << st.ranks[r].samples << ',' << num(st.ranks[r].load.w) << ','
         << to_string(st.ranks[r].load.flag) << ',' << num(st.imbalance) << ','
         << num(st.potential) << '\n';
}

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << contents;
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

}  // namespace dws
