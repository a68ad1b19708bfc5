#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "taskgraph.hpp"

// Right-looking tiled Cholesky (A = L L^T, lower) over a block-sparse SPD
// matrix. Tile (row, col) of the lower triangle is updated in place by a
// chain of tasks and always lives on the same home node:
//
//   POTRF(k)      factors tile (k,k)                       arity 1
//   TRSM(k,m)     L(m,k) = A(m,k) L(k,k)^-T      m > k     arity 2
//   SYRK(k,m)     A(m,m) -= L(m,k) L(m,k)^T      m > k     arity 2
//   GEMM(k,m,n)   A(m,n) -= L(m,k) L(n,k)^T      k < n < m arity 3
//
// Sparse tiles travel as 1-byte markers so the DAG shape never depends on
// the data. Any task fed a sparse input is not stealable.

namespace dws::cholesky {

inline constexpr std::uint32_t kPotrf = 0;
inline constexpr std::uint32_t kTrsm = 1;
inline constexpr std::uint32_t kSyrk = 2;
inline constexpr std::uint32_t kGemm = 3;
inline constexpr std::uint32_t kFactorTile = 100;  // result key: (row, col)

enum class Distribution { Cyclic, Skewed };

struct Config {
  std::size_t tiles = 8;  // T, tiles per dimension
  std::size_t tile = 16;  // elements per tile dimension
  double density = 0.5;   // fraction of lower-triangle tiles that are dense
  Distribution distribution = Distribution::Cyclic;
  NodeRank skew_rank = 0;  // Skewed: every structurally dense tile lives here
  std::uint64_t seed = 1;
  bool validate = true;  // direct SPD check of the assembled matrix
};

/// Immutable problem description shared by all task closures.
class Problem {
 public:
  explicit Problem(Config cfg) : cfg_(cfg), dense_a_(cfg.tiles * cfg.tiles), dense_l_(cfg.tiles * cfg.tiles) {
    const auto T = cfg.tiles;
    if (T == 0 || cfg.tile == 0)
      throw Error(ErrorCode::InvalidConfig, "tiles and tile size must be positive");
    if (cfg.density < 0.0 || cfg.density > 1.0)
      throw Error(ErrorCode::InvalidConfig, "density must lie in [0, 1]");

    // Exactly round(density * T(T+1)/2) dense tiles. Diagonal tiles are
    // always dense; the remaining quota is a seeded choice of off-diagonals.
    const std::size_t lower = T * (T + 1) / 2;
    const auto target = static_cast<std::size_t>(std::llround(cfg.density * static_cast<double>(lower)));
    if (target < T)
      throw Error(ErrorCode::InvalidConfig, "density too low to keep the diagonal dense");
    std::vector<std::size_t> off;
    for (std::size_t m = 0; m < T; ++m) {
      dense_a_[m * T + m] = true;
      for (std::size_t n = 0; n < m; ++n) off.push_back(m * T + n);
    }
    std::mt19937_64 rng(mix64(cfg.seed ^ 0xc401e5c1ULL));
    std::shuffle(off.begin(), off.end(), rng);
    for (std::size_t i = 0; i < target - T; ++i) dense_a_[off[i]] = true;

    // Symbolic factorization: L(m,n) is nonzero if A(m,n) is, or if some
    // earlier column k has both L(m,k) and L(n,k) nonzero.
    for (std::size_t n = 0; n < T; ++n)
      for (std::size_t m = n; m < T; ++m) {
        bool nz = dense_a_[m * T + n];
        for (std::size_t k = 0; k < n && !nz; ++k) nz = dense_l_[m * T + k] && dense_l_[n * T + k];
        dense_l_[m * T + n] = nz;
      }
  }

  const Config& config() const noexcept { return cfg_; }
  std::size_t tiles() const noexcept { return cfg_.tiles; }
  std::size_t tile() const noexcept { return cfg_.tile; }
  std::size_t dim() const noexcept { return cfg_.tiles * cfg_.tile; }

  bool dense_in_a(std::size_t row, std::size_t col) const { return dense_a_[row * cfg_.tiles + col]; }
  bool dense_in_l(std::size_t row, std::size_t col) const { return dense_l_[row * cfg_.tiles + col]; }

  std::size_t dense_tile_count() const {
    return static_cast<std::size_t>(std::count(dense_a_.begin(), dense_a_.end(), true));
  }

  /// Owner of tile (row, col): cyclic over the column-major flattened index,
  /// except that Skewed pins every structurally dense tile to one rank.
  NodeRank tile_owner(std::size_t row, std::size_t col, std::size_t nodes) const {
    if (cfg_.distribution == Distribution::Skewed && dense_in_l(row, col))
      return static_cast<NodeRank>(cfg_.skew_rank % nodes);
    return static_cast<NodeRank>((col * cfg_.tiles + row) % nodes);
  }

  /// Element (i, j) of the generated matrix, for i, j anywhere in A.
  double element(std::size_t i, std::size_t j) const {
    if (i < j) std::swap(i, j);
    const auto b = cfg_.tile;
    const auto row = i / b, col = j / b;
    if (!dense_in_a(row, col)) return 0.0;
    if (i == j) return static_cast<double>(dim());
    const auto h = mix64(cfg_.seed * 0x100000001b3ULL ^ mix64(i * dim() + j));
    return static_cast<double>(h >> 11) * 0x1.0p-53 - 0.5;
  }

  /// Initial content of tile (row, col), row >= col.
  DataPtr initial_tile(std::size_t row, std::size_t col) const {
    const auto b = static_cast<std::uint32_t>(cfg_.tile);
    if (!dense_in_a(row, col)) return make_sparse_marker(b, b);
    std::vector<double> v(static_cast<std::size_t>(b) * b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) v[i * b + j] = element(row * b + i, col * b + j);
    return make_dense_tile(b, b, std::move(v));
  }

 private:
  Config cfg_;
  std::vector<bool> dense_a_;
  std::vector<bool> dense_l_;
};

// ---------------------------------------------------------------------------
// Tile kernels (b x b, row-major). Plain loops; the point is the task graph.
// ---------------------------------------------------------------------------

namespace kernel {

/// In-place lower Cholesky; the strict upper triangle is zeroed.
inline std::vector<double> potrf(std::vector<double> a, std::size_t b, const TaskKey& key) {
  for (std::size_t j = 0; j < b; ++j) {
    double d = a[j * b + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * b + k] * a[j * b + k];
    if (!(d > 0.0)) throw Error(ErrorCode::NotSpd, "non-positive pivot in " + to_string(key));
    d = std::sqrt(d);
    a[j * b + j] = d;
    for (std::size_t i = j + 1; i < b; ++i) {
      double s = a[i * b + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * b + k] * a[j * b + k];
      a[i * b + j] = s / d;
    }
    for (std::size_t i = 0; i < j; ++i) a[i * b + j] = 0.0;
  }
  return a;
}

/// Solves X L^T = A for X, with L lower triangular.
inline std::vector<double> trsm(const std::vector<double>& l, std::vector<double> a, std::size_t b) {
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < b; ++j) {
      double s = a[r * b + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[r * b + k] * l[j * b + k];
      a[r * b + j] = s / l[j * b + j];
    }
  return a;
}

/// C - A B^T; an absent C counts as zero.
inline std::vector<double> gemm_nt(const std::vector<double>* c, const std::vector<double>& a,
                                   const std::vector<double>& bm, std::size_t b) {
  std::vector<double> out = c ? *c : std::vector<double>(b * b, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b; ++k) s += a[i * b + k] * bm[j * b + k];
      out[i * b + j] -= s;
    }
  return out;
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Graph wiring
// ---------------------------------------------------------------------------

inline TaskKey potrf_key(std::int64_t k) { return make_key(kPotrf, k); }
inline TaskKey trsm_key(std::int64_t k, std::int64_t m) { return make_key(kTrsm, k, m); }
inline TaskKey syrk_key(std::int64_t k, std::int64_t m) { return make_key(kSyrk, k, m); }
inline TaskKey gemm_key(std::int64_t k, std::int64_t m, std::int64_t n) {
  return make_key(kGemm, k, m, n);
}

/// Tile (row, col) a task writes.
inline std::pair<std::size_t, std::size_t> written_tile(const TaskKey& key) {
  const auto k = static_cast<std::size_t>(key.index[0]);
  const auto m = static_cast<std::size_t>(key.index[1]);
  const auto n = static_cast<std::size_t>(key.index[2]);
  switch (key.template_id) {
    case kPotrf: return {k, k};
    case kTrsm: return {m, k};
    case kSyrk: return {m, m};
    case kGemm: return {m, n};
  }
  throw Error(ErrorCode::UnknownTemplate, "not a Cholesky task: " + to_string(key));
}

/// First task to consume the original tile (row, col).
inline std::pair<TaskKey, std::size_t> first_consumer(std::size_t row, std::size_t col) {
  const auto r = static_cast<std::int64_t>(row), c = static_cast<std::int64_t>(col);
  if (col == 0) return {row == 0 ? potrf_key(0) : trsm_key(0, r), 0};
  if (row == col) return {syrk_key(0, r), 0};
  return {gemm_key(0, r, c), 0};
}

/// Successor edges of a task: (successor, input slot) in output order.
inline std::vector<std::pair<TaskKey, std::size_t>> successors(const TaskKey& key, std::size_t T) {
  std::vector<std::pair<TaskKey, std::size_t>> out;
  const auto k = key.index[0], m = key.index[1], n = key.index[2];
  const auto t = static_cast<std::int64_t>(T);
  switch (key.template_id) {
    case kPotrf:
      for (auto r = k + 1; r < t; ++r) out.push_back({trsm_key(k, r), 1});
      break;
    case kTrsm:
      out.push_back({syrk_key(k, m), 1});
      for (auto c = k + 1; c < m; ++c) out.push_back({gemm_key(k, m, c), 1});
      for (auto r = m + 1; r < t; ++r) out.push_back({gemm_key(k, r, m), 2});
      break;
    case kSyrk:
      out.push_back({k + 1 == m ? potrf_key(m) : syrk_key(k + 1, m), 0});
      break;
    case kGemm:
      out.push_back({k + 1 == n ? trsm_key(n, m) : gemm_key(k + 1, m, n), 0});
      break;
    default:
      throw Error(ErrorCode::UnknownTemplate, "not a Cholesky task: " + to_string(key));
  }
  return out;
}

inline TaskKey factor_key(std::size_t row, std::size_t col) {
  return make_key(kFactorTile, static_cast<std::int64_t>(row), static_cast<std::int64_t>(col));
}

namespace detail {

inline BodyResult fan_out(const TaskKey& key, std::size_t T, const DataPtr& item, bool trivial) {
  BodyResult res;
  res.trivial = trivial;
  for (auto& [succ, slot] : successors(key, T)) res.outputs.push_back({succ, slot, item});
  return res;
}

inline bool all_dense(Inputs in) {
  return std::none_of(in.begin(), in.end(), [](const DataPtr& d) { return d->is_sparse(); });
}

}  // namespace detail

/// Builds the task graph program; throws NOT_SPD if validation is on and the
/// generated matrix fails a direct factorization.
inline TaskGraphProgram build(const Config& cfg);

/// Reassembles the dense lower factor (dim x dim, row-major) from published
/// factor tiles. Missing tiles stay zero.
inline std::vector<double> assemble_factor(const Problem& p, const std::vector<Result>& results) {
  const auto N = p.dim(), b = p.tile();
  std::vector<double> L(N * N, 0.0);
  for (const auto& r : results) {
    if (r.key.template_id != kFactorTile || r.item->is_sparse()) continue;
    const auto row = static_cast<std::size_t>(r.key.index[0]);
    const auto col = static_cast<std::size_t>(r.key.index[1]);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) L[(row * b + i) * N + col * b + j] = r.item->at(i, j);
  }
  return L;
}

/// max |(L L^T - A)_ij| / max |A_ij|.
inline double reconstruction_error(const Problem& p, const std::vector<double>& L) {
  const auto N = p.dim();
  double worst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k <= j; ++k) s += L[i * N + k] * L[j * N + k];
      const double a = p.element(i, j);
      worst = std::max(worst, std::abs(s - a));
      scale = std::max(scale, std::abs(a));
    }
  return scale > 0.0 ? worst / scale : worst;
}

inline void validate_spd(const Problem& p) {
  const auto N = p.dim();
  std::vector<double> a(N * N);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) a[i * N + j] = p.element(i, j);
  kernel::potrf(std::move(a), N, make_key(kPotrf, -1));
}

inline TaskGraphProgram build(const Config& cfg) {
  auto problem = std::make_shared<const Problem>(cfg);
  if (cfg.validate && problem->dim() <= 1024) {
    try {
      validate_spd(*problem);
    } catch (const Error&) {
      throw Error(ErrorCode::NotSpd, "generated matrix is not SPD");
    }
  }
  const auto T = cfg.tiles;
  const auto b = cfg.tile;
  const auto bb = static_cast<std::uint32_t>(b);

  TaskGraphProgram prog;
  prog.name = "cholesky";

  auto local_succ = [problem, T](const TaskKey& key, NodeRank exec, std::size_t nodes) {
    std::size_t n = 0;
    for (auto& [succ, slot] : successors(key, T)) {
      auto [row, col] = written_tile(succ);
      if (problem->tile_owner(row, col, nodes) == exec) ++n;
    }
    return n;
  };
  auto priority = [](const TaskKey& key) { return -key.index[0]; };
  auto stealable = [](Inputs in, const TaskKey&) { return detail::all_dense(in); };

  TaskTemplate potrf{kPotrf, "POTRF", 1, {}, stealable, priority, local_succ, "potrf"};
  potrf.body = [T, b](Inputs in, const TaskKey& key) {
    auto l = make_dense_tile(static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b),
                             kernel::potrf(in[0]->values, b, key));
    auto res = detail::fan_out(key, T, l, false);
    const auto k = static_cast<std::size_t>(key.index[0]);
    res.results.push_back({factor_key(k, k), l});
    return res;
  };

  TaskTemplate trsm{kTrsm, "TRSM", 2, {}, stealable, priority, local_succ, "trsm"};
  trsm.body = [T, b](Inputs in, const TaskKey& key) {
    const bool sparse = in[0]->is_sparse();
    DataPtr out = sparse ? in[0]
                         : make_dense_tile(static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b),
                                           kernel::trsm(in[1]->values, in[0]->values, b));
    auto res = detail::fan_out(key, T, out, sparse);
    res.results.push_back(
        {factor_key(static_cast<std::size_t>(key.index[1]), static_cast<std::size_t>(key.index[0])), out});
    return res;
  };

  TaskTemplate syrk{kSyrk, "SYRK", 2, {}, stealable, priority, local_succ, "syrk"};
  syrk.body = [T, bb](Inputs in, const TaskKey& key) {
    if (in[1]->is_sparse()) return detail::fan_out(key, T, in[0], true);
    const auto* c = in[0]->is_sparse() ? nullptr : &in[0]->values;
    return detail::fan_out(
        key, T, make_dense_tile(bb, bb, kernel::gemm_nt(c, in[1]->values, in[1]->values, bb)), false);
  };

  TaskTemplate gemm{kGemm, "GEMM", 3, {}, stealable, priority, local_succ, "gemm"};
  gemm.body = [T, bb](Inputs in, const TaskKey& key) {
    if (in[1]->is_sparse() || in[2]->is_sparse()) return detail::fan_out(key, T, in[0], true);
    const auto* c = in[0]->is_sparse() ? nullptr : &in[0]->values;
    return detail::fan_out(
        key, T, make_dense_tile(bb, bb, kernel::gemm_nt(c, in[1]->values, in[2]->values, bb)), false);
  };

  prog.templates = {std::move(potrf), std::move(trsm), std::move(syrk), std::move(gemm)};
  prog.home_node = [problem](const TaskKey& key, std::size_t nodes) {
    auto [row, col] = written_tile(key);
    return problem->tile_owner(row, col, nodes);
  };
  prog.initial = [problem, T](NodeRank rank, std::size_t nodes) {
    std::vector<InitialActivation> acts;
    for (std::size_t col = 0; col < T; ++col)
      for (std::size_t row = col; row < T; ++row) {
        if (problem->tile_owner(row, col, nodes) != rank) continue;
        auto [key, slot] = first_consumer(row, col);
        acts.push_back({key, slot, problem->initial_tile(row, col)});
      }
    return acts;
  };
  return prog;
}

/// Closed-form task counts for T tiles: POTRF T, TRSM and SYRK T(T-1)/2 each,
/// GEMM T(T-1)(T-2)/6.
inline std::size_t task_count(std::size_t T) {
  return T + T * (T - 1) + T * (T - 1) * (T - 2) / 6;
}

}  // namespace dws::cholesky
