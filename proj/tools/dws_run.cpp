// dws_run: runs one benchmark on P runtime nodes and writes event logs,
// interval metrics and a summary into --out.

#include <bit>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "dws/cholesky.hpp"
#include "dws/harness.hpp"
#include "dws/mix.hpp"
#include "dws/uts.hpp"

namespace {

struct Options {
  std::string benchmark = "cholesky";
  std::size_t tiles = 8;
  std::size_t tile = 16;
  double density = 0.5;
  std::string distribution = "cyclic";
  std::string preset = "desk";
  std::string g_mode = "size";
  std::string mapping = "affinity";
  std::uint64_t uts_g = 0;
  std::size_t mix_tasks = 400;
  double mix_non_stealable = 0.5;
  std::size_t nodes = 2;
  std::size_t workers = 2;
  std::string backend = "inproc";
  std::string hostfile;
  int rank = -1;
  std::string scheduler = "2q";
  std::string steal = "on";
  std::string thief = "ready+succ";
  std::string victim = "chunk";
  std::size_t chunk_size = 0;
  std::string gate = "on";
  std::int64_t interval_ms = 10000;
  std::uint64_t seed = 1;
  double task_delay_ms = 0.0;
  double timeout_s = 600.0;
  std::string out = "dws_out";
};

std::uint64_t digest(const std::vector<double>& v) {
  std::uint64_t h = 0;
  for (double d : v) h = dws::mix64(h ^ std::bit_cast<std::uint64_t>(d));
  return h;
}

dws::cholesky::Config cholesky_config(const Options& o) {
  dws::cholesky::Config c;
  c.tiles = o.tiles;
  c.tile = o.tile;
  c.density = o.density;
  c.seed = o.seed;
  if (o.distribution == "cyclic") {
    c.distribution = dws::cholesky::Distribution::Cyclic;
  } else if (o.distribution.rfind("skewed:", 0) == 0) {
    c.distribution = dws::cholesky::Distribution::Skewed;
    c.skew_rank = static_cast<dws::NodeRank>(std::stoul(o.distribution.substr(7)));
  } else {
    throw dws::Error(dws::ErrorCode::InvalidConfig, "unknown distribution: " + o.distribution);
  }
  return c;
}

dws::uts::Config uts_config(const Options& o) {
  auto c = dws::uts::preset(o.preset);
  c.seed = o.seed;
  c.g = o.uts_g;
  c.g_mode = o.g_mode == "work" ? dws::uts::GMode::Work : dws::uts::GMode::ExpectedSize;
  c.mapping = o.mapping == "hash" ? dws::uts::Mapping::Hashed : dws::uts::Mapping::ParentAffinity;
  return c;
}

dws::NodeConfig node_config(const Options& o) {
  dws::NodeConfig n;
  n.workers = o.workers;
  n.scheduler = o.scheduler == "ap" ? dws::SchedulerPolicy::AP : dws::SchedulerPolicy::TwoQ;
  n.steal = o.steal == "on";
  n.thief = o.thief == "ready" ? dws::ThiefPolicy::ReadyOnly : dws::ThiefPolicy::ReadyPlusSuccessors;
  n.victim.kind = o.victim == "single" ? dws::VictimKind::Single
                  : o.victim == "half" ? dws::VictimKind::Half
                                       : dws::VictimKind::Chunk;
  n.victim.chunk_size = o.chunk_size ? o.chunk_size : std::max<std::size_t>(1, o.workers / 2);
  n.victim.waiting_time_gate = o.gate == "on";
  n.task_delay = std::chrono::microseconds(static_cast<std::int64_t>(o.task_delay_ms * 1000.0));
  n.seed = o.seed;
  return n;
}

// Runs a single rank of a multi-process socket cluster.
int run_one_rank(const Options& o, const dws::TaskGraphProgram& prog, const dws::NodeConfig& nc) {
  auto peers = dws::load_hostfile(o.hostfile);
  const auto rank = static_cast<dws::NodeRank>(o.rank);
  if (rank >= peers.size()) throw dws::Error(dws::ErrorCode::InvalidConfig, "rank outside hostfile");
  dws::SocketTransport transport(rank, peers.size(), peers[rank].host, peers[rank].port);
  transport.connect(peers, std::chrono::milliseconds(30000));
  const auto origin = dws::Clock::now();
  auto cfg = nc;
  cfg.seed = dws::mix64(nc.seed ^ (0x5eed0000ULL + rank));
  dws::NodeRuntime node(prog, cfg, transport, origin);
  node.start();
  node.wait();
  transport.close();

  dws::RunResult run;
  run.completed = node.error().empty();
  run.error = node.error();
  run.events = {node.events()};
  for (const auto& ev : run.events[0])
    if (ev.kind == dws::EventKind::Done) run.makespan_ns = std::max(run.makespan_ns, ev.t_ns);
  std::filesystem::path dir = o.out;
  std::filesystem::create_directories(dir);
  std::ostringstream os;
  for (const auto& ev : run.events[0]) dws::write_event(os, ev);
  dws::write_file(dir / ("events_rank" + std::to_string(rank) + ".log"), os.str());
  const auto c = node.counters();
  nlohmann::json j{{"rank", rank},
                   {"completed", run.completed},
                   {"error", run.error},
                   {"makespan_ns", run.makespan_ns},
                   {"tasks_executed", c.tasks_executed},
                   {"requests_sent", c.ledger.requests_sent},
                   {"requests_granted", c.ledger.requests_granted}};
  dws::write_file(dir / ("summary_rank" + std::to_string(rank) + ".json"), j.dump(2) + "\n");
  std::printf("rank %u: %s, %llu tasks, makespan %.6f s\n", rank, run.completed ? "done" : "failed",
              static_cast<unsigned long long>(c.tasks_executed), run.makespan_s());
  return run.completed ? 0 : 1;
}

int run(const Options& o) {
  dws::TaskGraphProgram prog;
  std::size_t expected = 0;
  std::optional<dws::cholesky::Problem> problem;
  nlohmann::json bench;
  if (o.benchmark == "cholesky") {
    auto cfg = cholesky_config(o);
    prog = dws::cholesky::build(cfg);
    problem.emplace(cfg);
    expected = dws::cholesky::task_count(cfg.tiles);
    bench = {{"name", "cholesky"}, {"tiles", cfg.tiles}, {"tile", cfg.tile}, {"density", cfg.density},
             {"distribution", o.distribution}, {"dense_tiles", problem->dense_tile_count()}};
  } else if (o.benchmark == "uts") {
    auto cfg = uts_config(o);
    expected = dws::uts::count_nodes(cfg);
    prog = dws::uts::build(cfg);
    bench = {{"name", "uts"}, {"preset", o.preset}, {"b0", cfg.b0}, {"m", cfg.m}, {"q", cfg.q},
             {"g", cfg.g}, {"g_mode", o.g_mode}, {"tree_nodes", expected}};
  } else if (o.benchmark == "mix") {
    dws::mix::Config cfg{o.mix_tasks, o.mix_non_stealable, 0};
    prog = dws::mix::build(cfg);
    expected = cfg.tasks;
    bench = {{"name", "mix"}, {"tasks", cfg.tasks}, {"non_stealable", cfg.non_stealable}};
  } else {
    throw dws::Error(dws::ErrorCode::InvalidConfig, "unknown benchmark: " + o.benchmark);
  }

  const auto nc = node_config(o);
  if (!o.hostfile.empty() && o.rank >= 0) return run_one_rank(o, prog, nc);

  dws::ClusterConfig cc;
  cc.nodes = o.nodes;
  cc.backend = o.backend == "socket" ? dws::Backend::Socket : dws::Backend::InProc;
  cc.node = nc;
  cc.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(o.timeout_s * 1000.0));

  auto result = dws::run_cluster(prog, cc);
  auto report = dws::audit(result, nc, expected);
  auto intervals = dws::run_intervals(result, o.interval_ms * 1'000'000);

  if (problem) {
    auto L = dws::cholesky::assemble_factor(*problem, result.results);
    const double err = dws::cholesky::reconstruction_error(*problem, L);
    bench["reconstruction_error"] = err;
    bench["factor_digest"] = std::to_string(digest(L));
    if (!(err <= 1e-8)) report.fail("factor reconstruction error " + std::to_string(err));
  }

  auto summary = dws::summary_json(result, report, intervals);
  summary["benchmark"] = bench;
  summary["config"] = {{"nodes", o.nodes}, {"workers", o.workers}, {"backend", o.backend},
                       {"scheduler", o.scheduler}, {"steal", o.steal}, {"thief_policy", o.thief},
                       {"victim_policy", o.victim}, {"chunk_size", nc.victim.chunk_size},
                       {"waiting_time_gate", o.gate}, {"interval_ms", o.interval_ms},
                       {"seed", o.seed}, {"task_delay_ms", o.task_delay_ms}};
  if (!o.out.empty()) {
    dws::write_run_logs(o.out, result, intervals);
    dws::write_file(std::filesystem::path(o.out) / "summary.json", summary.dump(2) + "\n");
  }

  const auto steal = dws::aggregate_steal_stats(result);
  std::printf("%s P=%zu W=%zu %s: makespan %.6f s, %zu tasks, steals %llu/%llu, audit %s\n",
              o.benchmark.c_str(), o.nodes, o.workers, o.backend.c_str(), result.makespan_s(),
              report.done_keys, static_cast<unsigned long long>(steal.requests_granted),
              static_cast<unsigned long long>(steal.requests_sent), report.ok() ? "ok" : "FAILED");
  for (const auto& v : report.violations) std::fprintf(stderr, "violation: %s\n", v.c_str());
  return report.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Distributed work-stealing dataflow runtime: experiment driver"};
  app.add_option("--benchmark", o.benchmark, "Benchmark")->check(CLI::IsMember({"cholesky", "uts", "mix"}));
  app.add_option("--tiles", o.tiles, "Cholesky tiles per dimension")->check(CLI::PositiveNumber);
  app.add_option("--tile", o.tile, "Cholesky elements per tile dimension")->check(CLI::PositiveNumber);
  app.add_option("--density", o.density, "Fraction of dense lower-triangle tiles")->check(CLI::Range(0.0, 1.0));
  app.add_option("--distribution", o.distribution, "cyclic or skewed:RANK");
  app.add_option("--preset", o.preset, "UTS preset")->check(CLI::IsMember({"desk", "tiny", "wide"}));
  app.add_option("--uts-g", o.uts_g, "UTS g: node cap (size mode) or hash repetitions (work mode)");
  app.add_option("--uts-g-mode", o.g_mode, "Meaning of g")->check(CLI::IsMember({"size", "work"}));
  app.add_option("--uts-mapping", o.mapping, "UTS home mapping")->check(CLI::IsMember({"affinity", "hash"}));
  app.add_option("--mix-tasks", o.mix_tasks, "Mix benchmark task count");
  app.add_option("--mix-non-stealable", o.mix_non_stealable, "Mix share of non-stealable tasks")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--nodes", o.nodes, "Node count P")->check(CLI::PositiveNumber);
  app.add_option("--workers", o.workers, "Workers per node W")->check(CLI::PositiveNumber);
  app.add_option("--backend", o.backend, "Transport")->check(CLI::IsMember({"inproc", "socket"}));
  app.add_option("--hostfile", o.hostfile, "Lines of 'rank host:port' (socket, one process per rank)");
  app.add_option("--rank", o.rank, "This process's rank (socket with --hostfile)");
  app.add_option("--scheduler", o.scheduler, "Ready queue policy")->check(CLI::IsMember({"ap", "2q"}));
  app.add_option("--steal", o.steal, "Work stealing")->check(CLI::IsMember({"on", "off"}));
  app.add_option("--thief-policy", o.thief, "Starvation rule")->check(CLI::IsMember({"ready", "ready+succ"}));
  app.add_option("--victim-policy", o.victim, "Steal bound")->check(CLI::IsMember({"single", "chunk", "half"}));
  app.add_option("--chunk-size", o.chunk_size, "Chunk bound (default workers/2)");
  app.add_option("--waiting-time-gate", o.gate, "Waiting-time gate")->check(CLI::IsMember({"on", "off"}));
  app.add_option("--interval-ms", o.interval_ms, "Metrics interval length")->check(CLI::PositiveNumber);
  app.add_option("--seed", o.seed, "Seed");
  app.add_option("--task-delay", o.task_delay_ms, "Extra milliseconds per non-trivial task")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--timeout", o.timeout_s, "Run timeout in seconds")->check(CLI::PositiveNumber);
  app.add_option("--out", o.out, "Output directory (empty: none)");
  CLI11_PARSE(app, argc, argv);

  if (!o.hostfile.empty()) o.backend = "socket";
  if (!o.hostfile.empty() && o.rank < 0) {
    std::cerr << "--hostfile requires --rank\n";
    return 2;
  }
  try {
    return run(o);
  } catch (const dws::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
