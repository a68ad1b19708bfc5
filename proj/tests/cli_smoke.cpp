// Runs the dws_run binary end to end and checks its exit codes and files.
// Usage: cli_smoke_driver <path-to-dws_run> <scratch-dir>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

int failures = 0;

void check(bool ok, const std::string& what) {
  std::printf("%s %s\n", ok ? "ok  " : "FAIL", what.c_str());
  if (!ok) ++failures;
}

int run(const std::string& cmd) {
  std::printf("$ %s\n", cmd.c_str());
  std::fflush(stdout);
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

bool audit_ok(const fs::path& summary) {
  std::ifstream in(summary);
  if (!in) return false;
  auto j = nlohmann::json::parse(in, nullptr, false);
  return !j.is_discarded() && j.contains("audit") && j["audit"].value("ok", false);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::fprintf(stderr, "usage: %s <dws_run> <scratch-dir>\n", argv[0]);
    return 2;
  }
  const std::string bin = argv[1];
  const fs::path dir = argv[2];
  fs::remove_all(dir);
  fs::create_directories(dir);

  struct Case {
    std::string name, args;
    std::size_t nodes;
  };
  const Case cases[] = {
      {"cholesky", "--benchmark cholesky --tiles 6 --tile 8 --nodes 2 --interval-ms 1", 2},
      {"cholesky_skewed", "--benchmark cholesky --tiles 6 --tile 8 --nodes 3 --distribution skewed:1 "
                          "--scheduler ap --victim-policy half --thief-policy ready",
       3},
      {"uts", "--benchmark uts --preset tiny --nodes 4 --workers 1 --victim-policy single", 4},
      {"mix", "--benchmark mix --mix-tasks 100 --nodes 2 --task-delay 0.1", 2},
      {"socket", "--benchmark cholesky --tiles 4 --tile 8 --nodes 2 --backend socket", 2},
  };
  for (const auto& c : cases) {
    const auto out = dir / c.name;
    const int rc = run(bin + " " + c.args + " --out " + out.string());
    check(rc == 0, c.name + ": exit code 0 (got " + std::to_string(rc) + ")");
    check(audit_ok(out / "summary.json"), c.name + ": summary.json reports a clean audit");
    check(fs::exists(out / "intervals.csv"), c.name + ": intervals.csv written");
    for (std::size_t r = 0; r < c.nodes; ++r)
      check(fs::exists(out / ("events_rank" + std::to_string(r) + ".log")),
            c.name + ": events_rank" + std::to_string(r) + ".log written");
  }

  check(run(bin + " --benchmark nope --out " + (dir / "bad").string()) != 0, "unknown benchmark is rejected");
  check(run(bin + " --benchmark uts --hostfile /dev/null --out " + (dir / "bad").string()) == 2,
        "--hostfile without --rank exits 2");

  // Two processes on loopback sharing one hostfile.
  const auto hosts = dir / "hosts.txt";
  {
    std::ofstream h(hosts);
    h << "0 127.0.0.1:47311\n1 127.0.0.1:47312\n";
  }
  const auto mp = dir / "multiprocess";
  const std::string common = bin + " --benchmark cholesky --tiles 4 --tile 8 --hostfile " + hosts.string() +
                             " --out " + mp.string() + " --timeout 60";
  int rc1 = -1;
  std::thread peer([&] { rc1 = run(common + " --rank 1"); });
  const int rc0 = run(common + " --rank 0");
  peer.join();
  check(rc0 == 0 && rc1 == 0,
        "two-process socket run exits 0 (got " + std::to_string(rc0) + ", " + std::to_string(rc1) + ")");
  std::uint64_t executed = 0;
  for (int r = 0; r < 2; ++r) {
    std::ifstream in(mp / ("summary_rank" + std::to_string(r) + ".json"));
    auto j = nlohmann::json::parse(in, nullptr, false);
    const bool done = !j.is_discarded() && j.value("completed", false);
    check(done, "rank " + std::to_string(r) + " summary reports completion");
    if (done) executed += j.value("tasks_executed", std::uint64_t{0});
    check(fs::exists(mp / ("events_rank" + std::to_string(r) + ".log")),
          "rank " + std::to_string(r) + " event log written");
  }

  // T=4: 4 POTRF + 12 TRSM/SYRK + 4 GEMM.
  check(executed == 20, "ranks executed 20 tasks in total (got " + std::to_string(executed) + ")");

  std::printf("%d checks failed\n", failures);
  return failures == 0 ? 0 : 1;
}
