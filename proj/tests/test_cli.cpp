#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "immunity/config.hpp"

namespace fs = std::filesystem;
using namespace immunity;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI from a scratch directory, capturing stdout and stderr together.
Result run(const std::string& args) {
  const std::string cmd = std::string("cd '") + ::testing::TempDir() + "' && '" + IMMUNITY_CLI_PATH + "' " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  while (auto n = fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& name) {
  std::ifstream in(::testing::TempDir() + name, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const std::string& name, const std::string& text) {
  std::ofstream(::testing::TempDir() + name, std::ios::binary) << text;
}

const std::string kSmallGen =
    "--gen.duration 5 --gen.concurrent_benign 50 --gen.scanner_count 1 --gen.ssh_brute_attackers 1";

}  // namespace

TEST(Cli, HelpEnumeratesEveryConfigKey) {
  auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const auto& k : config_keys()) EXPECT_NE(r.out.find("--" + k.name), std::string::npos) << k.name;
  for (const char* sub : {"generate", "simulate", "capacity", "train", "filter-bench", "convert"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, GenerateIsByteIdenticalAcrossRuns) {
  for (const char* tag : {"a", "b"}) {
    auto r = run("generate " + kSmallGen + " --paths.trace gen_" + tag + ".bin --paths.truth truth_" + tag + ".csv");
    ASSERT_EQ(r.code, 0) << r.out;
  }
  EXPECT_FALSE(slurp("gen_a.bin").empty());
  EXPECT_EQ(slurp("gen_a.bin"), slurp("gen_b.bin"));
  EXPECT_EQ(slurp("truth_a.csv"), slurp("truth_b.csv"));
  ASSERT_EQ(run("generate " + kSmallGen + " --seed 2 --paths.trace gen_c.bin").code, 0);
  EXPECT_NE(slurp("gen_a.bin"), slurp("gen_c.bin"));
}

TEST(Cli, SeedComesFromEnvironmentUnlessFlagged) {
  ASSERT_EQ(run("generate " + kSmallGen + " --seed 2 --paths.trace env_ref.bin").code, 0);
  ASSERT_EQ(run("generate " + kSmallGen + " --paths.trace env_a.bin").code, 0);
  ASSERT_EQ(run("generate " + kSmallGen + " --paths.trace env_b.bin").code, 0);
  auto r = Result{};
  {
    const std::string cmd = "IMMUNITY_SEED=2 ";
    const std::string full = std::string("cd '") + ::testing::TempDir() + "' && " + cmd + "'" + IMMUNITY_CLI_PATH +
                             "' generate " + kSmallGen + " --paths.trace env_c.bin >/dev/null 2>&1";
    r.code = std::system(full.c_str());
  }
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(slurp("env_ref.bin"), slurp("env_c.bin"));
  EXPECT_NE(slurp("env_a.bin"), slurp("env_c.bin"));
}

TEST(Cli, SimulateWritesMetricsSummaryAndManifest) {
  const std::string args = "simulate " + kSmallGen +
                           " --sim.classifier perfect --paths.metrics m_a.csv --paths.manifest m_a.json";
  auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("Hit on MST"), std::string::npos);
  const auto metrics = slurp("m_a.csv");
  EXPECT_EQ(metrics.rfind(kMetricsHeader, 0), 0u);
  auto manifest = nlohmann::json::parse(slurp("m_a.json"));
  EXPECT_EQ(manifest["command"], "simulate");
  EXPECT_EQ(manifest["config"]["sim"]["classifier"], "perfect");
  EXPECT_EQ(manifest["seed"], 1);
  EXPECT_FALSE(fs::exists(::testing::TempDir() + "m_a.json.tmp"));
  // The manifest snapshot alone reproduces the run.
  write("m_replay.json", manifest["config"].dump());
  ASSERT_EQ(run("simulate -c m_replay.json --paths.metrics m_b.csv --paths.manifest ''").code, 0);
  EXPECT_EQ(metrics, slurp("m_b.csv"));
}

TEST(Cli, SimulateReplaysAGeneratedTrace) {
  ASSERT_EQ(run("generate " + kSmallGen + " --paths.trace sim_in.csv --paths.truth sim_truth.csv").code, 0);
  auto r = run("simulate --sim.classifier perfect --paths.trace sim_in.csv --paths.truth sim_truth.csv --paths.metrics sim_out.csv");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(slurp("sim_out.csv").find("attackers_found,"), std::string::npos);
}

TEST(Cli, MissingModelIsAConfigErrorNamingThePath) {
  auto r = run("simulate " + kSmallGen + " --paths.model does_not_exist.tree");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("does_not_exist.tree"), std::string::npos) << r.out;
}

TEST(Cli, TrainThenSimulateWithModel) {
  auto r = run("train " + kSmallGen + " --paths.model cli.tree");
  ASSERT_EQ(r.code, 0) << r.out;
  r = run("simulate " + kSmallGen + " --paths.model cli.tree");
  EXPECT_EQ(r.code, 0) << r.out;
}

TEST(Cli, CapacityVerdicts) {
  auto r = run("capacity --capacity.alpha 0.283 --capacity.p 0.99 --capacity.q 0.61");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("verdict           feasible"), std::string::npos) << r.out;
  r = run("capacity --paths.out cap.csv");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("infeasible"), std::string::npos);
  EXPECT_NE(slurp("cap.csv").find(",125,125,"), std::string::npos) << slurp("cap.csv");
}

TEST(Cli, CapacitySweep) {
  write("sweep_ok.csv", "p,q,alpha,b_net_sw\n0.99,0.61,0.283,1500\n0,0,0.2,750\n");
  auto r = run("capacity --paths.sweep sweep_ok.csv --paths.out sweep_out.csv");
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(slurp("sweep_out.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 3);
  write("sweep_bad.csv", "p,q,alpha\n0.1,0.2,0.3\n");
  EXPECT_EQ(run("capacity --paths.sweep sweep_bad.csv").code, 2);
  EXPECT_EQ(run("capacity --capacity.p 1.5").code, 2);
}

TEST(Cli, FilterBenchSchemaAndZeroSize) {
  auto r = run("filter-bench --bench.sizes 65536 --bench.concurrent_flows 5000 --bench.warmup_packets 10000 "
               "--bench.packets 50000 --bench.swap_thresholds 2000,20000 --paths.out fb.csv");
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(slurp("fb.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kFilterBenchHeader);
  std::vector<std::string> names;
  while (std::getline(in, line)) names.push_back(line.substr(0, line.find(',')));
  EXPECT_EQ(names, (std::vector<std::string>{"OFF", "BF-2K", "BF-20K"}));
  EXPECT_EQ(run("filter-bench --bench.sizes 0").code, 2);
}

TEST(Cli, ConvertRoundTrips) {
  ASSERT_EQ(run("generate " + kSmallGen + " --paths.trace conv.bin").code, 0);
  ASSERT_EQ(run("convert --paths.trace conv.bin --paths.out conv.csv").code, 0);
  ASSERT_EQ(run("convert --paths.trace conv.csv --paths.out conv2.bin").code, 0);
  EXPECT_EQ(slurp("conv.bin"), slurp("conv2.bin"));
  EXPECT_EQ(slurp("conv.csv").substr(0, 2), "0.");
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("launch").code, 2);
  EXPECT_EQ(run("generate --gen.duration soon --paths.trace x.bin").code, 2);
  EXPECT_EQ(run("generate --paths.trace x.bin --gen.gap_min 0").code, 2);
  EXPECT_EQ(run("generate").code, 2);
  EXPECT_EQ(run("simulate -c missing.json").code, 2);
  write("bad.json", "{\"gen\": {\"nonsense\": 1}}");
  EXPECT_EQ(run("simulate -c bad.json").code, 2);
  // A malformed input trace is a runtime failure, not a configuration one.
  write("broken.bin", std::string(30, '\x01'));
  auto r = run("simulate --sim.classifier perfect --paths.trace broken.bin");
  EXPECT_EQ(r.code, 3) << r.out;
}
