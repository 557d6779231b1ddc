#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include "immunity/config.hpp"

using namespace immunity;

namespace {

EnvLookup env_from(std::map<std::string, std::string> vars) {
  return [vars = std::move(vars)](const char* name) -> const char* {
    auto it = vars.find(name);
    return it == vars.end() ? nullptr : it->second.c_str();
  };
}

const EnvLookup kNoEnv = [](const char*) -> const char* { return nullptr; };

std::string write_temp(const std::string& name, const std::string& text) {
  const std::string path = ::testing::TempDir() + name;
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST(Config, KeysAreUniqueAndDumpRoundTrips) {
  std::set<std::string> names;
  for (const auto& k : config_keys()) {
    EXPECT_TRUE(names.insert(k.name).second) << k.name;
    EXPECT_FALSE(k.help.empty()) << k.name;
  }
  RunConfig a;
  a.seed = 9;
  a.gen.duration = 12.5;
  a.sim.classifier = ClassifierMode::Perfect;
  a.sim.off_update_delay = Micros{7};
  a.bench.sizes = {1024, 2048};
  a.sim.rules.slowloris_ports = {80};
  RunConfig b;
  apply_config_json(b, dump_config(a));
  EXPECT_EQ(dump_config(a), dump_config(b));
  EXPECT_EQ(b.sim.off_update_delay, Micros{7});
  EXPECT_EQ(b.bench.sizes, (std::vector<std::uint64_t>{1024, 2048}));
}

TEST(Config, NestedAndDottedKeysBothLoad) {
  RunConfig c;
  apply_config_text(c, R"({"gen": {"duration": 3, "gap_model": "per_flow"}, "sim.off.m": 4096})");
  EXPECT_DOUBLE_EQ(c.gen.duration, 3);
  EXPECT_EQ(c.gen.gap_model, GapModel::PerFlow);
  EXPECT_EQ(c.sim.off.m, 4096u);
}

TEST(Config, PrecedenceIsFileThenEnvThenFlags) {
  const auto path = write_temp("prec.json", R"({"seed": 5, "paths": {"trace": "file.bin"}, "gen": {"duration": 2}})");
  auto c = resolve_config(path, {}, kNoEnv);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.paths.trace, "file.bin");

  c = resolve_config(path, {}, env_from({{"IMMUNITY_SEED", "6"}, {"IMMUNITY_PATHS_TRACE", "env.bin"}}));
  EXPECT_EQ(c.seed, 6u);
  EXPECT_EQ(c.paths.trace, "env.bin");
  EXPECT_DOUBLE_EQ(c.gen.duration, 2);

  c = resolve_config(path, {{"seed", "7"}, {"gen.duration", "4"}}, env_from({{"IMMUNITY_SEED", "6"}}));
  EXPECT_EQ(c.seed, 7u);
  EXPECT_DOUBLE_EQ(c.gen.duration, 4);
}

TEST(Config, OnlySeedAndPathsReadTheEnvironment) {
  for (const auto& k : config_keys()) {
    const bool path = k.name.rfind("paths.", 0) == 0 && k.kind == KeyKind::Text;
    EXPECT_EQ(k.env, k.name == "seed" || path) << k.name;
  }
  auto c = resolve_config("", {}, env_from({{"IMMUNITY_GEN_DURATION", "99"}}));
  EXPECT_DOUBLE_EQ(c.gen.duration, GenConfig{}.duration);
}

TEST(Config, SeedReachesGeneratorAndBench) {
  RunConfig c;
  c.seed = 77;
  EXPECT_EQ(c.gen_config().seed, 77u);
  EXPECT_EQ(c.bench_config().seed, 77u);
}

TEST(Config, TextValuesParsePerKind) {
  RunConfig c;
  set_key_text(c, "sim.gate_sketch", "false");
  set_key_text(c, "bench.sizes", "64,128");
  set_key_text(c, "sim.rules.scan_window", "1.5");
  set_key_text(c, "sim.fidelity", "wire");
  EXPECT_FALSE(c.sim.gate_sketch);
  EXPECT_EQ(c.bench.sizes, (std::vector<std::uint64_t>{64, 128}));
  EXPECT_EQ(c.sim.rules.scan_window, Micros{1'500'000});
  EXPECT_EQ(c.sim.fidelity, Fidelity::Wire);
}

TEST(Config, BadInputIsAConfigError) {
  RunConfig c;
  EXPECT_THROW(set_key_text(c, "no.such.key", "1"), ConfigError);
  EXPECT_THROW(set_key_text(c, "seed", "-1"), ConfigError);
  EXPECT_THROW(set_key_text(c, "seed", "1.5"), ConfigError);
  EXPECT_THROW(set_key_text(c, "sim.off.b", "99999999999"), ConfigError);
  EXPECT_THROW(set_key_text(c, "gen.duration", "soon"), ConfigError);
  EXPECT_THROW(set_key_text(c, "sim.classifier", "oracle"), ConfigError);
  EXPECT_THROW(set_key_text(c, "sim.gate_sketch", "maybe"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "{not json"), ConfigError);
  EXPECT_THROW(apply_config_text(c, R"({"gen": {"duration": "long"}})"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "[1, 2]"), ConfigError);
  EXPECT_THROW(apply_config_file(c, "/nonexistent/config.json"), ConfigError);
}

TEST(Config, TraceFormatFollowsExtensionUnlessForced) {
  EXPECT_EQ(resolve_trace_format("auto", "a.csv"), TraceFormat::Text);
  EXPECT_EQ(resolve_trace_format("auto", "a.bin"), TraceFormat::Binary);
  EXPECT_EQ(resolve_trace_format("binary", "a.csv"), TraceFormat::Binary);
  EXPECT_EQ(resolve_trace_format("text", "a.bin"), TraceFormat::Text);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"generate.json", "simulate.json", "filter_bench.json", "capacity.json", "train.json"}) {
    const std::string path = std::string(IMMUNITY_CONFIG_DIR) + "/" + name;
    RunConfig c;
    EXPECT_NO_THROW(apply_config_file(c, path)) << path;
  }
}
