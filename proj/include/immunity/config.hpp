#pragma once

#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "immunity/capacity.hpp"
#include "immunity/filter_bench.hpp"
#include "immunity/simulator.hpp"
#include "immunity/trace_io.hpp"
#include "immunity/traffic_gen.hpp"

namespace immunity {

inline constexpr std::string_view kVersion = "1.0.0";

struct PathConfig {
  std::string trace;     // packet trace read by simulate/convert, written by generate
  std::string truth;     // ground-truth CSV
  std::string model;     // classifier model
  std::string training;  // labelled flow CSV
  std::string metrics;   // simulation metrics CSV
  std::string manifest;  // run manifest JSON
  std::string sweep;     // capacity sweep input
  std::string out;       // CSV output of capacity/filter-bench, target of convert
  std::string trace_format = "auto";
  std::string out_format = "auto";
};

struct TrainConfig {
  std::size_t depth = TreeModel::kDefaultDepth;
  std::size_t min_leaf = 1;
  bool fragments = true;
};

struct RunConfig {
  std::uint64_t seed = 1;
  GenConfig gen;
  SimConfig sim;
  FilterBenchConfig bench;
  SystemParams capacity;
  TrainConfig train;
  PathConfig paths;

  GenConfig gen_config() const {
    GenConfig g = gen;
    g.seed = seed;
    return g;
  }
  FilterBenchConfig bench_config() const {
    FilterBenchConfig b = bench;
    b.seed = seed;
    return b;
  }
};

enum class KeyKind { Integer, Real, Boolean, Text, Seconds, Choice, IntegerList };

struct ConfigKey {
  std::string name;
  std::string help;
  KeyKind kind;
  bool env = false;  // overridable from the environment
  std::function<void(RunConfig&, const nlohmann::json&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;

  std::string env_name() const {
    std::string v = "IMMUNITY_";
    for (char c : name) v += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return v;
  }
};

namespace detail {

template <class T>
T json_unsigned(const std::string& key, const nlohmann::json& j) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0))
    throw ConfigError(key + ": expected a non-negative integer, got " + j.dump());
  const auto v = j.get<std::uint64_t>();
  if (v > std::numeric_limits<T>::max()) throw ConfigError(key + ": value " + j.dump() + " out of range");
  return static_cast<T>(v);
}

inline double json_real(const std::string& key, const nlohmann::json& j) {
  if (!j.is_number()) throw ConfigError(key + ": expected a number, got " + j.dump());
  return j.get<double>();
}

template <class Access>
ConfigKey unsigned_key(std::string name, std::string help, Access acc, bool env = false) {
  using T = std::remove_reference_t<decltype(acc(std::declval<RunConfig&>()))>;
  return {name, std::move(help), KeyKind::Integer, env,
          [acc, name](RunConfig& c, const nlohmann::json& j) { acc(c) = json_unsigned<T>(name, j); },
          [acc](const RunConfig& c) { return nlohmann::json(acc(const_cast<RunConfig&>(c))); }};
}

template <class Access>
ConfigKey real_key(std::string name, std::string help, Access acc) {
  return {name, std::move(help), KeyKind::Real, false,
          [acc, name](RunConfig& c, const nlohmann::json& j) { acc(c) = json_real(name, j); },
          [acc](const RunConfig& c) { return nlohmann::json(acc(const_cast<RunConfig&>(c))); }};
}

template <class Access>
ConfigKey seconds_key(std::string name, std::string help, Access acc) {
  return {name, std::move(help) + " (seconds)", KeyKind::Seconds, false,
          [acc, name](RunConfig& c, const nlohmann::json& j) {
            const double s = json_real(name, j);
            if (!(std::abs(s) < 1e12)) throw ConfigError(name + ": value out of range");
            acc(c) = from_seconds(s);
          },
          [acc](const RunConfig& c) { return nlohmann::json(to_seconds(acc(const_cast<RunConfig&>(c)))); }};
}

template <class Access>
ConfigKey bool_key(std::string name, std::string help, Access acc) {
  return {name, std::move(help), KeyKind::Boolean, false,
          [acc, name](RunConfig& c, const nlohmann::json& j) {
            if (!j.is_boolean()) throw ConfigError(name + ": expected true or false, got " + j.dump());
            acc(c) = j.get<bool>();
          },
          [acc](const RunConfig& c) { return nlohmann::json(acc(const_cast<RunConfig&>(c))); }};
}

template <class Access>
ConfigKey text_key(std::string name, std::string help, Access acc, bool env = false) {
  return {name, std::move(help), KeyKind::Text, env,
          [acc, name](RunConfig& c, const nlohmann::json& j) {
            if (!j.is_string()) throw ConfigError(name + ": expected a string, got " + j.dump());
            acc(c) = j.get<std::string>();
          },
          [acc](const RunConfig& c) { return nlohmann::json(acc(const_cast<RunConfig&>(c))); }};
}

template <class Access, class Parse, class Name>
ConfigKey choice_key(std::string name, std::string help, Access acc, Parse parse, Name to_name) {
  return {name, std::move(help), KeyKind::Choice, false,
          [acc, parse, name](RunConfig& c, const nlohmann::json& j) {
            if (!j.is_string()) throw ConfigError(name + ": expected a string, got " + j.dump());
            auto v = parse(j.get<std::string>());
            if (!v) throw ConfigError(name + ": unknown value '" + j.get<std::string>() + "'");
            acc(c) = *v;
          },
          [acc, to_name](const RunConfig& c) {
            return nlohmann::json(std::string(to_name(acc(const_cast<RunConfig&>(c)))));
          }};
}

template <class Access>
ConfigKey list_key(std::string name, std::string help, Access acc) {
  using V = std::remove_reference_t<decltype(acc(std::declval<RunConfig&>()))>;
  using T = typename V::value_type;
  return {name, std::move(help) + " (comma-separated on the command line)", KeyKind::IntegerList, false,
          [acc, name](RunConfig& c, const nlohmann::json& j) {
            if (!j.is_array()) throw ConfigError(name + ": expected a list of integers, got " + j.dump());
            V out;
            for (const auto& e : j) out.push_back(json_unsigned<T>(name, e));
            acc(c) = std::move(out);
          },
          [acc](const RunConfig& c) { return nlohmann::json(acc(const_cast<RunConfig&>(c))); }};
}

inline std::optional<std::string> parse_format_choice(std::string_view s) {
  if (s == "auto" || s == "text" || s == "binary") return std::string(s);
  return std::nullopt;
}

}  // namespace detail

#define IMMUNITY_FIELD(expr) [](RunConfig& c) -> auto& { return c.expr; }

inline const std::vector<ConfigKey>& config_keys() {
  using namespace detail;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto same = [](std::string_view s) -> std::string_view { return s; };

    k.push_back(unsigned_key("seed", "seed for every random draw", IMMUNITY_FIELD(seed), true));
    k.push_back(text_key("paths.trace", "packet trace file", IMMUNITY_FIELD(paths.trace), true));
    k.push_back(text_key("paths.truth", "ground-truth CSV", IMMUNITY_FIELD(paths.truth), true));
    k.push_back(text_key("paths.model", "classifier model file", IMMUNITY_FIELD(paths.model), true));
    k.push_back(text_key("paths.training", "labelled flow CSV for training", IMMUNITY_FIELD(paths.training), true));
    k.push_back(text_key("paths.metrics", "simulation metrics CSV", IMMUNITY_FIELD(paths.metrics), true));
    k.push_back(text_key("paths.manifest", "run manifest JSON", IMMUNITY_FIELD(paths.manifest), true));
    k.push_back(text_key("paths.sweep", "capacity sweep CSV (p,q,alpha,b_net_sw)", IMMUNITY_FIELD(paths.sweep), true));
    k.push_back(text_key("paths.out", "output file of capacity, filter-bench and convert", IMMUNITY_FIELD(paths.out), true));
    k.push_back(choice_key("paths.trace_format", "trace format: auto, text or binary", IMMUNITY_FIELD(paths.trace_format),
                           parse_format_choice, same));
    k.push_back(choice_key("paths.out_format", "convert output format: auto, text or binary",
                           IMMUNITY_FIELD(paths.out_format), parse_format_choice, same));

    k.push_back(real_key("gen.duration", "trace length in seconds", IMMUNITY_FIELD(gen.duration)));
    k.push_back(unsigned_key("gen.concurrent_benign", "benign flows alive at once", IMMUNITY_FIELD(gen.concurrent_benign)));
    k.push_back(real_key("gen.benign_mean_pkts", "mean packets per benign flow", IMMUNITY_FIELD(gen.benign_mean_pkts)));
    k.push_back(choice_key("gen.flow_length", "benign flow length law: geometric or fixed", IMMUNITY_FIELD(gen.flow_length),
                           parse_flow_length, flow_length_name));
    k.push_back(choice_key("gen.gap_model", "benign gap law: uniform or per_flow", IMMUNITY_FIELD(gen.gap_model),
                           parse_gap_model, gap_model_name));
    k.push_back(real_key("gen.gap_min", "smallest benign inter-packet gap, seconds", IMMUNITY_FIELD(gen.gap_min)));
    k.push_back(real_key("gen.gap_max", "largest benign inter-packet gap, seconds", IMMUNITY_FIELD(gen.gap_max)));
    k.push_back(unsigned_key("gen.benign_clients", "benign client addresses, 0 for eight per flow slot",
                             IMMUNITY_FIELD(gen.benign_clients)));
    k.push_back(unsigned_key("gen.benign_servers", "benign server addresses", IMMUNITY_FIELD(gen.benign_servers)));
    k.push_back(unsigned_key("gen.scanner_count", "concurrent scanning campaigns", IMMUNITY_FIELD(gen.scanner_count)));
    k.push_back(unsigned_key("gen.targets_per_scanner", "probes per campaign", IMMUNITY_FIELD(gen.targets_per_scanner)));
    k.push_back(real_key("gen.scan_rate", "probes per second per campaign", IMMUNITY_FIELD(gen.scan_rate)));
    k.push_back(real_key("gen.scan_rst_prob", "probability a probed host answers with RST", IMMUNITY_FIELD(gen.scan_rst_prob)));
    k.push_back(unsigned_key("gen.scanner_pool", "scanner addresses reused across campaigns, 0 for fresh hosts",
                             IMMUNITY_FIELD(gen.scanner_pool)));
    k.push_back(unsigned_key("gen.distsyn_victims", "distributed SYN flood victims", IMMUNITY_FIELD(gen.distsyn_victims)));
    k.push_back(unsigned_key("gen.slowloris_attackers", "slowloris attackers", IMMUNITY_FIELD(gen.slowloris_attackers)));
    k.push_back(unsigned_key("gen.ssh_brute_attackers", "SSH brute-force attackers", IMMUNITY_FIELD(gen.ssh_brute_attackers)));
    k.push_back(unsigned_key("gen.ftp_brute_attackers", "FTP brute-force attackers", IMMUNITY_FIELD(gen.ftp_brute_attackers)));
    k.push_back(unsigned_key("gen.heavy_flows", "long-lived heavy flows", IMMUNITY_FIELD(gen.heavy_flows)));
    k.push_back(real_key("gen.heavy_pps", "packets per second of each heavy flow", IMMUNITY_FIELD(gen.heavy_pps)));
    k.push_back(real_key("gen.attack_gap_min", "smallest attack handshake gap, seconds", IMMUNITY_FIELD(gen.attack_gap_min)));
    k.push_back(real_key("gen.attack_gap_max", "largest attack handshake gap, seconds", IMMUNITY_FIELD(gen.attack_gap_max)));
    k.push_back(unsigned_key("gen.scale_divisor", "divides flow and scanner populations", IMMUNITY_FIELD(gen.scale_divisor)));

    k.push_back(unsigned_key("sim.off.m", "OFF bucket count before scaling", IMMUNITY_FIELD(sim.off.m)));
    k.push_back(unsigned_key("sim.off.b", "OFF entries per bucket", IMMUNITY_FIELD(sim.off.b)));
    k.push_back(unsigned_key("sim.off.f", "OFF fingerprint bits", IMMUNITY_FIELD(sim.off.f)));
    k.push_back(unsigned_key("sim.off.groups", "OFF bucket groups", IMMUNITY_FIELD(sim.off.groups)));
    k.push_back(unsigned_key("sim.off.salt", "OFF hash salt", IMMUNITY_FIELD(sim.off.salt)));
    k.push_back(unsigned_key("sim.sketch.rows", "heavy-hitter sketch rows", IMMUNITY_FIELD(sim.sketch.rows)));
    k.push_back(unsigned_key("sim.sketch.cols", "heavy-hitter sketch columns, a power of two", IMMUNITY_FIELD(sim.sketch.cols)));
    k.push_back(unsigned_key("sim.sketch.threshold", "packets that make a flow heavy", IMMUNITY_FIELD(sim.sketch.threshold)));
    k.push_back(unsigned_key("sim.sketch.salt", "sketch hash salt", IMMUNITY_FIELD(sim.sketch.salt)));
    k.push_back(unsigned_key("sim.rules.scan_threshold", "failed attempts that make a scanner",
                             IMMUNITY_FIELD(sim.rules.scan_threshold)));
    k.push_back(seconds_key("sim.rules.scan_window", "scan counting window", IMMUNITY_FIELD(sim.rules.scan_window)));
    k.push_back(seconds_key("sim.rules.attempt_grace", "time a handshake may stay open before it fails",
                            IMMUNITY_FIELD(sim.rules.attempt_grace)));
    k.push_back(seconds_key("sim.rules.sweep_interval", "period of the rule sweep", IMMUNITY_FIELD(sim.rules.sweep_interval)));
    k.push_back(unsigned_key("sim.rules.distsyn_source_threshold", "distinct half-open sources per victim",
                             IMMUNITY_FIELD(sim.rules.distsyn_source_threshold)));
    k.push_back(seconds_key("sim.rules.distsyn_window", "distributed SYN window", IMMUNITY_FIELD(sim.rules.distsyn_window)));
    k.push_back(seconds_key("sim.rules.slowloris_min_open", "age before a connection counts as slow",
                            IMMUNITY_FIELD(sim.rules.slowloris_min_open)));
    k.push_back(unsigned_key("sim.rules.slowloris_max_rate", "payload bytes per minute still counted as slow",
                             IMMUNITY_FIELD(sim.rules.slowloris_max_rate)));
    k.push_back(seconds_key("sim.rules.slowloris_max_idle", "idle time after which a connection is no longer held",
                            IMMUNITY_FIELD(sim.rules.slowloris_max_idle)));
    k.push_back(unsigned_key("sim.rules.slowloris_threshold", "slow connections per source",
                             IMMUNITY_FIELD(sim.rules.slowloris_threshold)));
    k.push_back(list_key("sim.rules.slowloris_ports", "server ports watched for slowloris",
                         IMMUNITY_FIELD(sim.rules.slowloris_ports)));
    k.push_back(unsigned_key("sim.rules.brute_threshold", "short login sessions per source",
                             IMMUNITY_FIELD(sim.rules.brute_threshold)));
    k.push_back(seconds_key("sim.rules.brute_window", "brute-force window", IMMUNITY_FIELD(sim.rules.brute_window)));
    k.push_back(unsigned_key("sim.rules.brute_max_data_pkts", "data packets a login attempt may carry",
                             IMMUNITY_FIELD(sim.rules.brute_max_data_pkts)));
    k.push_back(unsigned_key("sim.rules.attempt_cap", "tracked attempts per source", IMMUNITY_FIELD(sim.rules.attempt_cap)));
    k.push_back(unsigned_key("sim.mst_capacity", "MST entries before scaling", IMMUNITY_FIELD(sim.mst_capacity)));
    k.push_back(unsigned_key("sim.cache_capacity", "NIC flow cache entries before scaling", IMMUNITY_FIELD(sim.cache_capacity)));
    k.push_back(seconds_key("sim.cache_idle_timeout", "flow cache idle eviction", IMMUNITY_FIELD(sim.cache_idle_timeout)));
    k.push_back(choice_key("sim.classifier", "flow classifier: model, perfect or none", IMMUNITY_FIELD(sim.classifier),
                           parse_classifier_mode, classifier_mode_name));
    k.push_back(choice_key("sim.fidelity", "NIC input: exact packets or wire log entries", IMMUNITY_FIELD(sim.fidelity),
                           parse_fidelity, fidelity_name));
    k.push_back(seconds_key("sim.off_update_delay", "OFF insert latency", IMMUNITY_FIELD(sim.off_update_delay)));
    k.push_back(seconds_key("sim.mst_update_delay", "MST insert latency", IMMUNITY_FIELD(sim.mst_update_delay)));
    k.push_back(seconds_key("sim.flow_log_delay", "switch to NIC transport latency", IMMUNITY_FIELD(sim.flow_log_delay)));
    k.push_back(seconds_key("sim.flow_log_max_wait", "longest a partly filled flow-log frame waits",
                            IMMUNITY_FIELD(sim.flow_log_max_wait)));
    k.push_back(seconds_key("sim.hh_flush_interval", "heavy-hitter log flush period", IMMUNITY_FIELD(sim.hh_flush_interval)));
    k.push_back(unsigned_key("sim.hh_log_capacity", "heavy-hitter log slots", IMMUNITY_FIELD(sim.hh_log_capacity)));
    k.push_back(bool_key("sim.gate_sketch", "count only OFF hits in the sketch", IMMUNITY_FIELD(sim.gate_sketch)));
    k.push_back(bool_key("sim.track_flow_counts", "keep exact per-flow counts for sketch error",
                         IMMUNITY_FIELD(sim.track_flow_counts)));
    k.push_back(unsigned_key("sim.scale_divisor", "divides OFF buckets, MST and cache capacity",
                             IMMUNITY_FIELD(sim.scale_divisor)));

    k.push_back(unsigned_key("bench.concurrent_flows", "flows alive at once", IMMUNITY_FIELD(bench.concurrent_flows)));
    k.push_back(real_key("bench.mean_pkts", "mean packets per flow", IMMUNITY_FIELD(bench.mean_pkts)));
    k.push_back(real_key("bench.probe_fraction", "share of single-packet unknown lookups", IMMUNITY_FIELD(bench.probe_fraction)));
    k.push_back(unsigned_key("bench.warmup_packets", "packets before counting starts", IMMUNITY_FIELD(bench.warmup_packets)));
    k.push_back(unsigned_key("bench.packets", "counted packets", IMMUNITY_FIELD(bench.packets)));
    k.push_back(list_key("bench.sizes", "filter memory sizes in bytes", IMMUNITY_FIELD(bench.sizes)));
    k.push_back(list_key("bench.swap_thresholds", "Aging Bloom inserts between swaps", IMMUNITY_FIELD(bench.swap_thresholds)));
    k.push_back(unsigned_key("bench.off_b", "OFF entries per bucket", IMMUNITY_FIELD(bench.off_b)));
    k.push_back(unsigned_key("bench.off_f", "OFF fingerprint bits", IMMUNITY_FIELD(bench.off_f)));
    k.push_back(unsigned_key("bench.off_groups", "OFF bucket groups", IMMUNITY_FIELD(bench.off_groups)));
    k.push_back(unsigned_key("bench.bloom_k", "Bloom hash functions", IMMUNITY_FIELD(bench.bloom_k)));

    k.push_back(real_key("capacity.b_net_sw", "traffic into the switch, Gbps", IMMUNITY_FIELD(capacity.b_net_sw)));
    k.push_back(real_key("capacity.lambda_asic", "switch packet rate, Mpps", IMMUNITY_FIELD(capacity.lambda_asic)));
    k.push_back(real_key("capacity.mu_snic", "NIC packet capacity, Mpps", IMMUNITY_FIELD(capacity.mu_snic)));
    k.push_back(real_key("capacity.mu_cpu", "control-plane MST updates per second", IMMUNITY_FIELD(capacity.mu_cpu)));
    k.push_back(real_key("capacity.b_sw_snic_link", "switch to NIC link, Gbps", IMMUNITY_FIELD(capacity.B_sw_snic)));
    k.push_back(real_key("capacity.h", "bytes forwarded per packet", IMMUNITY_FIELD(capacity.H)));
    k.push_back(real_key("capacity.s", "average packet size, bytes", IMMUNITY_FIELD(capacity.S)));
    k.push_back(real_key("capacity.alpha", "malicious packet fraction", IMMUNITY_FIELD(capacity.alpha)));
    k.push_back(real_key("capacity.p", "MST hit rate", IMMUNITY_FIELD(capacity.p)));
    k.push_back(real_key("capacity.q", "OFF hit rate", IMMUNITY_FIELD(capacity.q)));
    k.push_back(real_key("capacity.update_rate", "MST updates per second demanded", IMMUNITY_FIELD(capacity.update_rate)));
    k.push_back(unsigned_key("capacity.batch", "flow-log entries per frame", IMMUNITY_FIELD(capacity.batch)));

    k.push_back(unsigned_key("train.depth", "maximum tree depth", IMMUNITY_FIELD(train.depth)));
    k.push_back(unsigned_key("train.min_leaf", "smallest leaf", IMMUNITY_FIELD(train.min_leaf)));
    k.push_back(bool_key("train.fragments", "add a mid-flow sample per long flow", IMMUNITY_FIELD(train.fragments)));
    return k;
  }();
  return keys;
}

#undef IMMUNITY_FIELD

inline const ConfigKey& find_key(std::string_view name) {
  for (const auto& k : config_keys())
    if (k.name == name) return k;
  throw ConfigError("unknown config key '" + std::string(name) + "'");
}

// Command-line and environment text to the JSON value the key expects.
inline nlohmann::json parse_key_text(const ConfigKey& key, std::string_view text) {
  auto number = [&](std::string_view t) {
    try {
      auto j = nlohmann::json::parse(t);
      if (!j.is_number()) throw ConfigError(key.name + ": expected a number, got '" + std::string(t) + "'");
      return j;
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key.name + ": expected a number, got '" + std::string(t) + "'");
    }
  };
  switch (key.kind) {
    case KeyKind::Integer:
    case KeyKind::Real:
    case KeyKind::Seconds:
      return number(text);
    case KeyKind::Boolean:
      if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
      if (text == "false" || text == "0" || text == "no" || text == "off") return false;
      throw ConfigError(key.name + ": expected true or false, got '" + std::string(text) + "'");
    case KeyKind::Text:
    case KeyKind::Choice:
      return std::string(text);
    case KeyKind::IntegerList: {
      auto j = nlohmann::json::array();
      if (text.empty()) return j;
      for (auto part : detail::split_csv(text)) j.push_back(number(part));
      return j;
    }
  }
  return {};
}

inline void set_key(RunConfig& c, std::string_view name, const nlohmann::json& value) { find_key(name).set(c, value); }

inline void set_key_text(RunConfig& c, std::string_view name, std::string_view text) {
  const auto& k = find_key(name);
  k.set(c, parse_key_text(k, text));
}

namespace detail {

inline void apply_json(RunConfig& c, const nlohmann::json& j, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError("config: expected an object" + (prefix.empty() ? "" : " at '" + prefix + "'"));
  for (const auto& [name, value] : j.items()) {
    const std::string full = prefix.empty() ? name : prefix + "." + name;
    if (value.is_object())
      apply_json(c, value, full);
    else
      set_key(c, full, value);
  }
}

}  // namespace detail

// Keys may be nested objects or dotted names; unknown keys are rejected.
inline void apply_config_json(RunConfig& c, const nlohmann::json& j) { detail::apply_json(c, j, ""); }

inline void apply_config_text(RunConfig& c, const std::string& text, const std::string& origin = "config") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  apply_config_json(c, j);
}

inline void apply_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  apply_config_text(c, text, path);
}

using EnvLookup = std::function<const char*(const char*)>;

// Seed and path keys read IMMUNITY_<KEY> with dots as underscores, e.g. IMMUNITY_PATHS_TRACE.
inline void apply_env(RunConfig& c, const EnvLookup& getenv = [](const char* n) { return std::getenv(n); }) {
  for (const auto& k : config_keys()) {
    if (!k.env) continue;
    if (const char* v = getenv(k.env_name().c_str())) k.set(c, parse_key_text(k, v));
  }
}

inline nlohmann::json dump_config(const RunConfig& c) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& k : config_keys()) {
    nlohmann::json* node = &out;
    std::string_view rest = k.name;
    for (auto dot = rest.find('.'); dot != std::string_view::npos; dot = rest.find('.')) {
      node = &(*node)[std::string(rest.substr(0, dot))];
      rest = rest.substr(dot + 1);
    }
    (*node)[std::string(rest)] = k.get(c);
  }
  return out;
}

// Defaults, then the file, then the environment, then explicit overrides.
inline RunConfig resolve_config(const std::string& file, const std::vector<std::pair<std::string, std::string>>& overrides,
                                const EnvLookup& getenv = [](const char* n) { return std::getenv(n); }) {
  RunConfig c;
  if (!file.empty()) apply_config_file(c, file);
  apply_env(c, getenv);
  for (const auto& [k, v] : overrides) set_key_text(c, k, v);
  return c;
}

inline TraceFormat resolve_trace_format(const std::string& choice, const std::string& path) {
  if (choice == "text") return TraceFormat::Text;
  if (choice == "binary") return TraceFormat::Binary;
  for (std::string_view ext : {".csv", ".txt"})
    if (path.size() >= ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0) return TraceFormat::Text;
  return TraceFormat::Binary;
}

}  // namespace immunity
