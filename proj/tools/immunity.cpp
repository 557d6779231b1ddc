#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "immunity/capacity.hpp"
#include "immunity/classifier.hpp"
#include "immunity/config.hpp"
#include "immunity/filter_bench.hpp"
#include "immunity/simulator.hpp"
#include "immunity/trace_io.hpp"
#include "immunity/traffic_gen.hpp"

namespace fs = std::filesystem;
using namespace immunity;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string require_path(const std::string& value, const std::string& key) {
  if (value.empty()) throw ConfigError(key + " is required for this command");
  return value;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

// Rename over the target so readers never see a partial file.
void write_atomically(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << text;
    out.close();
    if (!out) throw IoError("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

// CSV to the named file, or to stdout when none is configured.
template <class Fn>
void emit(const std::string& path, Fn&& fn) {
  if (path.empty()) {
    fn(std::cout);
    return;
  }
  std::ostringstream out;
  fn(out);
  write_atomically(path, out.str());
}

class Run {
 public:
  Run(std::string command, RunConfig cfg) : command_(std::move(command)), cfg_(std::move(cfg)), started_(utc_now()) {}

  const RunConfig& cfg() const { return cfg_; }
  void output(const std::string& path) {
    if (!path.empty()) outputs_.push_back(path);
  }

  void finish() const {
    if (cfg_.paths.manifest.empty()) return;
    nlohmann::json m;
    m["command"] = command_;
    m["seed"] = cfg_.seed;
    m["config"] = dump_config(cfg_);
    m["versions"] = {{"immunity", std::string(kVersion)},
                     {"binary_trace_record_bytes", kBinaryRecordBytes},
                     {"off_snapshot", kOffSnapshotVersion}};
    m["started_at"] = started_;
    m["finished_at"] = utc_now();
    m["outputs"] = outputs_;
    write_atomically(cfg_.paths.manifest, m.dump(2) + "\n");
  }

 private:
  std::string command_;
  RunConfig cfg_;
  std::string started_;
  std::vector<std::string> outputs_;
};

int cmd_generate(Run& run) {
  const auto& c = run.cfg();
  const auto gen = c.gen_config();
  gen.validate(c.sim.rules);
  const auto path = require_path(c.paths.trace, "paths.trace");
  TrafficGenerator g(gen, c.sim.rules);
  TraceWriter w(path, resolve_trace_format(c.paths.trace_format, path));
  std::uint64_t n = 0;
  while (auto r = g.next()) {
    w.write(*r);
    ++n;
  }
  w.close();
  run.output(path);
  const auto& truth = g.truth();
  if (!c.paths.truth.empty()) {
    emit(c.paths.truth, [&](std::ostream& o) { truth.write_csv(o); });
    run.output(c.paths.truth);
  }
  std::cout << "packets " << n << "\nhosts " << truth.roles.size() << "\nexpected_verdicts " << truth.expected.size()
            << "\n";
  return kExitOk;
}

int cmd_simulate(Run& run) {
  const auto& c = run.cfg();
  c.sim.validate();
  std::optional<TreeModel> model;
  if (c.sim.classifier == ClassifierMode::Model) {
    const auto path = require_path(c.paths.model, "paths.model");
    require_file(path, "model file");
    try {
      model = TreeModel::load(path);
    } catch (const ModelInvalid& e) {
      throw ConfigError("model file " + path + ": " + e.what());
    } catch (const FormatError& e) {
      throw ConfigError("model file " + path + ": " + e.what());
    }
  }

  SimMetrics m;
  if (!c.paths.trace.empty()) {
    require_file(c.paths.trace, "trace file");
    std::optional<GroundTruth> truth;
    if (!c.paths.truth.empty()) {
      require_file(c.paths.truth, "truth file");
      std::ifstream in(c.paths.truth);
      truth = GroundTruth::read_csv(in);
    }
    auto stream = parse_stream(c.paths.trace, resolve_trace_format(c.paths.trace_format, c.paths.trace));
    m = run_simulation(c.sim, [&] { return stream.next(); }, std::move(model), truth ? &*truth : nullptr);
  } else {
    const auto gen = c.gen_config();
    gen.validate(c.sim.rules);
    TrafficGenerator g(gen, c.sim.rules);
    Simulator sim(c.sim, std::move(model));
    while (auto r = g.next()) sim.step(*r);
    m = sim.finish(&g.truth());
  }
  if (!c.paths.metrics.empty()) {
    emit(c.paths.metrics, [&](std::ostream& o) { write_metrics_csv(o, m); });
    run.output(c.paths.metrics);
  }
  print_summary(std::cout, m);
  return kExitOk;
}

int cmd_capacity(Run& run) {
  const auto& c = run.cfg();
  if (!c.paths.sweep.empty()) {
    require_file(c.paths.sweep, "sweep file");
    std::ifstream in(c.paths.sweep);
    std::vector<SweepPoint> points;
    try {
      points = parse_sweep(in);
    } catch (const FormatError& e) {
      throw ConfigError("sweep file " + c.paths.sweep + ": " + e.what());
    }
    const auto rows = run_sweep(c.capacity, points);
    emit(c.paths.out, [&](std::ostream& o) {
      o << kCapacityHeader << '\n';
      for (std::size_t i = 0; i < rows.size(); ++i)
        o << capacity_row("point" + std::to_string(i), rows[i].first, rows[i].second) << '\n';
    });
    run.output(c.paths.out);
    return kExitOk;
  }
  const auto report = feasibility_report(c.capacity);
  print_report(std::cout, c.capacity, report);
  if (!c.paths.out.empty()) {
    emit(c.paths.out, [&](std::ostream& o) { o << kCapacityHeader << '\n' << capacity_row("report", c.capacity, report) << '\n'; });
    run.output(c.paths.out);
  }
  return kExitOk;
}

int cmd_train(Run& run) {
  const auto& c = run.cfg();
  const auto out = require_path(c.paths.model, "paths.model");
  if (c.train.depth == 0) throw ConfigError("train.depth must be >= 1");
  if (c.train.min_leaf == 0) throw ConfigError("train.min_leaf must be >= 1");
  std::vector<LabeledVector> data;
  if (!c.paths.training.empty()) {
    require_file(c.paths.training, "training file");
    try {
      data = load_training_csv(c.paths.training);
    } catch (const FormatError& e) {
      throw ConfigError("training file " + c.paths.training + ": " + e.what());
    }
  } else {
    const auto gen = c.gen_config();
    gen.validate(c.sim.rules);
    for (const auto& r : training_rows(generate(gen, c.sim.rules).packets, c.train.fragments))
      data.push_back({extract_features(r.entry), r.label == Label::Benign});
  }
  TreeModel model;
  try {
    model = train_reference(data, {c.train.depth, c.train.min_leaf});
  } catch (const EmptyDataset& e) {
    throw ConfigError(std::string("training data: ") + e.what());
  }
  model.save(out);
  run.output(out);
  std::size_t benign = 0, hit = 0;
  for (const auto& v : data) {
    if (!v.benign) continue;
    ++benign;
    hit += model.classify(v.x) == FlowClass::Benign;
  }
  std::cout << "samples " << data.size() << "\nnodes " << model.nodes().size() << "\ndepth " << model.depth() << "\ntraining_benign_recall "
            << (benign ? static_cast<double>(hit) / static_cast<double>(benign) : 0) << "\n";
  return kExitOk;
}

int cmd_filter_bench(Run& run) {
  const auto& c = run.cfg();
  const auto rows = run_filter_bench(c.bench_config());
  emit(c.paths.out, [&](std::ostream& o) { write_filter_bench_csv(o, rows); });
  run.output(c.paths.out);
  return kExitOk;
}

int cmd_convert(Run& run) {
  const auto& c = run.cfg();
  const auto in = require_path(c.paths.trace, "paths.trace");
  const auto out = require_path(c.paths.out, "paths.out");
  require_file(in, "trace file");
  auto stream = parse_stream(in, resolve_trace_format(c.paths.trace_format, in));
  TraceWriter w(out, resolve_trace_format(c.paths.out_format, out));
  std::uint64_t n = 0;
  while (auto r = stream.next()) {
    w.write(*r);
    ++n;
  }
  w.close();
  run.output(out);
  std::cout << "records " << n << "\n";
  return kExitOk;
}

std::string section(const std::string& key) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) return "General";
  static const std::map<std::string, std::string> names = {{"paths", "Paths"},       {"gen", "Traffic generator"},
                                                           {"sim", "Simulator"},     {"bench", "Filter bench"},
                                                           {"capacity", "Capacity"}, {"train", "Training"}};
  return names.at(key.substr(0, dot)) + " keys";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-network defense pipeline: traffic generation, simulation, capacity analysis and filter comparison."};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer(
      "Every key may be set in the --config JSON file, nested or dotted.\n"
      "Precedence: defaults < config file < IMMUNITY_<KEY> environment (seed and paths) < flags.\n"
      "Exit codes: 0 success, 2 configuration error, 3 runtime error.");

  std::string config_path;
  app.add_option("-c,--config", config_path, "JSON config file");
  std::vector<std::pair<const ConfigKey*, CLI::Option*>> key_options;
  std::map<std::string, std::string> values;
  for (const auto& k : config_keys()) {
    std::string help = k.help;
    if (k.env) help += " [env " + k.env_name() + "]";
    auto* opt = app.add_option("--" + k.name, values[k.name], help)->group(section(k.name));
    key_options.emplace_back(&k, opt);
  }

  std::map<std::string, std::string> blurbs = {
      {"generate", "write a synthetic trace and its ground truth"},
      {"simulate", "run the switch and NIC pipeline over a trace or generated traffic"},
      {"capacity", "evaluate the load model, or a sweep file"},
      {"train", "train the benign-flow classifier"},
      {"filter-bench", "compare OFF against Aging Bloom filters"},
      {"convert", "convert a trace between text and binary"}};
  for (const auto& [name, blurb] : blurbs) app.add_subcommand(name, blurb);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& [k, opt] : key_options)
      if (opt->count() > 0) overrides.emplace_back(k->name, values[k->name]);
    Run run(command, resolve_config(config_path, overrides));
    int rc = kExitOk;
    if (command == "generate") rc = cmd_generate(run);
    if (command == "simulate") rc = cmd_simulate(run);
    if (command == "capacity") rc = cmd_capacity(run);
    if (command == "train") rc = cmd_train(run);
    if (command == "filter-bench") rc = cmd_filter_bench(run);
    if (command == "convert") rc = cmd_convert(run);
    run.finish();
    return rc;
  } catch (const ConfigError& e) {
    std::cerr << "immunity: configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DomainError& e) {
    std::cerr << "immunity: configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "immunity: error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
