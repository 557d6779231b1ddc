#pragma once

#include <algorithm>
#include <array>
#include <concepts>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "immunity/classifier.hpp"
#include "immunity/count_min.hpp"
#include "immunity/flow_cache.hpp"
#include "immunity/ids_rules.hpp"
#include "immunity/mst.hpp"
#include "immunity/off_filter.hpp"
#include "immunity/trace_io.hpp"
#include "immunity/traffic_gen.hpp"
#include "immunity/wire.hpp"

namespace immunity {

class UnlabeledStream : public std::runtime_error {
 public:
  explicit UnlabeledStream(std::uint64_t packet)
      : std::runtime_error("perfect classifier needs labels; packet " + std::to_string(packet) + " is unlabeled") {}
};

enum class ClassifierMode { Model, Perfect, None };
enum class Fidelity { Exact, Wire };

inline std::optional<ClassifierMode> parse_classifier_mode(std::string_view s) {
  if (s == "model") return ClassifierMode::Model;
  if (s == "perfect") return ClassifierMode::Perfect;
  if (s == "none") return ClassifierMode::None;
  return std::nullopt;
}
inline std::string_view classifier_mode_name(ClassifierMode m) {
  switch (m) {
    case ClassifierMode::Model: return "model";
    case ClassifierMode::Perfect: return "perfect";
    case ClassifierMode::None: return "none";
  }
  return "";
}
inline std::optional<Fidelity> parse_fidelity(std::string_view s) {
  if (s == "exact") return Fidelity::Exact;
  if (s == "wire") return Fidelity::Wire;
  return std::nullopt;
}
inline std::string_view fidelity_name(Fidelity f) { return f == Fidelity::Exact ? "exact" : "wire"; }

struct SimConfig {
  OffConfig off;
  SketchConfig sketch;
  RuleConfig rules;
  std::size_t mst_capacity = MstTable::kDefaultCapacity;
  std::size_t cache_capacity = FlowCache::kDefaultCapacity;
  Micros cache_idle_timeout = FlowCache::kDefaultIdleTimeout;
  ClassifierMode classifier = ClassifierMode::Model;
  Fidelity fidelity = Fidelity::Exact;
  Micros off_update_delay{5};
  Micros mst_update_delay{76};
  Micros flow_log_delay{0};      // switch to NIC transport
  Micros flow_log_max_wait{10};  // a partly filled frame leaves after this long
  Micros hh_flush_interval{10'000};
  std::size_t hh_log_capacity = 64;
  bool gate_sketch = true;         // count only OFF hits in the sketch
  bool track_flow_counts = false;  // exact per-flow counts for sketch error analysis
  std::uint32_t scale_divisor = 1;

  OffConfig effective_off() const { return off.scaled(scale_divisor); }
  std::size_t effective_mst_capacity() const { return std::max<std::size_t>(1, mst_capacity / scale_divisor); }
  std::size_t effective_cache_capacity() const { return std::max<std::size_t>(1, cache_capacity / scale_divisor); }

  void validate() const {
    if (scale_divisor == 0) throw ConfigError("scale_divisor must be >= 1");
    try {
      effective_off().validate();
      sketch.validate();
      rules.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (mst_capacity == 0) throw ConfigError("mst_capacity must be >= 1");
    if (cache_capacity == 0) throw ConfigError("cache_capacity must be >= 1");
    for (auto d : {off_update_delay, mst_update_delay, flow_log_delay, flow_log_max_wait})
      if (d < Micros{0}) throw ConfigError("delays must be >= 0");
    if (hh_flush_interval <= Micros{0}) throw ConfigError("hh_flush_interval must be > 0");
    if (cache_idle_timeout <= Micros{0}) throw ConfigError("cache_idle_timeout must be > 0");
  }
};

enum class Disposition : std::uint8_t { Scrubbed, FastForwarded, SentToNic };

inline constexpr std::size_t kLabelCount = static_cast<std::size_t>(Label::Unlabeled) + 1;

struct SimMetrics {
  // Per-label packet dispositions, indexed [label][disposition].
  std::array<std::array<std::uint64_t, 3>, kLabelCount> by_label{};
  std::uint64_t total = 0;
  std::uint64_t mst_hit = 0;
  std::uint64_t off_hit = 0;
  std::uint64_t to_nic = 0;

  std::uint64_t frames = 0;
  std::uint64_t frame_drops = 0;
  std::uint64_t nic_packets = 0;
  std::uint64_t stragglers = 0;  // missed the OFF while their flow's insert was in flight
  std::uint64_t flows_created = 0;
  std::uint64_t classified_benign = 0;
  std::uint64_t classified_benign_wrong = 0;  // attack-labeled flows let into the OFF
  std::uint64_t off_inserts = 0;
  std::uint64_t off_evictions = 0;
  std::uint64_t mst_inserts = 0;
  std::uint64_t mst_overflows = 0;
  std::uint64_t hh_logged = 0;
  std::uint64_t hh_drops = 0;
  std::uint64_t hh_frames = 0;
  std::uint64_t sweeps = 0;

  std::vector<Verdict> verdicts;
  std::vector<std::pair<FlowKey, std::uint32_t>> heavy_detected;  // first report per flow
  std::vector<FlowKey> heavy_true;
  std::vector<std::uint64_t> flow_abs_error;  // |estimate - true| per flow, sorted

  // Per-source detection against ground truth.
  std::uint64_t attackers = 0, attackers_found = 0, benign_ips = 0, benign_flagged = 0;
  bool has_truth = false;

  ClassifierMode mode = ClassifierMode::Model;
  Fidelity fidelity = Fidelity::Exact;

  std::uint64_t count(Label l, Disposition d) const {
    return by_label[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)];
  }
  std::uint64_t label_total(Label l) const {
    const auto& r = by_label[static_cast<std::size_t>(l)];
    return r[0] + r[1] + r[2];
  }
  std::uint64_t malicious_total() const {
    std::uint64_t n = 0;
    for (std::size_t l = 0; l < kLabelCount; ++l)
      if (is_attack_label(static_cast<Label>(l))) n += label_total(static_cast<Label>(l));
    return n;
  }
  std::uint64_t malicious(Disposition d) const {
    std::uint64_t n = 0;
    for (std::size_t l = 0; l < kLabelCount; ++l)
      if (is_attack_label(static_cast<Label>(l))) n += count(static_cast<Label>(l), d);
    return n;
  }

  static double ratio(std::uint64_t a, std::uint64_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0; }

  // MST hit rate over malicious packets, OFF hit rate over benign packets.
  double p() const { return ratio(malicious(Disposition::Scrubbed), malicious_total()); }
  double q() const { return ratio(count(Label::Benign, Disposition::FastForwarded), label_total(Label::Benign)); }
  double r() const { return ratio(to_nic, total); }
  double alpha() const { return ratio(malicious_total(), malicious_total() + label_total(Label::Benign)); }
  double to_nic_fraction() const { return r(); }

  double sketch_precision() const {
    if (heavy_detected.empty()) return 0;
    std::unordered_set<FlowKey, FlowKeyHash> truth(heavy_true.begin(), heavy_true.end());
    std::size_t ok = 0;
    for (const auto& [k, est] : heavy_detected) ok += truth.contains(k);
    return ratio(ok, heavy_detected.size());
  }

  double attacker_recall() const { return attackers ? ratio(attackers_found, attackers) : 1; }
  double benign_false_flag() const { return ratio(benign_flagged, benign_ips); }

  bool partition_holds() const {
    std::uint64_t s = 0;
    for (const auto& row : by_label) s += row[0] + row[1] + row[2];
    return mst_hit + off_hit + to_nic == total && s == total;
  }
};

inline constexpr std::string_view kMetricsHeader = "label,packets,mst_hit,off_hit,to_nic,mst_pct,off_pct,nic_pct";

inline void write_metrics_csv(std::ostream& out, const SimMetrics& m) {
  out << kMetricsHeader << '\n';
  auto row = [&](std::string_view name, std::uint64_t n, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    out << name << ',' << n << ',' << a << ',' << b << ',' << c << ',' << detail::format_double(100 * SimMetrics::ratio(a, n))
        << ',' << detail::format_double(100 * SimMetrics::ratio(b, n)) << ',' << detail::format_double(100 * SimMetrics::ratio(c, n))
        << '\n';
  };
  for (std::size_t l = 0; l < kLabelCount; ++l) {
    const auto& r = m.by_label[l];
    if (r[0] + r[1] + r[2] == 0) continue;
    row(label_name(static_cast<Label>(l)), r[0] + r[1] + r[2], r[0], r[1], r[2]);
  }
  row("total", m.total, m.mst_hit, m.off_hit, m.to_nic);
  out << "\nmetric,value\n";
  auto kv = [&](std::string_view k, auto v) { out << k << ',' << v << '\n'; };
  kv("mode", classifier_mode_name(m.mode));
  kv("fidelity", fidelity_name(m.fidelity));
  kv("p", detail::format_double(m.p()));
  kv("q", detail::format_double(m.q()));
  kv("r", detail::format_double(m.r()));
  kv("alpha", detail::format_double(m.alpha()));
  kv("frames", m.frames);
  kv("frame_drops", m.frame_drops);
  kv("stragglers", m.stragglers);
  kv("flows_created", m.flows_created);
  kv("classified_benign", m.classified_benign);
  kv("classified_benign_wrong", m.classified_benign_wrong);
  kv("off_inserts", m.off_inserts);
  kv("off_evictions", m.off_evictions);
  kv("mst_inserts", m.mst_inserts);
  kv("mst_overflows", m.mst_overflows);
  kv("verdicts", m.verdicts.size());
  kv("hh_logged", m.hh_logged);
  kv("hh_drops", m.hh_drops);
  kv("hh_frames", m.hh_frames);
  kv("heavy_detected", m.heavy_detected.size());
  kv("heavy_true", m.heavy_true.size());
  kv("sketch_precision", detail::format_double(m.sketch_precision()));
  if (m.has_truth) {
    kv("attackers", m.attackers);
    kv("attackers_found", m.attackers_found);
    kv("attackers_missed", m.attackers - m.attackers_found);
    kv("benign_ips", m.benign_ips);
    kv("benign_flagged", m.benign_flagged);
  }
  out << "\nheavy_flow,estimate\n";
  for (const auto& [k, est] : m.heavy_detected) out << k.str() << ',' << est << '\n';
}

inline void print_summary(std::ostream& out, const SimMetrics& m) {
  auto pct = [](std::uint64_t a, std::uint64_t n) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100 * SimMetrics::ratio(a, n) << '%';
    return s.str();
  };
  out << std::left << std::setw(12) << "Label" << std::setw(14) << "Packets" << std::setw(12) << "Hit on MST"
      << std::setw(12) << "Hit on OFF" << "To NIC\n";
  auto line = [&](std::string_view name, std::uint64_t n, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    out << std::left << std::setw(12) << name << std::setw(14) << n << std::setw(12) << pct(a, n) << std::setw(12)
        << pct(b, n) << pct(c, n) << '\n';
  };
  for (std::size_t l = 0; l < kLabelCount; ++l) {
    const auto& r = m.by_label[l];
    if (r[0] + r[1] + r[2]) line(label_name(static_cast<Label>(l)), r[0] + r[1] + r[2], r[0], r[1], r[2]);
  }
  line("total", m.total, m.mst_hit, m.off_hit, m.to_nic);
  out << "p=" << detail::format_double(m.p()) << " q=" << detail::format_double(m.q()) << " r=" << detail::format_double(m.r())
      << " alpha=" << detail::format_double(m.alpha()) << " verdicts=" << m.verdicts.size()
      << " mode=" << classifier_mode_name(m.mode) << '\n';
  if (m.has_truth)
    out << "attackers found " << m.attackers_found << "/" << m.attackers << ", benign flagged " << m.benign_flagged
        << "/" << m.benign_ips << '\n';
}

class Simulator {
 public:
  explicit Simulator(SimConfig cfg, std::optional<TreeModel> model = std::nullopt)
      : cfg_((cfg.validate(), std::move(cfg))),
        model_(std::move(model)),
        off_(cfg_.effective_off()),
        mst_(cfg_.effective_mst_capacity()),
        sketch_(cfg_.sketch),
        hh_(cfg_.sketch.threshold, cfg_.hh_log_capacity),
        cache_(cfg_.effective_cache_capacity(), cfg_.cache_idle_timeout),
        ids_(cfg_.rules) {
    if (cfg_.classifier == ClassifierMode::Model && !model_) throw ConfigError("model mode needs a model");
    m_.mode = cfg_.classifier;
    m_.fidelity = cfg_.fidelity;
    next_sweep_ = cfg_.rules.sweep_interval;
    next_flush_ = cfg_.hh_flush_interval;
  }

  const SimConfig& config() const { return cfg_; }
  const OffFilter& off() const { return off_; }
  const MstTable& mst() const { return mst_; }
  const IdsEngine& ids() const { return ids_; }
  const SimMetrics& metrics() const { return m_; }

  // Blocklist entries present before the first packet.
  MstInsertResult preload(const MstEntry& e) { return mst_.insert(e); }

  Disposition step(const PacketRecord& r) {
    if (started_ && r.ts < now_) throw FormatError(m_.total + 1, "timestamps must be non-decreasing");
    advance(r.ts);
    started_ = true;
    now_ = r.ts;
    ++m_.total;
    if (cfg_.classifier == ClassifierMode::Perfect && r.label == Label::Unlabeled) throw UnlabeledStream(m_.total);
    const FlowKey ck = canonical_key(r.key);
    if (cfg_.track_flow_counts) ++true_counts_[ck];

    Disposition d;
    if (mst_.redirects(r.key)) {
      d = Disposition::Scrubbed;
      ++m_.mst_hit;
    } else {
      const bool hit = off_.lookup(off_hash_and_fingerprint(ck, off_.config()));
      if (hit || !cfg_.gate_sketch) count_heavy(ck);
      if (hit) {
        d = Disposition::FastForwarded;
        ++m_.off_hit;
      } else {
        d = Disposition::SentToNic;
        ++m_.to_nic;
        if (inflight_.contains(ck)) ++m_.stragglers;
        enqueue_log(r);
      }
    }
    ++m_.by_label[static_cast<std::size_t>(r.label)][static_cast<std::size_t>(d)];
    return d;
  }

  // Drains timers and in-flight work, runs the closing sweep and settles derived metrics.
  const SimMetrics& finish(const GroundTruth* truth = nullptr) {
    if (finished_) return m_;
    finished_ = true;
    if (!pending_log_.empty()) emit_frame(now_);
    advance(now_);
    if (started_) {
      sweep(now_);
      flush_hh();
    }
    while (!events_.empty()) {
      auto ev = events_.top();
      events_.pop();
      apply(ev);
    }
    m_.verdicts = ids_.verdicts();
    if (cfg_.track_flow_counts) settle_flow_counts();
    if (truth) score(*truth);
    return m_;
  }

 private:
  enum class EventKind : std::uint8_t { OffInsert, MstInsert, LogFlush, Frame };

  struct Event {
    Micros at;
    std::uint64_t seq;
    EventKind kind;
    FlowKey key;
    Verdict verdict;
    std::uint64_t generation = 0;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const { return a.at != b.at ? a.at > b.at : a.seq > b.seq; }
  };

  void schedule(Event e) {
    e.seq = seq_++;
    events_.push(std::move(e));
  }

  // Fires everything due at or before t, interleaving queued events with the sweep and
  // flush grids in time order; grid timers go first on ties.
  void advance(Micros t) {
    while (true) {
      Micros next = Micros::max();
      if (!events_.empty()) next = events_.top().at;
      const Micros grid = std::min(next_sweep_, next_flush_);
      if (std::min(next, grid) > t) return;
      if (grid <= next) {
        // Grid points with nothing to expire or flush are skipped in one step, so long
        // quiet gaps in a trace cost nothing.
        const Micros until = std::min(t, next);
        if (next_sweep_ <= next_flush_) {
          if (ids_.source_count() == 0 && ids_.victim_count() == 0 && ids_.pending_attempts() == 0 && cache_.size() == 0) {
            const auto k = (until - next_sweep_) / cfg_.rules.sweep_interval + 1;
            m_.sweeps += static_cast<std::uint64_t>(k);
            next_sweep_ += k * cfg_.rules.sweep_interval;
            continue;
          }
          sweep(next_sweep_);
          next_sweep_ += cfg_.rules.sweep_interval;
        } else {
          if (hh_.pending() == 0) {
            next_flush_ += ((until - next_flush_) / cfg_.hh_flush_interval + 1) * cfg_.hh_flush_interval;
            continue;
          }
          flush_hh();
          next_flush_ += cfg_.hh_flush_interval;
        }
        continue;
      }
      auto ev = events_.top();
      events_.pop();
      apply(ev);
    }
  }

  void apply(const Event& ev) {
    switch (ev.kind) {
      case EventKind::OffInsert: {
        const auto rep = off_.insert(off_hash_and_fingerprint(ev.key, off_.config()));
        ++m_.off_inserts;
        if (rep.evicted) ++m_.off_evictions;
        if (auto it = inflight_.find(ev.key); it != inflight_.end() && --it->second == 0) inflight_.erase(it);
        break;
      }
      case EventKind::MstInsert: {
        const auto res = mst_.insert(to_mst_entry(ev.verdict, ev.at));
        if (res == MstInsertResult::Inserted) ++m_.mst_inserts;
        if (res == MstInsertResult::CapacityExceeded) ++m_.mst_overflows;
        break;
      }
      case EventKind::LogFlush:
        if (ev.generation == log_generation_ && !pending_log_.empty()) emit_frame(ev.at);
        break;
      case EventKind::Frame: nic_frame(ev.at, ev.generation); break;
    }
  }

  void enqueue_log(const PacketRecord& r) {
    pending_log_.push_back(r);
    if (pending_log_.size() == 1) schedule({r.ts + cfg_.flow_log_max_wait, 0, EventKind::LogFlush, {}, {}, log_generation_});
    if (pending_log_.size() == wire::kMaxEntries) emit_frame(r.ts);
  }

  // Encodes the pending entries into one frame and hands it to the NIC after the transport delay.
  void emit_frame(Micros at) {
    std::vector<wire::FlowLogEntry> entries;
    for (const auto& r : pending_log_) entries.push_back(wire::FlowLogEntry::make(r.key, r.flags, r.payload_len));
    const auto frame = wire::encode_flow_log(entries);
    ++m_.frames;
    const auto id = next_frame_++;
    in_flight_frames_.emplace(id, InFlight{frame, std::move(pending_log_)});
    pending_log_.clear();
    ++log_generation_;
    if (cfg_.flow_log_delay == Micros{0})
      nic_frame(at, id);
    else
      schedule({at + cfg_.flow_log_delay, 0, EventKind::Frame, {}, {}, id});
  }

  void nic_frame(Micros now, std::uint64_t id) {
    auto node = in_flight_frames_.extract(id);
    auto& f = node.mapped();
    std::vector<wire::FlowLogEntry> decoded;
    try {
      auto msg = wire::decode_frame(f.frame);
      decoded = std::get<wire::FlowLogMsg>(msg).entries;
    } catch (const wire::WireException&) {
      ++m_.frame_drops;
      return;
    }
    for (std::size_t i = 0; i < decoded.size(); ++i) nic_packet(now, decoded[i], f.records[i]);
  }

  void nic_packet(Micros now, const wire::FlowLogEntry& e, const PacketRecord& r) {
    ++m_.nic_packets;
    PacketView v = PacketView::from(r);
    if (cfg_.fidelity == Fidelity::Wire) {
      v.key = e.key;
      v.flags = e.flags();
      v.payload_len = wire::bucket_floor(e.bucket());
      v.wire_len = static_cast<std::uint16_t>(52 + v.payload_len);
      v.ts = now;
    }
    const FlowKey ck = canonical_key(v.key);
    auto u = cache_.update(v);
    if (u.event == FlowEvent::Created) ++m_.flows_created;
    FlowEntry& entry = u.entry;
    for (const auto& verdict : ids_.observe(v, entry)) report(verdict, now);

    if (entry.status != FlowStatus::Unknown || entry.packets() < 3) return;
    if (!is_benign(entry, r)) return;
    ++m_.classified_benign;
    if (is_attack_label(r.label)) ++m_.classified_benign_wrong;
    ++inflight_[ck];
    schedule({now + cfg_.off_update_delay, 0, EventKind::OffInsert, ck, {}, 0});
    cache_.retire(ck);
  }

  bool is_benign(const FlowEntry& entry, const PacketRecord& r) const {
    switch (cfg_.classifier) {
      case ClassifierMode::Perfect: return r.label == Label::Benign;
      case ClassifierMode::None: return false;
      case ClassifierMode::Model: return model_->classify(extract_features(entry)) == FlowClass::Benign;
    }
    return false;
  }

  void report(const Verdict& v, Micros now) { schedule({now + cfg_.mst_update_delay, 0, EventKind::MstInsert, {}, v, 0}); }

  void sweep(Micros at) {
    ++m_.sweeps;
    for (const auto& v : ids_.sweep(at)) report(v, at);
    cache_.expire_idle(at);
  }

  void count_heavy(const FlowKey& ck) {
    const auto est = sketch_.update(ck);
    switch (hh_.check_and_log(ck, est)) {
      case HhResult::Logged:
        ++m_.hh_logged;
        if (heavy_seen_.insert(ck).second) m_.heavy_detected.emplace_back(ck, est);
        break;
      case HhResult::Dropped: ++m_.hh_drops; break;
      default: break;
    }
  }

  void flush_hh() {
    auto recs = hh_.flush();
    for (std::size_t i = 0; i < recs.size(); i += wire::kMaxEntries) {
      std::vector<wire::HhLogEntry> batch;
      for (std::size_t j = i; j < std::min(recs.size(), i + wire::kMaxEntries); ++j)
        batch.push_back({recs[j].key, wire::log2_estimate(recs[j].estimate)});
      wire::encode_hh_log(batch);
      ++m_.hh_frames;
    }
  }

  void settle_flow_counts() {
    for (const auto& [k, n] : true_counts_) {
      if (n >= cfg_.sketch.threshold) m_.heavy_true.push_back(k);
      const std::uint64_t est = sketch_.estimate(k);
      m_.flow_abs_error.push_back(est > n ? est - n : n - est);
    }
    std::sort(m_.heavy_true.begin(), m_.heavy_true.end(),
              [](const FlowKey& a, const FlowKey& b) { return a.str() < b.str(); });
    std::sort(m_.flow_abs_error.begin(), m_.flow_abs_error.end());
  }

  void score(const GroundTruth& truth) {
    m_.has_truth = true;
    std::unordered_set<Ipv4> flagged;
    for (const auto& v : m_.verdicts) flagged.insert(v.ip);
    std::set<Ipv4> attackers;
    for (const auto& [ip, reason] : truth.expected) attackers.insert(ip);
    m_.attackers = attackers.size();
    for (auto ip : attackers) m_.attackers_found += flagged.contains(ip);
    for (const auto& [ip, role] : truth.roles) {
      if (is_attacker(role) || attackers.contains(ip)) continue;
      ++m_.benign_ips;
      m_.benign_flagged += flagged.contains(ip);
    }
  }

  struct InFlight {
    wire::Frame frame;
    std::vector<PacketRecord> records;
  };

  SimConfig cfg_;
  std::optional<TreeModel> model_;
  OffFilter off_;
  MstTable mst_;
  CountMinSketch sketch_;
  HeavyHitterLog hh_;
  FlowCache cache_;
  IdsEngine ids_;
  SimMetrics m_;

  std::priority_queue<Event, std::vector<Event>, Later> events_;
  std::uint64_t seq_ = 0;
  Micros now_{0};
  Micros next_sweep_{0};
  Micros next_flush_{0};
  bool started_ = false;
  bool finished_ = false;

  std::vector<PacketRecord> pending_log_;
  std::uint64_t log_generation_ = 0;
  std::uint64_t next_frame_ = 0;
  std::unordered_map<std::uint64_t, InFlight> in_flight_frames_;
  std::unordered_map<FlowKey, std::uint32_t, FlowKeyHash> inflight_;  // pending OFF inserts per flow
  std::unordered_set<FlowKey, FlowKeyHash> heavy_seen_;
  std::unordered_map<FlowKey, std::uint64_t, FlowKeyHash> true_counts_;
};

template <class Next>
  requires std::invocable<Next&>
SimMetrics run_simulation(const SimConfig& cfg, Next&& next, std::optional<TreeModel> model = std::nullopt,
                          const GroundTruth* truth = nullptr) {
  Simulator sim(cfg, std::move(model));
  while (auto r = next()) sim.step(*r);
  return sim.finish(truth);
}

inline SimMetrics run_simulation(const SimConfig& cfg, PacketSource& src, std::optional<TreeModel> model = std::nullopt,
                                 const GroundTruth* truth = nullptr) {
  return run_simulation(cfg, [&] { return src.next(); }, std::move(model), truth);
}

inline SimMetrics run_simulation(const SimConfig& cfg, const std::vector<PacketRecord>& pkts,
                                 std::optional<TreeModel> model = std::nullopt, const GroundTruth* truth = nullptr) {
  std::size_t i = 0;
  return run_simulation(
      cfg, [&]() -> std::optional<PacketRecord> { return i < pkts.size() ? std::optional(pkts[i++]) : std::nullopt; },
      std::move(model), truth);
}

}  // namespace immunity
