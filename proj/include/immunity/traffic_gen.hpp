#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "immunity/flow_cache.hpp"
#include "immunity/ids_rules.hpp"
#include "immunity/packet.hpp"
#include "immunity/trace_io.hpp"

namespace immunity {

enum class FlowLength { Geometric, Fixed };
enum class GapModel { Uniform, PerFlow };

inline std::optional<FlowLength> parse_flow_length(std::string_view s) {
  if (s == "geometric") return FlowLength::Geometric;
  if (s == "fixed") return FlowLength::Fixed;
  return std::nullopt;
}
inline std::optional<GapModel> parse_gap_model(std::string_view s) {
  if (s == "uniform") return GapModel::Uniform;
  if (s == "per_flow") return GapModel::PerFlow;
  return std::nullopt;
}
inline std::string_view flow_length_name(FlowLength f) { return f == FlowLength::Geometric ? "geometric" : "fixed"; }
inline std::string_view gap_model_name(GapModel g) { return g == GapModel::Uniform ? "uniform" : "per_flow"; }

struct GenConfig {
  std::uint64_t seed = 1;
  double duration = 10;  // seconds
  std::uint64_t concurrent_benign = 7000;
  double benign_mean_pkts = 53;
  FlowLength flow_length = FlowLength::Geometric;
  GapModel gap_model = GapModel::Uniform;
  double gap_min = 0.001;  // seconds
  double gap_max = 0.050;
  std::uint32_t benign_clients = 0;  // 0: eight per concurrent flow
  std::uint32_t benign_servers = 1024;
  std::uint64_t scanner_count = 10;  // concurrent scanning campaigns
  std::uint32_t targets_per_scanner = 600;
  double scan_rate = 250;       // probes/s per scanner
  double scan_rst_prob = 1.0;   // probability a probed victim answers with RST
  std::uint32_t scanner_pool = 0;  // 0: every campaign uses a fresh host
  std::uint32_t distsyn_victims = 0;
  std::uint32_t slowloris_attackers = 0;
  std::uint32_t ssh_brute_attackers = 0;
  std::uint32_t ftp_brute_attackers = 0;
  std::uint32_t heavy_flows = 0;
  double heavy_pps = 2000;
  double attack_gap_min = 0.0002;  // handshake gaps of scripted attack tools, seconds
  double attack_gap_max = 0.0009;
  std::uint32_t scale_divisor = 1;

  std::uint64_t benign_slots() const { return scaled(concurrent_benign); }
  std::uint64_t scanner_slots() const { return scaled(scanner_count); }
  std::uint32_t client_count() const {
    if (benign_clients) return benign_clients;
    return static_cast<std::uint32_t>(std::min<std::uint64_t>(std::max<std::uint64_t>(8 * benign_slots(), 16), 1u << 22));
  }
  Micros horizon() const { return from_seconds(duration); }

  std::uint64_t scaled(std::uint64_t n) const { return n == 0 ? 0 : (n + scale_divisor - 1) / scale_divisor; }

  void validate(const RuleConfig& rules) const {
    if (scale_divisor == 0) throw ConfigError("scale_divisor must be >= 1");
    const bool any = concurrent_benign || scanner_count || distsyn_victims || slowloris_attackers ||
                     ssh_brute_attackers || ftp_brute_attackers || heavy_flows;
    if (!(duration > 0) && any) throw ConfigError("duration must be > 0 when any traffic is configured");
    if (duration > 1e6) throw ConfigError("duration too large");
    if (!(benign_mean_pkts >= 3)) throw ConfigError("benign_mean_pkts must be >= 3");
    if (!(gap_min > 0) || !(gap_max >= gap_min)) throw ConfigError("need 0 < gap_min <= gap_max");
    if (gap_max * 1.5 >= 45) throw ConfigError("gap_max must keep flows below the 45 s idle bound");
    if (!(attack_gap_min > 0) || !(attack_gap_max >= attack_gap_min) || attack_gap_max > 0.1)
      throw ConfigError("need 0 < attack_gap_min <= attack_gap_max <= 0.1");
    if (benign_servers == 0 && concurrent_benign) throw ConfigError("benign_servers must be >= 1");
    if (scanner_count && (targets_per_scanner == 0 || !(scan_rate > 0)))
      throw ConfigError("scanners need targets_per_scanner >= 1 and scan_rate > 0");
    if (!(scan_rst_prob >= 0 && scan_rst_prob <= 1)) throw ConfigError("scan_rst_prob must lie in [0, 1]");
    if (scanner_pool && scanner_pool < scanner_slots())
      throw ConfigError("scanner_pool must be 0 or at least the number of concurrent scanners");
    if (heavy_flows && !(heavy_pps > 0)) throw ConfigError("heavy_pps must be > 0");
    if (distsyn_victims > 100 || slowloris_attackers > 100 || ssh_brute_attackers > 100 || ftp_brute_attackers > 100)
      throw ConfigError("at most 100 instances per attack script");
    if (slowloris_attackers &&
        from_seconds(duration) < rules.slowloris_min_open + 2 * rules.sweep_interval + from_seconds(10))
      throw ConfigError("slowloris needs duration >= min open time + two sweep intervals + 10 s");
    if (distsyn_victims && duration < 4 * to_seconds(rules.attempt_grace) + 2)
      throw ConfigError("distributed SYN needs a few seconds of trace");
  }
};

enum class Role : std::uint8_t { Benign, Scanner, DistSynSource, DistSynVictim, Slowloris, SshBrute, FtpBrute };

inline constexpr std::string_view role_name(Role r) {
  switch (r) {
    case Role::Benign: return "benign";
    case Role::Scanner: return "scanner";
    case Role::DistSynSource: return "distsyn_source";
    case Role::DistSynVictim: return "distsyn_victim";
    case Role::Slowloris: return "slowloris";
    case Role::SshBrute: return "ssh_brute";
    case Role::FtpBrute: return "ftp_brute";
  }
  return "";
}

inline std::optional<Role> parse_role(std::string_view s) {
  for (std::uint8_t i = 0; i <= static_cast<std::uint8_t>(Role::FtpBrute); ++i)
    if (role_name(static_cast<Role>(i)) == s) return static_cast<Role>(i);
  return std::nullopt;
}

inline bool is_attacker(Role r) { return r != Role::Benign && r != Role::DistSynSource; }

struct GroundTruth {
  std::map<Ipv4, Role> roles;
  std::set<std::pair<Ipv4, Reason>> expected;  // verdicts the traffic carries enough evidence for
  std::uint64_t benign_flows = 0;
  std::uint64_t scan_probes = 0;
  std::uint64_t packets = 0;
  std::map<Label, std::uint64_t> packets_by_label;

  std::optional<Role> role(Ipv4 ip) const {
    auto it = roles.find(ip);
    if (it == roles.end()) return std::nullopt;
    return it->second;
  }

  void write_csv(std::ostream& out) const {
    out << "ip,role,expected_verdict\n";
    for (const auto& [ip, r] : roles) {
      std::string verdict;
      for (auto it = expected.lower_bound({ip, Reason::Scan}); it != expected.end() && it->first == ip; ++it) {
        if (!verdict.empty()) verdict += '|';
        verdict += reason_name(it->second);
      }
      out << ip.str() << ',' << role_name(r) << ',' << verdict << '\n';
    }
  }

  // Inverse of write_csv; packet counters are not part of the file.
  static GroundTruth read_csv(std::istream& in) {
    GroundTruth t;
    std::string line;
    std::uint64_t n = 0;
    if (!std::getline(in, line) || line != "ip,role,expected_verdict") throw FormatError(1, "missing truth header");
    ++n;
    while (std::getline(in, line)) {
      ++n;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      auto f = detail::split_csv(line);
      if (f.size() != 3) throw FormatError(n, "expected 3 fields");
      auto ip = Ipv4::try_parse(f[0]);
      auto role = parse_role(f[1]);
      if (!ip || !role) throw FormatError(n, "bad ip or role");
      t.roles[*ip] = *role;
      std::string_view rest = f[2];
      while (!rest.empty()) {
        const auto bar = rest.find('|');
        auto reason = parse_reason(rest.substr(0, bar));
        if (!reason) throw FormatError(n, "unknown verdict '" + std::string(rest.substr(0, bar)) + "'");
        t.expected.insert({*ip, *reason});
        rest = bar == std::string_view::npos ? std::string_view{} : rest.substr(bar + 1);
      }
    }
    return t;
  }
};

// Bit-exact sampling helpers on top of mt19937_64 (library distributions vary by vendor).
class GenRng {
 public:
  explicit GenRng(std::uint64_t seed) : g_(seed) {}
  std::uint64_t bits() { return g_(); }
  double uniform() { return static_cast<double>(g_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  std::uint64_t below(std::uint64_t n) { return n ? g_() % n : 0; }
  bool chance(double p) { return uniform() < p; }
  Micros gap(double a, double b) { return std::max(Micros{1}, from_seconds(uniform(a, b))); }
  double log_uniform(double a, double b) { return std::exp(uniform(std::log(a), std::log(b))); }
  // Failures before the first success, success probability p.
  std::uint64_t geometric(double p) {
    if (p >= 1) return 0;
    const double u = 1 - uniform();
    return static_cast<std::uint64_t>(std::floor(std::log(u) / std::log1p(-p)));
  }

 private:
  std::mt19937_64 g_;
};

namespace gen_detail {

inline constexpr std::uint16_t kServerPorts[] = {80, 443, 443, 8080, 8443, 993};
inline constexpr std::uint16_t kSynLen = 60, kAckLen = 52, kMss = 1448, kDataLen = 1500;

inline PacketRecord rec(Micros ts, Ipv4 s, std::uint16_t sp, Ipv4 d, std::uint16_t dp, std::uint8_t flags,
                        std::uint16_t payload, Label label, std::uint16_t base = kAckLen) {
  return {ts, {s, d, sp, dp, kProtoTcp}, TcpFlags(flags), static_cast<std::uint16_t>(base + payload), payload, label};
}

}  // namespace gen_detail

// Deterministic birth-death traffic source. Benign slots run one flow at a time and start
// the next when it ends; scanner slots run one campaign at a time likewise. Attack scripts
// are laid out up front. Packets past the configured duration are not emitted.
class TrafficGenerator : public PacketSource {
 public:
  explicit TrafficGenerator(GenConfig cfg, RuleConfig rules = {}) : cfg_(std::move(cfg)), rules_(std::move(rules)) {
    cfg_.validate(rules_);
    reset();
  }

  const GenConfig& config() const { return cfg_; }

  std::optional<PacketRecord> next() override {
    while (!pq_.empty()) {
      Event ev = pq_.top();
      pq_.pop();
      if (ev.rec.ts > end_) {
        continue;
      }
      on_emit(ev);
      last_ts_ = ev.rec.ts;
      ++truth_.packets;
      ++truth_.packets_by_label[ev.rec.label];
      return ev.rec;
    }
    return std::nullopt;
  }

  void reset() override {
    rng_ = GenRng(cfg_.seed);
    pq_ = {};
    seq_ = 0;
    truth_ = {};
    last_ts_ = Micros{0};
    end_ = cfg_.horizon();
    benign_.clear();
    scanners_.clear();
    probes_.clear();
    free_hosts_.clear();
    next_host_ = 0;
    client_ports_.clear();
    brute_closes_.clear();
    slow_firsts_.clear();
    distsyn_syns_.clear();
    setup();
  }

  // Completes ground truth once the stream is drained: expected verdicts follow from what
  // was actually emitted.
  const GroundTruth& truth() {
    finalize();
    return truth_;
  }

  std::vector<PacketRecord> collect() {
    std::vector<PacketRecord> out;
    while (auto r = next()) out.push_back(*r);
    return out;
  }

 private:
  enum class Kind : std::uint8_t { Benign, ScanProbe, Passive, ScanRst, DistSynSyn, BruteClose, Heavy };

  struct Event {
    PacketRecord rec;
    std::uint64_t seq;
    Kind kind;
    std::uint32_t actor;
    std::uint32_t aux;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.rec.ts != b.rec.ts ? a.rec.ts > b.rec.ts : a.seq > b.seq;
    }
  };

  struct BenignFlow {
    Ipv4 client, server;
    std::uint16_t cport = 0, sport = 0;
    std::uint64_t n = 0, i = 0;
    double mean_gap = 0;
  };
  struct Campaign {
    Ipv4 host;
    std::uint16_t sport = 0;
    std::uint32_t left = 0;
    std::unordered_set<std::uint64_t> pairs;
  };
  struct Probe {
    Ipv4 host;
    std::uint64_t pair;
    Micros syn;
    std::optional<Micros> rst;
  };

  void push(PacketRecord r, Kind k, std::uint32_t actor = 0, std::uint32_t aux = 0) {
    pq_.push({r, seq_++, k, actor, aux});
  }

  Micros benign_gap(const BenignFlow& f) {
    if (cfg_.gap_model == GapModel::Uniform) return rng_.gap(cfg_.gap_min, cfg_.gap_max);
    return rng_.gap(0.5 * f.mean_gap, 1.5 * f.mean_gap);
  }

  std::uint64_t draw_length() {
    if (cfg_.flow_length == FlowLength::Fixed) return static_cast<std::uint64_t>(std::llround(cfg_.benign_mean_pkts));
    const double extra = cfg_.benign_mean_pkts - 3;
    if (extra <= 0) return 3;
    return 3 + rng_.geometric(1 / (extra + 1));
  }

  void setup() {
    using namespace gen_detail;
    const auto clients = cfg_.client_count();
    client_ports_.assign(clients, 0);
    for (std::uint32_t c = 0; c < clients; ++c) truth_.roles[client_ip(c)] = Role::Benign;
    for (std::uint32_t s = 0; s < cfg_.benign_servers && cfg_.benign_slots(); ++s) truth_.roles[server_ip(s)] = Role::Benign;

    benign_.resize(cfg_.benign_slots());
    for (std::uint32_t s = 0; s < benign_.size(); ++s) start_benign(s, Micros{0}, true);

    const double campaign = cfg_.targets_per_scanner / std::max(cfg_.scan_rate, 1e-9);
    if (cfg_.scanner_pool)
      for (std::uint32_t h = 0; h < cfg_.scanner_pool; ++h) free_hosts_.push_back(h);
    scanners_.resize(cfg_.scanner_slots());
    for (std::uint32_t s = 0; s < scanners_.size(); ++s) start_campaign(s, from_seconds(rng_.uniform(0, campaign)));

    for (std::uint32_t v = 0; v < cfg_.distsyn_victims; ++v) script_distsyn(v);
    for (std::uint32_t a = 0; a < cfg_.slowloris_attackers; ++a) script_slowloris(a);
    for (std::uint32_t a = 0; a < cfg_.ssh_brute_attackers; ++a) script_brute(a, 22);
    for (std::uint32_t a = 0; a < cfg_.ftp_brute_attackers; ++a) script_brute(a, 21);
    for (std::uint32_t h = 0; h < cfg_.heavy_flows; ++h) start_heavy(h);
  }

  static Ipv4 client_ip(std::uint32_t c) { return Ipv4((10u << 24) + 1 + c); }
  static Ipv4 server_ip(std::uint32_t s) { return Ipv4((172u << 24) + (16u << 16) + 1 + s); }
  static Ipv4 scanner_ip(std::uint32_t h) { return Ipv4((198u << 24) + (18u << 16) + 1 + h); }

  std::uint16_t next_client_port(std::uint32_t c) {
    return static_cast<std::uint16_t>(32768 + (client_ports_[c]++ % 28000));
  }

  // Initial flows draw their pace from the stationary mix: a slot holds a flow for time
  // proportional to its mean gap, which turns the log-uniform birth law into a uniform one.
  void start_benign(std::uint32_t slot, Micros at, bool initial = false) {
    using namespace gen_detail;
    auto& f = benign_[slot];
    const auto c = static_cast<std::uint32_t>(rng_.below(cfg_.client_count()));
    f.client = client_ip(c);
    f.server = server_ip(static_cast<std::uint32_t>(rng_.below(cfg_.benign_servers)));
    f.cport = next_client_port(c);
    f.sport = kServerPorts[rng_.below(std::size(kServerPorts))];
    f.n = draw_length();
    f.i = 0;
    f.mean_gap = 0;
    if (cfg_.gap_model == GapModel::PerFlow)
      f.mean_gap = initial ? rng_.uniform(cfg_.gap_min, cfg_.gap_max) : rng_.log_uniform(cfg_.gap_min, cfg_.gap_max);
    if (initial) {
      const double pace = f.mean_gap > 0 ? f.mean_gap : 0.5 * (cfg_.gap_min + cfg_.gap_max);
      at = from_seconds(rng_.uniform(0, cfg_.benign_mean_pkts * pace));
    }
    if (at <= end_) ++truth_.benign_flows;
    push(benign_packet(f, at), Kind::Benign, slot);
  }

  // Packet i of n: handshake, request, server data with a client ACK every third packet, FIN.
  PacketRecord benign_packet(const BenignFlow& f, Micros ts) {
    using namespace gen_detail;
    const auto L = Label::Benign;
    const auto i = f.i;
    if (i == 0) return rec(ts, f.client, f.cport, f.server, f.sport, TcpFlags::kSyn, 0, L, kSynLen);
    if (i == 1) return rec(ts, f.server, f.sport, f.client, f.cport, TcpFlags::kSyn | TcpFlags::kAck, 0, L, kSynLen);
    if (i == 2) return rec(ts, f.client, f.cport, f.server, f.sport, TcpFlags::kAck, 0, L);
    if (i == f.n - 1) return rec(ts, f.client, f.cport, f.server, f.sport, TcpFlags::kFin | TcpFlags::kAck, 0, L);
    if (i == 3)
      return rec(ts, f.client, f.cport, f.server, f.sport, TcpFlags::kAck | TcpFlags::kPsh,
                 static_cast<std::uint16_t>(100 + rng_.below(601)), L);
    if ((i - 4) % 3 == 2) return rec(ts, f.client, f.cport, f.server, f.sport, TcpFlags::kAck, 0, L);
    return rec(ts, f.server, f.sport, f.client, f.cport, TcpFlags::kAck, kMss, L);
  }

  void advance_benign(std::uint32_t slot, Micros now) {
    auto& f = benign_[slot];
    if (++f.i < f.n) {
      Micros g = benign_gap(f);
      if (f.i <= 2) g = std::min(g, Micros{200'000});  // handshakes complete well inside the grace period
      push(benign_packet(f, now + g), Kind::Benign, slot);
      return;
    }
    start_benign(slot, now + rng_.gap(cfg_.gap_min, cfg_.gap_max));
  }

  void start_campaign(std::uint32_t slot, Micros at) {
    auto& c = scanners_[slot];
    std::uint32_t h;
    if (cfg_.scanner_pool) {
      h = free_hosts_.front();
      free_hosts_.erase(free_hosts_.begin());
    } else {
      h = next_host_++;
    }
    c.host = scanner_ip(h);
    c.sport = static_cast<std::uint16_t>(40000 + rng_.below(20000));
    c.left = cfg_.targets_per_scanner;
    c.pairs.clear();
    if (at <= end_) truth_.roles[c.host] = Role::Scanner;
    probe(slot, at);
  }

  void probe(std::uint32_t slot, Micros at) {
    using namespace gen_detail;
    auto& c = scanners_[slot];
    std::uint64_t pair;
    do {
      const Ipv4 victim((192u << 24) + (168u << 16) + 1 + static_cast<std::uint32_t>(rng_.below(65534)));
      const auto port = static_cast<std::uint16_t>(1 + rng_.below(1024));
      pair = (std::uint64_t{victim.value} << 16) | port;
    } while (!c.pairs.insert(pair).second);
    const Ipv4 victim(static_cast<std::uint32_t>(pair >> 16));
    const auto port = static_cast<std::uint16_t>(pair & 0xffff);
    push(rec(at, c.host, c.sport, victim, port, TcpFlags::kSyn, 0, Label::Scan, kSynLen), Kind::ScanProbe, slot,
         static_cast<std::uint32_t>(probes_.size()));
    probes_.push_back({c.host, pair, at, std::nullopt});
    if (rng_.chance(cfg_.scan_rst_prob))
      push(rec(at + rng_.gap(0.0001, 0.001), victim, port, c.host, c.sport, TcpFlags::kRst | TcpFlags::kAck, 0,
               Label::Scan),
           Kind::ScanRst, slot, static_cast<std::uint32_t>(probes_.size() - 1));
  }

  void advance_campaign(std::uint32_t slot, Micros now) {
    auto& c = scanners_[slot];
    ++truth_.scan_probes;
    const Micros g = rng_.gap(0.5 / cfg_.scan_rate, 1.5 / cfg_.scan_rate);
    if (--c.left > 0) {
      probe(slot, now + g);
      return;
    }
    if (cfg_.scanner_pool) free_hosts_.push_back(c.host.value - scanner_ip(0).value);
    start_campaign(slot, now + g);
  }

  Micros attack_gap() { return rng_.gap(cfg_.attack_gap_min, cfg_.attack_gap_max); }

  // Twice the source threshold of spoofed single SYNs within a third of the window; the
  // victim answers each with SYN+ACK that is never acknowledged.
  void script_distsyn(std::uint32_t v) {
    using namespace gen_detail;
    const Ipv4 victim((192u << 24) + (2u << 8) + 1 + v);
    truth_.roles[victim] = Role::DistSynVictim;
    const double spread = std::min(to_seconds(rules_.distsyn_window) / 3, cfg_.duration / 2);
    const double latest = std::max(0.0, cfg_.duration - spread - 2 * to_seconds(rules_.attempt_grace));
    const Micros start = from_seconds(rng_.uniform(0, latest));
    const auto n = 2 * rules_.distsyn_source_threshold;
    for (std::uint32_t i = 0; i < n; ++i) {
      const Ipv4 src((100u << 24) + (64u << 16) + 1 + distsyn_sources_++);
      truth_.roles[src] = Role::DistSynSource;
      const Micros t = start + from_seconds(rng_.uniform(0, spread));
      const auto sp = static_cast<std::uint16_t>(1024 + rng_.below(60000));
      push(rec(t, src, sp, victim, 80, TcpFlags::kSyn, 0, Label::DistSyn, kSynLen), Kind::DistSynSyn, v);
      push(rec(t + attack_gap(), victim, 80, src, sp, TcpFlags::kSyn | TcpFlags::kAck, 0, Label::DistSyn, kSynLen),
           Kind::Passive);
    }
  }

  // Twice the per-victim connection threshold, each trickling half the rate cap until the end.
  void script_slowloris(std::uint32_t a) {
    using namespace gen_detail;
    const Ipv4 src((203u << 24) + (113u << 8) + 1 + a);
    const Ipv4 victim((192u << 24) + (2u << 8) + 100 + a);
    truth_.roles[src] = Role::Slowloris;
    const Micros start = from_seconds(rng_.uniform(0, 5));
    const double rate = 0.5 * rules_.slowloris_max_rate / 60.0;  // bytes per second
    const auto n = 2 * rules_.slowloris_threshold;
    std::vector<Micros> firsts;
    for (std::uint32_t i = 0; i < n; ++i) {
      const auto cp = static_cast<std::uint16_t>(20000 + i);
      Micros t = start + from_seconds(rng_.uniform(0, 5));
      const Micros first = t;
      firsts.push_back(first);
      push(rec(t, src, cp, victim, 80, TcpFlags::kSyn, 0, Label::Slowloris, kSynLen), Kind::Passive);
      t += attack_gap();
      push(rec(t, victim, 80, src, cp, TcpFlags::kSyn | TcpFlags::kAck, 0, Label::Slowloris, kSynLen), Kind::Passive);
      t += attack_gap();
      push(rec(t, src, cp, victim, 80, TcpFlags::kAck, 0, Label::Slowloris), Kind::Passive);
      double sent = 0;
      while (true) {
        t += from_seconds(rng_.uniform(10, 30));
        if (t > end_) break;
        const double allowed = rate * to_seconds(t - first) - sent;
        const auto chunk = static_cast<std::uint16_t>(std::max(1.0, std::floor(allowed)));
        sent += chunk;
        push(rec(t, src, cp, victim, 80, TcpFlags::kAck | TcpFlags::kPsh, chunk, Label::Slowloris), Kind::Passive);
        push(rec(t + attack_gap(), victim, 80, src, cp, TcpFlags::kAck, 0, Label::Slowloris), Kind::Passive);
      }
    }
    std::sort(firsts.begin(), firsts.end());
    slow_firsts_.emplace_back(src, std::move(firsts));
  }

  // Twice the threshold of short login flows: banner, a few credential exchanges, reset.
  void script_brute(std::uint32_t a, std::uint16_t port) {
    using namespace gen_detail;
    const bool ssh = port == 22;
    const Ipv4 src((198u << 24) + (51u << 16) + (100u << 8) + (ssh ? 1 : 128) + a);
    const Ipv4 victim((192u << 24) + (2u << 8) + (ssh ? 200 : 228) + a);
    const Label L = ssh ? Label::SshBrute : Label::FtpBrute;
    truth_.roles[src] = ssh ? Role::SshBrute : Role::FtpBrute;
    const auto n = 2 * rules_.brute_threshold;
    const double span = std::min(to_seconds(rules_.brute_window) / 3, 0.8 * cfg_.duration);
    const double spacing = span / n;
    Micros t = from_seconds(rng_.uniform(0, std::max(0.0, cfg_.duration - span)));
    const auto idx = static_cast<std::uint32_t>(brute_closes_.size());
    brute_closes_.push_back({src, ssh ? Reason::SshBrute : Reason::FtpBrute, {}});
    for (std::uint32_t i = 0; i < n; ++i) {
      const auto cp = static_cast<std::uint16_t>(30000 + i);
      Micros s = t;
      push(rec(s, src, cp, victim, port, TcpFlags::kSyn, 0, L, kSynLen), Kind::Passive);
      s += attack_gap();
      push(rec(s, victim, port, src, cp, TcpFlags::kSyn | TcpFlags::kAck, 0, L, kSynLen), Kind::Passive);
      s += attack_gap();
      push(rec(s, src, cp, victim, port, TcpFlags::kAck, 0, L), Kind::Passive);
      s += from_seconds(rng_.uniform(0.005, 0.02));
      push(rec(s, victim, port, src, cp, TcpFlags::kAck | TcpFlags::kPsh, static_cast<std::uint16_t>(20 + rng_.below(40)), L),
           Kind::Passive);
      const auto tries = 2 + rng_.below(3);
      for (std::uint64_t k = 0; k < tries; ++k) {
        s += from_seconds(rng_.uniform(0.005, 0.05));
        push(rec(s, src, cp, victim, port, TcpFlags::kAck | TcpFlags::kPsh,
                 static_cast<std::uint16_t>(40 + rng_.below(60)), L),
             Kind::Passive);
        s += from_seconds(rng_.uniform(0.05, 0.3));
        push(rec(s, victim, port, src, cp, TcpFlags::kAck | TcpFlags::kPsh,
                 static_cast<std::uint16_t>(20 + rng_.below(30)), L),
             Kind::Passive);
      }
      s += from_seconds(rng_.uniform(0.005, 0.05));
      push(rec(s, victim, port, src, cp, TcpFlags::kRst | TcpFlags::kAck, 0, L), Kind::BruteClose, idx);
      t += from_seconds(spacing * rng_.uniform(0.5, 1.5));
    }
  }

  void start_heavy(std::uint32_t h) {
    using namespace gen_detail;
    const Ipv4 client((10u << 24) + (250u << 16) + 1 + h);
    truth_.roles[client] = Role::Benign;
    const Ipv4 server = server_ip(static_cast<std::uint32_t>(rng_.below(std::max<std::uint32_t>(cfg_.benign_servers, 1))));
    if (!cfg_.benign_slots()) truth_.roles[server] = Role::Benign;
    const Micros t = from_seconds(rng_.uniform(0, 0.01));
    const auto cp = static_cast<std::uint16_t>(50000 + h);
    push(rec(t, client, cp, server, 443, TcpFlags::kSyn, 0, Label::Benign, kSynLen), Kind::Passive);
    push(rec(t + Micros{500}, server, 443, client, cp, TcpFlags::kSyn | TcpFlags::kAck, 0, Label::Benign, kSynLen),
         Kind::Passive);
    push(rec(t + Micros{1000}, client, cp, server, 443, TcpFlags::kAck, 0, Label::Benign), Kind::Heavy, h);
    heavy_.push_back({client, server, cp});
  }

  void advance_heavy(std::uint32_t h, Micros now) {
    using namespace gen_detail;
    const auto& f = heavy_[h];
    const Micros t = now + rng_.gap(0.5 / cfg_.heavy_pps, 1.5 / cfg_.heavy_pps);
    push(rec(t, f.server, 443, f.client, f.cport, TcpFlags::kAck, kMss, Label::Benign), Kind::Heavy, h);
  }

  void on_emit(const Event& ev) {
    switch (ev.kind) {
      case Kind::Benign: advance_benign(ev.actor, ev.rec.ts); break;
      case Kind::ScanProbe: advance_campaign(ev.actor, ev.rec.ts); break;
      case Kind::ScanRst: probes_[ev.aux].rst = ev.rec.ts; break;
      case Kind::DistSynSyn: distsyn_syns_.emplace_back(ev.rec.key.dst_ip, ev.rec.key.src_ip, ev.rec.ts); break;
      case Kind::BruteClose: brute_closes_[ev.actor].times.push_back(ev.rec.ts); break;
      case Kind::Heavy: advance_heavy(ev.actor, ev.rec.ts); break;
      case Kind::Passive: break;
    }
  }

  static bool window_reaches(std::vector<Micros> times, Micros window, std::size_t threshold) {
    std::sort(times.begin(), times.end());
    std::size_t lo = 0;
    for (std::size_t hi = 0; hi < times.size(); ++hi) {
      while (times[lo] <= times[hi] - window) ++lo;
      if (hi - lo + 1 >= threshold) return true;
    }
    return false;
  }

  void finalize() {
    if (finalized_for_ == truth_.packets && finalized_) return;
    truth_.expected.clear();
    // Scans: first failure per distinct (host, victim, port).
    const Micros horizon = last_emitted();
    std::map<Ipv4, std::vector<Micros>> fails;
    std::set<std::pair<std::uint32_t, std::uint64_t>> seen;
    for (const auto& p : probes_) {
      if (p.syn > horizon) continue;
      if (!seen.insert({p.host.value, p.pair}).second) continue;
      const Micros at = p.rst ? *p.rst : p.syn + rules_.attempt_grace;
      if (at <= horizon) fails[p.host].push_back(at);
    }
    for (auto& [h, times] : fails)
      if (window_reaches(times, rules_.scan_window, rules_.scan_threshold)) truth_.expected.insert({h, Reason::Scan});

    std::map<Ipv4, std::vector<std::pair<Micros, Ipv4>>> by_victim;
    for (const auto& [victim, src, ts] : distsyn_syns_)
      if (ts + rules_.attempt_grace <= horizon) by_victim[victim].emplace_back(ts + rules_.attempt_grace, src);
    for (auto& [victim, evs] : by_victim) {
      std::sort(evs.begin(), evs.end());
      std::map<Ipv4, int> live;
      std::size_t lo = 0;
      for (std::size_t hi = 0; hi < evs.size(); ++hi) {
        ++live[evs[hi].second];
        while (evs[lo].first <= evs[hi].first - rules_.distsyn_window) {
          if (--live[evs[lo].second] == 0) live.erase(evs[lo].second);
          ++lo;
        }
        if (live.size() >= rules_.distsyn_source_threshold) {
          truth_.expected.insert({victim, Reason::DistSynVictim});
          break;
        }
      }
    }

    for (const auto& b : brute_closes_)
      if (window_reaches(b.times, rules_.brute_window, rules_.brute_threshold)) truth_.expected.insert({b.src, b.reason});

    for (const auto& [src, firsts] : slow_firsts_)
      if (firsts.size() >= rules_.slowloris_threshold &&
          firsts[rules_.slowloris_threshold - 1] + rules_.slowloris_min_open <= horizon)
        truth_.expected.insert({src, Reason::Slowloris});

    finalized_ = true;
    finalized_for_ = truth_.packets;
  }

  Micros last_emitted() const { return last_ts_; }

  struct BruteLog {
    Ipv4 src;
    Reason reason;
    std::vector<Micros> times;
  };
  struct Heavy {
    Ipv4 client, server;
    std::uint16_t cport;
  };

  GenConfig cfg_;
  RuleConfig rules_;
  GenRng rng_{0};
  std::priority_queue<Event, std::vector<Event>, Later> pq_;
  std::uint64_t seq_ = 0;
  GroundTruth truth_;
  Micros last_ts_{0};
  Micros end_{0};
  std::vector<BenignFlow> benign_;
  std::vector<Campaign> scanners_;
  std::vector<Probe> probes_;
  std::vector<std::uint32_t> free_hosts_;
  std::uint32_t next_host_ = 0;
  std::uint32_t distsyn_sources_ = 0;
  std::vector<std::uint32_t> client_ports_;
  std::vector<BruteLog> brute_closes_;
  std::vector<std::pair<Ipv4, std::vector<Micros>>> slow_firsts_;
  std::vector<std::tuple<Ipv4, Ipv4, Micros>> distsyn_syns_;
  std::vector<Heavy> heavy_;
  bool finalized_ = false;
  std::uint64_t finalized_for_ = 0;
};

struct Generated {
  std::vector<PacketRecord> packets;
  GroundTruth truth;
};

inline Generated generate(const GenConfig& cfg, const RuleConfig& rules = {}) {
  TrafficGenerator g(cfg, rules);
  Generated out;
  out.packets = g.collect();
  out.truth = g.truth();
  return out;
}

// Labeled feature rows as the NIC would see them: every flow's first three packets, plus a
// three-packet mid-flow fragment (what re-enters after the benign filter forgets a flow).
struct TrainingRow {
  FlowEntry entry;
  Label label;
};

inline std::vector<TrainingRow> training_rows(const std::vector<PacketRecord>& pkts, bool fragments = true) {
  std::unordered_map<FlowKey, std::vector<std::size_t>, FlowKeyHash> flows;
  std::vector<FlowKey> order;
  for (std::size_t i = 0; i < pkts.size(); ++i) {
    auto [it, fresh] = flows.try_emplace(canonical_key(pkts[i].key));
    if (fresh) order.push_back(it->first);
    it->second.push_back(i);
  }
  std::vector<TrainingRow> rows;
  auto snapshot = [&](const std::vector<std::size_t>& idx, std::size_t from) {
    FlowEntry e = make_flow_entry(PacketView::from(pkts[idx[from]]));
    for (std::size_t k = from; k < from + 3; ++k) apply_packet(e, PacketView::from(pkts[idx[k]]));
    rows.push_back({e, pkts[idx[from]].label});
  };
  for (const auto& k : order) {
    const auto& idx = flows[k];
    if (idx.size() < 3) continue;
    snapshot(idx, 0);
    if (fragments && idx.size() >= 7) snapshot(idx, idx.size() / 2);
  }
  return rows;
}

inline void write_training_csv(std::ostream& out, const std::vector<TrainingRow>& rows) {
  out << kFlowDumpHeader << ",label\n";
  for (const auto& r : rows) out << flow_dump_row(r.entry) << ',' << label_name(r.label) << '\n';
}

}  // namespace immunity
