#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "immunity/flow_cache.hpp"
#include "immunity/mst.hpp"
#include "immunity/packet.hpp"

namespace immunity {

struct RuleConfig {
  std::uint32_t scan_threshold = 25;
  Micros scan_window{900'000'000};
  Micros attempt_grace{1'000'000};
  Micros sweep_interval{15'000'000};
  std::uint32_t distsyn_source_threshold = 100;
  Micros distsyn_window{60'000'000};
  Micros slowloris_min_open{300'000'000};
  std::uint32_t slowloris_max_rate = 200;  // forward payload bytes per minute
  Micros slowloris_max_idle{120'000'000};
  std::uint32_t slowloris_threshold = 20;
  std::vector<std::uint16_t> slowloris_ports{80, 443, 8080};
  std::uint32_t brute_threshold = 20;
  Micros brute_window{900'000'000};
  std::uint32_t brute_max_data_pkts = 10;
  std::size_t attempt_cap = 4096;

  void validate() const {
    if (scan_threshold < 1 || distsyn_source_threshold < 1 || slowloris_threshold < 1 || brute_threshold < 1 ||
        brute_max_data_pkts < 1 || attempt_cap < 1)
      throw std::invalid_argument("rule thresholds must be >= 1");
    if (scan_window <= Micros{0} || distsyn_window <= Micros{0} || brute_window <= Micros{0} ||
        sweep_interval <= Micros{0} || slowloris_min_open <= Micros{0} || slowloris_max_idle <= Micros{0})
      throw std::invalid_argument("rule windows must be > 0");
    if (attempt_grace < Micros{0}) throw std::invalid_argument("attempt grace must be >= 0");
  }

  bool slowloris_port(std::uint16_t p) const {
    return std::find(slowloris_ports.begin(), slowloris_ports.end(), p) != slowloris_ports.end();
  }

  // Forward payload at or below the rate cap over the given open duration.
  bool slow_rate(std::uint64_t payload, Micros open) const {
    return static_cast<long double>(payload) * 60'000'000.0L <=
           static_cast<long double>(slowloris_max_rate) * static_cast<long double>(open.count());
  }
};

struct Verdict {
  Micros ts{0};
  Ipv4 ip;
  Direction direction = Direction::Source;
  Reason reason = Reason::Scan;
  std::uint64_t evidence = 0;

  bool operator==(const Verdict&) const = default;
};

inline bool verdict_order(const Verdict& a, const Verdict& b) {
  if (a.ts != b.ts) return a.ts < b.ts;
  if (a.ip != b.ip) return a.ip < b.ip;
  return a.reason < b.reason;
}

inline MstEntry to_mst_entry(const Verdict& v, Micros inserted_at) {
  return {Prefix{v.ip, 32}, v.direction, v.reason, inserted_at};
}

inline constexpr std::string_view kVerdictHeader = "ts,ip,direction,attack_type,evidence";

inline std::string verdict_row(const Verdict& v) {
  return format_seconds(v.ts) + ',' + v.ip.str() + ',' + std::string(direction_name(v.direction)) + ',' +
         std::string(reason_name(v.reason)) + ',' + std::to_string(v.evidence);
}

inline void write_verdicts(std::ostream& out, const std::vector<Verdict>& vs) {
  out << kVerdictHeader << '\n';
  for (const auto& v : vs) out << verdict_row(v) << '\n';
}

enum class ShardMode { BySource, ByDestination };

enum class AttemptStatus : std::uint8_t { Pending, Failed };

struct Attempt {
  AttemptStatus status = AttemptStatus::Pending;
  Micros start{0};
  Micros failed_at{0};
};

struct SourceState {
  std::unordered_map<std::uint64_t, Attempt> attempts;  // (victim, port) -> attempt
  std::deque<Micros> failures;                          // failure times, ascending
  std::uint64_t failed_count = 0;                       // attempts currently Failed
};

struct VictimState {
  std::deque<std::pair<Micros, Ipv4>> failures;  // (time, source), ascending
  std::unordered_map<Ipv4, std::uint32_t> in_window;
};

// Online rule engine. observe() must be called with non-decreasing timestamps, after the
// packet has been applied to its flow entry. Scan and DistSyn share attempt bookkeeping:
// an attempt on (victim, port) fails on RST or after the grace period and succeeds when a
// flow to that pair establishes first.
class IdsEngine {
 public:
  static constexpr std::uint8_t kMarkEstablished = 1;
  static constexpr std::uint8_t kMarkBruteCounted = 2;

  explicit IdsEngine(RuleConfig cfg = {}) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const RuleConfig& config() const { return cfg_; }

  std::vector<Verdict> observe(const PacketView& p, FlowEntry& e) {
    const Micros now = p.ts;
    std::vector<Verdict> out;
    expire_pending(now, out);

    if (p.flags.pure_syn()) {
      open_attempt(p.key.src_ip, p.key.dst_ip, p.key.dst_port, now);
    } else if (p.flags.rst()) {
      fail_attempt(p.key.dst_ip, p.key.src_ip, p.key.src_port, now, out);
      fail_attempt(p.key.src_ip, p.key.dst_ip, p.key.dst_port, now, out);
    }
    const FlowKey fwd = e.forward_key();
    if (e.established_once && !(e.rule_marks & kMarkEstablished)) {
      e.rule_marks |= kMarkEstablished;
      succeed_attempt(fwd.src_ip, fwd.dst_ip, fwd.dst_port);
    }

    if ((fwd.dst_port == 22 || fwd.dst_port == 21) && e.established_once && (p.flags.fin() || p.flags.rst()) &&
        !(e.rule_marks & kMarkBruteCounted)) {
      e.rule_marks |= kMarkBruteCounted;
      if (e.data_pkts_fwd < cfg_.brute_max_data_pkts) brute_event(fwd.src_ip, fwd.dst_port, now, out);
    }

    if (cfg_.slowloris_port(fwd.dst_port) && e.established_once) {
      if (p.flags.fin() || p.flags.rst())
        slow_.erase(e.key);
      else
        slow_[e.key] = SlowFlow{fwd.src_ip, fwd.dst_ip, e.first_ts, now, e.payload_fwd};
    }
    return out;
  }

  // Expires attempts and windows up to now and re-evaluates every rule.
  std::vector<Verdict> sweep(Micros now) {
    std::vector<Verdict> out;
    expire_pending(now, out);

    std::map<std::uint64_t, std::uint32_t> slow_counts;  // (src, victim) -> slow-open flows
    for (auto it = slow_.begin(); it != slow_.end();) {
      const auto& f = it->second;
      if (now - f.last > cfg_.slowloris_max_idle) {
        it = slow_.erase(it);
        continue;
      }
      const Micros open = now - f.first;
      if (open >= cfg_.slowloris_min_open && cfg_.slow_rate(f.payload, open))
        ++slow_counts[pair_key(f.src, f.victim.value)];
      ++it;
    }
    std::map<Ipv4, std::uint32_t> worst;
    for (const auto& [k, n] : slow_counts) {
      auto& w = worst[Ipv4(static_cast<std::uint32_t>(k >> 32))];
      w = std::max(w, n);
    }
    for (const auto& [src, n] : worst)
      if (n >= cfg_.slowloris_threshold) emit({now, src, Direction::Source, Reason::Slowloris, n}, out);

    for (auto it = sources_.begin(); it != sources_.end();) {
      auto& s = it->second;
      while (!s.failures.empty() && s.failures.front() <= now - 2 * cfg_.scan_window) s.failures.pop_front();
      if (s.attempts.empty() && s.failures.empty())
        it = sources_.erase(it);
      else
        ++it;
    }
    for (auto it = victims_.begin(); it != victims_.end();) {
      pop_victim_window(it->second, now);
      if (it->second.failures.empty())
        it = victims_.erase(it);
      else
        ++it;
    }
    for (auto it = brute_.begin(); it != brute_.end();) {
      while (!it->second.empty() && it->second.front() <= now - cfg_.brute_window) it->second.pop_front();
      if (it->second.empty())
        it = brute_.erase(it);
      else
        ++it;
    }
    std::sort(out.begin(), out.end(), verdict_order);
    std::copy(out.begin(), out.end(), verdicts_.end() - static_cast<std::ptrdiff_t>(out.size()));
    return out;
  }

  const std::vector<Verdict>& verdicts() const { return verdicts_; }
  bool reported(Ipv4 ip, Reason r) const { return reported_.contains(report_key(ip, r)); }

  const SourceState* source(Ipv4 ip) const {
    auto it = sources_.find(ip);
    return it == sources_.end() ? nullptr : &it->second;
  }
  std::size_t source_count() const { return sources_.size(); }
  std::size_t victim_count() const { return victims_.size(); }
  std::size_t pending_attempts() const { return pending_.size(); }

  // Scan, slowloris and brute-force state keys on the initiator; DistSyn on the responder.
  static Ipv4 shard_ip(const FlowEntry& e, ShardMode mode) {
    return mode == ShardMode::BySource ? e.initiator() : e.responder();
  }
  static std::size_t shard_of(const FlowEntry& e, ShardMode mode, std::size_t shards) {
    return std::hash<Ipv4>{}(shard_ip(e, mode)) % shards;
  }

 private:
  struct PendingRef {
    Micros deadline;
    Ipv4 src;
    std::uint64_t pair;
    Micros start;
  };
  struct SlowFlow {
    Ipv4 src;
    Ipv4 victim;
    Micros first;
    Micros last;
    std::uint64_t payload;
  };

  static std::uint64_t pair_key(Ipv4 victim, std::uint32_t port) {
    return (std::uint64_t{victim.value} << 32) | port;
  }
  static std::uint64_t report_key(Ipv4 ip, Reason r) {
    return (std::uint64_t{ip.value} << 8) | static_cast<std::uint8_t>(r);
  }

  void emit(Verdict v, std::vector<Verdict>& out) {
    if (!reported_.insert(report_key(v.ip, v.reason)).second) return;
    verdicts_.push_back(v);
    out.push_back(v);
  }

  void open_attempt(Ipv4 src, Ipv4 victim, std::uint16_t port, Micros now) {
    auto& s = sources_[src];
    const auto k = pair_key(victim, port);
    if (s.attempts.contains(k)) return;
    if (s.attempts.size() >= cfg_.attempt_cap) make_room(s);
    s.attempts.emplace(k, Attempt{AttemptStatus::Pending, now, Micros{0}});
    pending_.push_back({now + cfg_.attempt_grace, src, k, now});
  }

  // Oldest failed attempt first (expired ones are the oldest), then the oldest pending.
  void make_room(SourceState& s) {
    auto victim_it = s.attempts.end();
    for (auto it = s.attempts.begin(); it != s.attempts.end(); ++it) {
      if (victim_it == s.attempts.end()) {
        victim_it = it;
        continue;
      }
      const auto& a = it->second;
      const auto& b = victim_it->second;
      const bool af = a.status == AttemptStatus::Failed, bf = b.status == AttemptStatus::Failed;
      if (af != bf ? af : (af ? a.failed_at < b.failed_at : a.start < b.start)) victim_it = it;
    }
    if (victim_it == s.attempts.end()) return;
    if (victim_it->second.status == AttemptStatus::Failed) --s.failed_count;
    s.attempts.erase(victim_it);
  }

  void expire_pending(Micros now, std::vector<Verdict>& out) {
    while (!pending_.empty() && pending_.front().deadline < now) {
      auto ref = pending_.front();
      pending_.pop_front();
      auto sit = sources_.find(ref.src);
      if (sit == sources_.end()) continue;
      auto ait = sit->second.attempts.find(ref.pair);
      if (ait == sit->second.attempts.end() || ait->second.status != AttemptStatus::Pending ||
          ait->second.start != ref.start)
        continue;
      record_failure(ref.src, sit->second, ait->second, ref.pair, ref.deadline, out);
    }
  }

  void fail_attempt(Ipv4 src, Ipv4 victim, std::uint16_t port, Micros now, std::vector<Verdict>& out) {
    auto sit = sources_.find(src);
    if (sit == sources_.end()) return;
    const auto k = pair_key(victim, port);
    auto ait = sit->second.attempts.find(k);
    if (ait == sit->second.attempts.end() || ait->second.status != AttemptStatus::Pending) return;
    record_failure(src, sit->second, ait->second, k, now, out);
  }

  void succeed_attempt(Ipv4 src, Ipv4 victim, std::uint16_t port) {
    auto sit = sources_.find(src);
    if (sit == sources_.end()) return;
    auto ait = sit->second.attempts.find(pair_key(victim, port));
    if (ait != sit->second.attempts.end() && ait->second.status == AttemptStatus::Pending)
      sit->second.attempts.erase(ait);
  }

  void record_failure(Ipv4 src, SourceState& s, Attempt& a, std::uint64_t pair, Micros at, std::vector<Verdict>& out) {
    a.status = AttemptStatus::Failed;
    a.failed_at = at;
    ++s.failed_count;

    if (!reported(src, Reason::Scan)) {
      s.failures.push_back(at);
      while (s.failures.front() <= at - cfg_.scan_window) s.failures.pop_front();
      if (s.failures.size() >= cfg_.scan_threshold)
        emit({at, src, Direction::Source, Reason::Scan, s.failures.size()}, out);
    }

    const Ipv4 victim(static_cast<std::uint32_t>(pair >> 32));
    if (reported(victim, Reason::DistSynVictim)) return;
    auto& v = victims_[victim];
    v.failures.emplace_back(at, src);
    ++v.in_window[src];
    pop_victim_window(v, at);
    if (v.in_window.size() >= cfg_.distsyn_source_threshold)
      emit({at, victim, Direction::Destination, Reason::DistSynVictim, v.in_window.size()}, out);
  }

  void pop_victim_window(VictimState& v, Micros end) {
    while (!v.failures.empty() && v.failures.front().first <= end - cfg_.distsyn_window) {
      auto it = v.in_window.find(v.failures.front().second);
      if (--it->second == 0) v.in_window.erase(it);
      v.failures.pop_front();
    }
  }

  void brute_event(Ipv4 src, std::uint16_t port, Micros now, std::vector<Verdict>& out) {
    const Reason r = port == 22 ? Reason::SshBrute : Reason::FtpBrute;
    if (reported(src, r)) return;
    auto& q = brute_[pair_key(src, port)];
    q.push_back(now);
    while (q.front() <= now - cfg_.brute_window) q.pop_front();
    if (q.size() >= cfg_.brute_threshold) emit({now, src, Direction::Source, r, q.size()}, out);
  }

  RuleConfig cfg_;
  std::unordered_map<Ipv4, SourceState> sources_;
  std::unordered_map<Ipv4, VictimState> victims_;
  std::unordered_map<std::uint64_t, std::deque<Micros>> brute_;
  std::unordered_map<FlowKey, SlowFlow, FlowKeyHash> slow_;
  std::deque<PendingRef> pending_;
  std::unordered_set<std::uint64_t> reported_;
  std::vector<Verdict> verdicts_;
};

// Sweep times k * interval for k >= 1, strictly before the horizon.
inline std::vector<Micros> sweep_grid(Micros horizon, Micros interval) {
  std::vector<Micros> out;
  for (Micros t = interval; t < horizon; t += interval) out.push_back(t);
  return out;
}

// Feeds a time-ordered packet list through a flow cache and the engine, sweeping on the grid
// (a sweep at t runs before packets stamped t) and once more at the last timestamp.
template <class Range>
std::vector<Verdict> run_ids(const Range& packets, const RuleConfig& cfg, std::size_t cache_capacity = 1 << 20) {
  IdsEngine eng(cfg);
  FlowCache cache(cache_capacity);
  Micros next_sweep = cfg.sweep_interval;
  Micros last{0};
  for (const auto& r : packets) {
    while (next_sweep <= r.ts) {
      eng.sweep(next_sweep);
      cache.expire_idle(next_sweep);
      next_sweep += cfg.sweep_interval;
    }
    const auto view = PacketView::from(r);
    auto u = cache.update(view);
    eng.observe(view, u.entry);
    last = r.ts;
  }
  eng.sweep(last);
  return eng.verdicts();
}

}  // namespace immunity
