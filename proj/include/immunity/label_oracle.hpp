#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "immunity/ids_rules.hpp"
#include "immunity/packet.hpp"

namespace immunity {

// Offline re-derivation of the rule verdicts with the whole trace in hand. Each verdict's
// ts is the instant its threshold is first met. Slow-open connections are sampled at the
// same instants the online engine sweeps: every sweep_interval (seeing packets strictly
// before the instant) and at the last timestamp (seeing everything).
class LabelOracle {
 public:
  LabelOracle(const std::vector<PacketRecord>& pkts, RuleConfig cfg) : pkts_(pkts), cfg_(std::move(cfg)) {
    cfg_.validate();
  }

  std::vector<Verdict> run() {
    if (pkts_.empty()) return {};
    horizon_ = pkts_.back().ts;
    build_flows();
    std::vector<Verdict> out;
    scan_and_distsyn(out);
    brute(out);
    slowloris(out);
    std::sort(out.begin(), out.end(), verdict_order);
    return out;
  }

  Micros horizon() const { return horizon_; }

 private:
  struct Flow {
    Ipv4 init, resp;
    std::uint16_t init_port = 0, resp_port = 0;
    std::vector<std::size_t> idx;
    std::optional<std::size_t> established;  // index of the completing ACK
  };

  bool from_initiator(const Flow& f, const PacketRecord& p) const {
    return p.key.src_ip == f.init && p.key.src_port == f.init_port;
  }

  void build_flows() {
    std::unordered_map<FlowKey, std::size_t, FlowKeyHash> by_key;
    for (std::size_t i = 0; i < pkts_.size(); ++i) {
      const auto& p = pkts_[i];
      auto [it, fresh] = by_key.try_emplace(canonical_key(p.key), flows_.size());
      if (fresh) {
        Flow f;
        const bool synack = p.flags.syn() && p.flags.ack();
        f.init = synack ? p.key.dst_ip : p.key.src_ip;
        f.init_port = synack ? p.key.dst_port : p.key.src_port;
        f.resp = synack ? p.key.src_ip : p.key.dst_ip;
        f.resp_port = synack ? p.key.src_port : p.key.dst_port;
        flows_.push_back(f);
      }
      flows_[it->second].idx.push_back(i);
    }
    for (auto& f : flows_) {
      int phase = 0;  // 0 nothing, 1 SYN, 2 SYN+ACK, 3 established, -1 reset first
      for (auto i : f.idx) {
        const auto& p = pkts_[i];
        const bool fwd = from_initiator(f, p);
        if (p.flags.rst()) {
          phase = -1;
          break;
        }
        if (phase == 0 && fwd && p.flags.pure_syn()) phase = 1;
        else if (phase == 1 && !fwd && p.flags.syn() && p.flags.ack()) phase = 2;
        else if (phase == 2 && fwd && p.flags.ack() && !p.flags.syn()) {
          f.established = i;
          break;
        }
      }
    }
  }

  enum class Ev { Syn, Rst, Est };
  struct Attempts {
    Ipv4 src, victim;
    std::vector<std::pair<std::size_t, Ev>> events;
  };

  void scan_and_distsyn(std::vector<Verdict>& out) {
    std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint16_t>, Attempts> pairs;
    auto add = [&](Ipv4 src, Ipv4 victim, std::uint16_t port, std::size_t i, Ev ev) {
      auto& a = pairs[{src.value, victim.value, port}];
      a.src = src;
      a.victim = victim;
      a.events.emplace_back(i, ev);
    };
    for (std::size_t i = 0; i < pkts_.size(); ++i) {
      const auto& p = pkts_[i];
      if (p.flags.pure_syn()) add(p.key.src_ip, p.key.dst_ip, p.key.dst_port, i, Ev::Syn);
      if (p.flags.rst()) {
        add(p.key.dst_ip, p.key.src_ip, p.key.src_port, i, Ev::Rst);
        add(p.key.src_ip, p.key.dst_ip, p.key.dst_port, i, Ev::Rst);
      }
    }
    for (const auto& f : flows_)
      if (f.established) add(f.init, f.resp, f.resp_port, *f.established, Ev::Est);

    std::map<std::uint32_t, std::vector<Micros>> by_src;
    std::map<std::uint32_t, std::vector<std::pair<Micros, std::uint32_t>>> by_victim;
    for (auto& [k, a] : pairs) {
      std::sort(a.events.begin(), a.events.end());
      std::optional<Micros> start;
      std::optional<Micros> failed;
      for (auto [i, ev] : a.events) {
        if (failed) break;
        const Micros t = pkts_[i].ts;
        if (start && t > *start + cfg_.attempt_grace) {
          failed = *start + cfg_.attempt_grace;
          break;
        }
        if (!start) {
          if (ev == Ev::Syn) start = t;
        } else if (ev == Ev::Rst) {
          failed = t;
        } else if (ev == Ev::Est) {
          start.reset();
        }
      }
      if (start && !failed) failed = *start + cfg_.attempt_grace;
      if (!failed) continue;
      by_src[a.src.value].push_back(*failed);
      by_victim[a.victim.value].emplace_back(*failed, a.src.value);
    }

    for (auto& [src, times] : by_src) {
      std::sort(times.begin(), times.end());
      std::size_t lo = 0;
      for (std::size_t hi = 0; hi < times.size(); ++hi) {
        while (times[lo] <= times[hi] - cfg_.scan_window) ++lo;
        if (hi - lo + 1 >= cfg_.scan_threshold) {
          out.push_back({times[hi], Ipv4(src), Direction::Source, Reason::Scan, hi - lo + 1});
          break;
        }
      }
    }
    for (auto& [victim, evs] : by_victim) {
      std::stable_sort(evs.begin(), evs.end(), [](auto& a, auto& b) { return a.first < b.first; });
      std::map<std::uint32_t, int> live;
      std::size_t lo = 0;
      for (std::size_t hi = 0; hi < evs.size(); ++hi) {
        ++live[evs[hi].second];
        while (evs[lo].first <= evs[hi].first - cfg_.distsyn_window) {
          if (--live[evs[lo].second] == 0) live.erase(evs[lo].second);
          ++lo;
        }
        if (live.size() >= cfg_.distsyn_source_threshold) {
          out.push_back({evs[hi].first, Ipv4(victim), Direction::Destination, Reason::DistSynVictim, live.size()});
          break;
        }
      }
    }
  }

  void brute(std::vector<Verdict>& out) {
    std::map<std::pair<std::uint32_t, std::uint16_t>, std::vector<Micros>> events;
    for (const auto& f : flows_) {
      if (!f.established || (f.resp_port != 22 && f.resp_port != 21)) continue;
      std::uint32_t data = 0;
      for (auto i : f.idx) {
        const auto& p = pkts_[i];
        if (from_initiator(f, p) && p.payload_len > 0) ++data;
        if (i >= *f.established && (p.flags.fin() || p.flags.rst())) {
          if (data < cfg_.brute_max_data_pkts) events[{f.init.value, f.resp_port}].push_back(p.ts);
          break;
        }
      }
    }
    for (auto& [k, times] : events) {
      std::sort(times.begin(), times.end());
      std::size_t lo = 0;
      for (std::size_t hi = 0; hi < times.size(); ++hi) {
        while (times[lo] <= times[hi] - cfg_.brute_window) ++lo;
        if (hi - lo + 1 >= cfg_.brute_threshold) {
          out.push_back({times[hi], Ipv4(k.first), Direction::Source,
                         k.second == 22 ? Reason::SshBrute : Reason::FtpBrute, hi - lo + 1});
          break;
        }
      }
    }
  }

  void slowloris(std::vector<Verdict>& out) {
    std::vector<const Flow*> cands;
    for (const auto& f : flows_)
      if (f.established && cfg_.slowloris_port(f.resp_port)) cands.push_back(&f);
    if (cands.empty()) return;

    std::vector<std::pair<Micros, bool>> samples;  // (instant, inclusive of packets at it)
    for (auto t : sweep_grid(horizon_ + Micros{1}, cfg_.sweep_interval)) samples.emplace_back(t, false);
    samples.emplace_back(horizon_, true);

    std::map<std::uint32_t, bool> done;
    for (auto [s, inclusive] : samples) {
      std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> counts;
      for (const Flow* f : cands) {
        if (!visible(pkts_[*f->established].ts, s, inclusive)) continue;
        const PacketRecord* last = nullptr;
        std::uint64_t payload = 0;
        for (auto i : f->idx) {
          const auto& p = pkts_[i];
          if (!visible(p.ts, s, inclusive)) break;
          if (from_initiator(*f, p)) payload += p.payload_len;
          if (i >= *f->established) last = &p;
        }
        if (!last || last->flags.fin() || last->flags.rst()) continue;
        if (s - last->ts > cfg_.slowloris_max_idle) continue;
        const Micros open = s - pkts_[f->idx.front()].ts;
        if (open >= cfg_.slowloris_min_open && cfg_.slow_rate(payload, open)) ++counts[{f->init.value, f->resp.value}];
      }
      std::map<std::uint32_t, std::uint32_t> worst;
      for (auto [k, n] : counts) worst[k.first] = std::max(worst[k.first], n);
      for (auto [src, n] : worst) {
        if (n < cfg_.slowloris_threshold || done[src]) continue;
        done[src] = true;
        out.push_back({s, Ipv4(src), Direction::Source, Reason::Slowloris, n});
      }
    }
  }

  static bool visible(Micros ts, Micros s, bool inclusive) { return inclusive ? ts <= s : ts < s; }

  const std::vector<PacketRecord>& pkts_;
  RuleConfig cfg_;
  Micros horizon_{0};
  std::vector<Flow> flows_;
};

inline std::vector<Verdict> label_oracle(const std::vector<PacketRecord>& pkts, const RuleConfig& cfg) {
  return LabelOracle(pkts, cfg).run();
}

}  // namespace immunity
