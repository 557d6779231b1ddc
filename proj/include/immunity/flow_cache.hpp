#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iterator>
#include <limits>
#include <list>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "immunity/packet.hpp"

namespace immunity {

enum class Handshake : std::uint8_t { None, SynSeen, SynAckSeen, Established, Reset };
enum class FlowStatus : std::uint8_t { Unknown, Benign, Reported };

inline constexpr std::string_view handshake_name(Handshake h) {
  switch (h) {
    case Handshake::None: return "none";
    case Handshake::SynSeen: return "syn_seen";
    case Handshake::SynAckSeen: return "synack_seen";
    case Handshake::Established: return "established";
    case Handshake::Reset: return "reset";
  }
  return "";
}

inline constexpr std::string_view status_name(FlowStatus s) {
  switch (s) {
    case FlowStatus::Unknown: return "unknown";
    case FlowStatus::Benign: return "benign";
    case FlowStatus::Reported: return "reported";
  }
  return "";
}

enum FlagIndex : std::size_t { kFlagSyn, kFlagAck, kFlagRst, kFlagFin, kFlagPsh, kFlagCount };

// What the NIC learns about one packet: header fields plus its receipt time.
struct PacketView {
  FlowKey key;  // directional, as sent
  TcpFlags flags;
  std::uint16_t wire_len = 0;
  std::uint16_t payload_len = 0;
  Micros ts{0};

  static PacketView from(const PacketRecord& r) { return {r.key, r.flags, r.wire_len, r.payload_len, r.ts}; }
};

struct FlowEntry {
  FlowKey key;                  // canonical
  bool initiator_is_src = true;  // initiator is key.src endpoint
  Micros first_ts{0};
  Micros last_ts{0};
  Micros min_iat = Micros::max();
  std::uint64_t bytes_fwd = 0;
  std::uint64_t bytes_bwd = 0;
  std::uint64_t payload_fwd = 0;
  std::uint32_t pkts_fwd = 0;
  std::uint32_t pkts_bwd = 0;
  std::uint32_t data_pkts_fwd = 0;
  std::array<std::uint32_t, kFlagCount> flag_counts{};
  std::uint16_t min_len_fwd = std::numeric_limits<std::uint16_t>::max();
  std::uint16_t max_len_any = 0;
  Handshake handshake = Handshake::None;
  FlowStatus status = FlowStatus::Unknown;
  bool established_once = false;
  bool fin_seen = false;
  bool rst_seen = false;
  std::uint8_t rule_marks = 0;  // one-shot markers owned by the rule engine

  std::uint32_t packets() const { return pkts_fwd + pkts_bwd; }

  // Key oriented from initiator to responder.
  FlowKey forward_key() const { return initiator_is_src ? key : key.reverse(); }
  Ipv4 initiator() const { return forward_key().src_ip; }
  Ipv4 responder() const { return forward_key().dst_ip; }

  bool is_forward(const FlowKey& directional) const { return directional == forward_key(); }

  bool operator==(const FlowEntry&) const = default;
};

// Seeds a new entry from its first packet. A bare SYN's sender initiates; a SYN+ACK's
// receiver does; otherwise the first sender is taken as initiator.
inline FlowEntry make_flow_entry(const PacketView& p) {
  FlowEntry e;
  e.key = canonical_key(p.key);
  const bool sender_initiates = !(p.flags.syn() && p.flags.ack());
  const bool sender_is_src = p.key == e.key;
  e.initiator_is_src = sender_initiates == sender_is_src;
  e.first_ts = p.ts;
  e.last_ts = p.ts;
  return e;
}

inline void apply_packet(FlowEntry& e, const PacketView& p) {
  const bool fwd = e.is_forward(p.key);
  const auto flags = p.flags;
  if (e.packets() > 0) {
    const Micros gap = p.ts >= e.last_ts ? p.ts - e.last_ts : Micros{0};
    e.min_iat = std::min(e.min_iat, gap);
  }
  e.last_ts = std::max(e.last_ts, p.ts);
  if (fwd) {
    ++e.pkts_fwd;
    e.bytes_fwd += p.wire_len;
    e.payload_fwd += p.payload_len;
    e.min_len_fwd = std::min(e.min_len_fwd, p.wire_len);
    if (p.payload_len > 0) ++e.data_pkts_fwd;
  } else {
    ++e.pkts_bwd;
    e.bytes_bwd += p.wire_len;
  }
  e.max_len_any = std::max(e.max_len_any, p.wire_len);
  if (flags.syn()) ++e.flag_counts[kFlagSyn];
  if (flags.ack()) ++e.flag_counts[kFlagAck];
  if (flags.rst()) ++e.flag_counts[kFlagRst];
  if (flags.fin()) ++e.flag_counts[kFlagFin];
  if (flags.psh()) ++e.flag_counts[kFlagPsh];
  e.fin_seen |= flags.fin();
  e.rst_seen |= flags.rst();

  if (flags.rst()) {
    e.handshake = Handshake::Reset;
    return;
  }
  switch (e.handshake) {
    case Handshake::None:
      if (fwd && flags.pure_syn()) e.handshake = Handshake::SynSeen;
      break;
    case Handshake::SynSeen:
      if (!fwd && flags.syn() && flags.ack()) e.handshake = Handshake::SynAckSeen;
      break;
    case Handshake::SynAckSeen:
      if (fwd && flags.ack() && !flags.syn()) {
        e.handshake = Handshake::Established;
        e.established_once = true;
      }
      break;
    case Handshake::Established:
    case Handshake::Reset:
      break;
  }
}

class FlowNotFound : public std::runtime_error {
 public:
  explicit FlowNotFound(const FlowKey& k) : std::runtime_error("flow not found: " + k.str()) {}
};

enum class FlowEvent { Created, Updated, PromotedFromOverflow };

struct FlowUpdate {
  FlowEntry& entry;
  FlowEvent event;
};

// Two-tier flow table: a bounded primary buffer ordered by Bubble LRU (a hit swaps the
// entry one step toward MRU) and an unbounded overflow store standing in for host memory.
class FlowCache {
 public:
  static constexpr std::size_t kDefaultCapacity = 110'000;
  static constexpr Micros kDefaultIdleTimeout{60'000'000};

  explicit FlowCache(std::size_t capacity = kDefaultCapacity, Micros idle_timeout = kDefaultIdleTimeout)
      : capacity_(capacity), idle_timeout_(idle_timeout) {
    if (capacity_ == 0) throw std::invalid_argument("flow cache capacity must be > 0");
  }

  FlowUpdate update(const PacketView& p) {
    const FlowKey ck = canonical_key(p.key);
    if (auto it = index_.find(ck); it != index_.end()) {
      apply_packet(*it->second, p);
      auto& entry = *it->second;
      bubble_touch(ck);
      return {entry, FlowEvent::Updated};
    }
    if (auto ov = overflow_.find(ck); ov != overflow_.end()) {
      FlowEntry e = std::move(ov->second);
      overflow_.erase(ov);
      apply_packet(e, p);
      return {insert_front(std::move(e)), FlowEvent::PromotedFromOverflow};
    }
    FlowEntry e = make_flow_entry(p);
    apply_packet(e, p);
    return {insert_front(std::move(e)), FlowEvent::Created};
  }

  // One-step swap toward MRU; an entry already at MRU stays.
  void bubble_touch(const FlowKey& canonical) {
    auto it = index_.find(canonical);
    if (it == index_.end()) throw FlowNotFound(canonical);
    auto pos = it->second;
    if (pos == order_.begin()) return;
    order_.splice(std::prev(pos), order_, pos);
  }

  // Moves the LRU-end entry to overflow if the primary buffer is full.
  std::optional<FlowKey> evict_if_full() {
    if (order_.size() < capacity_) return std::nullopt;
    auto last = std::prev(order_.end());
    FlowKey k = last->key;
    index_.erase(k);
    overflow_.emplace(k, std::move(*last));
    order_.erase(last);
    ++evictions_;
    return k;
  }

  void retire(const FlowKey& canonical) {
    if (auto it = index_.find(canonical); it != index_.end()) {
      order_.erase(it->second);
      index_.erase(it);
      return;
    }
    if (overflow_.erase(canonical) == 0) throw FlowNotFound(canonical);
  }

  const FlowEntry* find(const FlowKey& canonical) const {
    if (auto it = index_.find(canonical); it != index_.end()) return &*it->second;
    if (auto ov = overflow_.find(canonical); ov != overflow_.end()) return &ov->second;
    return nullptr;
  }

  FlowEntry* find(const FlowKey& canonical) {
    return const_cast<FlowEntry*>(static_cast<const FlowCache*>(this)->find(canonical));
  }

  bool in_primary(const FlowKey& canonical) const { return index_.contains(canonical); }
  bool in_overflow(const FlowKey& canonical) const { return overflow_.contains(canonical); }

  // Drops entries idle for at least the configured timeout from both tiers.
  std::size_t expire_idle(Micros now) {
    std::size_t n = 0;
    for (auto it = order_.begin(); it != order_.end();) {
      if (now - it->last_ts >= idle_timeout_) {
        index_.erase(it->key);
        it = order_.erase(it);
        ++n;
      } else {
        ++it;
      }
    }
    n += std::erase_if(overflow_, [&](const auto& kv) { return now - kv.second.last_ts >= idle_timeout_; });
    expired_ += n;
    return n;
  }

  std::vector<FlowKey> order() const {
    std::vector<FlowKey> out;
    for (const auto& e : order_) out.push_back(e.key);
    return out;
  }

  template <class Fn>
  void for_each(Fn&& fn) const {
    for (const auto& e : order_) fn(e);
    for (const auto& [k, e] : overflow_) fn(e);
  }

  std::size_t primary_size() const { return order_.size(); }
  std::size_t overflow_size() const { return overflow_.size(); }
  std::size_t size() const { return primary_size() + overflow_size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t evictions() const { return evictions_; }
  std::uint64_t expired() const { return expired_; }
  Micros idle_timeout() const { return idle_timeout_; }

  // Approximate resident bytes per primary entry: payload, list links, hash node, bucket slot.
  static constexpr std::size_t bytes_per_entry() {
    return sizeof(FlowEntry) + 2 * sizeof(void*) + sizeof(FlowKey) + sizeof(void*) * 2 + sizeof(std::size_t) +
           sizeof(void*);
  }

  static std::size_t shard_of(const FlowKey& key, std::size_t shards) {
    return FlowKeyHash{}(canonical_key(key)) % shards;
  }

  bool tiers_exclusive() const {
    for (const auto& e : order_)
      if (overflow_.contains(e.key)) return false;
    return index_.size() == order_.size();
  }

 private:
  FlowEntry& insert_front(FlowEntry e) {
    evict_if_full();
    order_.push_front(std::move(e));
    index_[order_.front().key] = order_.begin();
    return order_.front();
  }

  std::size_t capacity_;
  Micros idle_timeout_;
  std::list<FlowEntry> order_;  // front = MRU
  std::unordered_map<FlowKey, std::list<FlowEntry>::iterator, FlowKeyHash> index_;
  std::unordered_map<FlowKey, FlowEntry, FlowKeyHash> overflow_;
  std::uint64_t evictions_ = 0;
  std::uint64_t expired_ = 0;
};

inline constexpr std::string_view kFlowDumpHeader =
    "src_ip,dst_ip,src_port,dst_port,proto,first_ts,last_ts,pkts_fwd,pkts_bwd,bytes_fwd,bytes_bwd,"
    "min_len_fwd,max_len_any,min_iat,syn,ack,rst,fin,psh,data_pkts_fwd,payload_fwd,handshake,status";

// One dump row, 5-tuple oriented initiator -> responder.
inline std::string flow_dump_row(const FlowEntry& e) {
  const auto k = e.forward_key();
  std::string s = k.src_ip.str() + ',' + k.dst_ip.str() + ',' + std::to_string(k.src_port) + ',' +
                  std::to_string(k.dst_port) + ',' + std::to_string(k.proto) + ',' + format_seconds(e.first_ts) +
                  ',' + format_seconds(e.last_ts) + ',' + std::to_string(e.pkts_fwd) + ',' +
                  std::to_string(e.pkts_bwd) + ',' + std::to_string(e.bytes_fwd) + ',' + std::to_string(e.bytes_bwd) +
                  ',' + std::to_string(e.pkts_fwd ? e.min_len_fwd : 0) + ',' + std::to_string(e.max_len_any) + ',' +
                  format_seconds(e.min_iat == Micros::max() ? Micros{0} : e.min_iat);
  for (auto c : e.flag_counts) s += ',' + std::to_string(c);
  s += ',' + std::to_string(e.data_pkts_fwd) + ',' + std::to_string(e.payload_fwd) + ',';
  s += handshake_name(e.handshake);
  s += ',';
  s += status_name(e.status);
  return s;
}

inline void dump_flows(const FlowCache& cache, std::ostream& out) {
  out << kFlowDumpHeader << '\n';
  cache.for_each([&](const FlowEntry& e) { out << flow_dump_row(e) << '\n'; });
}

}  // namespace immunity
