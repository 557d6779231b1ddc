#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "immunity/count_min.hpp"
#include "immunity/mst.hpp"
#include "immunity/packet.hpp"

namespace immunity::wire {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kFrameBytes = 60;
inline constexpr std::size_t kHeaderBytes = 4;
inline constexpr std::size_t kEntryBytes = 14;
inline constexpr std::size_t kMaxEntries = 3;
inline constexpr std::size_t kMstUpdateBytes = 12;
// Capacity math counts the 64-byte minimum Ethernet frame, FCS included.
inline constexpr double kWireFrameBytes = 64.0;

enum class MsgType : std::uint8_t { FlowLog = 1, HhLog = 2, OffInsert = 3, MstUpdate = 4 };

enum class WireError {
  TooManyEntries,
  EmptyBatch,
  BadVersion,
  BadType,
  BadCount,
  DirtyPadding,
  ShortFrame,
  BadLength,
  BadField,
};

inline constexpr std::string_view error_name(WireError e) {
  switch (e) {
    case WireError::TooManyEntries: return "TooManyEntries";
    case WireError::EmptyBatch: return "EmptyBatch";
    case WireError::BadVersion: return "BadVersion";
    case WireError::BadType: return "BadType";
    case WireError::BadCount: return "BadCount";
    case WireError::DirtyPadding: return "DirtyPadding";
    case WireError::ShortFrame: return "ShortFrame";
    case WireError::BadLength: return "BadLength";
    case WireError::BadField: return "BadField";
  }
  return "";
}

class WireException : public std::runtime_error {
 public:
  explicit WireException(WireError code, const std::string& detail = {})
      : std::runtime_error(std::string(error_name(code)) + (detail.empty() ? "" : ": " + detail)), code_(code) {}
  WireError code() const { return code_; }

 private:
  WireError code_;
};

using Frame = std::array<std::uint8_t, kFrameBytes>;
using MstFrame = std::array<std::uint8_t, kMstUpdateBytes>;

// min(7, floor(log2(1 + payload_len)))
inline constexpr std::uint8_t length_bucket(std::uint32_t payload_len) {
  const auto lg = static_cast<std::uint8_t>(std::bit_width(payload_len + 1) - 1);
  return lg > 7 ? 7 : lg;
}

// Smallest payload length mapping to `bucket`; the NIC's stand-in length in wire fidelity.
inline constexpr std::uint16_t bucket_floor(std::uint8_t bucket) {
  return static_cast<std::uint16_t>((1u << bucket) - 1);
}

struct FlowLogEntry {
  FlowKey key;
  std::uint8_t aux = 0;

  static FlowLogEntry make(const FlowKey& key, TcpFlags flags, std::uint32_t payload_len) {
    return {key, static_cast<std::uint8_t>(flags.bits() | (length_bucket(payload_len) << 5))};
  }
  TcpFlags flags() const { return TcpFlags(aux & TcpFlags::kMask); }
  std::uint8_t bucket() const { return aux >> 5; }

  bool operator==(const FlowLogEntry&) const = default;
};

struct HhLogEntry {
  FlowKey key;
  std::uint8_t log2_estimate = 0;  // min(255, floor(log2(estimate)))
  bool operator==(const HhLogEntry&) const = default;
};

inline std::uint8_t log2_estimate(std::uint64_t estimate) {
  if (estimate == 0) return 0;
  return static_cast<std::uint8_t>(std::min<int>(255, std::bit_width(estimate) - 1));
}

struct FlowLogMsg {
  std::vector<FlowLogEntry> entries;
  bool operator==(const FlowLogMsg&) const = default;
};
struct HhLogMsg {
  std::vector<HhLogEntry> entries;
  bool operator==(const HhLogMsg&) const = default;
};
struct OffInsertMsg {
  std::vector<FlowKey> keys;
  bool operator==(const OffInsertMsg&) const = default;
};
struct MstUpdateMsg {
  Direction direction = Direction::Source;
  std::uint8_t prefix_len = 32;
  Ipv4 addr;
  Reason reason = Reason::Scan;
  bool operator==(const MstUpdateMsg&) const = default;

  static MstUpdateMsg from_entry(const MstEntry& e) { return {e.direction, e.match.len, e.match.addr, e.reason}; }
  MstEntry to_entry(Micros at) const { return {Prefix{addr, prefix_len}, direction, reason, at}; }
};

using Message = std::variant<FlowLogMsg, HhLogMsg, OffInsertMsg, MstUpdateMsg>;

namespace detail {

inline Frame frame_header(MsgType type, std::size_t count) {
  if (count == 0) throw WireException(WireError::EmptyBatch);
  if (count > kMaxEntries) throw WireException(WireError::TooManyEntries, std::to_string(count) + " entries");
  Frame f{};
  f[0] = kVersion;
  f[1] = static_cast<std::uint8_t>(type);
  f[2] = static_cast<std::uint8_t>(count);
  f[3] = 0;
  return f;
}

inline void put_entry(Frame& f, std::size_t i, const FlowKey& key, std::uint8_t aux) {
  const std::size_t at = kHeaderBytes + i * kEntryBytes;
  key.serialize(std::span<std::uint8_t, kFlowKeyBytes>(f.data() + at, kFlowKeyBytes));
  f[at + kFlowKeyBytes] = aux;
}

}  // namespace detail

inline Frame encode_flow_log(std::span<const FlowLogEntry> entries) {
  auto f = detail::frame_header(MsgType::FlowLog, entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) detail::put_entry(f, i, entries[i].key, entries[i].aux);
  return f;
}

inline Frame encode_hh_log(std::span<const HhLogEntry> entries) {
  auto f = detail::frame_header(MsgType::HhLog, entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) detail::put_entry(f, i, entries[i].key, entries[i].log2_estimate);
  return f;
}

inline Frame encode_off_insert(std::span<const FlowKey> keys) {
  auto f = detail::frame_header(MsgType::OffInsert, keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) detail::put_entry(f, i, keys[i], 0);
  return f;
}

inline MstFrame encode_mst_update(const MstUpdateMsg& m) {
  if (m.prefix_len > 32) throw WireException(WireError::BadField, "prefix length");
  MstFrame f{};
  f[0] = kVersion;
  f[1] = static_cast<std::uint8_t>(MsgType::MstUpdate);
  f[2] = static_cast<std::uint8_t>(m.direction);
  f[3] = m.prefix_len;
  f[4] = static_cast<std::uint8_t>(m.addr.value >> 24);
  f[5] = static_cast<std::uint8_t>(m.addr.value >> 16);
  f[6] = static_cast<std::uint8_t>(m.addr.value >> 8);
  f[7] = static_cast<std::uint8_t>(m.addr.value);
  f[8] = static_cast<std::uint8_t>(m.reason);
  return f;
}

// Strict decoder: anything that would not re-encode to the same bytes is rejected.
inline Message decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw WireException(WireError::ShortFrame, std::to_string(bytes.size()) + " bytes");
  if (bytes[0] != kVersion) throw WireException(WireError::BadVersion, std::to_string(bytes[0]));
  const auto type = bytes[1];
  if (type < 1 || type > 4) throw WireException(WireError::BadType, std::to_string(type));

  if (type == static_cast<std::uint8_t>(MsgType::MstUpdate)) {
    if (bytes.size() < kMstUpdateBytes) throw WireException(WireError::ShortFrame);
    if (bytes.size() > kMstUpdateBytes) throw WireException(WireError::BadLength);
    MstUpdateMsg m;
    if (bytes[2] > 1) throw WireException(WireError::BadField, "direction");
    m.direction = static_cast<Direction>(bytes[2]);
    if (bytes[3] > 32) throw WireException(WireError::BadField, "prefix length");
    m.prefix_len = bytes[3];
    m.addr = Ipv4((std::uint32_t{bytes[4]} << 24) | (std::uint32_t{bytes[5]} << 16) |
                  (std::uint32_t{bytes[6]} << 8) | bytes[7]);
    if (m.addr.value & ~Prefix::mask(m.prefix_len)) throw WireException(WireError::BadField, "host bits");
    if (bytes[8] > static_cast<std::uint8_t>(Reason::HeavyHitter)) throw WireException(WireError::BadField, "reason");
    m.reason = static_cast<Reason>(bytes[8]);
    if (m.direction == Direction::Destination && m.reason != Reason::DistSynVictim)
      throw WireException(WireError::BadField, "destination entry with non-victim reason");
    for (std::size_t i = 9; i < kMstUpdateBytes; ++i)
      if (bytes[i]) throw WireException(WireError::DirtyPadding);
    return m;
  }

  if (bytes.size() < kFrameBytes) throw WireException(WireError::ShortFrame, std::to_string(bytes.size()) + " bytes");
  if (bytes.size() > kFrameBytes) throw WireException(WireError::BadLength, std::to_string(bytes.size()) + " bytes");
  const std::size_t count = bytes[2];
  if (count < 1 || count > kMaxEntries) throw WireException(WireError::BadCount, std::to_string(count));
  if (bytes[3] != 0) throw WireException(WireError::DirtyPadding, "reserved byte");
  for (std::size_t i = kHeaderBytes + count * kEntryBytes; i < kFrameBytes; ++i)
    if (bytes[i]) throw WireException(WireError::DirtyPadding, "offset " + std::to_string(i));

  auto key_at = [&](std::size_t i) {
    return FlowKey::deserialize(
        std::span<const std::uint8_t, kFlowKeyBytes>(bytes.data() + kHeaderBytes + i * kEntryBytes, kFlowKeyBytes));
  };
  auto aux_at = [&](std::size_t i) { return bytes[kHeaderBytes + i * kEntryBytes + kFlowKeyBytes]; };

  switch (static_cast<MsgType>(type)) {
    case MsgType::FlowLog: {
      FlowLogMsg m;
      for (std::size_t i = 0; i < count; ++i) m.entries.push_back({key_at(i), aux_at(i)});
      return m;
    }
    case MsgType::HhLog: {
      HhLogMsg m;
      for (std::size_t i = 0; i < count; ++i) m.entries.push_back({key_at(i), aux_at(i)});
      return m;
    }
    default: {
      OffInsertMsg m;
      for (std::size_t i = 0; i < count; ++i) {
        if (aux_at(i) != 0) throw WireException(WireError::BadField, "off_insert aux must be zero");
        m.keys.push_back(key_at(i));
      }
      return m;
    }
  }
}

template <class Side>
struct FlowLogBatch {
  Frame frame;
  std::vector<Side> side;  // out-of-band per-entry data, parallel to the frame's entries
  Micros emitted_at{0};
};

struct NoSide {};

// Switch-side accumulator: emits a frame on the third entry or once the oldest entry has
// waited `timeout`.
template <class Side = NoSide>
class FlowLogBuffer {
 public:
  explicit FlowLogBuffer(Micros timeout = Micros{1000}) : timeout_(timeout) {}

  std::optional<FlowLogBatch<Side>> push(const FlowLogEntry& entry, Micros now, Side side = {}) {
    if (entries_.empty()) oldest_ = now;
    entries_.push_back(entry);
    side_.push_back(std::move(side));
    if (entries_.size() == kMaxEntries || now - oldest_ >= timeout_) return emit(now);
    return std::nullopt;
  }

  std::optional<FlowLogBatch<Side>> poll(Micros now) {
    if (!entries_.empty() && now - oldest_ >= timeout_) return emit(now);
    return std::nullopt;
  }

  std::optional<FlowLogBatch<Side>> flush(Micros now) {
    if (entries_.empty()) return std::nullopt;
    return emit(now);
  }

  std::optional<Micros> deadline() const {
    if (entries_.empty()) return std::nullopt;
    return oldest_ + timeout_;
  }

  std::size_t size() const { return entries_.size(); }
  Micros timeout() const { return timeout_; }

 private:
  FlowLogBatch<Side> emit(Micros now) {
    FlowLogBatch<Side> b{encode_flow_log(entries_), std::move(side_), now};
    entries_.clear();
    side_.clear();
    return b;
  }

  Micros timeout_;
  Micros oldest_{0};
  std::vector<FlowLogEntry> entries_;
  std::vector<Side> side_;
};

}  // namespace immunity::wire
