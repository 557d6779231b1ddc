#pragma once

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>

namespace immunity {

// Trace time: microseconds since stream start.
using Micros = std::chrono::microseconds;

inline Micros from_seconds(double s) { return Micros(std::llround(s * 1e6)); }
inline double to_seconds(Micros t) { return static_cast<double>(t.count()) / 1e6; }

// Formats a non-negative timestamp as "<sec>.<6 digits>" without going through floating point.
inline std::string format_seconds(Micros t) {
  auto us = t.count();
  std::string sign;
  if (us < 0) {
    sign = "-";
    us = -us;
  }
  std::string frac = std::to_string(us % 1000000);
  return sign + std::to_string(us / 1000000) + "." + std::string(6 - frac.size(), '0') + frac;
}

struct Ipv4 {
  std::uint32_t value = 0;

  constexpr Ipv4() = default;
  constexpr explicit Ipv4(std::uint32_t v) : value(v) {}
  constexpr Ipv4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d)
      : value((std::uint32_t{a} << 24) | (std::uint32_t{b} << 16) | (std::uint32_t{c} << 8) | d) {}

  auto operator<=>(const Ipv4&) const = default;

  static std::optional<Ipv4> try_parse(std::string_view s) {
    std::uint32_t out = 0;
    const char* p = s.data();
    const char* end = s.data() + s.size();
    for (int octet = 0; octet < 4; ++octet) {
      unsigned v = 0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc{} || v > 255 || next == p) return std::nullopt;
      out = (out << 8) | v;
      p = next;
      if (octet < 3) {
        if (p == end || *p != '.') return std::nullopt;
        ++p;
      }
    }
    if (p != end) return std::nullopt;
    return Ipv4(out);
  }

  static Ipv4 parse(std::string_view s) {
    auto ip = try_parse(s);
    if (!ip) throw std::invalid_argument("bad IPv4 address '" + std::string(s) + "'");
    return *ip;
  }

  std::string str() const {
    return std::to_string(value >> 24) + "." + std::to_string((value >> 16) & 0xff) + "." +
           std::to_string((value >> 8) & 0xff) + "." + std::to_string(value & 0xff);
  }
};

// TCP flag subset carried by traces and flow-log entries. Bit positions are part of the
// binary trace and wire formats.
class TcpFlags {
 public:
  static constexpr std::uint8_t kSyn = 1 << 0;
  static constexpr std::uint8_t kAck = 1 << 1;
  static constexpr std::uint8_t kRst = 1 << 2;
  static constexpr std::uint8_t kFin = 1 << 3;
  static constexpr std::uint8_t kPsh = 1 << 4;
  static constexpr std::uint8_t kMask = 0x1f;

  constexpr TcpFlags() = default;
  constexpr explicit TcpFlags(std::uint8_t bits) : bits_(bits & kMask) {}

  constexpr std::uint8_t bits() const { return bits_; }
  constexpr bool syn() const { return bits_ & kSyn; }
  constexpr bool ack() const { return bits_ & kAck; }
  constexpr bool rst() const { return bits_ & kRst; }
  constexpr bool fin() const { return bits_ & kFin; }
  constexpr bool psh() const { return bits_ & kPsh; }
  // SYN without ACK: a connection opener.
  constexpr bool pure_syn() const { return syn() && !ack(); }

  constexpr bool operator==(const TcpFlags&) const = default;

  // Subset string over {S,A,R,F,P}; order-insensitive on input, canonical "SARFP" order on output.
  static TcpFlags parse(std::string_view s) {
    std::uint8_t bits = 0;
    for (char c : s) {
      switch (c) {
        case 'S': bits |= kSyn; break;
        case 'A': bits |= kAck; break;
        case 'R': bits |= kRst; break;
        case 'F': bits |= kFin; break;
        case 'P': bits |= kPsh; break;
        default: throw std::invalid_argument(std::string("unknown TCP flag '") + c + "'");
      }
    }
    return TcpFlags(bits);
  }

  std::string str() const {
    std::string out;
    if (syn()) out += 'S';
    if (ack()) out += 'A';
    if (rst()) out += 'R';
    if (fin()) out += 'F';
    if (psh()) out += 'P';
    return out;
  }

 private:
  std::uint8_t bits_ = 0;
};

// Ground-truth tag carried alongside records for accounting only.
enum class Label : std::uint8_t {
  Benign = 0,
  Scan = 1,
  DistSyn = 2,
  Slowloris = 3,
  SshBrute = 4,
  FtpBrute = 5,
  Incomplete = 6,
  NonBenign = 7,
  Unlabeled = 8,
};

inline constexpr std::string_view label_name(Label l) {
  switch (l) {
    case Label::Benign: return "benign";
    case Label::Scan: return "scan";
    case Label::DistSyn: return "distsyn";
    case Label::Slowloris: return "slowloris";
    case Label::SshBrute: return "ssh_brute";
    case Label::FtpBrute: return "ftp_brute";
    case Label::Incomplete: return "incomplete";
    case Label::NonBenign: return "non_benign";
    case Label::Unlabeled: return "";
  }
  return "";
}

inline std::optional<Label> parse_label(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(Label::Unlabeled); ++i) {
    auto l = static_cast<Label>(i);
    if (label_name(l) == s) return l;
  }
  return std::nullopt;
}

inline constexpr bool is_attack_label(Label l) {
  return l != Label::Benign && l != Label::Unlabeled;
}

inline constexpr std::size_t kFlowKeyBytes = 13;
inline constexpr std::uint8_t kProtoTcp = 6;

struct FlowKey {
  Ipv4 src_ip;
  Ipv4 dst_ip;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t proto = 0;

  auto operator<=>(const FlowKey&) const = default;

  FlowKey reverse() const { return {dst_ip, src_ip, dst_port, src_port, proto}; }

  // (src_ip, dst_ip, src_port, dst_port, proto), multi-byte fields big-endian.
  void serialize(std::span<std::uint8_t, kFlowKeyBytes> out) const {
    auto put32 = [&](std::size_t at, std::uint32_t v) {
      out[at] = static_cast<std::uint8_t>(v >> 24);
      out[at + 1] = static_cast<std::uint8_t>(v >> 16);
      out[at + 2] = static_cast<std::uint8_t>(v >> 8);
      out[at + 3] = static_cast<std::uint8_t>(v);
    };
    put32(0, src_ip.value);
    put32(4, dst_ip.value);
    out[8] = static_cast<std::uint8_t>(src_port >> 8);
    out[9] = static_cast<std::uint8_t>(src_port);
    out[10] = static_cast<std::uint8_t>(dst_port >> 8);
    out[11] = static_cast<std::uint8_t>(dst_port);
    out[12] = proto;
  }

  std::array<std::uint8_t, kFlowKeyBytes> bytes() const {
    std::array<std::uint8_t, kFlowKeyBytes> out{};
    serialize(out);
    return out;
  }

  static FlowKey deserialize(std::span<const std::uint8_t, kFlowKeyBytes> in) {
    auto get32 = [&](std::size_t at) {
      return (std::uint32_t{in[at]} << 24) | (std::uint32_t{in[at + 1]} << 16) |
             (std::uint32_t{in[at + 2]} << 8) | std::uint32_t{in[at + 3]};
    };
    FlowKey k;
    k.src_ip = Ipv4(get32(0));
    k.dst_ip = Ipv4(get32(4));
    k.src_port = static_cast<std::uint16_t>((in[8] << 8) | in[9]);
    k.dst_port = static_cast<std::uint16_t>((in[10] << 8) | in[11]);
    k.proto = in[12];
    return k;
  }

  std::string str() const {
    return src_ip.str() + ":" + std::to_string(src_port) + ">" + dst_ip.str() + ":" +
           std::to_string(dst_port) + "/" + std::to_string(proto);
  }
};

// Orders the two (ip, port) endpoints so both directions of a flow share one key.
inline FlowKey canonical_key(const FlowKey& k) {
  if (std::tie(k.src_ip, k.src_port) <= std::tie(k.dst_ip, k.dst_port)) return k;
  return k.reverse();
}

struct PacketRecord {
  Micros ts{0};
  FlowKey key;
  TcpFlags flags;
  std::uint16_t wire_len = 0;
  std::uint16_t payload_len = 0;
  Label label = Label::Unlabeled;

  bool operator==(const PacketRecord&) const = default;
};

struct FlowKeyHash {
  std::size_t operator()(const FlowKey& k) const noexcept {
    std::uint64_t a = (std::uint64_t{k.src_ip.value} << 32) | k.dst_ip.value;
    std::uint64_t b = (std::uint64_t{k.src_port} << 24) | (std::uint64_t{k.dst_port} << 8) | k.proto;
    std::uint64_t h = a * 0x9E3779B97F4A7C15ull ^ (b + 0x632BE59BD9B4E019ull + (a << 6) + (a >> 2));
    h ^= h >> 31;
    h *= 0xBF58476D1CE4E5B9ull;
    h ^= h >> 29;
    return static_cast<std::size_t>(h);
  }
};

}  // namespace immunity

template <>
struct std::hash<immunity::FlowKey> : immunity::FlowKeyHash {};

template <>
struct std::hash<immunity::Ipv4> {
  std::size_t operator()(const immunity::Ipv4& ip) const noexcept {
    std::uint64_t h = ip.value * 0x9E3779B97F4A7C15ull;
    return static_cast<std::size_t>(h ^ (h >> 32));
  }
};
