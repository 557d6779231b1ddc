#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "immunity/packet.hpp"
#include "immunity/trace_io.hpp"

namespace immunity {

enum class Direction : std::uint8_t { Source = 0, Destination = 1 };

enum class Reason : std::uint8_t {
  Scan = 0,
  DistSynVictim = 1,
  Slowloris = 2,
  SshBrute = 3,
  FtpBrute = 4,
  HeavyHitter = 5,
};

inline constexpr std::string_view direction_name(Direction d) {
  return d == Direction::Source ? "source" : "destination";
}

inline std::optional<Direction> parse_direction(std::string_view s) {
  if (s == "source" || s == "src") return Direction::Source;
  if (s == "destination" || s == "dst") return Direction::Destination;
  return std::nullopt;
}

inline constexpr std::string_view reason_name(Reason r) {
  switch (r) {
    case Reason::Scan: return "scan";
    case Reason::DistSynVictim: return "distsyn_victim";
    case Reason::Slowloris: return "slowloris";
    case Reason::SshBrute: return "ssh_brute";
    case Reason::FtpBrute: return "ftp_brute";
    case Reason::HeavyHitter: return "heavy_hitter";
  }
  return "";
}

inline std::optional<Reason> parse_reason(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(Reason::HeavyHitter); ++i)
    if (reason_name(static_cast<Reason>(i)) == s) return static_cast<Reason>(i);
  return std::nullopt;
}

struct Prefix {
  Ipv4 addr;
  std::uint8_t len = 32;

  static std::uint32_t mask(std::uint8_t len) { return len == 0 ? 0 : ~std::uint32_t{0} << (32 - len); }

  bool contains(Ipv4 ip) const { return (ip.value & mask(len)) == addr.value; }
  bool operator==(const Prefix&) const = default;

  // Accepts "a.b.c.d" or "a.b.c.d/len"; host bits must be zero.
  static Prefix parse(std::string_view s) {
    Prefix p;
    auto slash = s.find('/');
    p.addr = Ipv4::parse(s.substr(0, slash));
    if (slash != std::string_view::npos) {
      auto ls = s.substr(slash + 1);
      unsigned len = 0;
      auto [ptr, ec] = std::from_chars(ls.data(), ls.data() + ls.size(), len);
      if (ec != std::errc{} || ptr != ls.data() + ls.size() || len > 32)
        throw std::invalid_argument("bad prefix length in '" + std::string(s) + "'");
      p.len = static_cast<std::uint8_t>(len);
    }
    if (p.addr.value & ~mask(p.len)) throw std::invalid_argument("host bits set in '" + std::string(s) + "'");
    return p;
  }

  std::string str() const { return addr.str() + "/" + std::to_string(len); }
};

struct MstEntry {
  Prefix match;
  Direction direction = Direction::Source;
  Reason reason = Reason::Scan;
  Micros inserted_at{0};
};

enum class MstInsertResult { Inserted, Duplicate, CapacityExceeded };

class MstTable {
 public:
  static constexpr std::size_t kDefaultCapacity = 10240;

  explicit MstTable(std::size_t capacity = kDefaultCapacity) : capacity_(capacity) {}

  MstInsertResult insert(const MstEntry& e) {
    if (e.direction == Direction::Destination && e.reason != Reason::DistSynVictim)
      throw std::invalid_argument("destination-direction MST entries are reserved for flood victims");
    if (e.match.addr.value & ~Prefix::mask(e.match.len)) throw std::invalid_argument("MST prefix has host bits set");
    if (find(e.direction, e.match)) return MstInsertResult::Duplicate;
    if (size() >= capacity_) {
      ++overflows_;
      return MstInsertResult::CapacityExceeded;
    }
    if (e.match.len == 32)
      exact_.emplace(exact_key(e.direction, e.match.addr), order_.size());
    else
      prefixes_.push_back(order_.size());
    order_.push_back(e);
    return MstInsertResult::Inserted;
  }

  std::optional<MstEntry> match(Direction d, Ipv4 ip) const {
    if (auto it = exact_.find(exact_key(d, ip)); it != exact_.end()) return order_[it->second];
    const MstEntry* best = nullptr;
    for (auto idx : prefixes_) {
      const auto& e = order_[idx];
      if (e.direction == d && e.match.contains(ip) && (!best || e.match.len > best->match.len)) best = &e;
    }
    if (best) return *best;
    return std::nullopt;
  }

  bool redirects(const FlowKey& key) const {
    return match(Direction::Source, key.src_ip).has_value() || match(Direction::Destination, key.dst_ip).has_value();
  }

  std::size_t size() const { return order_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t overflows() const { return overflows_; }
  const std::vector<MstEntry>& entries() const { return order_; }

  std::string export_csv() const {
    std::ostringstream out;
    out << "match,direction,reason,inserted_at\n";
    for (const auto& e : order_)
      out << e.match.str() << ',' << direction_name(e.direction) << ',' << reason_name(e.reason) << ','
          << format_seconds(e.inserted_at) << '\n';
    return out.str();
  }

  void export_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write MST export: " + path);
    out << export_csv();
  }

  // Blocklist lines: "<cidr>,<direction>,<reason>"; '#' comments and blank lines skipped.
  // Returns the number of entries inserted.
  std::size_t preload(std::istream& in, Micros now = Micros{0}) {
    std::string line;
    std::uint64_t lineno = 0;
    std::size_t inserted = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string tok; std::getline(ss, tok, ',');) f.push_back(tok);
      if (f.size() != 3) throw FormatError(lineno, "blocklist line needs cidr,direction,reason");
      MstEntry e;
      try {
        e.match = Prefix::parse(f[0]);
      } catch (const std::invalid_argument& ex) {
        throw FormatError(lineno, ex.what());
      }
      auto d = parse_direction(f[1]);
      auto r = parse_reason(f[2]);
      if (!d) throw FormatError(lineno, "bad direction '" + f[1] + "'");
      if (!r) throw FormatError(lineno, "bad reason '" + f[2] + "'");
      e.direction = *d;
      e.reason = *r;
      e.inserted_at = now;
      try {
        if (insert(e) == MstInsertResult::Inserted) ++inserted;
      } catch (const std::invalid_argument& ex) {
        throw FormatError(lineno, ex.what());
      }
    }
    return inserted;
  }

  std::size_t preload_file(const std::string& path, Micros now = Micros{0}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open blocklist: " + path);
    return preload(in, now);
  }

 private:
  static std::uint64_t exact_key(Direction d, Ipv4 ip) {
    return (std::uint64_t{static_cast<std::uint8_t>(d)} << 32) | ip.value;
  }

  const MstEntry* find(Direction d, const Prefix& p) const {
    if (p.len == 32) {
      auto it = exact_.find(exact_key(d, p.addr));
      return it == exact_.end() ? nullptr : &order_[it->second];
    }
    for (auto idx : prefixes_)
      if (order_[idx].direction == d && order_[idx].match == p) return &order_[idx];
    return nullptr;
  }

  std::size_t capacity_;
  std::vector<MstEntry> order_;
  std::unordered_map<std::uint64_t, std::size_t> exact_;
  std::vector<std::size_t> prefixes_;
  std::uint64_t overflows_ = 0;
};

}  // namespace immunity
