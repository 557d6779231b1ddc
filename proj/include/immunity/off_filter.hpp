#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "immunity/packet.hpp"
#include "immunity/siphash.hpp"
#include "immunity/trace_io.hpp"

namespace immunity {

struct OffConfig {
  std::uint64_t m = 1u << 20;  // buckets
  std::uint32_t b = 2;         // entries per bucket
  std::uint32_t f = 16;        // fingerprint bits
  std::uint32_t groups = 4;    // bucket groups; stages = b * groups
  std::uint64_t salt = 0x5eed0ff5a17ull;

  std::uint32_t stages() const { return b * groups; }
  std::uint64_t cells_per_stage() const { return m / groups; }
  std::uint64_t memory_bits() const { return m * b * f; }
  std::uint64_t memory_bytes() const { return memory_bits() / 8; }

  void validate() const {
    if (m == 0) throw std::invalid_argument("OFF: m must be > 0");
    if (b == 0) throw std::invalid_argument("OFF: b must be >= 1");
    if (f < 8 || f > 32) throw std::invalid_argument("OFF: f must lie in [8, 32]");
    if (groups == 0 || groups > m) throw std::invalid_argument("OFF: groups must lie in [1, m]");
    if (m % groups != 0) throw std::invalid_argument("OFF: m must be a multiple of groups");
  }

  // Shrinks the bucket count by `divisor`, keeping it a non-zero multiple of the group count.
  OffConfig scaled(std::uint64_t divisor) const {
    if (divisor == 0) throw std::invalid_argument("OFF: scale divisor must be > 0");
    OffConfig c = *this;
    c.m = std::max<std::uint64_t>(groups, (m / divisor) / groups * groups);
    return c;
  }

  // Largest m fitting `bytes` of fingerprint storage.
  static OffConfig for_memory(std::uint64_t bytes, std::uint32_t b, std::uint32_t f, std::uint32_t groups = 1) {
    OffConfig c;
    c.b = b;
    c.f = f;
    c.groups = groups;
    c.m = (bytes * 8 / (std::uint64_t{b} * f)) / groups * groups;
    return c;
  }
};

inline double off_theoretical_fpr(std::uint32_t b, std::uint32_t f) {
  return static_cast<double>(b) / std::ldexp(1.0, static_cast<int>(f));
}
inline double off_theoretical_fpr(const OffConfig& c) { return off_theoretical_fpr(c.b, c.f); }

struct OffHash {
  std::uint64_t bucket = 0;
  std::uint32_t fp = 0;
  bool operator==(const OffHash&) const = default;
};

inline constexpr std::uint8_t kDomainBucket = 0x01;
inline constexpr std::uint8_t kDomainFingerprint = 0x02;

inline std::uint64_t keyed_hash(std::uint64_t salt, std::uint8_t domain, const FlowKey& key) {
  std::array<std::uint8_t, 1 + kFlowKeyBytes> msg{};
  msg[0] = domain;
  key.serialize(std::span<std::uint8_t, kFlowKeyBytes>(msg.data() + 1, kFlowKeyBytes));
  return SipHash24::hash(salt, ~salt, msg);
}

inline OffHash off_hash_and_fingerprint(const FlowKey& key, const OffConfig& c) {
  const std::uint64_t fp_space = (std::uint64_t{1} << c.f) - 1;
  OffHash h;
  h.bucket = keyed_hash(c.salt, kDomainBucket, key) % c.m;
  h.fp = static_cast<std::uint32_t>(keyed_hash(c.salt, kDomainFingerprint, key) % fp_space + 1);
  return h;
}

struct NoProbe {
  void begin() {}
  void touch(std::uint32_t) {}
};

// Records per-operation register accesses to check the one-access-per-stage rule.
struct StageProbe {
  std::vector<std::uint32_t> current;
  std::uint64_t operations = 0;
  std::uint64_t violations = 0;
  std::uint64_t max_accesses = 0;

  void begin() {
    current.clear();
    ++operations;
  }
  void touch(std::uint32_t stage) {
    if (!current.empty() && stage <= current.back()) ++violations;
    current.push_back(stage);
    max_accesses = std::max<std::uint64_t>(max_accesses, current.size());
  }
};

struct EvictionReport {
  std::optional<std::uint32_t> evicted;
};

inline constexpr std::uint32_t kOffSnapshotVersion = 1;
inline constexpr char kOffSnapshotMagic[8] = {'I', 'M', 'O', 'F', 'F', 'S', 'N', 'P'};

template <class Probe = NoProbe>
class BasicOffFilter {
 public:
  static constexpr std::uint32_t kEmpty = 0;

  explicit BasicOffFilter(OffConfig config = {}) : config_(config) {
    config_.validate();
    registers_.assign(config_.stages(), std::vector<std::uint32_t>(config_.cells_per_stage(), kEmpty));
  }

  const OffConfig& config() const { return config_; }
  OffHash hash(const FlowKey& key) const { return off_hash_and_fingerprint(key, config_); }

  bool lookup(const FlowKey& key) const { return lookup(hash(key)); }

  bool lookup(const OffHash& h) const {
    probe_.begin();
    const auto [base, cell] = locate(h.bucket);
    bool hit = false;
    for (std::uint32_t j = 0; j < config_.b; ++j) {
      probe_.touch(base + j);
      hit |= registers_[base + j][cell] == h.fp;
    }
    return hit;
  }

  EvictionReport insert(const FlowKey& key) { return insert(hash(key)); }

  // Single pass over the bucket's stages: each stage writes the value carried from the
  // previous one and hands its old occupant to the next.
  EvictionReport insert(const OffHash& h) {
    probe_.begin();
    const auto [base, cell] = locate(h.bucket);
    std::uint32_t carry = h.fp;
    for (std::uint32_t j = 0; j < config_.b; ++j) {
      probe_.touch(base + j);
      std::swap(carry, registers_[base + j][cell]);
    }
    ++inserts_;
    if (carry == kEmpty) return {};
    return {carry};
  }

  // Bucket contents, entry 0 first.
  std::vector<std::uint32_t> bucket(std::uint64_t index) const {
    const auto [base, cell] = locate(index);
    std::vector<std::uint32_t> out(config_.b);
    for (std::uint32_t j = 0; j < config_.b; ++j) out[j] = registers_[base + j][cell];
    return out;
  }

  std::uint64_t occupied_cells() const {
    std::uint64_t n = 0;
    for (const auto& r : registers_)
      n += static_cast<std::uint64_t>(std::count_if(r.begin(), r.end(), [](auto v) { return v != kEmpty; }));
    return n;
  }

  double occupancy() const {
    return static_cast<double>(occupied_cells()) / static_cast<double>(config_.m * config_.b);
  }

  // Expected FPR for an absent key given the current fill level (saturated: b / (2^f - 1)).
  double observed_occupancy_fpr() const {
    const double fp_space = std::ldexp(1.0, static_cast<int>(config_.f)) - 1.0;
    return static_cast<double>(occupied_cells()) / static_cast<double>(config_.m) / fp_space;
  }

  std::uint64_t inserts() const { return inserts_; }
  Probe& probe() const { return probe_; }

  void clear() {
    for (auto& r : registers_) std::fill(r.begin(), r.end(), kEmpty);
    inserts_ = 0;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write OFF snapshot: " + path);
    out.write(kOffSnapshotMagic, sizeof kOffSnapshotMagic);
    put_u32(out, kOffSnapshotVersion);
    put_u64(out, config_.m);
    put_u32(out, config_.b);
    put_u32(out, config_.f);
    put_u32(out, config_.groups);
    put_u64(out, config_.salt);
    const unsigned width = cell_width(config_.f);
    for (const auto& r : registers_)
      for (auto v : r)
        for (unsigned i = 0; i < width; ++i) out.put(static_cast<char>(v >> (8 * i)));
    if (!out) throw IoError("write failed: " + path);
  }

  static BasicOffFilter load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open OFF snapshot: " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + 8, kOffSnapshotMagic)) throw FormatError(0, "not an OFF snapshot");
    if (get_u32(in) != kOffSnapshotVersion) throw FormatError(0, "unsupported OFF snapshot version");
    OffConfig c;
    c.m = get_u64(in);
    c.b = get_u32(in);
    c.f = get_u32(in);
    c.groups = get_u32(in);
    c.salt = get_u64(in);
    if (!in) throw FormatError(0, "truncated OFF snapshot header");
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw FormatError(0, e.what());
    }
    BasicOffFilter filter(c);
    const unsigned width = cell_width(c.f);
    const std::uint32_t fp_max = static_cast<std::uint32_t>((std::uint64_t{1} << c.f) - 1);
    std::vector<char> buf(width);
    for (auto& r : filter.registers_) {
      for (auto& v : r) {
        in.read(buf.data(), width);
        if (!in) throw FormatError(0, "truncated OFF snapshot body");
        v = 0;
        for (unsigned i = 0; i < width; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(buf[i])} << (8 * i);
        if (v > fp_max) throw FormatError(0, "cell value exceeds fingerprint width");
      }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(0, "trailing bytes in OFF snapshot");
    return filter;
  }

  bool same_state(const BasicOffFilter& other) const {
    return config_.m == other.config_.m && config_.b == other.config_.b && config_.f == other.config_.f &&
           config_.groups == other.config_.groups && config_.salt == other.config_.salt &&
           registers_ == other.registers_;
  }

 private:
  struct Location {
    std::uint32_t base;
    std::uint64_t cell;
  };

  // Bucket i lives in group i % groups at cell i / groups; entry j is register group * b + j.
  Location locate(std::uint64_t bucket) const {
    const auto group = static_cast<std::uint32_t>(bucket % config_.groups);
    return {group * config_.b, bucket / config_.groups};
  }

  static unsigned cell_width(std::uint32_t f) { return f <= 8 ? 1 : f <= 16 ? 2 : 4; }

  static void put_u32(std::ostream& o, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) o.put(static_cast<char>(v >> (8 * i)));
  }
  static void put_u64(std::ostream& o, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) o.put(static_cast<char>(v >> (8 * i)));
  }
  static std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(in.get())} << (8 * i);
    return v;
  }
  static std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<std::uint8_t>(in.get())} << (8 * i);
    return v;
  }

  OffConfig config_;
  std::vector<std::vector<std::uint32_t>> registers_;
  std::uint64_t inserts_ = 0;
  [[no_unique_address]] mutable Probe probe_{};
};

using OffFilter = BasicOffFilter<NoProbe>;

}  // namespace immunity
