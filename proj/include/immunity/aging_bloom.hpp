#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "immunity/off_filter.hpp"
#include "immunity/packet.hpp"

namespace immunity {

struct AgingBloomConfig {
  std::uint64_t bits_per_array = 16ull << 20;
  std::uint32_t k = 2;
  std::uint64_t swap_threshold = 2'000'000;  // N inserts between swaps
  std::uint64_t salt = 0xb100f11e5ull;

  std::uint64_t memory_bits() const { return 2 * bits_per_array; }
  std::uint64_t memory_bytes() const { return memory_bits() / 8; }

  void validate() const {
    if (bits_per_array == 0) throw std::invalid_argument("aging bloom: array size must be > 0");
    if (k == 0) throw std::invalid_argument("aging bloom: k must be >= 1");
    if (swap_threshold == 0) throw std::invalid_argument("aging bloom: swap threshold must be > 0");
  }

  // Splits a total budget evenly across the active and standby arrays.
  static AgingBloomConfig for_memory(std::uint64_t total_bytes, std::uint64_t swap_threshold, std::uint32_t k = 2) {
    AgingBloomConfig c;
    c.bits_per_array = total_bytes * 8 / 2;
    c.swap_threshold = swap_threshold;
    c.k = k;
    return c;
  }
};

// Active/standby Bloom pair. Lookups that hit copy the key into standby so live flows
// survive the next swap.
class AgingBloom {
 public:
  explicit AgingBloom(AgingBloomConfig config = {}) : config_(config) {
    config_.validate();
    words_ = (config_.bits_per_array + 63) / 64;
    active_.assign(words_, 0);
    standby_.assign(words_, 0);
  }

  const AgingBloomConfig& config() const { return config_; }

  void insert(const FlowKey& key) {
    for_each_index(key, [&](std::uint64_t i) { set(active_, i); });
    if (++counter_ == config_.swap_threshold) swap_arrays();
  }

  bool lookup(const FlowKey& key) {
    bool hit = true;
    for_each_index(key, [&](std::uint64_t i) { hit &= test(active_, i); });
    if (hit) for_each_index(key, [&](std::uint64_t i) { set(standby_, i); });
    return hit;
  }

  bool contains(const FlowKey& key) const {
    bool hit = true;
    for_each_index(key, [&](std::uint64_t i) { hit &= test(active_, i); });
    return hit;
  }

  std::uint64_t swaps() const { return swaps_; }
  std::uint64_t counter() const { return counter_; }
  std::uint64_t allocated_bits() const { return 2 * words_ * 64; }

  double active_fill() const { return fill(active_); }

 private:
  template <class Fn>
  void for_each_index(const FlowKey& key, Fn&& fn) const {
    const std::uint64_t h = keyed_hash(config_.salt, 0x20, key);
    const std::uint64_t h1 = h & 0xffffffffull;
    const std::uint64_t h2 = (h >> 32) | 1;
    for (std::uint32_t i = 0; i < config_.k; ++i) fn((h1 + i * h2) % config_.bits_per_array);
  }

  static void set(std::vector<std::uint64_t>& a, std::uint64_t i) { a[i >> 6] |= std::uint64_t{1} << (i & 63); }
  static bool test(const std::vector<std::uint64_t>& a, std::uint64_t i) { return (a[i >> 6] >> (i & 63)) & 1; }

  double fill(const std::vector<std::uint64_t>& a) const {
    std::uint64_t n = 0;
    for (auto w : a) n += static_cast<std::uint64_t>(__builtin_popcountll(w));
    return static_cast<double>(n) / static_cast<double>(config_.bits_per_array);
  }

  void swap_arrays() {
    std::swap(active_, standby_);
    std::fill(standby_.begin(), standby_.end(), 0);
    counter_ = 0;
    ++swaps_;
  }

  AgingBloomConfig config_;
  std::uint64_t words_ = 0;
  std::vector<std::uint64_t> active_;
  std::vector<std::uint64_t> standby_;
  std::uint64_t counter_ = 0;
  std::uint64_t swaps_ = 0;
};

}  // namespace immunity
