#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "immunity/off_filter.hpp"
#include "immunity/packet.hpp"

namespace immunity {

struct SketchConfig {
  std::uint32_t rows = 2;
  std::uint32_t cols = 32768;
  std::uint64_t threshold = 200'000;
  std::uint64_t salt = 0xc0ffee5ull;

  std::uint64_t memory_bytes() const { return std::uint64_t{rows} * cols * 4; }

  void validate() const {
    if (rows == 0) throw std::invalid_argument("sketch: rows must be >= 1");
    if (cols == 0 || (cols & (cols - 1)) != 0) throw std::invalid_argument("sketch: cols must be a power of two");
    if (threshold == 0) throw std::invalid_argument("sketch: threshold must be >= 1");
  }
};

class CountMinSketch {
 public:
  explicit CountMinSketch(SketchConfig config = {}) : config_(config) {
    config_.validate();
    counters_.assign(std::size_t{config_.rows} * config_.cols, 0);
  }

  const SketchConfig& config() const { return config_; }

  std::uint32_t update(const FlowKey& key) {
    std::uint32_t est = std::numeric_limits<std::uint32_t>::max();
    for (std::uint32_t r = 0; r < config_.rows; ++r) {
      auto& c = counters_[slot(r, key)];
      if (c != std::numeric_limits<std::uint32_t>::max()) ++c;
      est = std::min(est, c);
    }
    return est;
  }

  std::uint32_t estimate(const FlowKey& key) const {
    std::uint32_t est = std::numeric_limits<std::uint32_t>::max();
    for (std::uint32_t r = 0; r < config_.rows; ++r) est = std::min(est, counters_[slot(r, key)]);
    return est;
  }

  void reset() { std::fill(counters_.begin(), counters_.end(), 0); }

 private:
  std::size_t slot(std::uint32_t row, const FlowKey& key) const {
    const auto h = keyed_hash(config_.salt, static_cast<std::uint8_t>(0x10 + row), key);
    return std::size_t{row} * config_.cols + (h & (config_.cols - 1));
  }

  SketchConfig config_;
  std::vector<std::uint32_t> counters_;
};

enum class HhResult { Logged, BelowThreshold, AlreadyLogged, Dropped };

struct HhRecord {
  FlowKey key;
  std::uint32_t estimate = 0;
};

// Pending heavy-hitter reports; a key appears at most once between flushes.
class HeavyHitterLog {
 public:
  explicit HeavyHitterLog(std::uint64_t threshold, std::size_t capacity = 64)
      : threshold_(threshold), capacity_(capacity) {}

  HhResult check_and_log(const FlowKey& key, std::uint32_t estimate) {
    if (estimate < threshold_) return HhResult::BelowThreshold;
    if (window_.contains(key)) return HhResult::AlreadyLogged;
    if (pending_.size() >= capacity_) {
      ++drops_;
      return HhResult::Dropped;
    }
    window_.insert(key);
    pending_.push_back({key, estimate});
    return HhResult::Logged;
  }

  std::vector<HhRecord> flush() {
    std::vector<HhRecord> out;
    out.swap(pending_);
    window_.clear();
    return out;
  }

  std::size_t pending() const { return pending_.size(); }
  std::uint64_t drops() const { return drops_; }
  std::uint64_t threshold() const { return threshold_; }

 private:
  std::uint64_t threshold_;
  std::size_t capacity_;
  std::vector<HhRecord> pending_;
  std::unordered_set<FlowKey, FlowKeyHash> window_;
  std::uint64_t drops_ = 0;
};

}  // namespace immunity
