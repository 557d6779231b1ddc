#include <gtest/gtest.h>

#include <random>
#include <unordered_set>

#include "immunity/aging_bloom.hpp"

using namespace immunity;

namespace {

FlowKey key_of(std::uint32_t i) { return {Ipv4(i), Ipv4(~i), static_cast<std::uint16_t>(i), 80, 6}; }

// Step-through model of the swap rule with exact sets instead of bit arrays.
struct ExactAgingModel {
  std::uint64_t n;
  std::unordered_set<std::uint32_t> active, standby;
  std::uint64_t counter = 0;
  void insert(std::uint32_t k) {
    active.insert(k);
    if (++counter == n) {
      active = std::move(standby);
      standby.clear();
      counter = 0;
    }
  }
  bool lookup(std::uint32_t k) {
    bool hit = active.contains(k);
    if (hit) standby.insert(k);
    return hit;
  }
};

}  // namespace

TEST(AgingBloom, InsertThenLookupHits) {
  AgingBloom bf(AgingBloomConfig{.bits_per_array = 1 << 16, .k = 3, .swap_threshold = 100});
  bf.insert(key_of(1));
  EXPECT_TRUE(bf.lookup(key_of(1)));
}

TEST(AgingBloom, SwapPropagatesOnlyTouchedKeys) {
  AgingBloom bf(AgingBloomConfig{.bits_per_array = 1 << 20, .k = 2, .swap_threshold = 10});
  bf.insert(key_of(1));
  bf.insert(key_of(2));
  EXPECT_TRUE(bf.lookup(key_of(1)));  // re-touch 1 only
  for (std::uint32_t i = 100; i < 108; ++i) bf.insert(key_of(i));
  EXPECT_EQ(bf.swaps(), 1u);
  EXPECT_TRUE(bf.contains(key_of(1)));
  EXPECT_FALSE(bf.contains(key_of(2)));
}

TEST(AgingBloom, SwapsExactlyAtMultiplesOfN) {
  AgingBloom bf(AgingBloomConfig{.bits_per_array = 1 << 12, .k = 2, .swap_threshold = 37});
  for (std::uint32_t i = 1; i <= 37 * 5; ++i) {
    bf.insert(key_of(i));
    EXPECT_EQ(bf.swaps(), i / 37);
  }
}

TEST(AgingBloom, AgreesWithExactModelWhenCollisionFree) {
  // Large arrays relative to the live set make false positives vanishingly rare.
  AgingBloom bf(AgingBloomConfig{.bits_per_array = 1 << 24, .k = 4, .swap_threshold = 50});
  ExactAgingModel model{50, {}, {}};
  std::mt19937_64 rng(9);
  for (int op = 0; op < 20000; ++op) {
    auto k = static_cast<std::uint32_t>(rng() % 400);
    if (rng() % 2) {
      bf.insert(key_of(k));
      model.insert(k);
    } else {
      ASSERT_EQ(bf.lookup(key_of(k)), model.lookup(k)) << "op " << op;
    }
  }
}

TEST(AgingBloom, MemoryBudgetIsTwoArrays) {
  auto c = AgingBloomConfig::for_memory(4u << 20, 2'000'000);
  EXPECT_EQ(c.memory_bytes(), 4u << 20);
  AgingBloom bf(c);
  EXPECT_LE(bf.allocated_bits(), c.memory_bits());
}

TEST(AgingBloom, RejectsZeroSizes) {
  EXPECT_THROW(AgingBloom(AgingBloomConfig{.bits_per_array = 0}), std::invalid_argument);
  EXPECT_THROW(AgingBloom(AgingBloomConfig{.swap_threshold = 0}), std::invalid_argument);
}
