#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <filesystem>
#include <map>
#include <random>

#include <unistd.h>

#include "immunity/off_filter.hpp"

using namespace immunity;

namespace {

FlowKey random_key(std::mt19937_64& rng, std::uint8_t proto = 6) {
  return {Ipv4(static_cast<std::uint32_t>(rng())), Ipv4(static_cast<std::uint32_t>(rng())),
          static_cast<std::uint16_t>(rng()), static_cast<std::uint16_t>(rng()), proto};
}

// Explicit per-bucket FIFO holding at most b fingerprints, newest first.
class FifoOracle {
 public:
  explicit FifoOracle(std::uint32_t b) : b_(b) {}
  std::optional<std::uint32_t> insert(const OffHash& h) {
    auto& q = buckets_[h.bucket];
    q.push_front(h.fp);
    if (q.size() > b_) {
      auto ev = q.back();
      q.pop_back();
      return ev;
    }
    return std::nullopt;
  }
  bool lookup(const OffHash& h) const {
    auto it = buckets_.find(h.bucket);
    if (it == buckets_.end()) return false;
    return std::find(it->second.begin(), it->second.end(), h.fp) != it->second.end();
  }
  std::vector<std::uint32_t> contents(std::uint64_t bucket) const {
    std::vector<std::uint32_t> out(b_, 0);
    if (auto it = buckets_.find(bucket); it != buckets_.end())
      std::copy(it->second.begin(), it->second.end(), out.begin());
    return out;
  }

 private:
  std::uint32_t b_;
  std::map<std::uint64_t, std::deque<std::uint32_t>> buckets_;
};

template <class Filter>
void saturate(Filter& off, std::mt19937_64& rng) {
  const auto cells = off.config().m * off.config().b;
  while (off.occupied_cells() < cells)
    for (std::uint64_t i = 0; i < cells; ++i) off.insert(random_key(rng));
}

}  // namespace

TEST(OffConfig, DefaultShapeIsFourMegabytesOverEightStages) {
  OffConfig c;
  EXPECT_EQ(c.stages(), 8u);
  EXPECT_EQ(c.cells_per_stage(), 1u << 18);
  EXPECT_EQ(c.memory_bits(), 8ull * (1u << 18) * 16);
  EXPECT_EQ(c.memory_bytes(), 4u << 20);
}

TEST(OffConfig, Validation) {
  OffConfig c;
  c.f = 7;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.b = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.m = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.m = 6;
  c.groups = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(OffConfig, ScaledKeepsGroupMultiple) {
  OffConfig c;
  auto s = c.scaled(1000);
  EXPECT_EQ(s.m % s.groups, 0u);
  EXPECT_EQ(s.m, 1048u);
  EXPECT_EQ(c.scaled(1u << 30).m, c.groups);
}

TEST(OffTheory, FprFormula) {
  EXPECT_NEAR(off_theoretical_fpr(2, 16), 3.0518e-5, 1e-9);
  EXPECT_DOUBLE_EQ(off_theoretical_fpr(1, 1), 0.5);
  EXPECT_NEAR(off_theoretical_fpr(4, 16), 6.1035e-5, 1e-9);
  // Larger b at fixed f never lowers the bound.
  for (std::uint32_t b = 1; b < 8; ++b) EXPECT_LE(off_theoretical_fpr(b, 16), off_theoretical_fpr(b + 1, 16));
}

TEST(OffHashing, SingleBucketAndNonZeroFingerprints) {
  std::mt19937_64 rng(1);
  OffConfig c;
  c.m = 1;
  c.groups = 1;
  c.f = 8;
  for (int i = 0; i < 1'000'000; ++i) {
    auto h = off_hash_and_fingerprint(random_key(rng), c);
    ASSERT_EQ(h.bucket, 0u);
    ASSERT_GE(h.fp, 1u);
    ASSERT_LE(h.fp, 255u);
  }
}

TEST(OffHashing, SaltChangesPlacement) {
  std::mt19937_64 rng(2);
  OffConfig a, b;
  b.salt = a.salt + 1;
  int same = 0;
  for (int i = 0; i < 1000; ++i) {
    auto k = random_key(rng);
    same += off_hash_and_fingerprint(k, a) == off_hash_and_fingerprint(k, b);
  }
  EXPECT_EQ(same, 0);
}

TEST(OffFilter, FreshFilterMissesEverything) {
  OffFilter off(OffConfig{.m = 1024, .b = 2, .f = 16, .groups = 4});
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10000; ++i) EXPECT_FALSE(off.lookup(random_key(rng)));
}

TEST(OffFilter, InsertIntoEmptyBucketEvictsNothing) {
  OffFilter off(OffConfig{.m = 1024, .b = 2, .f = 16, .groups = 4});
  FlowKey k{Ipv4(1, 1, 1, 1), Ipv4(2, 2, 2, 2), 1, 2, 6};
  EXPECT_FALSE(off.insert(k).evicted.has_value());
  EXPECT_TRUE(off.lookup(k));
  EXPECT_EQ(off.bucket(off.hash(k).bucket)[0], off.hash(k).fp);
}

TEST(OffFilter, SingleBucketFifoEviction) {
  OffFilter off(OffConfig{.m = 1, .b = 2, .f = 16, .groups = 1});
  FlowKey x{Ipv4(1, 0, 0, 1), Ipv4(2, 0, 0, 1), 1, 1, 6};
  FlowKey y{Ipv4(1, 0, 0, 2), Ipv4(2, 0, 0, 2), 2, 2, 6};
  FlowKey z{Ipv4(1, 0, 0, 3), Ipv4(2, 0, 0, 3), 3, 3, 6};
  ASSERT_NE(off.hash(x).fp, off.hash(y).fp);
  ASSERT_NE(off.hash(x).fp, off.hash(z).fp);
  off.insert(x);
  off.insert(y);
  auto ev = off.insert(z);
  ASSERT_TRUE(ev.evicted.has_value());
  EXPECT_EQ(*ev.evicted, off.hash(x).fp);
  EXPECT_TRUE(off.lookup(z));
  EXPECT_TRUE(off.lookup(y));
  EXPECT_FALSE(off.lookup(x));
}

TEST(OffFilter, ReinsertKeepsDuplicateFingerprints) {
  OffFilter off(OffConfig{.m = 1, .b = 2, .f = 16, .groups = 1});
  FlowKey x{Ipv4(1, 0, 0, 1), Ipv4(2, 0, 0, 1), 1, 1, 6};
  off.insert(x);
  off.insert(x);
  auto fp = off.hash(x).fp;
  EXPECT_EQ(off.bucket(0), (std::vector<std::uint32_t>{fp, fp}));
  EXPECT_TRUE(off.lookup(x));
}

TEST(OffFilter, MatchesFifoOracleOnRandomSequences) {
  std::mt19937_64 rng(4);
  for (std::uint32_t b : {1u, 2u, 3u, 4u}) {
    OffConfig c{.m = 64, .b = b, .f = 8, .groups = 4, .salt = rng()};
    OffFilter off(c);
    FifoOracle oracle(b);
    std::vector<FlowKey> pool;
    for (int i = 0; i < 500; ++i) pool.push_back(random_key(rng));
    for (int op = 0; op < 100'000; ++op) {
      const auto& k = pool[rng() % pool.size()];
      const auto h = off.hash(k);
      if (rng() % 2) {
        auto ev = off.insert(h);
        auto oev = oracle.insert(h);
        ASSERT_EQ(ev.evicted, oev) << "op " << op;
      } else {
        ASSERT_EQ(off.lookup(h), oracle.lookup(h)) << "op " << op;
      }
    }
    for (std::uint64_t i = 0; i < c.m; ++i) ASSERT_EQ(off.bucket(i), oracle.contents(i));
  }
}

TEST(OffFilter, OneAccessPerStageAndNoRecirculation) {
  std::mt19937_64 rng(5);
  BasicOffFilter<StageProbe> off(OffConfig{.m = 4096, .b = 2, .f = 16, .groups = 4});
  for (int i = 0; i < 20000; ++i) {
    auto k = random_key(rng);
    if (i % 3) {
      off.insert(k);
    } else {
      off.lookup(k);
    }
    ASSERT_EQ(off.probe().current.size(), 2u);
  }
  EXPECT_EQ(off.probe().violations, 0u);
  EXPECT_LE(off.probe().max_accesses, off.config().stages());
  EXPECT_EQ(off.probe().operations, 20000u);
}

class OffEmpiricalFpr : public ::testing::TestWithParam<std::pair<std::uint32_t, std::uint32_t>> {};

TEST_P(OffEmpiricalFpr, SaturatedFilterWithinThreeSigma) {
  const auto [b, f] = GetParam();
  std::mt19937_64 rng(100 + b * 37 + f);
  OffFilter off(OffConfig{.m = 4096, .b = b, .f = f, .groups = 4});
  saturate(off, rng);
  const int probes = f <= 8 ? 200'000 : 1'000'000;
  int fp = 0;
  for (int i = 0; i < probes; ++i) fp += off.lookup(random_key(rng, 17));
  const double p = off_theoretical_fpr(b, f);
  const double sigma = std::sqrt(probes * p * (1 - p));
  EXPECT_NEAR(fp, probes * p, 3 * sigma) << "b=" << b << " f=" << f;
  EXPECT_NEAR(off.observed_occupancy_fpr(), b / (std::ldexp(1.0, static_cast<int>(f)) - 1), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Shapes, OffEmpiricalFpr,
                         ::testing::Values(std::pair{1u, 8u}, std::pair{2u, 8u}, std::pair{2u, 16u},
                                           std::pair{4u, 16u}));

TEST(OffFilter, SnapshotRoundTrip) {
  std::mt19937_64 rng(6);
  OffFilter off(OffConfig{.m = 1024, .b = 2, .f = 12, .groups = 4, .salt = 99});
  for (int i = 0; i < 1500; ++i) off.insert(random_key(rng));
  auto path = std::filesystem::temp_directory_path() / ("off_snap_" + std::to_string(::getpid()));
  off.save(path.string());
  auto restored = OffFilter::load(path.string());
  EXPECT_TRUE(off.same_state(restored));
  {
    std::fstream io(path, std::ios::in | std::ios::out | std::ios::binary);
    io.seekp(8);
    io.put(9);  // unknown version
  }
  EXPECT_THROW(OffFilter::load(path.string()), FormatError);
  std::filesystem::remove(path);
}
