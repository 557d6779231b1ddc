#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "immunity/capacity.hpp"

using namespace immunity;

TEST(Residual, Extremes) {
  for (double a : {0.0, 0.3, 1.0}) {
    EXPECT_DOUBLE_EQ(residual_fraction(a, 1, 1), 0);
    EXPECT_DOUBLE_EQ(residual_fraction(a, 0, 0), 1);
  }
}

TEST(Residual, WorkedPoint) { EXPECT_NEAR(residual_fraction(0.2, 0.99, 0.61), 0.2 * 0.01 + 0.8 * 0.39, 1e-12); }

TEST(Residual, DomainErrors) {
  EXPECT_THROW(residual_fraction(-0.1, 0.5, 0.5), DomainError);
  EXPECT_THROW(residual_fraction(0.1, 1.5, 0.5), DomainError);
  EXPECT_THROW(residual_fraction(0.1, 0.5, std::nan("")), DomainError);
  EXPECT_THROW(link_load(0.5, 1600, 1500, 1500), DomainError);
}

TEST(Residual, MonotoneInHitRatesAndSlopeInAlpha) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 10000; ++i) {
    double a = u(rng), p = u(rng), q = u(rng), d = 1e-3;
    const double r = residual_fraction(a, p, q);
    EXPECT_LE(residual_fraction(a, std::min(1.0, p + d), q), r + 1e-15);
    EXPECT_LE(residual_fraction(a, p, std::min(1.0, q + d)), r + 1e-15);
    if (a + d <= 1) {
      EXPECT_NEAR((residual_fraction(a + d, p, q) - r) / d, q - p, 1e-9);
    }
  }
}

TEST(SnicLoad, FeasibilityBoundary) {
  EXPECT_DOUBLE_EQ(snic_load(0.42, 125), 0.42 * 125);
  EXPECT_LE(snic_load(0.42, 125), 53);
  EXPECT_DOUBLE_EQ(snic_load(0, 125), 0);
  EXPECT_GT(snic_load(1, 125), 53);
  // r <= 0.42 implies the NIC keeps up; just above 53/125 it does not.
  EXPECT_NEAR(max_residual(53, 125), 0.424, 1e-12);
  for (int i = 0; i <= 1000; ++i) {
    const double r = i / 1000.0;
    EXPECT_EQ(snic_load(r, 125) <= 53, r <= 53.0 / 125);
    if (r <= 0.42) {
      EXPECT_LE(snic_load(r, 125), 53);
    }
  }
}

TEST(LinkLoad, PublishedPoints) {
  EXPECT_NEAR(link_load(1, 21.3, 1500, 1500), 21.3, 1e-12);
  EXPECT_DOUBLE_EQ(link_load(0, 21.3, 1500, 1500), 0);
  const double b = link_load(0.109, 21.3, 1500, 1500);
  EXPECT_NEAR(b, 0.109 * 21.3, 1e-12);
  EXPECT_LE(std::abs(b - 2.24) / 2.24, 0.10);
}

TEST(Report, DeploymentBatchWithBacksolvedAlpha) {
  // MST-only leaves 90 Mpps of 125 at p = 0.99: alpha * 0.01 + (1 - alpha) = 0.72.
  const double alpha = backsolve_alpha(0.99, 90, 125);
  EXPECT_NEAR(alpha, 0.28 / 0.99, 1e-12);
  SystemParams s;
  s.alpha = alpha;
  auto batch = deployment_batch(s, 0.99, 0.61);
  ASSERT_EQ(batch.size(), 3u);
  EXPECT_EQ(batch[0].name, "mst_only");
  EXPECT_NEAR(batch[0].report.lambda_snic, 90, 1e-9);
  EXPECT_FALSE(batch[0].report.snic_ok);
  EXPECT_NEAR(batch[1].report.lambda_snic, 125 * (alpha + (1 - alpha) * 0.39), 1e-9);
  EXPECT_FALSE(batch[1].report.snic_ok);
  const double both = 125 * (alpha * 0.01 + (1 - alpha) * 0.39);
  EXPECT_NEAR(batch[2].report.lambda_snic, both, 1e-9);
  EXPECT_NEAR(both, 35.3, 0.05);
  EXPECT_TRUE(batch[2].report.snic_ok);
  EXPECT_TRUE(batch[2].report.feasible());
}

TEST(Report, PerfectFiltersAreFeasible) {
  SystemParams s;
  s.alpha = 0.5;
  s.p = s.q = 1;
  auto c = feasibility_report(s);
  EXPECT_TRUE(c.snic_ok && c.link_ok && c.cpu_ok);
  EXPECT_TRUE(std::isinf(c.snic_headroom));
}

TEST(Report, NoFilteringIsInfeasible) {
  SystemParams s;
  auto c = feasibility_report(s);
  EXPECT_DOUBLE_EQ(c.lambda_snic, 125);
  EXPECT_FALSE(c.snic_ok);
  EXPECT_TRUE(c.link_ok);
  EXPECT_NEAR(c.lambda_snic_batched, 125.0 / 3, 1e-12);
}

TEST(Report, BandwidthSetsPacketRate) {
  SystemParams s;
  EXPECT_NEAR(s.with_bandwidth(1500).lambda_asic, 125, 1e-12);
  EXPECT_NEAR(s.with_bandwidth(750).lambda_asic, 62.5, 1e-12);
}

TEST(Report, UpdateRateSweepScalesLinearly) {
  SystemParams s;
  auto rows = update_rate_sweep(s, 10, 15);
  ASSERT_EQ(rows.size(), 15u);
  EXPECT_DOUBLE_EQ(rows.back().first, 1500);
  EXPECT_DOUBLE_EQ(rows.back().second.lambda_cpu, 15000);
  for (const auto& [b, c] : rows) EXPECT_TRUE(c.cpu_ok);
  EXPECT_FALSE(update_rate_sweep(s, 11, 3).back().second.cpu_ok);
}

TEST(Sweep, ParseAndRun) {
  std::istringstream in("p,q,alpha,b_net_sw\n0.99,0.61,0.283,1500\n0,0,0.2,750\n");
  auto pts = parse_sweep(in);
  ASSERT_EQ(pts.size(), 2u);
  auto rows = run_sweep(SystemParams{}, pts);
  EXPECT_TRUE(rows[0].second.snic_ok);
  EXPECT_DOUBLE_EQ(rows[1].second.lambda_snic, 62.5);
  EXPECT_EQ(capacity_row("x", rows[1].first, rows[1].second).substr(0, 7), "x,750,0");
}

TEST(Sweep, MalformedFilesAreRejected) {
  for (const char* bad : {"", "p,q\n", "p,q,alpha,b_net_sw\n0.1,0.2,0.3\n", "p,q,alpha,b_net_sw\n0.1,x,0.3,1\n",
                          "p,q,alpha,b_net_sw\n0.1,0.2,0.3,1,5\n"}) {
    std::istringstream in(bad);
    EXPECT_THROW(parse_sweep(in), FormatError) << bad;
  }
  std::istringstream out_of_range("p,q,alpha,b_net_sw\n2,0.2,0.3,1\n");
  auto pts = parse_sweep(out_of_range);
  EXPECT_THROW(run_sweep(SystemParams{}, pts), DomainError);
}
