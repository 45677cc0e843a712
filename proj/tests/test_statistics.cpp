#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "cvxrl/random.hpp"
#include "cvxrl/statistics.hpp"
#include "oracles.hpp"

using namespace cvxrl;
using cvxrl::testing::reference_quantile;

TEST(Summary, SmallListByHand) {
  const auto s = summarize_distribution(std::vector<double>{5.0, 1.0, 4.0, 2.0, 3.0});
  EXPECT_EQ(s.median, 3.0);
  EXPECT_EQ(s.q1, 2.0);
  EXPECT_EQ(s.q3, 4.0);
  EXPECT_EQ(s.mean, 3.0);
  EXPECT_NEAR(s.std, std::sqrt(2.5), 1e-15);
  EXPECT_NEAR(s.se, std::sqrt(2.5) / std::sqrt(5.0), 1e-15);
  EXPECT_EQ(s.whisker_low, 1.0);
  EXPECT_EQ(s.whisker_high, 5.0);
}

TEST(Summary, ConstantList) {
  const auto s = summarize_distribution(std::vector<double>(7, 2.5));
  EXPECT_EQ(s.mean, 2.5);
  EXPECT_EQ(s.std, 0.0);
  EXPECT_EQ(s.median, 2.5);
  EXPECT_EQ(s.whisker_low, 2.5);
  EXPECT_EQ(s.whisker_high, 2.5);
}

TEST(Summary, SingleValue) {
  const auto s = summarize_distribution(std::vector<double>{-4.0});
  EXPECT_EQ(s.mean, -4.0);
  EXPECT_EQ(s.std, 0.0);
  EXPECT_EQ(s.q1, -4.0);
  EXPECT_EQ(s.q3, -4.0);
}

TEST(Summary, OutlierFallsOutsideWhiskers) {
  const auto s = summarize_distribution(std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 100});
  EXPECT_EQ(s.q1, 3.0);
  EXPECT_EQ(s.q3, 7.0);
  EXPECT_EQ(s.whisker_high, 8.0);
  EXPECT_EQ(s.max, 100.0);
}

TEST(Summary, EmptyThrows) {
  EXPECT_THROW(summarize_distribution(std::vector<double>{}), std::invalid_argument);
}

TEST(Summary, MatchesReferenceOnRandomFixtures) {
  Rng rng(2024);
  for (int fixture = 0; fixture < 100; ++fixture) {
    const int n = uniform_int(rng, 1, 400);
    std::vector<double> v(static_cast<std::size_t>(n));
    const double scale = std::exp(8.0 * uniform01(rng) - 4.0);
    for (double& x : v) x = scale * (uniform01(rng) - 0.3) * (bernoulli(rng, 0.05) ? 20.0 : 1.0);
    const auto s = summarize_distribution(v);

    const double mean = std::accumulate(v.begin(), v.end(), 0.0L) / static_cast<long double>(n);
    long double ss = 0.0L;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = n > 1 ? static_cast<double>(std::sqrt(ss / (n - 1))) : 0.0;
    const double q1 = reference_quantile(v, 0.25);
    const double q3 = reference_quantile(v, 0.75);
    double wl = INFINITY, wh = -INFINITY;
    for (double x : v) {
      if (x >= q1 - 1.5 * (q3 - q1)) wl = std::min(wl, x);
      if (x <= q3 + 1.5 * (q3 - q1)) wh = std::max(wh, x);
    }
    const double tol = 1e-12 * scale * 20.0;
    EXPECT_NEAR(s.mean, mean, tol) << fixture;
    EXPECT_NEAR(s.std, sd, tol) << fixture;
    EXPECT_NEAR(s.se, sd / std::sqrt(n), tol) << fixture;
    EXPECT_NEAR(s.median, reference_quantile(v, 0.5), tol) << fixture;
    EXPECT_NEAR(s.q1, q1, tol) << fixture;
    EXPECT_NEAR(s.q3, q3, tol) << fixture;
    EXPECT_EQ(s.whisker_low, wl) << fixture;
    EXPECT_EQ(s.whisker_high, wh) << fixture;
    EXPECT_EQ(s.min, *std::min_element(v.begin(), v.end()));
    EXPECT_EQ(s.max, *std::max_element(v.begin(), v.end()));
  }
}
