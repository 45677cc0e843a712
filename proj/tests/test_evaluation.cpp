#include <cmath>

#include <gtest/gtest.h>

#include "cvxrl/evaluation.hpp"

using namespace cvxrl;

namespace {
constexpr int kListen = 0;
constexpr int kOpenLeft = 1;
}  // namespace

TEST(MonteCarlo, AlwaysListenReturnsMinusTen) {
  TigerEnv env(TigerConfig{0.85});
  const auto s = mc_return(env, constant_policy(kListen), 200, 1);
  // -(1 - 0.9^depth) / 0.1 on every episode
  const double expected = -(1.0 - std::pow(0.9, env.rollout_depth())) / 0.1;
  EXPECT_NEAR(s.mean, expected, 1e-12);
  EXPECT_NEAR(s.mean, -10.0, 1e-5);
  EXPECT_NEAR(s.std, 0.0, 1e-12);
}

TEST(MonteCarlo, PerfectObservationOracleReturn) {
  const auto table = oracle_policy(TigerConfig{1.0});
  const auto s = mc_return(TigerEnv(TigerConfig{1.0}), tiger_table_policy(table), 1000, 2);
  EXPECT_NEAR(s.mean, 8.0 / 0.19, 1e-4);
}

TEST(MonteCarlo, StandardErrorShrinksWithSamples) {
  const auto table = oracle_policy(TigerConfig{0.85});
  const TigerEnv env(TigerConfig{0.85});
  const auto small = mc_return(env, tiger_table_policy(table), 2000, 3);
  const auto large = mc_return(env, tiger_table_policy(table), 8000, 4);
  EXPECT_GT(small.se, 0.0);
  EXPECT_NEAR(large.se / small.se, 0.5, 0.1);
}

TEST(MonteCarlo, ResultsDoNotDependOnJobs) {
  Rng rng(5);
  const auto net = DuelingNet::initialized(NetShape::tiger(), rng);
  const TigerEnv env(TigerConfig{0.7});
  const auto one = mc_returns(env, tiger_net_policy(net), 301, 9, 0, 1);
  const auto three = mc_returns(env, tiger_net_policy(net), 301, 9, 0, 3);
  EXPECT_EQ(one, three);
  const auto other_seed = mc_returns(env, tiger_net_policy(net), 301, 10, 0, 1);
  EXPECT_NE(one, other_seed);
}

TEST(MonteCarlo, RejectsEmptyRun) {
  EXPECT_THROW(mc_returns(TigerEnv(), constant_policy(0), 0, 1), std::invalid_argument);
}

TEST(MonteCarlo, DepthTruncates) {
  const auto r = mc_returns(TigerEnv(), constant_policy(kListen), 3, 1, 2);
  for (double v : r) EXPECT_DOUBLE_EQ(v, -1.9);
}

TEST(CrossEval, IdenticalEnvironmentsGiveIdenticalSummaries) {
  Rng rng(6);
  const auto net = DuelingNet::initialized(NetShape::tiger(), rng);
  const std::vector<TigerEnv> envs{TigerEnv(TigerConfig{0.8}), TigerEnv(TigerConfig{0.8})};
  const auto out = cross_evaluate(envs, tiger_net_policy(net), 500, 7);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].mean, out[1].mean);
  EXPECT_EQ(out[0].std, out[1].std);
  EXPECT_EQ(out[0].median, out[1].median);
}

TEST(CrossEval, MatchesSingleEvaluation) {
  const auto table = oracle_policy(TigerConfig{1.0});
  const std::vector<TigerEnv> envs{TigerEnv(TigerConfig{0.6}), TigerEnv(TigerConfig{0.9})};
  const auto out = cross_evaluate(envs, tiger_table_policy(table), 400, 8);
  EXPECT_EQ(out[1].mean, mc_return(envs[1], tiger_table_policy(table), 400, 8).mean);
}

TEST(FvrsBaselines, IgnoreRocksIsDeterministic) {
  const auto s = baseline_ignore_rocks(FvrsConfig{}, 1000, 1);
  EXPECT_NEAR(s.mean, 7.29, 1e-9);
  EXPECT_NEAR(s.std, 0.0, 1e-9);
}

TEST(FvrsBaselines, ConvenienceBeatsIgnoringRocks) {
  const auto me = baseline_ignore_rocks(FvrsConfig{}, 2000, 2);
  const auto conv = baseline_convenience(FvrsConfig{}, 2000, 2);
  EXPECT_GE(conv.mean, me.mean - 3.0 * conv.se);
}

TEST(FvrsBaselines, NetPolicyRuns) {
  Rng rng(3);
  const FvrsConfig cfg;
  const auto net = DuelingNet::initialized(NetShape::fvrs(cfg.k), rng);
  const auto s = mc_return(FvrsEnv(cfg), fvrs_net_policy(net, cfg.n), 20, 4);
  EXPECT_EQ(s.n_samples, 20u);
  EXPECT_TRUE(std::isfinite(s.mean));
}

TEST(Optimality, AlwaysOpenLeftIsNotOptimal) {
  DuelingNet net(NetShape::tiger());
  net.advantage_stream().back().bias(0, kOpenLeft) = 10.0;
  const auto table = oracle_policy(TigerConfig{1.0});
  const auto o = is_optimal_tiger(net, table);
  EXPECT_FALSE(o.optimal);
  EXPECT_LT(o.agreement, 0.5);
  EXPECT_LT(o.reachable_agreement, 1.0);
}

TEST(Optimality, ThresholdNetIsOptimal) {
  // Hand-built net: trunk passes b through, then Q_listen is flat while the
  // two opening advantages are steep ramps that win only near certainty.
  NetShape shape;
  shape.trunk = {1};
  shape.activation = Activation::elu(1.0);
  DuelingNet net(shape);
  auto& t = net.trunk();
  t[0].weight(0, 0) = 1.0;  // h = b on [0, 1] (ELU is identity there)
  auto& head = net.advantage_stream().back();
  head.weight(1, 0) = -100.0;  // open left wins for b < 0.1
  head.bias(0, 1) = 10.0;
  head.weight(2, 0) = 100.0;  // open right wins for b > 0.9
  head.bias(0, 2) = -90.0;
  const auto table = oracle_policy(TigerConfig{1.0});
  const auto o = is_optimal_tiger(net, table);
  EXPECT_TRUE(o.optimal);
  EXPECT_EQ(o.reachable_agreement, 1.0);
}
