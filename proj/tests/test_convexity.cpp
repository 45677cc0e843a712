#include <cmath>

#include <gtest/gtest.h>

#include "cvxrl/convexity.hpp"
#include "oracles.hpp"
#include "stubs.hpp"

using namespace cvxrl;
using cvxrl::testing::central_difference;
using cvxrl::testing::rel_err;
using namespace cvxrl::testing::stubs;

TEST(PointPenalty, NegSquareHandValue) {
  Tape tape;
  // f(0.5) - 0.5 f(0) - 0.5 f(1) = -0.25 + 0.5 = 0.25 -> 0.0625
  EXPECT_NEAR(point_penalty(tape, neg_square, one_triple(0.0, 1.0, 0.5)).scalar(), 0.0625, 1e-12);
}

TEST(PointPenalty, EndpointsContributeNothing) {
  Tape tape;
  EXPECT_EQ(point_penalty(tape, neg_square, one_triple(0.2, 0.9, 0.0)).scalar(), 0.0);
  EXPECT_EQ(point_penalty(tape, neg_square, one_triple(0.2, 0.9, 1.0)).scalar(), 0.0);
}

TEST(GradPenalty, NegSquareHandValue) {
  Tape tape;
  // tangent at 0 is 0, f(1) = -1 -> violation 1
  EXPECT_NEAR(grad_penalty(tape, neg_square, one_triple(0.0, 1.0, 0.5)).scalar(), 1.0, 1e-12);
}

TEST(GradPenalty, SignFollowsTangentDefinition) {
  Tape tape;
  // u = 1, v = 0: f(1) + f'(1)(0 - 1) - f(0) = -1 + 2 - 0 = 1
  EXPECT_NEAR(grad_penalty(tape, neg_square, one_triple(1.0, 0.0, 0.5)).scalar(), 1.0, 1e-12);
  // Convex f: tangent never above the function.
  EXPECT_EQ(grad_penalty(tape, pos_square, one_triple(1.0, 0.0, 0.5)).scalar(), 0.0);
}

TEST(GradPenalty, CoincidentPointsGiveZero) {
  Tape tape;
  EXPECT_EQ(grad_penalty(tape, neg_square, one_triple(0.4, 0.4, 0.5)).scalar(), 0.0);
}

TEST(HessPenalty1d, HandValues) {
  Rng rng(1);
  const auto s = sample_beliefs(BeliefDomain::tiger(), 7, rng);
  Tape tape;
  EXPECT_NEAR(hess_penalty_1d(tape, neg_square, s).scalar(), 4.0, 1e-12);
  EXPECT_EQ(hess_penalty_1d(tape, pos_square, s).scalar(), 0.0);
}

TEST(HessPenaltyNd, NegNormSquaredGivesFour) {
  Rng rng(2);
  BeliefDomain d{3, {0, 1, 2}};
  const auto s = sample_beliefs(d, 5, rng, 4);
  Tape tape;
  EXPECT_NEAR(hess_penalty_nd(tape, neg_square, s).scalar(), 4.0, 1e-12);
  EXPECT_EQ(hess_penalty_nd(tape, pos_square, s).scalar(), 0.0);
}

TEST(HessPenaltyNd, DirectionScalingIsQuartic) {
  Rng rng(3);
  BeliefDomain d{2, {0, 1}};
  auto s = sample_beliefs(d, 3, rng, 2);
  Tape tape;
  const double base = hess_penalty_nd(tape, neg_square, s).scalar();
  s.directions *= 2.0;
  EXPECT_NEAR(hess_penalty_nd(tape, neg_square, s).scalar(), 16.0 * base, 1e-10);
}

TEST(Penalties, AffineStubIsZeroEverywhere) {
  Rng rng(4);
  BeliefDomain d{3, {0, 1, 2}};
  const auto s = sample_beliefs(d, 50, rng, 3);
  Tape tape;
  EXPECT_NEAR(point_penalty(tape, affine_stub, s).scalar(), 0.0, 1e-24);
  EXPECT_NEAR(grad_penalty(tape, affine_stub, s).scalar(), 0.0, 1e-24);
  EXPECT_EQ(hess_penalty_1d(tape, affine_stub, s, 1).scalar(), 0.0);
  EXPECT_EQ(hess_penalty_nd(tape, affine_stub, s).scalar(), 0.0);
}

TEST(Penalties, LinearHeadNetIsZero) {
  // No hidden units in the value stream and identity-like trunk: V affine.
  NetShape shape;
  shape.trunk = {1};
  shape.activation = Activation::elu(1.0);
  DuelingNet net(shape);
  net.trunk()[0].weight(0, 0) = 2.0;
  net.trunk()[0].bias(0, 0) = 1.0;  // pre-activation >= 1 on [0, 1]: ELU is the identity
  net.value_stream()[0].weight(0, 0) = -3.0;
  Rng rng(5);
  const auto s = sample_beliefs(BeliefDomain::tiger(), 30, rng, 2);
  Tape tape;
  const auto vars = bind(tape, net);
  for (auto m : {ConvexityMethod::point, ConvexityMethod::grad, ConvexityMethod::hess_1d, ConvexityMethod::hess_nd}) {
    EXPECT_NEAR(convexity_penalty(tape, value_function(vars), s, m).scalar(), 0.0, 1e-24) << to_string(m);
  }
}

TEST(Penalties, NonNegativeAndDeterministic) {
  Rng rng(6);
  const auto net = DuelingNet::initialized(NetShape::tiger(), rng);
  const auto s = sample_beliefs(BeliefDomain::tiger(), 20, rng, 4);
  for (auto m : {ConvexityMethod::point, ConvexityMethod::grad, ConvexityMethod::hess_1d, ConvexityMethod::hess_nd}) {
    Tape t1;
    Tape t2;
    const auto v1 = bind(t1, net);
    const auto v2 = bind(t2, net);
    const double a = convexity_penalty(t1, value_function(v1), s, m).scalar();
    const double b = convexity_penalty(t2, value_function(v2), s, m).scalar();
    EXPECT_GE(a, 0.0);
    EXPECT_EQ(a, b);
  }
}

TEST(Penalties, NoneAndHardReturnNoTerm) {
  Rng rng(7);
  const auto s = sample_beliefs(BeliefDomain::tiger(), 3, rng);
  Tape tape;
  const std::size_t before = tape.size();
  EXPECT_LT(convexity_penalty(tape, neg_square, s, ConvexityMethod::none).id, 0);
  EXPECT_LT(convexity_penalty(tape, neg_square, s, ConvexityMethod::hard).id, 0);
  EXPECT_EQ(tape.size(), before);
}

TEST(Penalties, HessianRejectsLeakyRelu) {
  Rng rng(8);
  const auto net = DuelingNet::initialized(NetShape::fvrs(1), rng);
  const ContextSampler ctx = [](Rng&) { return Eigen::VectorXd::Constant(5, 0.5); };
  const auto s = sample_beliefs(BeliefDomain::fvrs(1), 3, rng, 2, ctx);
  Tape tape;
  const auto vars = bind(tape, net);
  EXPECT_THROW(hess_penalty_1d(tape, value_function(vars), s, 2), UnsupportedActivationError);
  EXPECT_THROW(hess_penalty_nd(tape, value_function(vars), s), UnsupportedActivationError);
}

TEST(Penalties, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(9);
  for (auto m : {ConvexityMethod::point, ConvexityMethod::grad, ConvexityMethod::hess_1d, ConvexityMethod::hess_nd}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto net = DuelingNet::initialized(NetShape::tiger(), rng);
      for (Matrix* p : net.parameters()) *p *= 3.0;
      const auto s = sample_beliefs(BeliefDomain::tiger(), 20, rng, 3);
      auto penalty = [&](const DuelingNet& n) {
        Tape tape;
        const auto vars = bind(tape, n);
        return convexity_penalty(tape, value_function(vars), s, m).scalar();
      };
      Tape tape;
      const auto vars = bind(tape, net);
      const auto grads = grad_params(vars, convexity_penalty(tape, value_function(vars), s, m));
      for (std::size_t p = 0; p < grads.size(); ++p) {
        for (Eigen::Index e = 0; e < grads[p].size(); ++e) {
          const double fd = central_difference(net, p, e, 1e-6, penalty);
          EXPECT_LT(rel_err(grads[p].data()[e], fd), 1e-4) << to_string(m) << " param " << p << " entry " << e;
        }
      }
    }
  }
}

TEST(Sampling, TigerSamplesInUnitInterval) {
  Rng rng(10);
  const auto s = sample_beliefs(BeliefDomain::tiger(), 1000, rng);
  EXPECT_GE(s.u.minCoeff(), 0.0);
  EXPECT_LE(s.u.maxCoeff(), 1.0);
  EXPECT_GE(s.v.minCoeff(), 0.0);
  EXPECT_LE(s.v.maxCoeff(), 1.0);
  EXPECT_GE(s.t.minCoeff(), 0.0);
  EXPECT_LE(s.t.maxCoeff(), 1.0);
}

TEST(Sampling, ReproducibleWithSeed) {
  Rng a(11);
  Rng b(11);
  const auto s1 = sample_beliefs(BeliefDomain::tiger(), 1, a, 2);
  const auto s2 = sample_beliefs(BeliefDomain::tiger(), 1, b, 2);
  EXPECT_EQ(s1.u, s2.u);
  EXPECT_EQ(s1.v, s2.v);
  EXPECT_EQ(s1.t, s2.t);
  EXPECT_EQ(s1.directions, s2.directions);
}

TEST(Sampling, FvrsSharesNonBeliefCoordinates) {
  Rng rng(12);
  const BeliefDomain d = BeliefDomain::fvrs(3);
  const ContextSampler ctx = [](Rng& r) {
    Eigen::VectorXd x(11);
    for (Eigen::Index i = 0; i < 11; ++i) x(i) = uniform01(r);
    return x;
  };
  const auto s = sample_beliefs(d, 50, rng, 2, ctx);
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    for (int c = 0; c < 11; ++c) {
      const bool belief = c == 2 || c == 5 || c == 8;
      if (!belief) {
        EXPECT_EQ(s.u(i, c), s.v(i, c));
      }
    }
  }
  for (Eigen::Index r = 0; r < s.directions.rows(); ++r) {
    EXPECT_NEAR(s.directions.row(r).norm(), 1.0, 1e-12);
    for (int c = 0; c < 11; ++c) {
      if (c != 2 && c != 5 && c != 8) {
        EXPECT_EQ(s.directions(r, c), 0.0);
      }
    }
  }
}

TEST(Sampling, FvrsWithoutReplayThrows) {
  Rng rng(13);
  EXPECT_THROW(sample_beliefs(BeliefDomain::fvrs(2), 5, rng), EmptyReplayError);
}

TEST(TotalLoss, Arithmetic) {
  EXPECT_DOUBLE_EQ(total_loss(0.5, 0.25, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(total_loss(0.5, 0.25, 0.0), 0.5);
  EXPECT_THROW(total_loss(0.5, 0.25, -1.0), std::invalid_argument);
}

TEST(Audit, NegSquareWorstTriple) {
  auto f = [](const Matrix& x) -> Eigen::VectorXd { return -x.col(0).array().square(); };
  const auto r = audit_convexity(f, BeliefDomain::tiger(), 3, Eigen::VectorXd::Constant(1, 0.5), 3);
  // grid {0, 0.5, 1}, t in {0, 0.5, 1}: worst at u=0, v=1, t=0.5 -> 0.25
  EXPECT_NEAR(r.max_violation, 0.25, 1e-12);
  EXPECT_EQ(r.worst_t, 0.5);
  EXPECT_EQ(std::abs(r.worst_u - r.worst_v), 1.0);
  EXPECT_EQ(r.triples, 27u);
}

TEST(Audit, ConvexStubHasNoViolation) {
  auto f = [](const Matrix& x) -> Eigen::VectorXd { return (x.col(0).array() - 0.3).square() + x.col(0).array().exp(); };
  const auto r = audit_convexity(f, BeliefDomain::tiger(), 41, Eigen::VectorXd::Constant(1, 0.5));
  EXPECT_LE(r.max_violation, 1e-15);
}

TEST(Audit, JsonCarriesValueCurve) {
  auto f = [](const Matrix& x) -> Eigen::VectorXd { return 2.0 * x.col(0); };
  const auto r = audit_convexity(f, BeliefDomain::tiger(), 11, Eigen::VectorXd::Constant(1, 0.5), 0, "tiger");
  const auto j = to_json(r);
  ASSERT_EQ(j["b"].size(), 11u);
  EXPECT_DOUBLE_EQ(j["value"][10].get<double>(), 2.0);
  EXPECT_EQ(j["env"], "tiger");
}

TEST(Audit, FvrsOneSectionPerRock) {
  Rng rng(14);
  auto net = DuelingNet::initialized(NetShape::fvrs(2), rng);
  project_nonnegative(net);
  Eigen::VectorXd ref = Eigen::VectorXd::Constant(8, 0.5);
  const auto r = audit_convexity(plain_value_function(net), BeliefDomain::fvrs(2), 11, ref, 5);
  EXPECT_EQ(r.sections.size(), 2u);
  EXPECT_EQ(r.sections[0].belief_col, 2);
  EXPECT_EQ(r.sections[1].belief_col, 5);
  EXPECT_LE(r.max_violation, 1e-9);
}
