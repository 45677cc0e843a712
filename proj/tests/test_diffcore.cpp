#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cvxrl/diffcore.hpp"
#include "cvxrl/networks.hpp"
#include "gradient_checks.hpp"
#include "oracles.hpp"

using namespace cvxrl;
using cvxrl::testing::probe_loss_on_tape;
using cvxrl::testing::random_case;
using cvxrl::testing::rel_err;

namespace {

Matrix row(std::initializer_list<double> xs) {
  Matrix m(1, static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) m(0, i++) = x;
  return m;
}

}  // namespace

TEST(Forward, ZeroNetGivesZeroOutputs) {
  DuelingNet net(NetShape::tiger());
  Tape tape;
  const auto vars = bind(tape, net);
  const auto out = forward(vars, tape.leaf(Matrix::Constant(1, 1, 0.37)));
  EXPECT_EQ(out.q.value(), Matrix::Zero(1, 3));
  EXPECT_EQ(out.v.scalar(), 0.0);
}

TEST(Forward, SingleAffineLayer) {
  Tape tape;
  const Var w = tape.leaf(Matrix::Constant(1, 1, 2.0));
  const Var b = tape.leaf(Matrix::Constant(1, 1, 1.0));
  const Var x = tape.leaf(Matrix::Constant(1, 1, 3.0));
  EXPECT_EQ(affine(x, w, b).scalar(), 7.0);
}

TEST(Forward, MatchesNaiveReimplementation) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto act = trial % 2 ? Activation::elu(1.0) : Activation::leaky_relu(0.03);
    const auto c = random_case(rng, act);
    Tape tape;
    const auto vars = bind(tape, c.net);
    Matrix in(1, c.net.input_width());
    for (int i = 0; i < c.net.input_width(); ++i) in(0, i) = c.x[static_cast<std::size_t>(i)];
    const auto out = forward(vars, tape.leaf(in));
    const auto ref = cvxrl::testing::naive_forward(c.net, c.x);
    for (int a = 0; a < c.net.num_actions(); ++a) EXPECT_NEAR(out.q.value()(0, a), ref.q[static_cast<std::size_t>(a)], 1e-12);
    EXPECT_NEAR(out.v.scalar(), ref.v, 1e-12);
    // The tape-free path agrees as well.
    const auto plain = c.net.evaluate(in);
    EXPECT_NEAR((plain.q - out.q.value()).cwiseAbs().maxCoeff(), 0.0, 1e-12);
  }
}

TEST(Forward, ShapeMismatchThrows) {
  DuelingNet net(NetShape::tiger());
  Tape tape;
  const auto vars = bind(tape, net);
  EXPECT_THROW(forward(vars, tape.leaf(Matrix::Zero(1, 2))), ShapeError);
  EXPECT_THROW(net.evaluate(Matrix::Zero(1, 2)), ShapeError);
}

TEST(Forward, NonFiniteOutputThrows) {
  DuelingNet net(NetShape::tiger());
  net.trunk()[0].bias(0, 0) = 1e308;
  net.trunk()[1].weight.setConstant(1e308);
  EXPECT_THROW(net.evaluate(Matrix::Constant(1, 1, 0.5)), NonFiniteError);
  Tape tape;
  EXPECT_THROW(tape.leaf(Matrix::Constant(1, 1, std::nan(""))), NonFiniteError);
}

TEST(GradParams, ConstantLossHasZeroGradients) {
  Rng rng(3);
  const auto net = DuelingNet::initialized(NetShape::tiger(), rng);
  Tape tape;
  const auto vars = bind(tape, net);
  const Var c = constant(tape, Matrix::Constant(1, 1, 4.2));
  for (const Matrix& g : grad_params(vars, c)) EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GradParams, LinearRegressionClosedForm) {
  Tape tape;
  const Var w = tape.leaf(row({0.5, -1.5}));
  const Var b = tape.leaf(Matrix::Constant(1, 1, 0.25));
  const Matrix x = row({2.0, 3.0});
  const double target = 1.0;
  const Var y = affine(constant(tape, x), w, b);
  const Var loss = square(y - constant(tape, Matrix::Constant(1, 1, target)));
  const std::vector<Var> wrt{w, b};
  const auto g = tape.gradients(loss, wrt);
  const double resid = y.scalar() - target;
  EXPECT_NEAR(g[0].value()(0, 0), 2 * resid * 2.0, 1e-14);
  EXPECT_NEAR(g[0].value()(0, 1), 2 * resid * 3.0, 1e-14);
  EXPECT_NEAR(g[1].scalar(), 2 * resid, 1e-14);
}

TEST(GradParams, AdvantageParamsOffValuePathAreZero) {
  Rng rng(5);
  const auto net = DuelingNet::initialized(NetShape::tiger(), rng);
  Tape tape;
  const auto vars = bind(tape, net);
  const auto out = forward(vars, tape.leaf(Matrix::Constant(1, 1, 0.3)));
  const auto grads = grad_params(vars, sum(out.v));
  // Last two parameters are the advantage head.
  EXPECT_EQ(grads[grads.size() - 1].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(grads[grads.size() - 2].cwiseAbs().maxCoeff(), 0.0);
}

TEST(GradParams, LossNotOnTapeThrows) {
  Tape a;
  Tape b;
  const Var x = a.leaf(Matrix::Constant(1, 1, 1.0));
  const Var y = b.leaf(Matrix::Constant(1, 1, 1.0));
  const std::vector<Var> wrt{y};
  EXPECT_THROW(b.gradients(x, wrt), std::invalid_argument);
  EXPECT_THROW(a.gradients(a.leaf(Matrix::Zero(2, 1)), std::vector<Var>{x}), ShapeError);
}

TEST(GradParams, MatchesFiniteDifferences) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto act = trial % 2 ? Activation::elu(1.0) : Activation::leaky_relu(0.03);
    const auto c = random_case(rng, act);
    Tape tape;
    const auto vars = bind(tape, c.net);
    const auto grads = grad_params(vars, probe_loss_on_tape(tape, vars, c.x, c.loss));
    const auto params = c.net.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (Eigen::Index e = 0; e < params[p]->size(); ++e) {
        const double fd = cvxrl::testing::central_difference(
            c.net, p, e, 1e-5, [&](const DuelingNet& n) { return c.loss(n, c.x); });
        EXPECT_LT(rel_err(grads[p].data()[e], fd), 1e-5) << "trial " << trial << " param " << p;
      }
    }
  }
}

TEST(GradInput, LinearHeadGivesWeights) {
  Tape tape;
  const Var w = tape.leaf(row({0.7, -0.2}));
  const Var x = tape.leaf(row({0.1, 0.9}));
  const Var v = matmul(x, w, false, true);
  const Var g = grad_input(v, x, 0, 2);
  EXPECT_DOUBLE_EQ(g.value()(0, 0), 0.7);
  EXPECT_DOUBLE_EQ(g.value()(0, 1), -0.2);
  EXPECT_THROW(grad_input(v, x, 1, 2), std::out_of_range);
}

TEST(GradInput, SquareAnalytic) {
  Tape tape;
  const Var b = tape.leaf(Matrix::Constant(1, 1, 0.3));
  const Var v = square(b);
  EXPECT_NEAR(grad_input(v, b, 0, 1).scalar(), 0.6, 1e-15);
  EXPECT_NEAR(second_input_derivative(v, b, 0, 0).scalar(), 2.0, 1e-15);
}

TEST(GradInput, MatchesFiniteDifferences) {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const auto act = trial % 2 ? Activation::elu(1.0) : Activation::leaky_relu(0.03);
    const auto c = random_case(rng, act);
    Tape tape;
    const auto vars = bind(tape, c.net);
    Matrix in(1, c.net.input_width());
    for (int i = 0; i < c.net.input_width(); ++i) in(0, i) = c.x[static_cast<std::size_t>(i)];
    const Var x = tape.leaf(in);
    const Var v = sum(forward(vars, x).v);
    const Var g = grad_input(v, x, 0, c.net.input_width());
    for (int i = 0; i < c.net.input_width(); ++i) {
      auto up = c.x;
      auto down = c.x;
      up[static_cast<std::size_t>(i)] += 1e-5;
      down[static_cast<std::size_t>(i)] -= 1e-5;
      const double fd = (cvxrl::testing::naive_forward(c.net, up).v - cvxrl::testing::naive_forward(c.net, down).v) / 2e-5;
      EXPECT_LT(rel_err(g.value()(0, i), fd), 1e-4);
    }
  }
}

TEST(SecondDerivative, LinearHeadIsZero) {
  Tape tape;
  const Var w = tape.leaf(Matrix::Constant(1, 1, 0.7));
  const Var x = tape.leaf(Matrix::Constant(1, 1, 0.4));
  EXPECT_EQ(second_input_derivative(matmul(x, w, false, true), x, 0, 0).scalar(), 0.0);
}

TEST(SecondDerivative, EluNetMatchesSecondCentralDifference) {
  Rng rng(909);
  for (int trial = 0; trial < 100; ++trial) {
    // The ELU second derivative jumps at 0; keep the stencil off the kink.
    DuelingNet net;
    double b = 0.0;
    do {
      auto shape = cvxrl::testing::small_shape(rng, Activation::elu(1.0));
      shape.input = 1;
      net = DuelingNet::initialized(shape, rng);
      b = 0.05 + 0.9 * uniform01(rng);
    } while (cvxrl::testing::min_abs_preactivation(net, {b}) < 1e-2);
    Tape tape;
    const auto vars = bind(tape, net);
    const Var x = tape.leaf(Matrix::Constant(1, 1, b));
    const double d2 = second_input_derivative(forward(vars, x).v, x, 0, 0).scalar();
    const double h = 1e-3;
    auto f = [&](double u) { return cvxrl::testing::naive_forward(net, {u}).v; };
    const double fd = (f(b + h) - 2 * f(b) + f(b - h)) / (h * h);
    EXPECT_LT(rel_err(d2, fd), 1e-3) << "trial " << trial;
  }
}

TEST(SecondDerivative, LeakyReluRejected) {
  Rng rng(1);
  const auto net = DuelingNet::initialized(NetShape::fvrs(1), rng);
  Tape tape;
  const auto vars = bind(tape, net);
  const Var x = tape.leaf(Matrix::Constant(1, 5, 0.5));
  EXPECT_THROW(second_input_derivative(forward(vars, x).v, x, 2, 2), UnsupportedActivationError);
}

TEST(SecondOrder, ParamGradientOfInputGradientMatchesFiniteDifferences) {
  Rng rng(4242);
  for (int trial = 0; trial < 100; ++trial) {
    const auto act = trial % 2 ? Activation::elu(1.0) : Activation::leaky_relu(0.03);
    const auto c = random_case(rng, act);
    const int col = uniform_int(rng, 0, c.net.input_width() - 1);
    Matrix in(1, c.net.input_width());
    for (int i = 0; i < c.net.input_width(); ++i) in(0, i) = c.x[static_cast<std::size_t>(i)];
    auto input_grad = [&](const DuelingNet& n) {
      Tape t;
      const auto vars = bind(t, n);
      const Var x = t.leaf(in);
      return grad_input(sum(forward(vars, x).v), x, col, 1).scalar();
    };
    Tape tape;
    const auto vars = bind(tape, c.net);
    const Var x = tape.leaf(in);
    const Var g = grad_input(sum(forward(vars, x).v), x, col, 1);
    const auto grads = grad_params(vars, sum(g));
    const auto params = c.net.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (Eigen::Index e = 0; e < params[p]->size(); ++e) {
        const double fd = cvxrl::testing::central_difference(c.net, p, e, 1e-5, input_grad);
        EXPECT_LT(rel_err(grads[p].data()[e], fd), 1e-4) << "trial " << trial;
      }
    }
  }
}

TEST(Tape, ReplayIsBitIdentical) {
  auto run = [] {
    Rng rng(99);
    const auto net = DuelingNet::initialized(NetShape::fvrs(2), rng);
    Tape tape;
    const auto vars = bind(tape, net);
    Matrix in(4, 8);
    for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = uniform01(rng);
    return forward(vars, tape.leaf(in)).q.value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, ElementaryOpsBackward) {
  Tape tape;
  const Var a = tape.leaf(row({1.0, -2.0, 3.0}));
  const Var b = tape.leaf(row({0.5, 0.5, -1.0}));
  const Var y = sum(relu(a) * b) + mean(square(a - b));
  const std::vector<Var> wrt{a, b};
  const auto g = tape.gradients(y, wrt);
  // d/da: relu'(a) * b + 2 (a - b) / 3
  EXPECT_NEAR(g[0].value()(0, 0), 0.5 + 2.0 * 0.5 / 3, 1e-15);
  EXPECT_NEAR(g[0].value()(0, 1), 0.0 + 2.0 * -2.5 / 3, 1e-15);
  EXPECT_NEAR(g[0].value()(0, 2), -1.0 + 2.0 * 4.0 / 3, 1e-15);
  // d/db: relu(a) - 2 (a - b) / 3
  EXPECT_NEAR(g[1].value()(0, 0), 1.0 - 2.0 * 0.5 / 3, 1e-15);
  EXPECT_NEAR(g[1].value()(0, 1), 0.0 + 2.0 * 2.5 / 3, 1e-15);
  EXPECT_NEAR(g[1].value()(0, 2), 3.0 - 2.0 * 4.0 / 3, 1e-15);
}

TEST(Activation, LeakyReluDerivativeAtZeroIsSlope) {
  const auto act = Activation::leaky_relu(0.03);
  EXPECT_EQ(act.derivative(0.0, 1), 0.03);
  EXPECT_EQ(act.derivative(0.0, 2), 0.0);
  const auto elu = Activation::elu(1.0);
  EXPECT_DOUBLE_EQ(elu.derivative(-1.0, 0), std::exp(-1.0) - 1.0);
  EXPECT_DOUBLE_EQ(elu.derivative(-1.0, 3), std::exp(-1.0));
  EXPECT_EQ(elu.derivative(2.0, 2), 0.0);
}
