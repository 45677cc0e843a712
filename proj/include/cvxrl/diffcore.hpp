// Matrix-valued reverse-mode differentiation tape.
//
// Every node holds a dense row-major-semantics Eigen matrix. Backward passes
// are themselves recorded on the tape, so gradients can be differentiated
// again (gradient of a gradient, and once more for Hessian penalties).
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cvxrl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnsupportedActivationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Pointwise activation with closed-form derivatives of every order.
struct Activation {
  enum class Kind : std::uint8_t { elu, leaky_relu };

  Kind kind = Kind::elu;
  /// ELU scale (alpha) or LReLU negative slope.
  double param = 1.0;

  static Activation elu(double alpha = 1.0) { return {Kind::elu, alpha}; }
  static Activation leaky_relu(double slope = 0.03) { return {Kind::leaky_relu, slope}; }

  /// Twice (and more) differentiable on the whole real line, up to a
  /// measure-zero kink where the second derivative jumps.
  [[nodiscard]] bool smooth() const { return kind == Kind::elu; }

  /// d^order/dx^order phi(x). At x == 0 the left-hand branch is used.
  [[nodiscard]] double derivative(double x, int order) const {
    if (kind == Kind::elu) {
      if (x > 0.0) {
        if (order == 0) return x;
        return order == 1 ? 1.0 : 0.0;
      }
      const double e = param * std::exp(x);
      return order == 0 ? e - param : e;
    }
    if (order == 0) return x > 0.0 ? x : param * x;
    if (order == 1) return x > 0.0 ? 1.0 : param;
    return 0.0;
  }

  [[nodiscard]] std::string name() const { return kind == Kind::elu ? "elu" : "leaky_relu"; }
};

inline bool operator==(const Activation& a, const Activation& b) {
  return a.kind == b.kind && a.param == b.param;
}

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  [[nodiscard]] double scalar() const;
};

enum class Op : std::uint8_t {
  leaf,
  matmul,          // op(a) * op(b); i0/i1 carry the transpose flags
  add,
  sub,
  mul,             // elementwise
  scale,           // s * a
  sum_rows,        // n x m -> 1 x m
  broadcast_rows,  // 1 x m -> i0 x m
  sum_cols,        // n x m -> n x 1
  broadcast_cols,  // n x 1 -> n x i0
  sum_all,         // n x m -> 1 x 1
  fill,            // 1 x 1 -> i0 x i1
  activation,      // phi^(i0)(a)
  relu,            // max(0, a)
  square,
  slice_cols,      // a[:, i0 : i0 + i1]
  pad_cols,        // zero matrix with i1 columns, a placed at column i0
};

struct Node {
  Op op = Op::leaf;
  int a = -1;
  int b = -1;
  int i0 = 0;
  int i1 = 0;
  double s = 0.0;
  Activation act{};
  Matrix value;
};

/// Append-only record of primitive operations. Indices are a topological
/// order, so the backward sweep is a single reverse scan.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf node: a parameter, an input, or a constant.
  Var leaf(Matrix value) {
    check_finite(value, "leaf");
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  [[nodiscard]] const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  /// Reverse-mode gradients of scalar `y` with respect to each entry of
  /// `wrt`. The adjoint computation is recorded, so the returned Vars can be
  /// differentiated again. Inputs that `y` does not depend on get zeros.
  std::vector<Var> gradients(Var y, std::span<const Var> wrt);

  /// True if any activation of a non-smooth kind lies upstream of `y`.
  [[nodiscard]] bool has_nonsmooth_ancestor(Var y) const;

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  static void check_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw NonFiniteError(std::string("non-finite value produced by ") + what);
  }

 private:
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->node(id).value; }

inline double Var::scalar() const {
  const Matrix& m = value();
  if (m.rows() != 1 || m.cols() != 1) throw ShapeError("scalar() on non-scalar node");
  return m(0, 0);
}

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw std::invalid_argument("operands live on different tapes");
  return *a.tape;
}

inline Var make(Tape& t, Op op, Matrix value, int a, int b = -1, int i0 = 0, int i1 = 0, double s = 0.0,
                Activation act = {}) {
  Tape::check_finite(value, "tape op");
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.i0 = i0;
  n.i1 = i1;
  n.s = s;
  n.act = act;
  n.value = std::move(value);
  return t.push(std::move(n));
}

inline void require_same_shape(const Matrix& x, const Matrix& y, const char* what) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(x.rows()) + "x" +
                     std::to_string(x.cols()) + " vs " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
                     ")");
  }
}

}  // namespace detail

inline Var constant(Tape& t, Matrix value) { return t.leaf(std::move(value)); }

/// op(a) * op(b) where op transposes when the flag is set.
inline Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
  Tape& t = detail::same_tape(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  const auto inner_a = trans_a ? x.rows() : x.cols();
  const auto inner_b = trans_b ? y.cols() : y.rows();
  if (inner_a != inner_b) throw ShapeError("matmul: inner dimensions differ");
  Matrix out;
  if (!trans_a && !trans_b) out.noalias() = x * y;
  else if (!trans_a && trans_b) out.noalias() = x * y.transpose();
  else if (trans_a && !trans_b) out.noalias() = x.transpose() * y;
  else out.noalias() = x.transpose() * y.transpose();
  return detail::make(t, Op::matmul, std::move(out), a.id, b.id, trans_a ? 1 : 0, trans_b ? 1 : 0);
}

inline Var operator+(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "add");
  return detail::make(t, Op::add, a.value() + b.value(), a.id, b.id);
}

inline Var operator-(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "sub");
  return detail::make(t, Op::sub, a.value() - b.value(), a.id, b.id);
}

/// Elementwise product.
inline Var operator*(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "mul");
  return detail::make(t, Op::mul, a.value().cwiseProduct(b.value()), a.id, b.id);
}

inline Var scale(Var a, double s) { return detail::make(*a.tape, Op::scale, s * a.value(), a.id, -1, 0, 0, s); }

inline Var operator-(Var a) { return scale(a, -1.0); }

inline Var sum_rows(Var a) { return detail::make(*a.tape, Op::sum_rows, a.value().colwise().sum(), a.id); }

inline Var broadcast_rows(Var a, Eigen::Index n) {
  if (a.rows() != 1) throw ShapeError("broadcast_rows expects a row vector");
  return detail::make(*a.tape, Op::broadcast_rows, a.value().replicate(n, 1), a.id, -1, static_cast<int>(n));
}

inline Var sum_cols(Var a) { return detail::make(*a.tape, Op::sum_cols, a.value().rowwise().sum(), a.id); }

inline Var broadcast_cols(Var a, Eigen::Index m) {
  if (a.cols() != 1) throw ShapeError("broadcast_cols expects a column vector");
  return detail::make(*a.tape, Op::broadcast_cols, a.value().replicate(1, m), a.id, -1, static_cast<int>(m));
}

inline Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return detail::make(*a.tape, Op::sum_all, std::move(out), a.id);
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

inline Var fill(Var a, Eigen::Index rows, Eigen::Index cols) {
  const double v = a.scalar();
  return detail::make(*a.tape, Op::fill, Matrix::Constant(rows, cols, v), a.id, -1, static_cast<int>(rows),
                      static_cast<int>(cols));
}

/// phi^(order)(a), elementwise.
inline Var activate(Var a, const Activation& act, int order = 0) {
  Matrix out = a.value().unaryExpr([&](double x) { return act.derivative(x, order); });
  return detail::make(*a.tape, Op::activation, std::move(out), a.id, -1, order, 0, 0.0, act);
}

inline Var relu(Var a) { return detail::make(*a.tape, Op::relu, a.value().cwiseMax(0.0), a.id); }

inline Var square(Var a) { return detail::make(*a.tape, Op::square, a.value().array().square().matrix(), a.id); }

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index len) {
  if (start < 0 || len < 0 || start + len > a.cols()) throw std::out_of_range("slice_cols: column range out of bounds");
  return detail::make(*a.tape, Op::slice_cols, a.value().middleCols(start, len), a.id, -1, static_cast<int>(start),
                      static_cast<int>(len));
}

inline Var pad_cols(Var a, Eigen::Index start, Eigen::Index total) {
  if (start < 0 || start + a.cols() > total) throw std::out_of_range("pad_cols: column range out of bounds");
  Matrix out = Matrix::Zero(a.rows(), total);
  out.middleCols(start, a.cols()) = a.value();
  return detail::make(*a.tape, Op::pad_cols, std::move(out), a.id, -1, static_cast<int>(start),
                      static_cast<int>(total));
}

/// x * W^T + b for x (n x in), W (out x in), b (1 x out).
inline Var affine(Var x, Var weight, Var bias) {
  return matmul(x, weight, false, true) + broadcast_rows(bias, x.rows());
}

inline bool Tape::has_nonsmooth_ancestor(Var y) const {
  std::vector<char> seen(static_cast<std::size_t>(y.id) + 1, 0);
  seen[static_cast<std::size_t>(y.id)] = 1;
  for (int i = y.id; i >= 0; --i) {
    if (!seen[static_cast<std::size_t>(i)]) continue;
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.op == Op::activation && !n.act.smooth()) return true;
    if (n.a >= 0) seen[static_cast<std::size_t>(n.a)] = 1;
    if (n.b >= 0) seen[static_cast<std::size_t>(n.b)] = 1;
  }
  return false;
}

inline std::vector<Var> Tape::gradients(Var y, std::span<const Var> wrt) {
  if (y.tape != this) throw std::invalid_argument("gradients: output is not recorded on this tape");
  if (y.rows() != 1 || y.cols() != 1) throw ShapeError("gradients: output must be a scalar");
  const auto top = static_cast<std::size_t>(y.id);

  // reach[i]: node i depends on some requested input.
  std::vector<char> reach(top + 1, 0);
  for (const Var& w : wrt) {
    if (w.tape != this) throw std::invalid_argument("gradients: input is not recorded on this tape");
    if (static_cast<std::size_t>(w.id) <= top) reach[static_cast<std::size_t>(w.id)] = 1;
  }
  for (std::size_t i = 0; i <= top; ++i) {
    const Node& n = nodes_[i];
    if ((n.a >= 0 && reach[static_cast<std::size_t>(n.a)]) || (n.b >= 0 && reach[static_cast<std::size_t>(n.b)])) {
      reach[i] = 1;
    }
  }

  std::vector<int> adj(top + 1, -1);
  auto accumulate = [&](int target, Var g) {
    if (target < 0 || !reach[static_cast<std::size_t>(target)]) return;
    int& slot = adj[static_cast<std::size_t>(target)];
    slot = slot < 0 ? g.id : (Var{this, slot} + g).id;
  };

  if (reach[top]) adj[top] = leaf(Matrix::Ones(1, 1)).id;

  for (std::size_t k = top + 1; k-- > 0;) {
    if (adj[k] < 0 || !reach[k]) continue;
    // Copy: push() below may reallocate nodes_.
    const Node n = [&] {
      Node c;
      const Node& src = nodes_[k];
      c.op = src.op;
      c.a = src.a;
      c.b = src.b;
      c.i0 = src.i0;
      c.i1 = src.i1;
      c.s = src.s;
      c.act = src.act;
      return c;
    }();
    const Var g{this, adj[k]};
    const Var a{this, n.a};
    const Var b{this, n.b};
    const bool need_a = n.a >= 0 && reach[static_cast<std::size_t>(n.a)];
    const bool need_b = n.b >= 0 && reach[static_cast<std::size_t>(n.b)];

    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matmul: {
        const bool ta = n.i0 != 0;
        const bool tb = n.i1 != 0;
        if (need_a) {
          if (!ta && !tb) accumulate(n.a, matmul(g, b, false, true));
          else if (!ta && tb) accumulate(n.a, matmul(g, b));
          else if (ta && !tb) accumulate(n.a, matmul(b, g, false, true));
          else accumulate(n.a, matmul(b, g, true, true));
        }
        if (need_b) {
          if (!ta && !tb) accumulate(n.b, matmul(a, g, true, false));
          else if (!ta && tb) accumulate(n.b, matmul(g, a, true, false));
          else if (ta && !tb) accumulate(n.b, matmul(a, g));
          else accumulate(n.b, matmul(g, a, true, true));
        }
        break;
      }
      case Op::add:
        if (need_a) accumulate(n.a, g);
        if (need_b) accumulate(n.b, g);
        break;
      case Op::sub:
        if (need_a) accumulate(n.a, g);
        if (need_b) accumulate(n.b, scale(g, -1.0));
        break;
      case Op::mul:
        if (need_a) accumulate(n.a, g * b);
        if (need_b) accumulate(n.b, g * a);
        break;
      case Op::scale:
        accumulate(n.a, scale(g, n.s));
        break;
      case Op::sum_rows:
        accumulate(n.a, broadcast_rows(g, a.rows()));
        break;
      case Op::broadcast_rows:
        accumulate(n.a, sum_rows(g));
        break;
      case Op::sum_cols:
        accumulate(n.a, broadcast_cols(g, a.cols()));
        break;
      case Op::broadcast_cols:
        accumulate(n.a, sum_cols(g));
        break;
      case Op::sum_all:
        accumulate(n.a, fill(g, a.rows(), a.cols()));
        break;
      case Op::fill:
        accumulate(n.a, sum(g));
        break;
      case Op::activation:
        accumulate(n.a, g * activate(a, n.act, n.i0 + 1));
        break;
      case Op::relu: {
        Matrix mask = (a.value().array() > 0.0).cast<double>().matrix();
        accumulate(n.a, g * leaf(std::move(mask)));
        break;
      }
      case Op::square:
        accumulate(n.a, g * scale(a, 2.0));
        break;
      case Op::slice_cols:
        accumulate(n.a, pad_cols(g, n.i0, a.cols()));
        break;
      case Op::pad_cols:
        accumulate(n.a, slice_cols(g, n.i0, a.cols()));
        break;
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    const auto id = static_cast<std::size_t>(w.id);
    if (id <= top && adj[id] >= 0) {
      out.push_back(Var{this, adj[id]});
    } else {
      out.push_back(leaf(Matrix::Zero(w.rows(), w.cols())));
    }
  }
  return out;
}

/// Gradient of scalar `y` with respect to the columns [start, start+len) of
/// the input node `input`. The result is recorded for further differentiation.
inline Var grad_input(Var y, Var input, Eigen::Index start, Eigen::Index len) {
  if (start < 0 || len < 1 || start + len > input.cols()) throw std::out_of_range("grad_input: slice out of range");
  const Var g = y.tape->gradients(y, std::span<const Var>(&input, 1)).front();
  return slice_cols(g, start, len);
}

/// Per-row mixed second derivative d^2 v / d u_i d u_j for a row-wise value
/// column `v` (n x 1) of input `input` (n x d). Rows must be independent,
/// which holds for any per-sample network evaluation.
inline Var second_input_derivative(Var v, Var input, Eigen::Index i, Eigen::Index j) {
  if (v.tape->has_nonsmooth_ancestor(v)) {
    throw UnsupportedActivationError("second input derivatives require a smooth activation (ELU)");
  }
  if (i < 0 || j < 0 || i >= input.cols() || j >= input.cols()) throw std::out_of_range("second_input_derivative");
  Tape& t = *v.tape;
  const Var total = sum(v);
  const Var g = t.gradients(total, std::span<const Var>(&input, 1)).front();
  const Var gi = sum(slice_cols(g, i, 1));
  const Var h = t.gradients(gi, std::span<const Var>(&input, 1)).front();
  return slice_cols(h, j, 1);
}

}  // namespace cvxrl
