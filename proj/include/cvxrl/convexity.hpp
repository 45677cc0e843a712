// Soft convexity penalties over sampled belief points and convexity audits.
//
// Value functions are passed as callables. On a tape: `Var f(Var x)` mapping
// an n x d input node to an n x 1 value node, evaluated row by row. For
// audits: `Eigen::VectorXd f(const Matrix& x)`.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cvxrl/diffcore.hpp"
#include "cvxrl/networks.hpp"
#include "cvxrl/random.hpp"

namespace cvxrl {

/// Where beliefs live inside the network input.
struct BeliefDomain {
  int input_width = 1;
  std::vector<int> belief_cols{0};

  static BeliefDomain tiger() { return {1, {0}}; }
  static BeliefDomain fvrs(int k) {
    BeliefDomain d;
    d.input_width = 3 * k + 2;
    d.belief_cols.clear();
    for (int r = 0; r < k; ++r) d.belief_cols.push_back(3 * r + 2);
    return d;
  }
  [[nodiscard]] bool partial() const { return static_cast<int>(belief_cols.size()) != input_width; }
};

/// n_c sampled (u, v, t) triples, plus n_psd unit directions per u for the
/// n-dimensional Hessian check. Rows of `u` and `v` are full network inputs
/// that differ only in belief columns.
struct ConvexityBatch {
  Matrix u;
  Matrix v;
  Eigen::VectorXd t;
  int n_psd = 0;
  Matrix directions;  // (n_c * n_psd) x d, zero outside belief columns; row i*n_psd+j belongs to u_i

  [[nodiscard]] Eigen::Index size() const { return u.rows(); }
};

/// Supplies the non-belief part of an input, e.g. a state from replay.
using ContextSampler = std::function<Eigen::VectorXd(Rng&)>;

struct EmptyReplayError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline ConvexityBatch sample_beliefs(const BeliefDomain& domain, int n_c, Rng& rng, int n_psd = 0,
                                     const ContextSampler& context = {}) {
  if (n_c < 1) throw std::invalid_argument("sample_beliefs: n_c must be >= 1");
  if (domain.partial() && !context) throw EmptyReplayError("sample_beliefs: no replay states to copy positions from");
  const int d = domain.input_width;
  ConvexityBatch batch;
  batch.u.resize(n_c, d);
  batch.v.resize(n_c, d);
  batch.t.resize(n_c);
  for (int i = 0; i < n_c; ++i) {
    Eigen::VectorXd base = domain.partial() ? context(rng) : Eigen::VectorXd::Zero(d);
    if (base.size() != d) throw ShapeError("context state has the wrong width");
    batch.u.row(i) = base.transpose();
    batch.v.row(i) = base.transpose();
    for (int c : domain.belief_cols) batch.u(i, c) = uniform01(rng);
    for (int c : domain.belief_cols) batch.v(i, c) = uniform01(rng);
    batch.t(i) = uniform01(rng);
  }
  batch.n_psd = n_psd;
  if (n_psd > 0) {
    batch.directions = Matrix::Zero(static_cast<Eigen::Index>(n_c) * n_psd, d);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Eigen::Index row = 0; row < batch.directions.rows(); ++row) {
      double norm = 0.0;
      while (norm < 1e-12) {
        for (int c : domain.belief_cols) batch.directions(row, c) = gauss(rng);
        norm = batch.directions.row(row).norm();
      }
      batch.directions.row(row) /= norm;
    }
  }
  return batch;
}

namespace detail {

inline Matrix repeat_rows(const Matrix& m, int times) {
  Matrix out(m.rows() * times, m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < times; ++j) out.row(i * times + j) = m.row(i);
  }
  return out;
}

inline Var mean_squared_positive(Var violation) { return mean(square(relu(violation))); }

template <class F>
Var input_gradient(Tape& tape, F& f, Var x, Var* value_out = nullptr) {
  const Var fx = f(x);
  if (value_out) *value_out = fx;
  return tape.gradients(sum(fx), std::span<const Var>(&x, 1)).front();
}

}  // namespace detail

/// mean max{0, f(t u + (1-t) v) - t f(u) - (1-t) f(v)}^2
template <class F>
Var point_penalty(Tape& tape, F&& f, const ConvexityBatch& s) {
  if (s.size() == 0) throw std::invalid_argument("point_penalty: empty sample set");
  const Matrix t = s.t;
  const Matrix one_minus_t = (1.0 - s.t.array()).matrix();
  Matrix mid = s.u;
  mid.array().colwise() *= s.t.array();
  mid += (s.v.array().colwise() * one_minus_t.col(0).array()).matrix();
  const Var fu = f(tape.leaf(s.u));
  const Var fv = f(tape.leaf(s.v));
  const Var fm = f(tape.leaf(std::move(mid)));
  const Var chord = constant(tape, t) * fu + constant(tape, one_minus_t) * fv;
  return detail::mean_squared_positive(fm - chord);
}

/// mean max{0, f(u) + grad f(u)^T (v - u) - f(v)}^2
template <class F>
Var grad_penalty(Tape& tape, F&& f, const ConvexityBatch& s) {
  if (s.size() == 0) throw std::invalid_argument("grad_penalty: empty sample set");
  const Var u = tape.leaf(s.u);
  Var fu;
  const Var g = detail::input_gradient(tape, f, u, &fu);
  const Var fv = f(tape.leaf(s.v));
  const Var step = constant(tape, s.v - s.u);
  const Var tangent = fu + sum_cols(g * step);
  return detail::mean_squared_positive(tangent - fv);
}

/// mean max{0, -f''(u)}^2 for a one-dimensional belief.
template <class F>
Var hess_penalty_1d(Tape& tape, F&& f, const ConvexityBatch& s, int belief_col = 0) {
  if (s.size() == 0) throw std::invalid_argument("hess_penalty_1d: empty sample set");
  const Var u = tape.leaf(s.u);
  const Var fu = f(u);
  const Var d2 = second_input_derivative(fu, u, belief_col, belief_col);
  return detail::mean_squared_positive(-d2);
}

/// mean over points and directions of max{0, -x^T H(u) x}^2.
template <class F>
Var hess_penalty_nd(Tape& tape, F&& f, const ConvexityBatch& s) {
  if (s.size() == 0) throw std::invalid_argument("hess_penalty_nd: empty sample set");
  if (s.n_psd < 1 || s.directions.rows() != s.size() * s.n_psd) {
    throw std::invalid_argument("hess_penalty_nd: batch has no psd directions");
  }
  const Var u = tape.leaf(detail::repeat_rows(s.u, s.n_psd));
  const Var fu = f(u);
  if (tape.has_nonsmooth_ancestor(fu)) {
    throw UnsupportedActivationError("Hessian penalties require a smooth activation (ELU)");
  }
  const Var x = constant(tape, s.directions);
  const Var g = tape.gradients(sum(fu), std::span<const Var>(&u, 1)).front();
  const Var directional = sum(g * x);
  const Var hx = tape.gradients(directional, std::span<const Var>(&u, 1)).front();
  const Var quad = sum_cols(hx * x);
  return detail::mean_squared_positive(-quad);
}

inline Var total_loss(Var td, Var convex, double c) {
  if (!(c >= 0.0)) throw std::invalid_argument("penalty weight c must be >= 0");
  return td + scale(convex, c);
}

inline double total_loss(double td, double convex, double c) {
  if (!(c >= 0.0)) throw std::invalid_argument("penalty weight c must be >= 0");
  return td + c * convex;
}

/// Dispatch on the soft method. Returns an invalid Var (id < 0) for
/// methods without a penalty term; nothing is evaluated in that case.
template <class F>
Var convexity_penalty(Tape& tape, F&& f, const ConvexityBatch& s, ConvexityMethod method, int belief_col = 0) {
  switch (method) {
    case ConvexityMethod::point: return point_penalty(tape, f, s);
    case ConvexityMethod::grad: return grad_penalty(tape, f, s);
    case ConvexityMethod::hess_1d: return hess_penalty_1d(tape, f, s, belief_col);
    case ConvexityMethod::hess_nd: return hess_penalty_nd(tape, f, s);
    case ConvexityMethod::none:
    case ConvexityMethod::hard: break;
  }
  return Var{};
}

/// Adapter exposing a network's value stream as a tape value function.
inline auto value_function(const NetVars& vars) {
  return [&vars](Var x) { return value_on_tape(vars, x); };
}

/// Adapter exposing a network's value stream for audits.
inline auto plain_value_function(const DuelingNet& net) {
  return [&net](const Matrix& x) -> Eigen::VectorXd { return net.evaluate(x).v.col(0); };
}

// Audits ---------------------------------------------------------------------

/// Largest f(t u + (1-t) v) - t f(u) - (1-t) f(v) over the sampled triples
/// (positive means a convexity violation).
template <class F>
double max_point_violation(F&& f, const ConvexityBatch& s) {
  Matrix mid = s.u;
  mid.array().colwise() *= s.t.array();
  mid += (s.v.array().colwise() * (1.0 - s.t.array())).matrix();
  const Eigen::VectorXd fu = f(s.u);
  const Eigen::VectorXd fv = f(s.v);
  const Eigen::VectorXd fm = f(mid);
  const Eigen::VectorXd gap = fm.array() - s.t.array() * fu.array() - (1.0 - s.t.array()) * fv.array();
  return gap.maxCoeff();
}

struct AuditSection {
  int belief_col = 0;
  std::vector<double> grid;
  std::vector<double> values;
};

struct AuditReport {
  std::string env;
  double max_violation = -std::numeric_limits<double>::infinity();
  double worst_u = 0.0;  // along the section holding the worst triple
  double worst_v = 0.0;
  double worst_t = 0.0;
  int worst_col = 0;
  std::size_t triples = 0;
  std::vector<AuditSection> sections;
};

/// Deterministic point-convexity audit. For every belief column a section
/// through `reference` is checked on all (u, v, t) grid triples, with t on
/// a grid of `t_resolution` points in [0, 1].
template <class F>
AuditReport audit_convexity(F&& f, const BeliefDomain& domain, int grid_resolution, const Eigen::VectorXd& reference,
                            int t_resolution = 0, std::string env = "") {
  if (grid_resolution < 2) throw std::invalid_argument("audit grid resolution must be >= 2");
  if (reference.size() != domain.input_width) throw ShapeError("audit reference input has the wrong width");
  if (t_resolution <= 0) t_resolution = grid_resolution;
  AuditReport report;
  report.env = std::move(env);
  const int g = grid_resolution;
  std::vector<double> grid(static_cast<std::size_t>(g));
  for (int i = 0; i < g; ++i) grid[static_cast<std::size_t>(i)] = static_cast<double>(i) / (g - 1);
  std::vector<double> ts(static_cast<std::size_t>(t_resolution));
  for (int i = 0; i < t_resolution; ++i) {
    ts[static_cast<std::size_t>(i)] = t_resolution == 1 ? 0.5 : static_cast<double>(i) / (t_resolution - 1);
  }

  for (int col : domain.belief_cols) {
    Matrix pts(g, domain.input_width);
    for (int i = 0; i < g; ++i) {
      pts.row(i) = reference.transpose();
      pts(i, col) = grid[static_cast<std::size_t>(i)];
    }
    const Eigen::VectorXd fg = f(pts);
    AuditSection section{col, grid, std::vector<double>(fg.data(), fg.data() + fg.size())};

    // Midpoints for every (u, v) pair, one t at a time.
    Matrix mids(static_cast<Eigen::Index>(g) * g, domain.input_width);
    for (double t : ts) {
      for (int i = 0; i < g; ++i) {
        for (int j = 0; j < g; ++j) {
          const auto row = static_cast<Eigen::Index>(i) * g + j;
          mids.row(row) = reference.transpose();
          mids(row, col) = t * grid[static_cast<std::size_t>(i)] + (1.0 - t) * grid[static_cast<std::size_t>(j)];
        }
      }
      const Eigen::VectorXd fm = f(mids);
      for (int i = 0; i < g; ++i) {
        for (int j = 0; j < g; ++j) {
          const double gap = fm(static_cast<Eigen::Index>(i) * g + j) - t * fg(i) - (1.0 - t) * fg(j);
          ++report.triples;
          if (gap > report.max_violation) {
            report.max_violation = gap;
            report.worst_u = grid[static_cast<std::size_t>(i)];
            report.worst_v = grid[static_cast<std::size_t>(j)];
            report.worst_t = t;
            report.worst_col = col;
          }
        }
      }
    }
    report.sections.push_back(std::move(section));
  }
  return report;
}

inline nlohmann::json to_json(const AuditReport& r) {
  nlohmann::json j;
  j["env"] = r.env;
  j["max_violation"] = r.max_violation;
  j["triples"] = r.triples;
  j["worst"] = {{"belief_col", r.worst_col}, {"u", r.worst_u}, {"v", r.worst_v}, {"t", r.worst_t}};
  nlohmann::json sections = nlohmann::json::array();
  for (const auto& s : r.sections) {
    sections.push_back({{"belief_col", s.belief_col}, {"b", s.grid}, {"value", s.values}});
  }
  j["sections"] = std::move(sections);
  if (r.sections.size() == 1) {
    j["b"] = r.sections.front().grid;
    j["value"] = r.sections.front().values;
  }
  return j;
}

}  // namespace cvxrl
