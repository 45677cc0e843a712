// Dueling Q-network: shared trunk, scalar value stream, per-action
// advantage stream, recombined as Q = V + A - mean(A).
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cvxrl/diffcore.hpp"

namespace cvxrl {

using ActionId = int;

enum class ConvexityMethod : std::uint8_t { none, hard, point, grad, hess_1d, hess_nd };

inline std::string to_string(ConvexityMethod m) {
  switch (m) {
    case ConvexityMethod::none: return "none";
    case ConvexityMethod::hard: return "hard";
    case ConvexityMethod::point: return "point";
    case ConvexityMethod::grad: return "grad";
    case ConvexityMethod::hess_1d: return "hess1d";
    case ConvexityMethod::hess_nd: return "hessnd";
  }
  return "none";
}

inline ConvexityMethod parse_method(std::string_view s) {
  if (s == "none" || s == "None") return ConvexityMethod::none;
  if (s == "hard") return ConvexityMethod::hard;
  if (s == "point") return ConvexityMethod::point;
  if (s == "grad") return ConvexityMethod::grad;
  if (s == "hess1d" || s == "hess") return ConvexityMethod::hess_1d;
  if (s == "hessnd") return ConvexityMethod::hess_nd;
  throw std::invalid_argument("unknown convexity method: " + std::string(s));
}

/// Convexity enforcement pathway plus its soft-penalty settings.
struct ConvexitySettings {
  ConvexityMethod method = ConvexityMethod::none;
  double c = 1.0;  // penalty weight
  int n_c = 20;    // belief points per update
  int n_psd = 8;   // directions per belief point (hessnd)

  void validate() const {
    if (!(c >= 0.0)) throw std::invalid_argument("penalty weight c must be >= 0");
    if (n_c < 1) throw std::invalid_argument("n_c must be >= 1");
    if (method == ConvexityMethod::hess_nd && n_psd < 1) throw std::invalid_argument("n_psd must be >= 1");
  }
  [[nodiscard]] bool soft() const {
    return method == ConvexityMethod::point || method == ConvexityMethod::grad ||
           method == ConvexityMethod::hess_1d || method == ConvexityMethod::hess_nd;
  }
};

struct NetShape {
  int input = 1;
  int actions = 3;
  std::vector<int> trunk{10, 10};
  std::vector<int> value_hidden{};
  std::vector<int> advantage_hidden{};
  Activation activation = Activation::elu(1.0);

  static NetShape tiger() { return NetShape{}; }

  static NetShape fvrs(int rocks) {
    NetShape s;
    s.input = 3 * rocks + 2;
    s.actions = 5;
    s.trunk = {100, 100, 100};
    s.value_hidden = {50};
    s.advantage_hidden = {50};
    s.activation = Activation::leaky_relu(0.03);
    return s;
  }

  friend bool operator==(const NetShape&, const NetShape&) = default;
};

struct Layer {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out
};

/// Output of a batched, tape-free evaluation.
struct NetOutput {
  Matrix q;  // n x actions
  Matrix v;  // n x 1
};

class DuelingNet {
 public:
  DuelingNet() = default;

  /// Zero-initialized network of the given shape.
  explicit DuelingNet(NetShape shape) : shape_(std::move(shape)) {
    if (shape_.input < 1 || shape_.actions < 1 || shape_.trunk.empty()) {
      throw std::invalid_argument("invalid network shape");
    }
    int width = shape_.input;
    for (int w : shape_.trunk) {
      trunk_.push_back(zero_layer(w, width));
      width = w;
    }
    const int trunk_out = width;
    for (int w : shape_.value_hidden) {
      value_.push_back(zero_layer(w, width));
      width = w;
    }
    value_.push_back(zero_layer(1, width));
    width = trunk_out;
    for (int w : shape_.advantage_hidden) {
      advantage_.push_back(zero_layer(w, width));
      width = w;
    }
    advantage_.push_back(zero_layer(shape_.actions, width));
  }

  /// Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  template <class Rng>
  static DuelingNet initialized(NetShape shape, Rng& rng) {
    DuelingNet net(std::move(shape));
    for (Layer* layer : net.layers()) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer->weight.cols()));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index i = 0; i < layer->weight.size(); ++i) layer->weight.data()[i] = dist(rng);
      for (Eigen::Index i = 0; i < layer->bias.size(); ++i) layer->bias.data()[i] = dist(rng);
    }
    return net;
  }

  [[nodiscard]] const NetShape& shape() const { return shape_; }
  [[nodiscard]] int input_width() const { return shape_.input; }
  [[nodiscard]] int num_actions() const { return shape_.actions; }
  [[nodiscard]] const Activation& activation() const { return shape_.activation; }

  [[nodiscard]] std::vector<Layer>& trunk() { return trunk_; }
  [[nodiscard]] std::vector<Layer>& value_stream() { return value_; }
  [[nodiscard]] std::vector<Layer>& advantage_stream() { return advantage_; }
  [[nodiscard]] const std::vector<Layer>& trunk() const { return trunk_; }
  [[nodiscard]] const std::vector<Layer>& value_stream() const { return value_; }
  [[nodiscard]] const std::vector<Layer>& advantage_stream() const { return advantage_; }

  /// Layers in canonical order: trunk, value stream, advantage stream.
  std::vector<Layer*> layers() {
    std::vector<Layer*> out;
    for (auto* group : {&trunk_, &value_, &advantage_}) {
      for (Layer& l : *group) out.push_back(&l);
    }
    return out;
  }
  [[nodiscard]] std::vector<const Layer*> layers() const {
    std::vector<const Layer*> out;
    for (auto* group : {&trunk_, &value_, &advantage_}) {
      for (const Layer& l : *group) out.push_back(&l);
    }
    return out;
  }

  /// Parameter matrices in canonical order (weight, bias per layer).
  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> out;
    for (Layer* l : layers()) {
      out.push_back(&l->weight);
      out.push_back(&l->bias);
    }
    return out;
  }
  [[nodiscard]] std::vector<const Matrix*> parameters() const {
    std::vector<const Matrix*> out;
    for (const Layer* l : layers()) {
      out.push_back(&l->weight);
      out.push_back(&l->bias);
    }
    return out;
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Matrix* p : parameters()) n += static_cast<std::size_t>(p->size());
    return n;
  }

  /// Batched evaluation without recording; rows of `x` are inputs.
  [[nodiscard]] NetOutput evaluate(const Matrix& x) const {
    if (x.cols() != shape_.input) throw ShapeError("network input width mismatch");
    Matrix h = x;
    for (const Layer& l : trunk_) h = apply(l, h, true);
    Matrix v = h;
    for (std::size_t i = 0; i < value_.size(); ++i) v = apply(value_[i], v, i + 1 < value_.size());
    Matrix a = h;
    for (std::size_t i = 0; i < advantage_.size(); ++i) a = apply(advantage_[i], a, i + 1 < advantage_.size());
    NetOutput out;
    out.q = aggregate(v, a);
    out.v = std::move(v);
    Tape::check_finite(out.q, "network forward");
    return out;
  }

  friend bool operator==(const DuelingNet& a, const DuelingNet& b) {
    if (!(a.shape_ == b.shape_)) return false;
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (*pa[i] != *pb[i]) return false;
    }
    return true;
  }

  /// Q(a) = V + A(a) - mean_a' A(a').
  static Matrix aggregate(const Matrix& v, const Matrix& a) {
    Matrix q = a;
    const Eigen::VectorXd centre = v.col(0) - a.rowwise().mean();
    q.colwise() += centre;
    return q;
  }

 private:
  static Layer zero_layer(int out, int in) { return Layer{Matrix::Zero(out, in), Matrix::Zero(1, out)}; }

  [[nodiscard]] Matrix apply(const Layer& l, const Matrix& x, bool activate) const {
    Matrix z(x.rows(), l.weight.rows());
    z.noalias() = x * l.weight.transpose();
    z.rowwise() += l.bias.row(0);
    if (activate) {
      const Activation& act = shape_.activation;
      z = z.unaryExpr([&](double s) { return act.derivative(s, 0); });
    }
    return z;
  }

  NetShape shape_;
  std::vector<Layer> trunk_;
  std::vector<Layer> value_;
  std::vector<Layer> advantage_;
};

/// Parameters of a network placed on a tape as leaves, in canonical order.
struct NetVars {
  const DuelingNet* net = nullptr;
  std::vector<Var> params;
};

inline NetVars bind(Tape& tape, const DuelingNet& net) {
  NetVars vars{&net, {}};
  for (const Matrix* p : net.parameters()) vars.params.push_back(tape.leaf(*p));
  return vars;
}

namespace detail {

inline Var run_layers(const NetVars& vars, std::size_t first_param, std::size_t count, Var h, bool last_linear) {
  const Activation& act = vars.net->activation();
  for (std::size_t i = 0; i < count; ++i) {
    const Var w = vars.params[first_param + 2 * i];
    const Var b = vars.params[first_param + 2 * i + 1];
    h = affine(h, w, b);
    if (!(last_linear && i + 1 == count)) h = activate(h, act);
  }
  return h;
}

}  // namespace detail

/// Recorded value stream V(x), shape n x 1.
inline Var value_on_tape(const NetVars& vars, Var x) {
  const DuelingNet& net = *vars.net;
  if (x.cols() != net.input_width()) throw ShapeError("network input width mismatch");
  const std::size_t nt = net.trunk().size();
  const Var h = detail::run_layers(vars, 0, nt, x, false);
  return detail::run_layers(vars, 2 * nt, net.value_stream().size(), h, true);
}

struct TapeOutput {
  Var q;  // n x actions
  Var v;  // n x 1
};

/// Recorded dueling forward pass.
inline TapeOutput forward(const NetVars& vars, Var x) {
  const DuelingNet& net = *vars.net;
  if (x.cols() != net.input_width()) throw ShapeError("network input width mismatch");
  const std::size_t nt = net.trunk().size();
  const std::size_t nv = net.value_stream().size();
  const std::size_t na = net.advantage_stream().size();
  const Var h = detail::run_layers(vars, 0, nt, x, false);
  const Var v = detail::run_layers(vars, 2 * nt, nv, h, true);
  const Var a = detail::run_layers(vars, 2 * (nt + nv), na, h, true);
  const auto actions = a.cols();
  const Var a_mean = scale(sum_cols(a), 1.0 / static_cast<double>(actions));
  const Var q = a + broadcast_cols(v - a_mean, actions);
  return {q, v};
}

/// Parameter gradients of scalar `loss`, one matrix per parameter.
inline std::vector<Matrix> grad_params(const NetVars& vars, Var loss) {
  const auto grads = loss.tape->gradients(loss, vars.params);
  std::vector<Matrix> out;
  out.reserve(grads.size());
  for (const Var& g : grads) out.push_back(g.value());
  return out;
}

inline Eigen::VectorXd q_values(const DuelingNet& net, const Eigen::VectorXd& input) {
  return net.evaluate(input.transpose()).q.row(0).transpose();
}

inline double value_of_belief(const DuelingNet& net, const Eigen::VectorXd& input) {
  return net.evaluate(input.transpose()).v(0, 0);
}

/// argmax with ties broken towards the lowest index.
inline ActionId argmax_action(const Eigen::Ref<const Eigen::VectorXd>& q) {
  ActionId best = 0;
  for (Eigen::Index i = 1; i < q.size(); ++i) {
    if (q(i) > q(best)) best = static_cast<ActionId>(i);
  }
  return best;
}

inline ActionId greedy_action(const DuelingNet& net, const Eigen::VectorXd& input) {
  return argmax_action(q_values(net, input));
}

/// Clip negative weights to zero in trunk layers 2.. and the whole value
/// stream. First-layer weights, biases and the advantage stream are kept.
inline void project_nonnegative(DuelingNet& net) {
  auto& trunk = net.trunk();
  for (std::size_t i = 1; i < trunk.size(); ++i) trunk[i].weight = trunk[i].weight.cwiseMax(0.0);
  for (Layer& l : net.value_stream()) l.weight = l.weight.cwiseMax(0.0);
}

inline bool satisfies_nonnegativity(const DuelingNet& net) {
  const auto& trunk = net.trunk();
  for (std::size_t i = 1; i < trunk.size(); ++i) {
    if (trunk[i].weight.minCoeff() < 0.0) return false;
  }
  for (const Layer& l : net.value_stream()) {
    if (l.weight.minCoeff() < 0.0) return false;
  }
  return true;
}

// Checkpoint I/O ------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) throw ShapeError("checkpoint matrix row count");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ShapeError("checkpoint matrix column count");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline nlohmann::json to_json(const DuelingNet& net) {
  const NetShape& s = net.shape();
  nlohmann::json j;
  j["format"] = "cvxrl-dueling-net";
  j["version"] = kCheckpointVersion;
  j["shape"] = {{"input", s.input},
                {"actions", s.actions},
                {"trunk", s.trunk},
                {"value_hidden", s.value_hidden},
                {"advantage_hidden", s.advantage_hidden},
                {"activation", s.activation.name()},
                {"activation_param", s.activation.param}};
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer* l : net.layers()) {
    layers.push_back({{"weight", matrix_to_json(l->weight)}, {"bias", matrix_to_json(l->bias)}});
  }
  j["layers"] = std::move(layers);
  return j;
}

inline DuelingNet net_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "cvxrl-dueling-net") throw std::runtime_error("not a network checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  const auto& js = j.at("shape");
  NetShape s;
  s.input = js.at("input").get<int>();
  s.actions = js.at("actions").get<int>();
  s.trunk = js.at("trunk").get<std::vector<int>>();
  s.value_hidden = js.at("value_hidden").get<std::vector<int>>();
  s.advantage_hidden = js.at("advantage_hidden").get<std::vector<int>>();
  const auto act = js.at("activation").get<std::string>();
  const double param = js.at("activation_param").get<double>();
  if (act == "elu") s.activation = Activation::elu(param);
  else if (act == "leaky_relu") s.activation = Activation::leaky_relu(param);
  else throw std::runtime_error("unknown activation in checkpoint: " + act);
  DuelingNet net(s);
  const auto layers = net.layers();
  const auto& jl = j.at("layers");
  if (jl.size() != layers.size()) throw ShapeError("checkpoint layer count does not match shape");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Layer& l = *layers[i];
    l.weight = matrix_from_json(jl[i].at("weight"), l.weight.rows(), l.weight.cols());
    l.bias = matrix_from_json(jl[i].at("bias"), 1, l.bias.cols());
  }
  return net;
}

inline void save_checkpoint(const DuelingNet& net, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out << to_json(net).dump() << '\n';
}

inline DuelingNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing checkpoint: " + path.string());
  return net_from_json(nlohmann::json::parse(in));
}

}  // namespace cvxrl
