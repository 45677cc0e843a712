// FieldVisionRockSample(n, k): grid navigation with distance-dependent
// sensing of every rock after every action.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cvxrl/random.hpp"

namespace cvxrl {

enum class FvrsAction : int { north = 0, south = 1, east = 2, west = 3, sample = 4 };

inline constexpr int kFvrsActions = 5;

/// Per-rock observation accuracy as a function of agent-rock distance.
struct ObservationFunction {
  enum class Kind { standard, heaviside, constant };

  Kind kind = Kind::standard;
  double c = 1.0;   // constant accuracy
  double d0 = 1.0;  // distance scale (standard) or cut-off (heaviside)

  /// 0.5 + 2^(-1 - d/d0) with d0 = (n - 1) sqrt(2) / 4.
  static ObservationFunction standard(int n) {
    return {Kind::standard, 1.0, static_cast<double>(n - 1) * std::sqrt(2.0) / 4.0};
  }
  static ObservationFunction heaviside(double d0 = 1.0) { return {Kind::heaviside, 1.0, d0}; }
  static ObservationFunction constant(double c) {
    if (!(c >= 0.5 && c <= 1.0)) throw std::invalid_argument("constant observation accuracy must lie in [0.5, 1]");
    return {Kind::constant, c, 1.0};
  }

  [[nodiscard]] double accuracy(double d) const {
    if (d < 0.0) throw std::invalid_argument("distance must be non-negative");
    switch (kind) {
      case Kind::standard: return 0.5 + std::exp2(-1.0 - d / d0);
      case Kind::heaviside: return d <= d0 ? 1.0 : 0.5;
      case Kind::constant: return c;
    }
    return 0.5;
  }

  /// "def", "heavi", or "const0.7".
  [[nodiscard]] std::string name() const {
    switch (kind) {
      case Kind::standard: return "def";
      case Kind::heaviside: return "heavi";
      case Kind::constant: {
        char buf[32];
        std::snprintf(buf, sizeof buf, "const%.1f", c);
        return buf;
      }
    }
    return "?";
  }

  /// Inverse of name(); `n` fixes d0 for the standard function.
  static ObservationFunction parse(std::string_view s, int n) {
    if (s == "def" || s == "default") return standard(n);
    if (s == "heavi" || s == "heaviside") return heaviside();
    if (s.starts_with("const")) return constant(std::stod(std::string(s.substr(5))));
    throw std::invalid_argument("unknown observation function: " + std::string(s));
  }
};

struct FvrsRewards {
  double exit = 10.0;
  double good_rock = 10.0;
  double bad_rock = -10.0;
  double illegal_move = -10.0;
};

struct FvrsConfig {
  int n = 4;
  int k = 4;
  double gamma = 0.9;
  ObservationFunction obs = ObservationFunction::standard(4);
  int max_depth = 0;  // 0: n^2 * k
  FvrsRewards rewards{};

  void validate() const {
    if (n < 2 || k < 1 || k > n * n) throw std::invalid_argument("invalid FVRS (n, k)");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
    if (max_depth < 0) throw std::invalid_argument("max_depth must be >= 0");
  }
  [[nodiscard]] int depth() const { return max_depth > 0 ? max_depth : n * n * k; }
};

struct Cell {
  int col = 0;
  int row = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct FvrsState {
  Cell agent;
  std::vector<Cell> rocks;
  std::vector<char> good;
  std::vector<double> belief;
  std::vector<char> sampled;
};

struct FvrsStep {
  FvrsState next;
  double reward = 0.0;
  bool done = false;
};

/// Posterior P(good) after one observation of accuracy p.
inline double belief_update_rock(double b, bool observed_good, double p) {
  const double like_good = observed_good ? p : 1.0 - p;
  const double num = like_good * b;
  const double den = num + (1.0 - like_good) * (1.0 - b);
  if (den <= 0.0) return b;
  return std::clamp(num / den, 0.0, 1.0);
}

inline double distance(const Cell& a, const Cell& b) {
  return std::hypot(static_cast<double>(a.col - b.col), static_cast<double>(a.row - b.row));
}

inline FvrsState fvrs_reset(const FvrsConfig& config, Rng& rng) {
  config.validate();
  FvrsState s;
  s.agent = Cell{0, uniform_int(rng, 0, config.n - 1)};
  // k distinct cells by partial Fisher-Yates over the n^2 cell indices.
  std::vector<int> cells(static_cast<std::size_t>(config.n * config.n));
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  for (int i = 0; i < config.k; ++i) {
    const int j = uniform_int(rng, i, static_cast<int>(cells.size()) - 1);
    std::swap(cells[static_cast<std::size_t>(i)], cells[static_cast<std::size_t>(j)]);
    const int c = cells[static_cast<std::size_t>(i)];
    s.rocks.push_back(Cell{c % config.n, c / config.n});
  }
  for (int i = 0; i < config.k; ++i) s.good.push_back(bernoulli(rng, 0.5) ? 1 : 0);
  s.belief.assign(static_cast<std::size_t>(config.k), 0.5);
  s.sampled.assign(static_cast<std::size_t>(config.k), 0);
  return s;
}

/// Field-vision sensing: every rock is observed with accuracy obs(d).
inline void observe_rocks(FvrsState& s, const ObservationFunction& obs, Rng& rng) {
  for (std::size_t r = 0; r < s.rocks.size(); ++r) {
    const double p = obs.accuracy(distance(s.agent, s.rocks[r]));
    const bool truthful = bernoulli(rng, p);
    const bool says_good = truthful ? s.good[r] != 0 : s.good[r] == 0;
    s.belief[r] = belief_update_rock(s.belief[r], says_good, p);
  }
}

/// One transition. Moving east from the last column exits the grid.
inline FvrsStep fvrs_step(const FvrsConfig& config, const FvrsState& state, int action, const ObservationFunction& obs,
                          Rng& rng) {
  if (action < 0 || action >= kFvrsActions) throw std::out_of_range("FVRS action out of range");
  FvrsStep out;
  out.next = state;
  FvrsState& s = out.next;
  const auto& r = config.rewards;
  int sampled_rock = -1;
  switch (static_cast<FvrsAction>(action)) {
    case FvrsAction::north:
      if (s.agent.row + 1 < config.n) ++s.agent.row;
      else out.reward = r.illegal_move;
      break;
    case FvrsAction::south:
      if (s.agent.row > 0) --s.agent.row;
      else out.reward = r.illegal_move;
      break;
    case FvrsAction::west:
      if (s.agent.col > 0) --s.agent.col;
      else out.reward = r.illegal_move;
      break;
    case FvrsAction::east:
      if (s.agent.col + 1 < config.n) {
        ++s.agent.col;
      } else {
        out.reward = r.exit;
        out.done = true;
        return out;
      }
      break;
    case FvrsAction::sample: {
      const auto it = std::find(s.rocks.begin(), s.rocks.end(), s.agent);
      if (it != s.rocks.end()) {
        sampled_rock = static_cast<int>(it - s.rocks.begin());
        out.reward = s.good[static_cast<std::size_t>(sampled_rock)] ? r.good_rock : r.bad_rock;
      }
      break;
    }
  }
  observe_rocks(s, obs, rng);
  if (sampled_rock >= 0) {
    // The reward reveals the rock; after sampling it is bad either way.
    const auto i = static_cast<std::size_t>(sampled_rock);
    s.good[i] = 0;
    s.sampled[i] = 1;
    s.belief[i] = 0.0;
  }
  return out;
}

/// Network input: per rock (col, row, belief), then agent (col, row);
/// coordinates scaled to [0, 1] by n - 1.
inline Eigen::VectorXd fvrs_encode(const FvrsState& s, int n) {
  const double scale = 1.0 / static_cast<double>(n - 1);
  Eigen::VectorXd x(3 * static_cast<Eigen::Index>(s.rocks.size()) + 2);
  for (std::size_t r = 0; r < s.rocks.size(); ++r) {
    const auto base = static_cast<Eigen::Index>(3 * r);
    x(base) = s.rocks[r].col * scale;
    x(base + 1) = s.rocks[r].row * scale;
    x(base + 2) = s.belief[r];
  }
  x(x.size() - 2) = s.agent.col * scale;
  x(x.size() - 1) = s.agent.row * scale;
  return x;
}

/// Input columns holding rock beliefs.
inline std::vector<int> fvrs_belief_columns(int k) {
  std::vector<int> cols;
  for (int r = 0; r < k; ++r) cols.push_back(3 * r + 2);
  return cols;
}

class FvrsEnv {
 public:
  explicit FvrsEnv(FvrsConfig config = {}) : config_(std::move(config)) { config_.validate(); }

  [[nodiscard]] const FvrsConfig& config() const { return config_; }
  [[nodiscard]] int input_width() const { return 3 * config_.k + 2; }
  [[nodiscard]] int num_actions() const { return kFvrsActions; }
  [[nodiscard]] double gamma() const { return config_.gamma; }
  [[nodiscard]] int rollout_depth() const { return config_.depth(); }

  FvrsState reset(Rng& rng) const { return fvrs_reset(config_, rng); }
  FvrsStep step(const FvrsState& s, int action, Rng& rng) const {
    return fvrs_step(config_, s, action, config_.obs, rng);
  }
  [[nodiscard]] static bool terminal(const FvrsStep& st) { return st.done; }
  [[nodiscard]] Eigen::VectorXd encode(const FvrsState& s) const { return fvrs_encode(s, config_.n); }

 private:
  FvrsConfig config_;
};

/// Values of the move-east-only policy; Q-tilde are averages over the n
/// columns the agent can occupy.
struct IgnoreRocksOracle {
  double r_star = 0.0;
  double q_east = 0.0;
  double q_north = 0.0;  // == q_south
  double q_south = 0.0;
  double q_west = 0.0;
  double q_sample = 0.0;
};

inline IgnoreRocksOracle oracle_ignore_rocks(double gamma, int n, const FvrsRewards& r = {}) {
  if (!(gamma > 0.0 && gamma < 1.0) || n < 2) throw std::invalid_argument("oracle_ignore_rocks: bad arguments");
  IgnoreRocksOracle o;
  const double nd = static_cast<double>(n);
  o.r_star = std::pow(gamma, n - 1) * r.exit;
  o.q_east = (1.0 - std::pow(gamma, n)) / (1.0 - gamma) * r.exit / nd;
  o.q_north = gamma * o.q_east + r.illegal_move / nd;
  o.q_south = o.q_north;
  o.q_west = gamma * gamma * o.q_east + r.illegal_move / nd;
  o.q_sample = gamma * o.q_east;
  return o;
}

/// Head east, but sample when standing on a rock believed good (b > 0.5).
inline int convenience_action(const FvrsState& s) {
  for (std::size_t r = 0; r < s.rocks.size(); ++r) {
    if (s.rocks[r] == s.agent && s.belief[r] > 0.5) return static_cast<int>(FvrsAction::sample);
  }
  return static_cast<int>(FvrsAction::east);
}

}  // namespace cvxrl
