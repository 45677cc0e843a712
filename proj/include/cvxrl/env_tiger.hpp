// Tiger belief-MDP: two doors, one tiger, noisy roars.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cvxrl/random.hpp"

namespace cvxrl {

enum class TigerAction : int { listen = 0, open_left = 1, open_right = 2 };
enum class Roar : int { left = 0, right = 1 };

inline constexpr int kTigerActions = 3;

inline std::string to_string(TigerAction a) {
  switch (a) {
    case TigerAction::listen: return "listen";
    case TigerAction::open_left: return "open-left";
    case TigerAction::open_right: return "open-right";
  }
  return "?";
}

struct TigerRewards {
  double tiger = -100.0;    // opening the tiger door
  double no_tiger = 10.0;   // opening the other door
  double listen = -1.0;
};

struct TigerConfig {
  double p_obs = 1.0;
  double gamma = 0.9;
  int rollout_depth = 150;
  TigerRewards rewards{};

  void validate() const {
    if (!(p_obs >= 0.5 && p_obs <= 1.0)) throw std::invalid_argument("tiger p_obs must lie in [0.5, 1]");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
    if (rollout_depth < 1) throw std::invalid_argument("rollout_depth must be >= 1");
  }
};

/// Hidden tiger side plus the agent's belief b = P(tiger behind left door).
struct TigerState {
  bool tiger_left = true;
  double belief = 0.5;
};

struct TigerStep {
  TigerState next;
  double reward = 0.0;
  bool reset = false;
  std::optional<Roar> observation;
};

/// Bayes posterior of P(tiger left) after hearing a roar with accuracy p.
inline double tiger_belief_update(double b, Roar heard, double p_obs) {
  const double like_left = heard == Roar::left ? p_obs : 1.0 - p_obs;
  const double like_right = 1.0 - like_left;
  const double num = like_left * b;
  const double den = num + like_right * (1.0 - b);
  if (den <= 0.0) return b;  // impossible observation under a degenerate prior
  return std::clamp(num / den, 0.0, 1.0);
}

class TigerEnv {
 public:
  static constexpr int kInputWidth = 1;
  static constexpr int kNumActions = kTigerActions;

  explicit TigerEnv(TigerConfig config = {}) : config_(config) { config_.validate(); }

  [[nodiscard]] const TigerConfig& config() const { return config_; }
  [[nodiscard]] int input_width() const { return kInputWidth; }
  [[nodiscard]] int num_actions() const { return kNumActions; }
  [[nodiscard]] double gamma() const { return config_.gamma; }
  [[nodiscard]] int rollout_depth() const { return config_.rollout_depth; }

  TigerState reset(Rng& rng) const { return TigerState{bernoulli(rng, 0.5), 0.5}; }

  TigerStep step(const TigerState& s, int action, Rng& rng) const {
    if (action < 0 || action >= kNumActions) throw std::out_of_range("tiger action out of range");
    const auto a = static_cast<TigerAction>(action);
    TigerStep out;
    if (a == TigerAction::listen) {
      const bool correct = bernoulli(rng, config_.p_obs);
      const Roar heard = (s.tiger_left == correct) ? Roar::left : Roar::right;
      out.next = TigerState{s.tiger_left, tiger_belief_update(s.belief, heard, config_.p_obs)};
      out.reward = config_.rewards.listen;
      out.observation = heard;
      return out;
    }
    const bool opened_tiger = (a == TigerAction::open_left) == s.tiger_left;
    out.reward = opened_tiger ? config_.rewards.tiger : config_.rewards.no_tiger;
    out.reset = true;
    out.next = reset(rng);
    return out;
  }

  /// Continuing task: opening a door resets, it never terminates.
  [[nodiscard]] static bool terminal(const TigerStep&) { return false; }

  [[nodiscard]] static Eigen::VectorXd encode(const TigerState& s) {
    Eigen::VectorXd x(1);
    x(0) = s.belief;
    return x;
  }

 private:
  TigerConfig config_;
};

// Closed-form and dynamic-programming references ---------------------------

/// Q* rows are beliefs {b^S = 0.5, b^L = 1, b^R = 0}, columns the actions
/// {listen, open-left, open-right}.
struct TigerOracle {
  double r_star = 0.0;
  std::array<std::array<double, 3>, 3> q{};
};

/// Uninformative observations (p_obs = 0.5): listening forever is optimal.
/// `horizon` < 0 means the infinite-horizon limit. Only the b^S row is
/// defined; the other rows are filled with the same listen value and the
/// expected immediate rewards of opening at certainty.
inline TigerOracle oracle_uninformative(double gamma, int horizon = -1, const TigerRewards& r = {}) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
  const bool infinite = horizon < 0;
  const double listen_sum =
      infinite ? 1.0 / (1.0 - gamma) : (1.0 - std::pow(gamma, horizon + 1)) / (1.0 - gamma);
  const double tail = infinite ? gamma / (1.0 - gamma) : gamma * (1.0 - std::pow(gamma, horizon)) / (1.0 - gamma);
  TigerOracle o;
  o.r_star = r.listen * listen_sum;
  const double open_mid = 0.5 * r.no_tiger + 0.5 * r.tiger + r.listen * tail;
  o.q[0] = {o.r_star, open_mid, open_mid};
  o.q[1] = {o.r_star, r.tiger + r.listen * tail, r.no_tiger + r.listen * tail};
  o.q[2] = {o.r_star, r.no_tiger + r.listen * tail, r.tiger + r.listen * tail};
  return o;
}

/// Perfect observations (p_obs = 1): listen once, then open the safe door.
inline TigerOracle oracle_perfect(double gamma, const TigerRewards& r = {}) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
  TigerOracle o;
  o.r_star = (r.no_tiger * gamma + r.listen) / (1.0 - gamma * gamma);
  const double cont = gamma * o.r_star;
  const double mid = 0.5 * (r.tiger + r.no_tiger);
  o.q[0] = {o.r_star, mid + cont, mid + cont};
  o.q[1] = {o.r_star, r.tiger + cont, r.no_tiger + cont};
  o.q[2] = {o.r_star, r.no_tiger + cont, r.tiger + cont};
  return o;
}

/// One-step (h = 1) opening threshold: open the door when b(T) < this.
inline double myopic_threshold(const TigerRewards& r = {}) {
  return (r.listen - r.no_tiger) / (r.tiger - r.no_tiger);
}

/// Optimal infinite-horizon policy on a uniform belief grid.
struct TigerPolicyTable {
  TigerConfig config;
  std::vector<double> beliefs;
  std::vector<double> values;
  std::vector<int> actions;
  double threshold_low = 0.0;   // open-right below, listen above
  double threshold_high = 1.0;  // listen below, open-left above
  int iterations = 0;

  /// V at an arbitrary belief by linear interpolation.
  [[nodiscard]] double value_at(double b) const {
    const double pos = std::clamp(b, 0.0, 1.0) * static_cast<double>(beliefs.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(pos), beliefs.size() - 2);
    const double w = pos - static_cast<double>(i);
    return (1.0 - w) * values[i] + w * values[i + 1];
  }

  /// Bellman Q-values at an arbitrary belief using the converged V.
  [[nodiscard]] std::array<double, 3> q_at(double b) const { return backup(config, b, [&](double x) { return value_at(x); }); }

  /// Optimal action at an arbitrary belief; ties go to the lowest index.
  [[nodiscard]] int action_at(double b) const {
    const auto q = q_at(b);
    int best = 0;
    for (int a = 1; a < 3; ++a) {
      if (q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)] + 1e-12) best = a;
    }
    return best;
  }

  template <class ValueFn>
  static std::array<double, 3> backup(const TigerConfig& c, double b, ValueFn&& v) {
    const double p = c.p_obs;
    const auto& r = c.rewards;
    const double p_left = p * b + (1.0 - p) * (1.0 - b);
    double listen = r.listen;
    if (p_left > 0.0) listen += c.gamma * p_left * v(tiger_belief_update(b, Roar::left, p));
    if (p_left < 1.0) listen += c.gamma * (1.0 - p_left) * v(tiger_belief_update(b, Roar::right, p));
    const double after_open = c.gamma * v(0.5);
    const double open_left = b * r.tiger + (1.0 - b) * r.no_tiger + after_open;
    const double open_right = b * r.no_tiger + (1.0 - b) * r.tiger + after_open;
    return {listen, open_left, open_right};
  }
};

struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Belief-grid value iteration with linear interpolation between grid points.
inline TigerPolicyTable oracle_policy(const TigerConfig& config, int grid_n = 1001, double tolerance = 1e-9,
                                      int max_iterations = 100000) {
  config.validate();
  if (grid_n < 101) throw std::invalid_argument("oracle_policy: grid_n must be >= 101");
  TigerPolicyTable t;
  t.config = config;
  t.beliefs.resize(static_cast<std::size_t>(grid_n));
  for (int i = 0; i < grid_n; ++i) t.beliefs[static_cast<std::size_t>(i)] = static_cast<double>(i) / (grid_n - 1);
  t.values.assign(t.beliefs.size(), 0.0);
  t.actions.assign(t.beliefs.size(), 0);

  std::vector<double> next(t.beliefs.size());
  bool converged = false;
  for (int it = 0; it < max_iterations; ++it) {
    double delta = 0.0;
    for (std::size_t i = 0; i < t.beliefs.size(); ++i) {
      const auto q = TigerPolicyTable::backup(config, t.beliefs[i], [&](double b) { return t.value_at(b); });
      next[i] = std::max({q[0], q[1], q[2]});
      delta = std::max(delta, std::abs(next[i] - t.values[i]));
    }
    t.values.swap(next);
    t.iterations = it + 1;
    if (delta < tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged) throw ConvergenceError("oracle_policy: value iteration did not converge");

  for (std::size_t i = 0; i < t.beliefs.size(); ++i) t.actions[i] = t.action_at(t.beliefs[i]);

  // Transition points: midpoints between the last open and first listen cell.
  const auto first_listen = std::find(t.actions.begin(), t.actions.end(), 0);
  if (first_listen == t.actions.end()) {
    t.threshold_low = t.threshold_high = 0.5;
  } else {
    const auto lo = static_cast<std::size_t>(first_listen - t.actions.begin());
    const auto hi = t.actions.size() - 1 -
                    static_cast<std::size_t>(std::find(t.actions.rbegin(), t.actions.rend(), 0) - t.actions.rbegin());
    t.threshold_low = lo == 0 ? 0.0 : 0.5 * (t.beliefs[lo - 1] + t.beliefs[lo]);
    t.threshold_high = hi + 1 == t.beliefs.size() ? 1.0 : 0.5 * (t.beliefs[hi] + t.beliefs[hi + 1]);
  }
  return t;
}

/// Beliefs visited from b = 0.5 under the optimal policy: listening expands
/// the set through both roar outcomes, opening returns to 0.5.
inline std::vector<double> reachable_beliefs(const TigerPolicyTable& table, int max_depth = 64) {
  std::set<double> seen{0.5};
  std::vector<double> frontier{0.5};
  const double p = table.config.p_obs;
  for (int depth = 0; depth < max_depth && !frontier.empty(); ++depth) {
    std::vector<double> next;
    for (double b : frontier) {
      if (table.action_at(b) != static_cast<int>(TigerAction::listen)) continue;
      for (Roar o : {Roar::left, Roar::right}) {
        const double p_o = o == Roar::left ? p * b + (1.0 - p) * (1.0 - b) : 1.0 - (p * b + (1.0 - p) * (1.0 - b));
        if (p_o <= 0.0) continue;
        const double nb = tiger_belief_update(b, o, p);
        if (seen.insert(nb).second) next.push_back(nb);
      }
    }
    frontier.swap(next);
  }
  return {seen.begin(), seen.end()};
}

}  // namespace cvxrl
