// Monte-Carlo policy evaluation, cross-evaluation under shifted observation
// models, and the Tiger optimal-agent test.
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "cvxrl/env_fvrs.hpp"
#include "cvxrl/env_tiger.hpp"
#include "cvxrl/networks.hpp"
#include "cvxrl/random.hpp"
#include "cvxrl/statistics.hpp"

namespace cvxrl {

/// Discounted return of one greedy episode truncated at `depth` steps.
template <class Env, class Policy>
double episode_return(const Env& env, Policy& policy, int depth, Rng& rng) {
  auto state = env.reset(rng);
  double total = 0.0;
  double discount = 1.0;
  for (int t = 0; t < depth; ++t) {
    auto st = env.step(state, policy(state), rng);
    total += discount * st.reward;
    discount *= env.gamma();
    if (Env::terminal(st)) break;
    state = std::move(st.next);
  }
  return total;
}

/// Raw per-episode returns. Episode i draws from its own stream
/// derive_seed(seed, i), so results do not depend on `jobs`.
/// `make_policy` is called once per worker and must return a callable
/// `int(const State&)`.
template <class Env, class PolicyFactory>
std::vector<double> mc_returns(const Env& env, PolicyFactory&& make_policy, long n_mc, std::uint64_t seed,
                               int depth = 0, int jobs = 1) {
  if (n_mc < 1) throw std::invalid_argument("mc_return: n_mc must be >= 1");
  if (depth <= 0) depth = env.rollout_depth();
  jobs = std::clamp(jobs, 1, static_cast<int>(std::min<long>(n_mc, 256)));
  std::vector<double> out(static_cast<std::size_t>(n_mc));
  auto work = [&](long begin, long end) {
    auto policy = make_policy();
    for (long i = begin; i < end; ++i) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
      out[static_cast<std::size_t>(i)] = episode_return(env, policy, depth, rng);
    }
  };
  if (jobs == 1) {
    work(0, n_mc);
    return out;
  }
  std::vector<std::thread> pool;
  const long chunk = (n_mc + jobs - 1) / jobs;
  for (int j = 0; j < jobs; ++j) {
    const long b = j * chunk;
    const long e = std::min(n_mc, b + chunk);
    if (b < e) pool.emplace_back(work, b, e);
  }
  for (auto& t : pool) t.join();
  return out;
}

template <class Env, class PolicyFactory>
EvalSummary mc_return(const Env& env, PolicyFactory&& make_policy, long n_mc, std::uint64_t seed, int depth = 0,
                      int jobs = 1) {
  return summarize_distribution(mc_returns(env, make_policy, n_mc, seed, depth, jobs));
}

/// Same policy, same seed, one summary per environment.
template <class Env, class PolicyFactory>
std::vector<EvalSummary> cross_evaluate(const std::vector<Env>& envs, PolicyFactory&& make_policy, long n_mc,
                                        std::uint64_t seed, int jobs = 1) {
  std::vector<EvalSummary> out;
  out.reserve(envs.size());
  for (const Env& e : envs) out.push_back(mc_return(e, make_policy, n_mc, seed, 0, jobs));
  return out;
}

// Policies ---------------------------------------------------------------------

/// Greedy Tiger policy. Beliefs recur exactly along trajectories, so
/// actions are memoised per belief value.
class TigerNetPolicy {
 public:
  explicit TigerNetPolicy(const DuelingNet& net) : net_(&net) {}

  int operator()(const TigerState& s) {
    const auto it = cache_.find(s.belief);
    if (it != cache_.end()) return it->second;
    const int a = greedy_action(*net_, TigerEnv::encode(s));
    cache_.emplace(s.belief, a);
    return a;
  }

 private:
  const DuelingNet* net_;
  std::map<double, int> cache_;
};

inline auto tiger_net_policy(const DuelingNet& net) {
  return [&net] { return TigerNetPolicy(net); };
}

inline auto fvrs_net_policy(const DuelingNet& net, int n) {
  return [&net, n] { return [&net, n](const FvrsState& s) { return greedy_action(net, fvrs_encode(s, n)); }; };
}

/// Fixed action everywhere, e.g. always-listen or always-east.
inline auto constant_policy(int action) {
  return [action] { return [action](const auto&) { return action; }; };
}

inline auto tiger_table_policy(const TigerPolicyTable& table) {
  return [&table] { return [&table](const TigerState& s) { return table.action_at(s.belief); }; };
}

// Baselines and optimality -------------------------------------------------------

inline EvalSummary baseline_ignore_rocks(const FvrsConfig& config, long n_mc, std::uint64_t seed) {
  return mc_return(FvrsEnv(config), constant_policy(static_cast<int>(FvrsAction::east)), n_mc, seed);
}

inline EvalSummary baseline_convenience(const FvrsConfig& config, long n_mc, std::uint64_t seed) {
  return mc_return(FvrsEnv(config), [] { return [](const FvrsState& s) { return convenience_action(s); }; }, n_mc,
                   seed);
}

struct TigerOptimality {
  bool optimal = false;            // full agreement on reachable beliefs
  double agreement = 0.0;          // fraction of grid beliefs that agree
  double reachable_agreement = 0.0;
};

inline TigerOptimality is_optimal_tiger(const DuelingNet& net, const TigerPolicyTable& table) {
  Matrix grid(static_cast<Eigen::Index>(table.beliefs.size()), 1);
  for (std::size_t i = 0; i < table.beliefs.size(); ++i) grid(static_cast<Eigen::Index>(i), 0) = table.beliefs[i];
  const Matrix q = net.evaluate(grid).q;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < table.beliefs.size(); ++i) {
    agree += argmax_action(q.row(static_cast<Eigen::Index>(i)).transpose()) == table.actions[i];
  }
  const auto reachable = reachable_beliefs(table);
  std::size_t r_agree = 0;
  for (double b : reachable) {
    Eigen::VectorXd x(1);
    x(0) = b;
    r_agree += greedy_action(net, x) == table.action_at(b);
  }
  TigerOptimality out;
  out.agreement = static_cast<double>(agree) / static_cast<double>(table.beliefs.size());
  out.reachable_agreement = static_cast<double>(r_agree) / static_cast<double>(reachable.size());
  out.optimal = r_agree == reachable.size();
  return out;
}

}  // namespace cvxrl
