// DQN training with experience replay, a hard-copied target network,
// epsilon-greedy exploration, plateau learning-rate decay and convexity
// enforcement (weight projection or a soft penalty term).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cvxrl/convexity.hpp"
#include "cvxrl/diffcore.hpp"
#include "cvxrl/networks.hpp"
#include "cvxrl/random.hpp"

namespace cvxrl {

// Replay ---------------------------------------------------------------------

struct TransitionBatch {
  Matrix states;
  std::vector<int> actions;
  Eigen::VectorXd rewards;
  Matrix next_states;
  std::vector<char> terminal;

  [[nodiscard]] Eigen::Index size() const { return states.rows(); }
};

/// Fixed-capacity FIFO ring of (state, action, reward, next state, terminal).
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int width) : capacity_(capacity), width_(width) {
    if (capacity == 0) throw std::invalid_argument("replay capacity must be >= 1");
    if (width < 1) throw std::invalid_argument("replay state width must be >= 1");
  }

  void push(const Eigen::VectorXd& state, int action, double reward, const Eigen::VectorXd& next, bool terminal) {
    if (state.size() != width_ || next.size() != width_) throw ShapeError("replay: state width mismatch");
    const std::size_t w = static_cast<std::size_t>(width_);
    if (size_ < capacity_) {
      states_.insert(states_.end(), state.data(), state.data() + w);
      next_.insert(next_.end(), next.data(), next.data() + w);
      actions_.push_back(action);
      rewards_.push_back(reward);
      terminal_.push_back(terminal ? 1 : 0);
      ++size_;
    } else {
      std::copy(state.data(), state.data() + w, states_.begin() + static_cast<std::ptrdiff_t>(head_ * w));
      std::copy(next.data(), next.data() + w, next_.begin() + static_cast<std::ptrdiff_t>(head_ * w));
      actions_[head_] = action;
      rewards_[head_] = reward;
      terminal_[head_] = terminal ? 1 : 0;
    }
    head_ = (head_ + 1) % capacity_;
  }

  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] bool empty() const { return size_ == 0; }
  [[nodiscard]] int width() const { return width_; }

  /// Slot `i` in storage order (not insertion order once wrapped).
  [[nodiscard]] Eigen::VectorXd state(std::size_t i) const {
    return Eigen::Map<const Eigen::VectorXd>(states_.data() + i * static_cast<std::size_t>(width_), width_);
  }
  [[nodiscard]] Eigen::VectorXd next_state(std::size_t i) const {
    return Eigen::Map<const Eigen::VectorXd>(next_.data() + i * static_cast<std::size_t>(width_), width_);
  }
  [[nodiscard]] int action(std::size_t i) const { return actions_[i]; }
  [[nodiscard]] double reward(std::size_t i) const { return rewards_[i]; }
  [[nodiscard]] bool terminal(std::size_t i) const { return terminal_[i] != 0; }

  /// min(n, size) distinct slots, uniformly at random.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
    if (size_ == 0) throw std::logic_error("sampling from an empty replay buffer");
    n = std::min(n, size_);
    std::vector<std::size_t> out;
    out.reserve(n);
    if (n * 4 >= size_) {
      // Dense case: partial shuffle of all slots.
      std::vector<std::size_t> all(size_);
      std::iota(all.begin(), all.end(), std::size_t{0});
      for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, size_ - 1);
        std::swap(all[i], all[pick(rng)]);
        out.push_back(all[i]);
      }
      return out;
    }
    std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
    while (out.size() < n) {
      const std::size_t c = pick(rng);
      if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
    }
    return out;
  }

  TransitionBatch gather(std::span<const std::size_t> idx) const {
    TransitionBatch b;
    const auto n = static_cast<Eigen::Index>(idx.size());
    b.states.resize(n, width_);
    b.next_states.resize(n, width_);
    b.rewards.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const std::size_t i = idx[static_cast<std::size_t>(r)];
      b.states.row(r) = state(i).transpose();
      b.next_states.row(r) = next_state(i).transpose();
      b.actions.push_back(actions_[i]);
      b.rewards(r) = rewards_[i];
      b.terminal.push_back(terminal_[i]);
    }
    return b;
  }

  TransitionBatch sample(std::size_t n, Rng& rng) const {
    const auto idx = sample_indices(n, rng);
    return gather(idx);
  }

 private:
  std::size_t capacity_;
  int width_;
  std::size_t size_ = 0;
  std::size_t head_ = 0;
  std::vector<double> states_;
  std::vector<double> next_;
  std::vector<int> actions_;
  std::vector<double> rewards_;
  std::vector<char> terminal_;
};

// Optimizer and schedules ------------------------------------------------------

/// Adam with the AMSGrad maximum of second moments (PyTorch semantics).
class AmsGrad {
 public:
  explicit AmsGrad(const DuelingNet& net, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Matrix* p : net.parameters()) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
      vmax_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }

  void step(DuelingNet& net, const std::vector<Matrix>& grads, double lr) {
    auto params = net.parameters();
    if (grads.size() != params.size()) throw ShapeError("optimizer: gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    const double step_size = lr / bc1;
    const double sqrt_bc2 = std::sqrt(bc2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseAbs2();
      vmax_[i] = vmax_[i].cwiseMax(v_[i]);
      const Matrix denom = (vmax_[i].cwiseSqrt() / sqrt_bc2).array() + eps_;
      *params[i] -= step_size * m_[i].cwiseQuotient(denom);
    }
  }

  [[nodiscard]] long steps() const { return t_; }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::vector<Matrix> vmax_;
};

/// Multiplies the learning rate by `factor` once the metric has failed to
/// improve (relative threshold 1e-4) for more than `patience` steps.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience, double min_lr)
      : lr_(lr), factor_(factor), patience_(patience), min_lr_(min_lr) {}

  double step(double metric) {
    if (metric < best_ * (1.0 - 1e-4)) {
      best_ = metric;
      bad_ = 0;
    } else if (++bad_ > patience_) {
      lr_ = std::max(lr_ * factor_, min_lr_);
      bad_ = 0;
    }
    return lr_;
  }

  [[nodiscard]] double lr() const { return lr_; }

 private:
  double lr_;
  double factor_;
  int patience_;
  double min_lr_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

// Configuration -----------------------------------------------------------------

struct TrainConfig {
  // Fixed for every environment.
  int batch_size = 20;
  int rollout_steps = 25;
  double gamma = 0.9;
  int target_update_period = 3;  // gradient updates between hard copies
  double min_lr = 1e-4;
  double initial_epsilon = 0.5;
  int lrs_window = 100;  // trailing TD-loss window driving the scheduler

  // Budget.
  long max_epochs = 5000;
  long max_frames = 100000;
  int rollout_depth = 150;  // episode truncation while collecting

  // Searchable.
  double initial_lr = 0.02;
  long buffer_size = 10000;
  int epochs_per_rollout = 4;
  double lrs_factor = 0.9;
  int lrs_patience = 2000;
  long epsilon_steps = 5000;
  double final_epsilon = 0.01;

  void validate() const {
    if (batch_size < 1 || rollout_steps < 1 || target_update_period < 1 || lrs_window < 1) {
      throw std::invalid_argument("training: counts must be >= 1");
    }
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("training: gamma must lie in (0, 1)");
    if (max_epochs < 1 || max_frames < 1 || rollout_depth < 1) throw std::invalid_argument("training: bad budget");
    if (!(initial_lr > 0.0) || !(min_lr > 0.0)) throw std::invalid_argument("training: learning rates must be > 0");
    if (buffer_size < 1 || epochs_per_rollout < 1 || lrs_patience < 1 || epsilon_steps < 1) {
      throw std::invalid_argument("training: searchable integers must be >= 1");
    }
    if (!(lrs_factor > 0.0 && lrs_factor <= 1.0)) throw std::invalid_argument("training: lrs_factor in (0, 1]");
    if (!(final_epsilon >= 0.0 && final_epsilon <= 1.0) || !(initial_epsilon >= 0.0 && initial_epsilon <= 1.0)) {
      throw std::invalid_argument("training: epsilon must lie in [0, 1]");
    }
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"rollout_steps", c.rollout_steps},
          {"gamma", c.gamma},
          {"target_update_period", c.target_update_period},
          {"min_lr", c.min_lr},
          {"initial_epsilon", c.initial_epsilon},
          {"lrs_window", c.lrs_window},
          {"max_epochs", c.max_epochs},
          {"max_frames", c.max_frames},
          {"rollout_depth", c.rollout_depth},
          {"initial_lr", c.initial_lr},
          {"buffer_size", c.buffer_size},
          {"epochs_per_rollout", c.epochs_per_rollout},
          {"lrs_factor", c.lrs_factor},
          {"lrs_patience", c.lrs_patience},
          {"epsilon_steps", c.epsilon_steps},
          {"final_epsilon", c.final_epsilon}};
}

/// Overlay the keys present in `j` onto `base`. Unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    if (k == "batch_size") base.batch_size = v.get<int>();
    else if (k == "rollout_steps") base.rollout_steps = v.get<int>();
    else if (k == "gamma") base.gamma = v.get<double>();
    else if (k == "target_update_period") base.target_update_period = v.get<int>();
    else if (k == "min_lr") base.min_lr = v.get<double>();
    else if (k == "initial_epsilon") base.initial_epsilon = v.get<double>();
    else if (k == "lrs_window") base.lrs_window = v.get<int>();
    else if (k == "max_epochs") base.max_epochs = v.get<long>();
    else if (k == "max_frames") base.max_frames = v.get<long>();
    else if (k == "rollout_depth") base.rollout_depth = v.get<int>();
    else if (k == "initial_lr") base.initial_lr = v.get<double>();
    else if (k == "buffer_size") base.buffer_size = v.get<long>();
    else if (k == "epochs_per_rollout") base.epochs_per_rollout = v.get<int>();
    else if (k == "lrs_factor") base.lrs_factor = v.get<double>();
    else if (k == "lrs_patience") base.lrs_patience = v.get<int>();
    else if (k == "epsilon_steps") base.epsilon_steps = v.get<long>();
    else if (k == "final_epsilon") base.final_epsilon = v.get<double>();
    else throw std::invalid_argument("unknown training key: " + k);
  }
  base.validate();
  return base;
}

/// Linear anneal from the initial to the final rate over epsilon_steps
/// environment steps, constant afterwards.
inline double epsilon(long at_step, const TrainConfig& c) {
  if (at_step < 0) throw std::invalid_argument("epsilon: negative step");
  if (at_step >= c.epsilon_steps) return c.final_epsilon;
  const double frac = static_cast<double>(at_step) / static_cast<double>(c.epsilon_steps);
  return c.initial_epsilon + frac * (c.final_epsilon - c.initial_epsilon);
}

// Losses ----------------------------------------------------------------------

/// Bootstrapped targets r + gamma * max_a' Q~(b', a'), or r when terminal.
inline Eigen::VectorXd td_targets(const DuelingNet& target_net, const TransitionBatch& batch, double gamma) {
  const Matrix q_next = target_net.evaluate(batch.next_states).q;
  Eigen::VectorXd y = batch.rewards;
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    if (!batch.terminal[static_cast<std::size_t>(i)]) y(i) += gamma * q_next.row(i).maxCoeff();
  }
  return y;
}

/// Recorded TD mean squared error.
inline Var td_loss(Tape& tape, const NetVars& vars, const DuelingNet& target_net, const TransitionBatch& batch,
                   double gamma) {
  if (batch.size() == 0) throw std::invalid_argument("td_loss: empty batch");
  const auto out = forward(vars, tape.leaf(batch.states));
  Matrix pick = Matrix::Zero(batch.size(), out.q.cols());
  for (Eigen::Index i = 0; i < batch.size(); ++i) pick(i, batch.actions[static_cast<std::size_t>(i)]) = 1.0;
  const Var q_sa = sum_cols(out.q * constant(tape, std::move(pick)));
  const Var y = constant(tape, td_targets(target_net, batch, gamma));
  return mean(square(q_sa - y));
}

inline double td_loss(const DuelingNet& net, const DuelingNet& target_net, const TransitionBatch& batch,
                      double gamma) {
  Tape tape;
  const auto vars = bind(tape, net);
  return td_loss(tape, vars, target_net, batch, gamma).scalar();
}

// Training loop -----------------------------------------------------------------

struct TrainLogRow {
  long step = 0;  // gradient updates so far
  long frames = 0;
  double td_loss = 0.0;
  double convex_loss = 0.0;
  double total_loss = 0.0;
  double lr = 0.0;
  double epsilon = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  void write_csv(std::ostream& out) const {
    out << "step,td_loss,convex_loss,total_loss,lr,epsilon\n";
    char buf[256];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.td_loss, r.convex_loss,
                    r.total_loss, r.lr, r.epsilon);
      out << buf;
    }
  }

  void write_csv(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write training log: " + path.string());
    write_csv(out);
  }
};

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  DuelingNet net;
  TrainLog log;
  long updates = 0;
  long frames = 0;
};

/// Called after every gradient update (and projection) with the online net.
using UpdateObserver = std::function<void(const DuelingNet& online, const DuelingNet& target, long update)>;

/// Generic DQN loop over any environment exposing reset/step/encode/terminal.
template <class Env>
TrainResult train(const Env& env, const NetShape& shape, const TrainConfig& config,
                  const ConvexitySettings& convexity, const BeliefDomain& domain, std::uint64_t seed,
                  const UpdateObserver& observer = {}) {
  config.validate();
  convexity.validate();
  const bool hess = convexity.method == ConvexityMethod::hess_1d || convexity.method == ConvexityMethod::hess_nd;
  if (hess && !shape.activation.smooth()) {
    throw UnsupportedActivationError("Hessian convexity methods require the ELU activation");
  }
  if (shape.input != env.input_width() || shape.actions != env.num_actions()) {
    throw ShapeError("network shape does not match the environment");
  }

  Rng init_rng(derive_seed(seed, 1));
  Rng env_rng(derive_seed(seed, 2));
  Rng explore_rng(derive_seed(seed, 3));
  Rng replay_rng(derive_seed(seed, 4));
  Rng convex_rng(derive_seed(seed, 5));

  TrainResult result{DuelingNet::initialized(shape, init_rng), {}, 0, 0};
  DuelingNet& net = result.net;
  const bool hard = convexity.method == ConvexityMethod::hard;
  if (hard) project_nonnegative(net);
  DuelingNet target = net;

  ReplayBuffer replay(static_cast<std::size_t>(config.buffer_size), env.input_width());
  AmsGrad optimizer(net);
  PlateauScheduler scheduler(config.initial_lr, config.lrs_factor, config.lrs_patience, config.min_lr);
  std::deque<double> window;
  double window_sum = 0.0;

  auto state = env.reset(env_rng);
  int episode_steps = 0;
  long frames = 0;
  long updates = 0;
  double lr = config.initial_lr;

  const ContextSampler context = [&replay](Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, replay.size() - 1);
    return replay.state(pick(rng));
  };

  long epoch = 0;
  try {
    for (; epoch < config.max_epochs && frames < config.max_frames; ++epoch) {
      double eps = 0.0;
      for (int s = 0; s < config.rollout_steps && frames < config.max_frames; ++s) {
        eps = epsilon(frames, config);
        const Eigen::VectorXd x = env.encode(state);
        int action = 0;
        if (bernoulli(explore_rng, eps)) action = uniform_int(explore_rng, 0, env.num_actions() - 1);
        else action = argmax_action(net.evaluate(x.transpose()).q.row(0).transpose());
        auto st = env.step(state, action, env_rng);
        const bool term = Env::terminal(st);
        replay.push(x, action, st.reward, env.encode(st.next), term);
        ++frames;
        ++episode_steps;
        if (term || episode_steps >= config.rollout_depth) {
          state = env.reset(env_rng);
          episode_steps = 0;
        } else {
          state = std::move(st.next);
        }
      }

      TrainLogRow row;
      row.epsilon = eps;
      for (int u = 0; u < config.epochs_per_rollout; ++u) {
        const auto batch = replay.sample(static_cast<std::size_t>(config.batch_size), replay_rng);
        double td_value = 0.0;
        double convex_value = 0.0;
        double total_value = 0.0;
        std::vector<Matrix> grads;
        {
          Tape tape;
          const auto vars = bind(tape, net);
          const Var td = td_loss(tape, vars, target, batch, config.gamma);
          Var total = td;
          if (convexity.soft()) {
            const int n_psd = convexity.method == ConvexityMethod::hess_nd ? convexity.n_psd : 0;
            const auto samples = sample_beliefs(domain, convexity.n_c, convex_rng, n_psd,
                                                domain.partial() ? context : ContextSampler{});
            const Var pen = convexity_penalty(tape, value_function(vars), samples, convexity.method,
                                              domain.belief_cols.front());
            convex_value = pen.scalar();
            total = total_loss(td, pen, convexity.c);
          }
          td_value = td.scalar();
          total_value = total.scalar();
          grads = grad_params(vars, total);
        }
        optimizer.step(net, grads, lr);
        if (hard) project_nonnegative(net);
        ++updates;
        if (updates % config.target_update_period == 0) target = net;

        window.push_back(td_value);
        window_sum += td_value;
        if (static_cast<int>(window.size()) > config.lrs_window) {
          window_sum -= window.front();
          window.pop_front();
        }
        lr = scheduler.step(window_sum / static_cast<double>(window.size()));

        row.td_loss += td_value;
        row.convex_loss += convex_value;
        row.total_loss += total_value;
        if (observer) observer(net, target, updates);
      }
      const double k = static_cast<double>(config.epochs_per_rollout);
      row.td_loss /= k;
      row.convex_loss /= k;
      row.total_loss /= k;
      row.step = updates;
      row.frames = frames;
      row.lr = lr;
      result.log.rows.push_back(row);
    }
  } catch (const NonFiniteError& e) {
    std::ostringstream msg;
    msg << "training diverged at epoch " << epoch << ", update " << updates << ": " << e.what();
    throw TrainingDiverged(msg.str());
  }
  result.updates = updates;
  result.frames = frames;
  return result;
}

}  // namespace cvxrl
