// Experiment harness: random hyperparameter search, multi-seed evaluation of
// the best configuration, cross-evaluation campaigns and result files.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvxrl/convexity.hpp"
#include "cvxrl/env_fvrs.hpp"
#include "cvxrl/env_tiger.hpp"
#include "cvxrl/evaluation.hpp"
#include "cvxrl/networks.hpp"
#include "cvxrl/random.hpp"
#include "cvxrl/statistics.hpp"
#include "cvxrl/training.hpp"

namespace cvxrl {

namespace fs = std::filesystem;

/// "%.17g": shortest form that round-trips every double.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Problems -------------------------------------------------------------------

enum class EnvKind { tiger, fvrs };

/// One concrete environment: the kind plus its observation setting.
struct Problem {
  EnvKind kind = EnvKind::tiger;
  TigerConfig tiger{};
  FvrsConfig fvrs{};

  static Problem make_tiger(double p_obs) {
    Problem p;
    p.kind = EnvKind::tiger;
    p.tiger.p_obs = p_obs;
    p.tiger.validate();
    return p;
  }

  static Problem make_fvrs(int n, int k, const std::string& obs) {
    Problem p;
    p.kind = EnvKind::fvrs;
    p.fvrs.n = n;
    p.fvrs.k = k;
    p.fvrs.obs = ObservationFunction::parse(obs, n);
    p.fvrs.validate();
    return p;
  }

  [[nodiscard]] NetShape shape() const { return kind == EnvKind::tiger ? NetShape::tiger() : NetShape::fvrs(fvrs.k); }
  [[nodiscard]] BeliefDomain domain() const {
    return kind == EnvKind::tiger ? BeliefDomain::tiger() : BeliefDomain::fvrs(fvrs.k);
  }
  [[nodiscard]] std::string env_name() const { return kind == EnvKind::tiger ? "tiger" : "fvrs"; }

  /// Observation setting: "p0.6" for Tiger, an observation-function name for FVRS.
  [[nodiscard]] std::string setting() const {
    if (kind == EnvKind::fvrs) return fvrs.obs.name();
    char buf[32];
    std::snprintf(buf, sizeof buf, "p%g", tiger.p_obs);
    return buf;
  }

  /// Same environment with a different observation setting.
  [[nodiscard]] Problem with_setting(const std::string& s) const {
    Problem p = *this;
    if (kind == EnvKind::fvrs) {
      p.fvrs.obs = ObservationFunction::parse(s, fvrs.n);
    } else {
      const std::string v = !s.empty() && s[0] == 'p' ? s.substr(1) : s;
      std::size_t used = 0;
      p.tiger.p_obs = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument("bad Tiger observation setting: " + s);
      p.tiger.validate();
    }
    return p;
  }
};

/// Tuned defaults plus the per-environment budget caps.
inline TrainConfig default_train_config(const Problem& p) {
  TrainConfig c;
  if (p.kind == EnvKind::tiger) {
    c.max_epochs = 5000;
    c.max_frames = 100000;
    c.rollout_depth = p.tiger.rollout_depth;
    c.initial_lr = 0.02;
    c.buffer_size = 10000;
    c.epochs_per_rollout = 4;
    c.lrs_factor = 0.9;
    c.lrs_patience = 2000;
    c.epsilon_steps = 2000;
    c.final_epsilon = 0.01;
  } else {
    c.max_epochs = 50000;
    c.max_frames = 1000000;
    c.rollout_depth = p.fvrs.depth();
    // Exploration stays high: with a small final rate agents settle on
    // the always-east return of 7.29.
    c.initial_lr = 1e-3;
    c.buffer_size = 100000;
    c.epochs_per_rollout = 8;
    c.lrs_factor = 0.9;
    c.lrs_patience = 20000;
    c.epsilon_steps = 100000;
    c.final_epsilon = 0.2;
  }
  return c;
}

inline TrainResult train_problem(const Problem& p, const TrainConfig& config, const ConvexitySettings& convexity,
                                 std::uint64_t seed, const UpdateObserver& observer = {}) {
  if (p.kind == EnvKind::tiger) {
    return train(TigerEnv(p.tiger), p.shape(), config, convexity, p.domain(), seed, observer);
  }
  return train(FvrsEnv(p.fvrs), p.shape(), config, convexity, p.domain(), seed, observer);
}

inline EvalSummary evaluate_problem(const Problem& p, const DuelingNet& net, long n_mc, std::uint64_t seed,
                                    int jobs = 1) {
  if (p.kind == EnvKind::tiger) return mc_return(TigerEnv(p.tiger), tiger_net_policy(net), n_mc, seed, 0, jobs);
  return mc_return(FvrsEnv(p.fvrs), fvrs_net_policy(net, p.fvrs.n), n_mc, seed, 0, jobs);
}

/// Random-policy states used as non-belief context for FVRS penalty samples
/// when no replay buffer is at hand.
inline ContextSampler random_context(const Problem& p) {
  if (p.kind == EnvKind::tiger) return {};
  return [env = FvrsEnv(p.fvrs)](Rng& rng) {
    auto s = env.reset(rng);
    const int steps = uniform_int(rng, 0, env.rollout_depth() / 4);
    for (int t = 0; t < steps; ++t) {
      auto st = env.step(s, uniform_int(rng, 0, kFvrsActions - 1), rng);
      if (st.done) break;
      s = std::move(st.next);
    }
    return env.encode(s);
  };
}

/// Penalty weight c chosen so the mean TD-MSE and the mean convexity MSE of
/// a short unpenalised pilot are equal. Returns 1 when the pilot shows no
/// convexity violation at all.
inline double calibrate_c(const Problem& p, TrainConfig config, ConvexitySettings settings, std::uint64_t seed,
                          long pilot_epochs = 0) {
  if (!settings.soft()) return settings.c;
  if (pilot_epochs <= 0) pilot_epochs = p.kind == EnvKind::tiger ? 500 : 5000;
  config.max_epochs = pilot_epochs;
  const auto pilot = train_problem(p, config, ConvexitySettings{}, seed);
  double td = 0.0;
  for (const auto& r : pilot.log.rows) td += r.td_loss;
  td /= static_cast<double>(pilot.log.rows.size());

  Rng rng(derive_seed(seed, 0xCA1));
  const BeliefDomain domain = p.domain();
  const ContextSampler ctx = random_context(p);
  const int n_psd = settings.method == ConvexityMethod::hess_nd ? settings.n_psd : 0;
  double convex = 0.0;
  constexpr int kBatches = 50;
  for (int i = 0; i < kBatches; ++i) {
    const auto batch = sample_beliefs(domain, settings.n_c, rng, n_psd, ctx);
    Tape tape;
    const auto vars = bind(tape, pilot.net);
    convex += convexity_penalty(tape, value_function(vars), batch, settings.method, domain.belief_cols.front()).scalar();
  }
  convex /= kBatches;
  if (!(convex > 1e-12)) return 1.0;
  return td / convex;
}

// Search space ------------------------------------------------------------------

struct ParamSpec {
  enum class Dist { log_uniform, int_uniform, uniform };
  std::string name;
  Dist dist;
  double lo;
  double hi;

  [[nodiscard]] double sample(Rng& rng) const {
    switch (dist) {
      case Dist::log_uniform: return std::exp(std::log(lo) + uniform01(rng) * (std::log(hi) - std::log(lo)));
      case Dist::int_uniform:
        return static_cast<double>(std::uniform_int_distribution<long>(static_cast<long>(lo), static_cast<long>(hi))(rng));
      case Dist::uniform: return lo + uniform01(rng) * (hi - lo);
    }
    return lo;
  }
};

struct SearchSpace {
  std::vector<ParamSpec> params;

  static SearchSpace for_env(EnvKind kind) {
    using D = ParamSpec::Dist;
    const bool t = kind == EnvKind::tiger;
    return {{
        {"initial_lr", D::log_uniform, t ? std::exp(-4.0) : std::exp(-7.0), t ? std::exp(-1.0) : std::exp(-3.0)},
        {"buffer_size", D::int_uniform, 1, t ? 1e5 : 1e6},
        {"epochs_per_rollout", D::int_uniform, 1, 25},
        {"lrs_factor", D::uniform, 0.8, 1.0},
        {"lrs_patience", D::int_uniform, 1, t ? 1e4 : 5e4},
        {"epsilon_steps", D::int_uniform, 1, t ? 1e4 : 1e5},
        {"final_epsilon", D::uniform, 0.001, 0.5},
    }};
  }

  /// Searchable keys only, ready to overlay onto a base config.
  [[nodiscard]] nlohmann::json sample(Rng& rng) const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& p : params) {
      const double v = p.sample(rng);
      if (p.dist == ParamSpec::Dist::int_uniform) j[p.name] = static_cast<long>(v);
      else j[p.name] = v;
    }
    return j;
  }
};

// Campaign manifest ---------------------------------------------------------------

struct Campaign {
  Problem problem = Problem::make_tiger(1.0);
  std::vector<ConvexityMethod> methods{ConvexityMethod::none};
  int runs_per_method = 1;
  bool search = true;  // false: every run uses the base config
  std::uint64_t seed = 0;
  long n_mc = 1000;
  std::vector<std::string> eval_shifts;  // besides the training setting
  ConvexitySettings convexity{};
  bool calibrate = false;
  nlohmann::json train_overrides = nlohmann::json::object();
  int best_seeds = 10;
  int jobs = 1;
  std::string out = "campaign";

  [[nodiscard]] TrainConfig base_config() const {
    return train_config_from_json(train_overrides, default_train_config(problem));
  }

  /// Training setting first, then the shifts in manifest order.
  [[nodiscard]] std::vector<std::string> eval_settings() const {
    std::vector<std::string> out{problem.setting()};
    for (const auto& s : eval_shifts) {
      const std::string name = problem.with_setting(s).setting();
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    }
    return out;
  }

  void validate() const {
    if (methods.empty()) throw std::invalid_argument("campaign: no methods");
    if (runs_per_method < 1) throw std::invalid_argument("campaign: runs_per_method must be >= 1");
    if (n_mc < 1) throw std::invalid_argument("campaign: n_mc must be >= 1");
    if (best_seeds < 1) throw std::invalid_argument("campaign: best_seeds must be >= 1");
    if (jobs < 1) throw std::invalid_argument("campaign: jobs must be >= 1");
    convexity.validate();
    for (const auto& s : eval_shifts) (void)problem.with_setting(s);
    (void)base_config();
    for (auto m : methods) {
      if ((m == ConvexityMethod::hess_1d || m == ConvexityMethod::hess_nd) && !problem.shape().activation.smooth()) {
        throw std::invalid_argument("campaign: Hessian methods need the ELU network (Tiger)");
      }
    }
  }

  static Campaign from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {"env",  "p_obs",       "n",          "k",         "obs",
                                                   "methods", "runs_per_method", "search", "seed",  "n_mc",
                                                   "eval_shifts", "convexity", "train", "best_seeds", "jobs", "out"};
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
        throw std::invalid_argument("campaign: unknown key " + it.key());
      }
    }
    Campaign c;
    const std::string env = j.value("env", std::string("tiger"));
    if (env == "tiger") c.problem = Problem::make_tiger(j.value("p_obs", 1.0));
    else if (env == "fvrs") c.problem = Problem::make_fvrs(j.value("n", 4), j.value("k", 4), j.value("obs", std::string("def")));
    else throw std::invalid_argument("campaign: unknown env " + env);
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
    }
    c.runs_per_method = j.value("runs_per_method", 1);
    c.search = j.value("search", true);
    c.seed = j.value("seed", std::uint64_t{0});
    c.n_mc = j.value("n_mc", 1000L);
    if (j.contains("eval_shifts")) {
      for (const auto& s : j.at("eval_shifts")) {
        c.eval_shifts.push_back(s.is_string() ? s.get<std::string>() : format_double(s.get<double>()));
      }
    }
    if (j.contains("convexity")) {
      const auto& cv = j.at("convexity");
      for (auto it = cv.begin(); it != cv.end(); ++it) {
        if (it.key() == "c") c.convexity.c = it->get<double>();
        else if (it.key() == "n_c") c.convexity.n_c = it->get<int>();
        else if (it.key() == "n_psd") c.convexity.n_psd = it->get<int>();
        else if (it.key() == "calibrate") c.calibrate = it->get<bool>();
        else throw std::invalid_argument("campaign: unknown convexity key " + it.key());
      }
    }
    if (j.contains("train")) c.train_overrides = j.at("train");
    c.best_seeds = j.value("best_seeds", 10);
    c.jobs = j.value("jobs", 1);
    c.out = j.value("out", std::string("campaign"));
    c.validate();
    return c;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j;
    j["env"] = problem.env_name();
    if (problem.kind == EnvKind::tiger) {
      j["p_obs"] = problem.tiger.p_obs;
    } else {
      j["n"] = problem.fvrs.n;
      j["k"] = problem.fvrs.k;
      j["obs"] = problem.fvrs.obs.name();
    }
    nlohmann::json ms = nlohmann::json::array();
    for (auto m : methods) ms.push_back(to_string(m));
    j["methods"] = ms;
    j["runs_per_method"] = runs_per_method;
    j["search"] = search;
    j["seed"] = seed;
    j["n_mc"] = n_mc;
    j["eval_shifts"] = eval_shifts;
    j["convexity"] = {{"c", convexity.c}, {"n_c", convexity.n_c}, {"n_psd", convexity.n_psd}, {"calibrate", calibrate}};
    j["train"] = train_overrides;
    j["best_seeds"] = best_seeds;
    j["jobs"] = jobs;
    j["out"] = out;
    return j;
  }
};

inline Campaign load_campaign(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("malformed manifest " + path.string() + ": " + e.what());
  }
  return Campaign::from_json(j);
}

// Result rows -------------------------------------------------------------------

struct ResultRow {
  long run_id = 0;
  std::string method;
  std::string train_env;
  std::string eval_env;
  std::uint64_t seed = 0;
  long n_mc = 0;
  EvalSummary summary{};
  int optimal = -1;  // Tiger only: 1/0, otherwise -1
  double agreement = std::nan("");
  std::string status = "ok";
  double c = 0.0;
  TrainConfig config{};
};

inline const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols = {
      "run_id", "method", "train_env", "eval_env", "seed", "n_mc", "mean", "std", "se", "median", "q1", "q3",
      "wlow", "whigh", "max", "optimal", "agreement", "status", "c", "initial_lr", "buffer_size",
      "epochs_per_rollout", "lrs_factor", "lrs_patience", "epsilon_steps", "final_epsilon", "max_epochs",
      "max_frames"};
  return cols;
}

inline std::string csv_safe(std::string s) {
  for (char& ch : s) {
    if (ch == ',' || ch == '\n' || ch == '\r' || ch == '"') ch = ';';
  }
  return s;
}

inline void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  const auto& cols = result_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : rows) {
    const auto& s = r.summary;
    const auto& c = r.config;
    out << r.run_id << ',' << r.method << ',' << r.train_env << ',' << r.eval_env << ',' << r.seed << ',' << r.n_mc
        << ',' << format_double(s.mean) << ',' << format_double(s.std) << ',' << format_double(s.se) << ','
        << format_double(s.median) << ',' << format_double(s.q1) << ',' << format_double(s.q3) << ','
        << format_double(s.whisker_low) << ',' << format_double(s.whisker_high) << ',' << format_double(s.max) << ','
        << r.optimal << ',' << format_double(r.agreement) << ',' << csv_safe(r.status) << ',' << format_double(r.c)
        << ',' << format_double(c.initial_lr) << ',' << c.buffer_size << ',' << c.epochs_per_rollout << ','
        << format_double(c.lrs_factor) << ',' << c.lrs_patience << ',' << c.epsilon_steps << ','
        << format_double(c.final_epsilon) << ',' << c.max_epochs << ',' << c.max_frames << '\n';
  }
}

inline void write_results_csv(const fs::path& path, const std::vector<ResultRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write results: " + path.string());
  write_results_csv(out, rows);
}

inline std::vector<ResultRow> read_results_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read results: " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) header.push_back(f);
  }
  if (header != result_columns()) throw std::invalid_argument("results CSV has an unexpected header: " + path.string());
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string x;
    while (std::getline(ss, x, ',')) f.push_back(x);
    if (f.size() != header.size()) throw std::invalid_argument("results CSV row has the wrong field count");
    ResultRow r;
    std::size_t i = 0;
    r.run_id = std::stol(f[i++]);
    r.method = f[i++];
    r.train_env = f[i++];
    r.eval_env = f[i++];
    r.seed = std::stoull(f[i++]);
    r.n_mc = std::stol(f[i++]);
    auto& s = r.summary;
    s.n_samples = static_cast<std::size_t>(r.n_mc);
    for (double* d : {&s.mean, &s.std, &s.se, &s.median, &s.q1, &s.q3, &s.whisker_low, &s.whisker_high, &s.max}) {
      *d = std::stod(f[i++]);
    }
    r.optimal = std::stoi(f[i++]);
    r.agreement = std::stod(f[i++]);
    r.status = f[i++];
    r.c = std::stod(f[i++]);
    r.config.initial_lr = std::stod(f[i++]);
    r.config.buffer_size = std::stol(f[i++]);
    r.config.epochs_per_rollout = std::stoi(f[i++]);
    r.config.lrs_factor = std::stod(f[i++]);
    r.config.lrs_patience = std::stoi(f[i++]);
    r.config.epsilon_steps = std::stol(f[i++]);
    r.config.final_epsilon = std::stod(f[i++]);
    r.config.max_epochs = std::stol(f[i++]);
    r.config.max_frames = std::stol(f[i++]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Runs --------------------------------------------------------------------------

struct RunSpec {
  long run_id = 0;
  ConvexityMethod method = ConvexityMethod::none;
  std::uint64_t seed = 0;
  TrainConfig config{};
  ConvexitySettings convexity{};
};

/// Train one run, store its artifacts under `dir`, evaluate on every
/// setting. Failures become rows with status "failed: ..." and NaN stats.
inline std::vector<ResultRow> execute_run(const Campaign& campaign, const RunSpec& spec, const fs::path& dir,
                                          int eval_jobs = 1) {
  const auto settings = campaign.eval_settings();
  std::vector<ResultRow> rows;
  auto base_row = [&](const std::string& eval_env) {
    ResultRow r;
    r.run_id = spec.run_id;
    r.method = to_string(spec.method);
    r.train_env = campaign.problem.setting();
    r.eval_env = eval_env;
    r.seed = spec.seed;
    r.n_mc = campaign.n_mc;
    r.c = spec.convexity.c;
    r.config = spec.config;
    return r;
  };
  try {
    auto result = train_problem(campaign.problem, spec.config, spec.convexity, spec.seed);
    fs::create_directories(dir);
    save_checkpoint(result.net, dir / "net.json");
    result.log.write_csv(dir / "train_log.csv");
    std::optional<TigerOptimality> opt;
    if (campaign.problem.kind == EnvKind::tiger) {
      opt = is_optimal_tiger(result.net, oracle_policy(campaign.problem.tiger));
    }
    const std::uint64_t eval_seed = derive_seed(spec.seed, 0xE7A1);
    for (const auto& s : settings) {
      ResultRow r = base_row(s);
      r.summary = evaluate_problem(campaign.problem.with_setting(s), result.net, campaign.n_mc, eval_seed, eval_jobs);
      if (opt) {
        r.optimal = opt->optimal ? 1 : 0;
        r.agreement = opt->agreement;
      }
      rows.push_back(std::move(r));
    }
  } catch (const std::exception& e) {
    rows.clear();
    for (const auto& s : settings) {
      ResultRow r = base_row(s);
      const double nan = std::nan("");
      r.summary = EvalSummary{0, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan};
      r.status = std::string("failed: ") + e.what();
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

/// Worker pool over independent runs. Output is sorted by run id, then by
/// evaluation order, so it does not depend on scheduling.
inline std::vector<ResultRow> execute_runs(const Campaign& campaign, const std::vector<RunSpec>& specs,
                                           const fs::path& runs_dir, int jobs) {
  std::vector<std::vector<ResultRow>> per_run(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      per_run[i] = execute_run(campaign, specs[i], runs_dir / std::to_string(specs[i].run_id));
    }
  };
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(specs.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<std::size_t> order(specs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return specs[a].run_id < specs[b].run_id; });
  std::vector<ResultRow> rows;
  for (auto i : order) rows.insert(rows.end(), per_run[i].begin(), per_run[i].end());
  return rows;
}

/// Penalty weight per method: the manifest value, or the pilot calibration.
inline ConvexitySettings resolve_convexity(const Campaign& campaign, ConvexityMethod method) {
  ConvexitySettings s = campaign.convexity;
  s.method = method;
  if (campaign.calibrate && s.soft()) {
    s.c = calibrate_c(campaign.problem, campaign.base_config(), s, derive_seed(campaign.seed, 0xC0FFEE));
  }
  return s;
}

inline void write_metadata(const Campaign& campaign, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json meta;
  meta["manifest"] = campaign.to_json();
  meta["sampler"] = "seeded independent random search over the searchable parameters";
  meta["result_columns"] = result_columns();
  std::ofstream(dir / "metadata.json") << meta.dump(2) << '\n';
}

/// Search runs: run ids 0 .. methods * runs_per_method - 1.
inline std::vector<ResultRow> run_search(const Campaign& campaign) {
  campaign.validate();
  const fs::path dir(campaign.out);
  write_metadata(campaign, dir);
  const SearchSpace space = SearchSpace::for_env(campaign.problem.kind);
  const TrainConfig base = campaign.base_config();
  std::vector<RunSpec> specs;
  long id = 0;
  for (auto m : campaign.methods) {
    const ConvexitySettings conv = resolve_convexity(campaign, m);
    for (int i = 0; i < campaign.runs_per_method; ++i, ++id) {
      RunSpec s;
      s.run_id = id;
      s.method = m;
      // Run i of every method shares a seed (and a sampled config).
      s.seed = derive_seed(campaign.seed, static_cast<std::uint64_t>(i));
      s.convexity = conv;
      Rng sampler(derive_seed(s.seed, 0x5EA4C4));
      s.config = campaign.search ? train_config_from_json(space.sample(sampler), base) : base;
      specs.push_back(s);
    }
  }
  auto rows = execute_runs(campaign, specs, dir / "runs", campaign.jobs);
  write_results_csv(dir / "results.csv", rows);
  return rows;
}

/// Best run of one method by mean return on the training setting; ties go
/// to the lower run id. Failed runs never win.
inline const ResultRow& best_config(const std::vector<ResultRow>& rows, const std::string& method = "") {
  const ResultRow* best = nullptr;
  for (const auto& r : rows) {
    if (r.eval_env != r.train_env || r.status != "ok") continue;
    if (!method.empty() && r.method != method) continue;
    if (!best || r.summary.mean > best->summary.mean ||
        (r.summary.mean == best->summary.mean && r.run_id < best->run_id)) {
      best = &r;
    }
  }
  if (!best) throw std::invalid_argument("best_config: no successful runs");
  return *best;
}

/// Offset separating best-config evaluation runs from search runs.
inline constexpr long kBestRunOffset = 1000000;

/// Retrain the best config of every method under fresh seeds.
inline std::vector<ResultRow> evaluate_best(const Campaign& campaign, const std::vector<ResultRow>& search_rows) {
  campaign.validate();
  const fs::path dir(campaign.out);
  std::vector<RunSpec> specs;
  long m_index = 0;
  for (auto m : campaign.methods) {
    const ResultRow& best = best_config(search_rows, to_string(m));
    TrainConfig cfg = campaign.base_config();
    cfg.initial_lr = best.config.initial_lr;
    cfg.buffer_size = best.config.buffer_size;
    cfg.epochs_per_rollout = best.config.epochs_per_rollout;
    cfg.lrs_factor = best.config.lrs_factor;
    cfg.lrs_patience = best.config.lrs_patience;
    cfg.epsilon_steps = best.config.epsilon_steps;
    cfg.final_epsilon = best.config.final_epsilon;
    ConvexitySettings conv = campaign.convexity;
    conv.method = m;
    conv.c = best.c;
    for (int i = 0; i < campaign.best_seeds; ++i) {
      RunSpec s;
      s.run_id = kBestRunOffset + m_index * campaign.best_seeds + i;
      s.method = m;
      s.seed = derive_seed(campaign.seed, static_cast<std::uint64_t>(kBestRunOffset + i));
      s.config = cfg;
      s.convexity = conv;
      specs.push_back(s);
    }
    ++m_index;
  }
  auto rows = execute_runs(campaign, specs, dir / "best", campaign.jobs);
  write_results_csv(dir / "best_results.csv", rows);
  return rows;
}

// Aggregation -----------------------------------------------------------------------

struct GroupSummary {
  std::string method;
  std::string eval_env;
  EvalSummary summary;
};

/// Boxplot statistics of per-run mean returns, grouped by (method, eval env)
/// in first-appearance order. `optimal_only` keeps Tiger runs flagged optimal.
inline std::vector<GroupSummary> robustness_report(const std::vector<ResultRow>& rows, bool optimal_only = false) {
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  for (const auto& r : rows) {
    if (r.status != "ok") continue;
    if (optimal_only && r.optimal != 1) continue;
    const auto key = std::make_pair(r.method, r.eval_env);
    if (!groups.count(key)) keys.push_back(key);
    groups[key].push_back(r.summary.mean);
  }
  std::vector<GroupSummary> out;
  for (const auto& k : keys) out.push_back({k.first, k.second, summarize_distribution(groups[k])});
  return out;
}

inline void write_report_csv(std::ostream& out, const std::vector<GroupSummary>& groups) {
  out << "method,eval_env,n,mean,std,se,median,q1,q3,wlow,whigh,min,max\n";
  for (const auto& g : groups) {
    const auto& s = g.summary;
    out << g.method << ',' << g.eval_env << ',' << s.n_samples << ',' << format_double(s.mean) << ','
        << format_double(s.std) << ',' << format_double(s.se) << ',' << format_double(s.median) << ','
        << format_double(s.q1) << ',' << format_double(s.q3) << ',' << format_double(s.whisker_low) << ','
        << format_double(s.whisker_high) << ',' << format_double(s.min) << ',' << format_double(s.max) << '\n';
  }
}

inline void write_report_csv(const fs::path& path, const std::vector<GroupSummary>& groups) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path.string());
  write_report_csv(out, groups);
}

}  // namespace cvxrl
