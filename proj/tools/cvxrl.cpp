// cvxrl: train, evaluate, search and audit convex-value DQN agents.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cvxrl/convexity.hpp"
#include "cvxrl/env_fvrs.hpp"
#include "cvxrl/env_tiger.hpp"
#include "cvxrl/evaluation.hpp"
#include "cvxrl/harness.hpp"
#include "cvxrl/networks.hpp"
#include "cvxrl/training.hpp"

namespace fs = std::filesystem;
using namespace cvxrl;

namespace {

/// Flags shared by the single-run commands.
struct Common {
  std::string env = "tiger";
  std::string method = "none";
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out;
  std::string manifest;
  double p_obs = 1.0;
  std::string obs_fn = "def";
  int n = 4;
  int k = 4;
  long n_mc = 1000;
  int grid = 101;
  std::string checkpoint;
  std::vector<std::string> shifts;
  double gamma = 0.9;
  double c = -1.0;
};

/// --out, else $CVXRL_OUT/<name>, else ./<name>.
fs::path output_path(const Common& o, const std::string& fallback) {
  if (!o.out.empty()) return o.out;
  if (const char* root = std::getenv("CVXRL_OUT")) return fs::path(root) / fallback;
  return fallback;
}

Problem problem_of(const Common& o) {
  if (o.env == "tiger") return Problem::make_tiger(o.p_obs);
  if (o.env == "fvrs") return Problem::make_fvrs(o.n, o.k, o.obs_fn);
  throw std::invalid_argument("unknown --env " + o.env + " (expected tiger or fvrs)");
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("malformed JSON in " + p.string() + ": " + e.what());
  }
}

/// Manifest file for single runs: an object of training keys, optionally
/// with a nested "train" object and a "convexity" object.
void apply_run_manifest(const Common& o, TrainConfig& cfg, ConvexitySettings& conv) {
  if (o.manifest.empty()) return;
  const auto j = read_json(o.manifest);
  const auto& train = j.contains("train") ? j.at("train") : j;
  nlohmann::json keys = nlohmann::json::object();
  for (auto it = train.begin(); it != train.end(); ++it) {
    if (it.key() != "convexity" && it.key() != "train") keys[it.key()] = it.value();
  }
  cfg = train_config_from_json(keys, cfg);
  if (j.contains("convexity")) {
    const auto& cv = j.at("convexity");
    conv.c = cv.value("c", conv.c);
    conv.n_c = cv.value("n_c", conv.n_c);
    conv.n_psd = cv.value("n_psd", conv.n_psd);
  }
}

DuelingNet load_for(const Common& o, const Problem& p) {
  if (o.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  fs::path path = o.checkpoint;
  if (fs::is_directory(path)) path /= "net.json";
  if (!fs::exists(path)) throw std::runtime_error("missing checkpoint: " + path.string());
  DuelingNet net = load_checkpoint(path);
  if (net.shape().input != p.shape().input || net.shape().actions != p.shape().actions) {
    throw std::invalid_argument("checkpoint does not match the selected environment");
  }
  return net;
}

/// Training record written next to the checkpoint by `train`, if any.
nlohmann::json run_info(const Common& o) {
  fs::path dir = o.checkpoint;
  if (!fs::is_directory(dir)) dir = dir.parent_path();
  if (fs::exists(dir / "run.json")) return read_json(dir / "run.json");
  return nlohmann::json::object();
}

ResultRow eval_row(const Common& o, const Problem& train_p, const Problem& eval_p, const EvalSummary& s) {
  const auto info = run_info(o);
  ResultRow r;
  r.method = info.value("method", o.method);
  r.c = info.value("c", 0.0);
  if (info.contains("train")) r.config = train_config_from_json(info.at("train"));
  r.train_env = train_p.setting();
  r.eval_env = eval_p.setting();
  r.seed = o.seed;
  r.n_mc = o.n_mc;
  r.summary = s;
  return r;
}

int cmd_train(const Common& o) {
  const Problem p = problem_of(o);
  TrainConfig cfg = default_train_config(p);
  ConvexitySettings conv;
  apply_run_manifest(o, cfg, conv);
  conv.method = parse_method(o.method);
  if (o.c >= 0.0) conv.c = o.c;
  conv.validate();
  const fs::path dir = output_path(o, "run" + std::to_string(o.seed));
  const auto result = train_problem(p, cfg, conv, o.seed);
  fs::create_directories(dir);
  save_checkpoint(result.net, dir / "net.json");
  result.log.write_csv(dir / "train_log.csv");
  nlohmann::json run = {{"env", p.env_name()},   {"setting", p.setting()}, {"method", to_string(conv.method)},
                        {"seed", o.seed},        {"c", conv.c},            {"n_c", conv.n_c},
                        {"n_psd", conv.n_psd},   {"train", to_json(cfg)},  {"updates", result.updates},
                        {"frames", result.frames}};
  std::ofstream(dir / "run.json") << run.dump(2) << '\n';
  std::cout << "trained " << to_string(conv.method) << " on " << p.env_name() << " " << p.setting() << ": "
            << result.updates << " updates, " << result.frames << " frames -> " << dir.string() << '\n';
  if (p.kind == EnvKind::tiger) {
    const auto opt = is_optimal_tiger(result.net, oracle_policy(p.tiger));
    std::cout << "policy agreement " << opt.agreement << " (reachable " << opt.reachable_agreement << ")\n";
  }
  return 0;
}

int cmd_eval(const Common& o, bool cross) {
  const Problem p = problem_of(o);
  const DuelingNet net = load_for(o, p);
  std::vector<Problem> targets{p};
  if (cross) {
    if (o.shifts.empty()) throw std::invalid_argument("cross-eval needs --shifts");
    targets.clear();
    for (const auto& s : o.shifts) targets.push_back(p.with_setting(s));
  }
  std::optional<TigerOptimality> opt;
  if (p.kind == EnvKind::tiger) opt = is_optimal_tiger(net, oracle_policy(p.tiger));
  std::vector<ResultRow> rows;
  for (const auto& t : targets) {
    const auto s = evaluate_problem(t, net, o.n_mc, o.seed, o.jobs);
    rows.push_back(eval_row(o, p, t, s));
    if (opt) {
      rows.back().optimal = opt->optimal ? 1 : 0;
      rows.back().agreement = opt->agreement;
    }
    std::cout << t.setting() << ": mean " << format_double(s.mean) << " se " << format_double(s.se) << '\n';
  }
  const fs::path out = output_path(o, cross ? "cross_eval.csv" : "eval.csv");
  write_results_csv(out, rows);
  return 0;
}

Campaign campaign_of(const Common& o, const CLI::App& sub) {
  if (o.manifest.empty()) throw std::invalid_argument("--manifest is required");
  Campaign c = load_campaign(o.manifest);
  if (sub.count("--seed")) c.seed = o.seed;
  if (sub.count("--jobs")) c.jobs = o.jobs;
  if (sub.count("--n-mc")) c.n_mc = o.n_mc;
  if (sub.count("--out")) c.out = o.out;
  else if (const char* root = std::getenv("CVXRL_OUT"); root && fs::path(c.out).is_relative()) {
    c.out = (fs::path(root) / c.out).string();
  }
  c.validate();
  return c;
}

int cmd_search(const Common& o, const CLI::App& sub) {
  const Campaign c = campaign_of(o, sub);
  const auto rows = run_search(c);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.status != "ok";
  std::cout << "search: " << rows.size() << " rows (" << failed << " failed) -> " << c.out << "/results.csv\n";
  return 0;
}

int cmd_best_eval(const Common& o, const CLI::App& sub) {
  const Campaign c = campaign_of(o, sub);
  const fs::path results = fs::path(c.out) / "results.csv";
  if (!fs::exists(results)) throw std::runtime_error("run search first: missing " + results.string());
  const auto rows = evaluate_best(c, read_results_csv(results));
  write_report_csv(fs::path(c.out) / "best_summary.csv", robustness_report(rows));
  std::cout << "best-eval: " << rows.size() << " rows -> " << c.out << "/best_results.csv\n";
  return 0;
}

int cmd_audit(const Common& o) {
  const Problem p = problem_of(o);
  const DuelingNet net = load_for(o, p);
  const BeliefDomain domain = p.domain();
  Eigen::VectorXd reference = Eigen::VectorXd::Constant(domain.input_width, 0.5);
  if (p.kind == EnvKind::fvrs) {
    Rng rng(o.seed);
    reference = FvrsEnv(p.fvrs).encode(FvrsEnv(p.fvrs).reset(rng));
  }
  const auto report = audit_convexity(plain_value_function(net), domain, o.grid, reference, 0, p.env_name());
  const fs::path out = output_path(o, "audit.json");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream(out) << to_json(report).dump(2) << '\n';
  std::cout << "max violation " << format_double(report.max_violation) << " over " << report.triples
            << " triples -> " << out.string() << '\n';
  return 0;
}

int cmd_oracle(const Common& o, const std::string& which) {
  std::cout.precision(12);
  if (which == "tiger") {
    TigerConfig cfg;
    cfg.gamma = o.gamma;
    cfg.p_obs = o.p_obs;
    cfg.validate();
    const char* rows[3] = {"b=0.5", "b=1  ", "b=0  "};
    auto print = [&](const TigerOracle& t) {
      std::cout << "r* = " << t.r_star << "\nQ*        listen          open-left       open-right\n";
      for (int i = 0; i < 3; ++i) {
        std::cout << rows[i];
        for (double q : t.q[static_cast<std::size_t>(i)]) std::cout << "  " << q;
        std::cout << '\n';
      }
    };
    if (o.p_obs == 1.0) print(oracle_perfect(o.gamma));
    else if (o.p_obs == 0.5) print(oracle_uninformative(o.gamma));
    const auto table = oracle_policy(cfg);
    std::cout << "value-iteration policy: open-left below " << table.threshold_low << ", open-right above "
              << table.threshold_high << ", V(0.5) = " << table.value_at(0.5) << '\n';
    return 0;
  }
  if (which == "fvrs") {
    const auto r = oracle_ignore_rocks(o.gamma, o.n);
    std::cout << "ignore-rocks r* = " << r.r_star << "\nQ~ east " << r.q_east << " north " << r.q_north << " south "
              << r.q_south << " west " << r.q_west << " sample " << r.q_sample << '\n';
    return 0;
  }
  throw std::invalid_argument("oracle: expected tiger or fvrs");
}

int cmd_report(const Common& o, const std::vector<std::string>& inputs) {
  std::vector<ResultRow> rows;
  for (const auto& in : inputs) {
    fs::path p = in;
    if (fs::is_directory(p)) p /= "results.csv";
    const auto r = read_results_csv(p);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  if (rows.empty()) throw std::invalid_argument("report: no result rows");
  const fs::path dir = output_path(o, "report");
  write_report_csv(dir / "robustness.csv", robustness_report(rows));
  const bool any_tiger = std::any_of(rows.begin(), rows.end(), [](const ResultRow& r) { return r.optimal >= 0; });
  if (any_tiger) {
    const auto optimal = robustness_report(rows, true);
    if (!optimal.empty()) write_report_csv(dir / "robustness_optimal.csv", optimal);
  }
  std::cout << "report: " << rows.size() << " rows -> " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Convex value-function DQN for Tiger and FieldVisionRockSample"};
  app.require_subcommand(1);
  Common o;

  auto env_flags = [&](CLI::App* s) {
    s->add_option("--env", o.env, "tiger or fvrs")->check(CLI::IsMember({"tiger", "fvrs"}));
    s->add_option("--p-obs", o.p_obs, "Tiger observation accuracy")->check(CLI::Range(0.5, 1.0));
    s->add_option("--obs-fn", o.obs_fn, "FVRS observation function: def, heavi, const0.X");
    s->add_option("--n", o.n, "FVRS grid size");
    s->add_option("--k", o.k, "FVRS rock count");
  };

  auto* train = app.add_subcommand("train", "train one agent");
  env_flags(train);
  train->add_option("--method", o.method, "none, hard, point, grad, hess1d, hessnd");
  train->add_option("--seed", o.seed);
  train->add_option("--out", o.out, "run directory");
  train->add_option("--manifest", o.manifest, "JSON with training overrides");
  train->add_option("--c", o.c, "penalty weight");

  auto* eval = app.add_subcommand("eval", "Monte-Carlo evaluation of a checkpoint");
  auto* cross = app.add_subcommand("cross-eval", "evaluate a checkpoint under shifted observations");
  for (auto* s : {eval, cross}) {
    env_flags(s);
    s->add_option("--checkpoint", o.checkpoint, "net.json or its run directory")->required();
    s->add_option("--n-mc", o.n_mc)->check(CLI::PositiveNumber);
    s->add_option("--seed", o.seed);
    s->add_option("--jobs", o.jobs)->check(CLI::PositiveNumber);
    s->add_option("--out", o.out, "results CSV");
    s->add_option("--method", o.method, "label when the run directory has no run.json");
  }
  cross->add_option("--shifts", o.shifts, "settings, e.g. 0.6 0.8 or heavi const0.7")->delimiter(',');

  auto* search = app.add_subcommand("search", "random hyperparameter search from a campaign manifest");
  auto* best = app.add_subcommand("best-eval", "retrain each method's best config under fresh seeds");
  for (auto* s : {search, best}) {
    s->add_option("--manifest", o.manifest)->required();
    s->add_option("--seed", o.seed);
    s->add_option("--jobs", o.jobs)->check(CLI::PositiveNumber);
    s->add_option("--n-mc", o.n_mc)->check(CLI::PositiveNumber);
    s->add_option("--out", o.out, "campaign directory");
  }

  auto* audit = app.add_subcommand("audit", "point-convexity audit of V over belief grids");
  env_flags(audit);
  audit->add_option("--checkpoint", o.checkpoint)->required();
  audit->add_option("--grid", o.grid)->check(CLI::Range(2, 100000));
  audit->add_option("--seed", o.seed, "FVRS reference layout");
  audit->add_option("--out", o.out, "audit JSON");

  std::string oracle_env;
  auto* oracle = app.add_subcommand("oracle", "closed-form and value-iteration references");
  oracle->add_option("problem", oracle_env, "tiger or fvrs")->required()->check(CLI::IsMember({"tiger", "fvrs"}));
  oracle->add_option("--gamma", o.gamma)->check(CLI::Range(0.0, 1.0));
  oracle->add_option("--p-obs", o.p_obs)->check(CLI::Range(0.5, 1.0));
  oracle->add_option("--n", o.n);

  std::vector<std::string> inputs;
  auto* report = app.add_subcommand("report", "summary CSVs from stored result rows");
  report->add_option("results", inputs, "results.csv files or campaign directories")->required();
  report->add_option("--out", o.out, "report directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o, false);
    if (*cross) return cmd_eval(o, true);
    if (*search) return cmd_search(o, *search);
    if (*best) return cmd_best_eval(o, *best);
    if (*audit) return cmd_audit(o);
    if (*oracle) return cmd_oracle(o, oracle_env);
    if (*report) return cmd_report(o, inputs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
