#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cbrisk/analysis.hpp"
#include "cbrisk/config.hpp"
#include "cbrisk/errors.hpp"
#include "cbrisk/harness.hpp"
#include "cbrisk/parallel.hpp"
#include "cbrisk/risk_estimators.hpp"

namespace {

using cbrisk::Config;
using cbrisk::CoupledDrawSet;
using cbrisk::DesignContext;
using cbrisk::Predictor;
using cbrisk::RngSeed;
using nlohmann::json;

// Single-column numeric text, optional header line.
Eigen::VectorXd read_data_vector(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cbrisk::ParseError("cannot open data file '" + path + "'");
  std::vector<double> vals;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    std::string t = line;
    if (auto pos = t.find_first_not_of(" \t\r"); pos == std::string::npos)
      continue;
    try {
      std::size_t used = 0;
      double v = std::stod(t, &used);
      vals.push_back(v);
    } catch (const std::exception&) {
      if (first) {
        first = false;
        continue;  // header
      }
      throw cbrisk::ParseError("bad value in data file: '" + line + "'");
    }
    first = false;
  }
  if (vals.empty()) throw cbrisk::ParseError("data file '" + path + "' is empty");
  return Eigen::Map<Eigen::VectorXd>(vals.data(),
                                     static_cast<Eigen::Index>(vals.size()));
}

// Comma-separated matrix, optional header row.
Eigen::MatrixXd read_design_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cbrisk::ParseError("cannot open design file '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool bad = false;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        bad = true;
        break;
      }
    }
    if (bad) {
      if (first) {
        first = false;
        continue;  // header
      }
      throw cbrisk::ParseError("bad row in design file: '" + line + "'");
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw cbrisk::ParseError("ragged design matrix in '" + path + "'");
    rows.push_back(std::move(row));
    first = false;
  }
  if (rows.empty())
    throw cbrisk::ParseError("design file '" + path + "' is empty");
  Eigen::MatrixXd X(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return X;
}

std::uint64_t resolve_seed(std::int64_t cli_seed, bool seed_given) {
  if (seed_given) return static_cast<std::uint64_t>(cli_seed);
  if (const char* env = std::getenv("RISKEST_SEED")) {
    try {
      return static_cast<std::uint64_t>(std::stoll(env));
    } catch (const std::exception&) {
      throw cbrisk::ParseError("RISKEST_SEED is not an integer");
    }
  }
  return 42;
}

void apply_threads(const std::string& threads) {
  if (threads.empty() || threads == "auto") return;
  try {
    cbrisk::par::set_threads(std::stoi(threads));
  } catch (const std::exception&) {
    throw cbrisk::ParseError("--threads expects an integer or 'auto'");
  }
}

json per_draw_summary(const Eigen::VectorXd& pd) {
  json out;
  out["B"] = pd.size();
  out["mean"] = pd.mean();
  double sd = pd.size() > 1
                  ? std::sqrt((pd.array() - pd.mean()).square().sum() /
                              (pd.size() - 1))
                  : 0.0;
  out["sd"] = sd;
  out["min"] = pd.minCoeff();
  out["max"] = pd.maxCoeff();
  return out;
}

struct CommonOpts {
  std::string data_path;
  std::string design_path;
  std::string predictor_spec;
  double sigma2 = 1.0;
  double alpha = 0.1;
  int B = 100;
  std::int64_t seed = 42;
  bool seed_given = false;
  std::string threads;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_draws) {
  cmd->add_option("--data", o.data_path, "single-column data file")->required();
  cmd->add_option("--design", o.design_path, "design matrix CSV");
  cmd->add_option("--predictor", o.predictor_spec,
                  "rule spec, e.g. lasso:0.31 or soft:1")
      ->required();
  cmd->add_option("--sigma2", o.sigma2, "noise variance")->required();
  if (with_draws) {
    cmd->add_option("--alpha", o.alpha, "auxiliary noise level");
    cmd->add_option("--B", o.B, "bootstrap draws");
  }
  cmd->add_option_function<std::int64_t>(
         "--seed", [&o](const std::int64_t& v) {
           o.seed = v;
           o.seed_given = true;
         },
         "rng seed (RISKEST_SEED env as fallback)");
  cmd->add_option("--threads", o.threads, "worker threads or 'auto'");
}

int run_estimate(const CommonOpts& o, const std::string& estimator,
                 const std::string& variant) {
  apply_threads(o.threads);
  RngSeed seed{resolve_seed(o.seed, o.seed_given), 0};
  Eigen::VectorXd y = read_data_vector(o.data_path);
  std::unique_ptr<DesignContext> ctx;
  if (!o.design_path.empty())
    ctx = std::make_unique<DesignContext>(read_design_matrix(o.design_path));
  std::vector<int> folds;
  if (o.predictor_spec == "lasso_cv") {
    if (!ctx) throw cbrisk::DimensionError("lasso_cv requires --design");
    folds = cbrisk::make_fold_assignment(static_cast<int>(y.size()), 10,
                                         seed.substream(0x6376));
  }
  Predictor g = cbrisk::parse_predictor_spec(o.predictor_spec,
                                             folds.empty() ? nullptr : &folds);

  json out;
  if (estimator == "sure") {
    cbrisk::RiskEstimate est = cbrisk::sure(y, g, o.sigma2, ctx.get());
    out["estimator"] = "SURE";
    out["value"] = est.value;
    out["alpha"] = 0.0;
    out["B"] = 0;
    out["variant"] = est.variant;
  } else {
    CoupledDrawSet draws = cbrisk::make_coupled_draws(
        y, o.sigma2, o.alpha, o.B, seed.substream(0x647277));
    cbrisk::RiskEstimate est;
    if (estimator == "cb") {
      est = cbrisk::cb_risk(draws, g, o.sigma2,
                            cbrisk::parse_cb_variant(variant), ctx.get());
    } else if (estimator == "by") {
      est = cbrisk::by_risk(y, g, o.sigma2, o.alpha, draws,
                            cbrisk::ByVariant::by_covariance, ctx.get());
    } else if (estimator == "efron") {
      est = cbrisk::efron_risk(y, g, o.sigma2, draws, ctx.get());
    } else {
      throw cbrisk::ParseError("unknown estimator '" + estimator + "'");
    }
    out["estimator"] = cbrisk::to_string(est.estimator);
    out["value"] = est.value;
    out["alpha"] = est.alpha;
    out["B"] = est.B;
    out["variant"] = est.variant;
    if (est.per_draw) out["per_draw_summary"] = per_draw_summary(*est.per_draw);
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

int run_df(const CommonOpts& o, const std::string& method) {
  apply_threads(o.threads);
  RngSeed seed{resolve_seed(o.seed, o.seed_given), 0};
  Eigen::VectorXd y = read_data_vector(o.data_path);
  std::unique_ptr<DesignContext> ctx;
  if (!o.design_path.empty())
    ctx = std::make_unique<DesignContext>(read_design_matrix(o.design_path));
  std::vector<int> folds;
  if (o.predictor_spec == "lasso_cv") {
    if (!ctx) throw cbrisk::DimensionError("lasso_cv requires --design");
    folds = cbrisk::make_fold_assignment(static_cast<int>(y.size()), 10,
                                         seed.substream(0x6376));
  }
  Predictor g = cbrisk::parse_predictor_spec(o.predictor_spec,
                                             folds.empty() ? nullptr : &folds);
  cbrisk::DfEstimate est;
  if (method == "sure") {
    est = cbrisk::sure_df(y, g, ctx.get());
  } else {
    CoupledDrawSet draws = cbrisk::make_coupled_draws(
        y, o.sigma2, o.alpha, o.B, seed.substream(0x647277));
    if (method == "cb")
      est = cbrisk::cb_df(draws, g, o.sigma2, ctx.get());
    else if (method == "ye")
      est = cbrisk::ye_df(y, g, o.sigma2, o.alpha, draws, false, ctx.get());
    else if (method == "ye_pc")
      est = cbrisk::ye_df(y, g, o.sigma2, o.alpha, draws, true, ctx.get());
    else
      throw cbrisk::ParseError("unknown df method '" + method + "'");
  }
  json out;
  out["method"] = method;
  out["value"] = est.value;
  out["alpha"] = est.alpha;
  std::cout << out.dump(2) << '\n';
  return 0;
}

int run_config_command(const std::string& config_path,
                       const std::vector<std::string>& overrides,
                       const std::string& out_dir, std::int64_t seed,
                       bool seed_given, const std::string& threads,
                       const std::string& force_experiment) {
  apply_threads(threads);
  Config cfg = config_path.empty() ? Config() : Config::from_file(config_path);
  for (const std::string& ov : overrides) cfg.set_override(ov);
  if (!force_experiment.empty()) cfg.set("experiment", force_experiment);
  if (seed_given) cfg.set("seed", std::to_string(seed));
  if (!cfg.has("seed"))
    cfg.set("seed", std::to_string(resolve_seed(0, false)));
  cbrisk::ExperimentConfig ecfg = cbrisk::ExperimentConfig::resolve(cfg);
  cbrisk::ExperimentResult result = cbrisk::run_experiment(ecfg);
  std::vector<std::string> files =
      cbrisk::write_experiment(out_dir, ecfg, result);
  for (const std::string& f : files) std::cout << f << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coupled bootstrap risk estimation for Gaussian mean models"};
  app.require_subcommand(1);

  CommonOpts est_opts;
  std::string est_estimator = "cb";
  std::string est_variant = "cb_default";
  CLI::App* est_cmd =
      app.add_subcommand("estimate", "risk estimate for one data vector");
  add_common(est_cmd, est_opts, true);
  est_cmd->add_option("--estimator", est_estimator, "cb | by | efron | sure");
  est_cmd->add_option("--variant", est_variant,
                      "cb_default | cb_raw_pair | cb_exact_mean");

  CommonOpts df_opts;
  std::string df_method = "cb";
  CLI::App* df_cmd =
      app.add_subcommand("df", "degrees-of-freedom estimate for one data vector");
  add_common(df_cmd, df_opts, true);
  df_cmd->add_option("--method", df_method, "cb | ye | ye_pc | sure");

  std::string config_path, out_dir = "out", threads;
  std::vector<std::string> overrides;
  std::int64_t seed = 0;
  bool seed_given = false;
  auto add_config_opts = [&](CLI::App* cmd, bool config_required) {
    auto* opt = cmd->add_option("--config", config_path, "experiment config file");
    if (config_required) opt->required();
    cmd->add_option("--set", overrides, "override, key=value (repeatable)");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option_function<std::int64_t>(
        "--seed", [&](const std::int64_t& v) {
          seed = v;
          seed_given = true;
        },
        "rng seed");
    cmd->add_option("--threads", threads, "worker threads or 'auto'");
  };
  CLI::App* exp_cmd =
      app.add_subcommand("experiment", "run a configured experiment to CSV");
  add_config_opts(exp_cmd, true);
  CLI::App* analyze_cmd =
      app.add_subcommand("analyze", "write analysis tables to CSV");
  add_config_opts(analyze_cmd, false);
  CLI::App* denoise_cmd =
      app.add_subcommand("denoise", "1-D fused-lasso denoising comparison");
  add_config_opts(denoise_cmd, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (est_cmd->parsed())
      return run_estimate(est_opts, est_estimator, est_variant);
    if (df_cmd->parsed()) return run_df(df_opts, df_method);
    if (exp_cmd->parsed())
      return run_config_command(config_path, overrides, out_dir, seed,
                                seed_given, threads, "");
    if (analyze_cmd->parsed())
      return run_config_command(config_path, overrides, out_dir, seed,
                                seed_given, threads, "analyze");
    if (denoise_cmd->parsed())
      return run_config_command(config_path, overrides, out_dir, seed,
                                seed_given, threads, "denoise");
  } catch (const cbrisk::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const cbrisk::DimensionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const cbrisk::SolverError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
