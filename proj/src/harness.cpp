#include "cbrisk/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "cbrisk/errors.hpp"
#include "cbrisk/parallel.hpp"
#include "cbrisk/risk_estimators.hpp"

namespace cbrisk {

using nlohmann::json;

namespace {

constexpr std::uint64_t kTagScenario = 0x73636e;
constexpr std::uint64_t kTagFolds = 0x6376;
constexpr std::uint64_t kTagRep = 0x726570;
constexpr std::uint64_t kTagDraws = 0x647277;
constexpr std::uint64_t kTagOracle = 0x6f7263;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double sample_variance(const Eigen::VectorXd& v) {
  double mean = v.mean();
  return (v.array() - mean).square().sum() / (v.size() - 1);
}

std::vector<Predictor> build_predictors(const ExperimentConfig& cfg,
                                        const std::vector<int>& folds) {
  std::vector<Predictor> out;
  for (const std::string& spec : cfg.predictor_specs) {
    if (spec == "lasso_cv") {
      out.push_back(Predictor::lasso_cv(folds, {}, cfg.cv_n_lambda,
                                        cfg.cv_min_ratio));
    } else {
      out.push_back(parse_predictor_spec(spec));
    }
  }
  return out;
}

std::int64_t oracle_reps_for(const ExperimentConfig& cfg, const Predictor& g) {
  if (g.kind() == PredictorKind::lasso_cv && cfg.oracle_reps_cv > 0)
    return cfg.oracle_reps_cv;
  return cfg.oracle_reps;
}

std::vector<double> log_grid(double top, double ratio, int count) {
  std::vector<double> grid(count);
  for (int i = 0; i < count; ++i) {
    double frac = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    grid[i] = top * std::pow(ratio, frac);
  }
  return grid;
}

}  // namespace

ExperimentConfig ExperimentConfig::resolve(const Config& cfg) {
  ExperimentConfig out;
  out.experiment = cfg.get_string("experiment", out.experiment);
  out.n = static_cast<int>(cfg.get_int("n", out.n));
  out.p = static_cast<int>(cfg.get_int("p", out.p));
  out.s = static_cast<int>(cfg.get_int("s", out.s));
  out.snr = cfg.get_double("snr", out.snr);
  out.B = static_cast<int>(cfg.get_int("B", out.B));
  out.alphas = cfg.get_doubles("alphas", out.alphas);
  out.reps = static_cast<int>(cfg.get_int("reps", out.reps));
  out.seed.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 42));
  out.seed.stream = static_cast<std::uint64_t>(cfg.get_int("seed_stream", 0));
  if (cfg.has("predictors")) out.predictor_specs = cfg.get_strings("predictors");
  out.scale_factor = cfg.get_double("scale_factor", 1.0);
  out.oracle_reps = cfg.get_int("oracle_reps", out.oracle_reps);
  out.oracle_reps_cv = cfg.get_int("oracle_reps_cv", 0);
  out.cv_folds = static_cast<int>(cfg.get_int("cv.folds", out.cv_folds));
  out.cv_n_lambda = static_cast<int>(cfg.get_int("cv.n_lambda", out.cv_n_lambda));
  out.cv_min_ratio = cfg.get_double("cv.min_ratio", out.cv_min_ratio);
  out.df_alpha = cfg.get_double("df.alpha", out.df_alpha);
  out.path_n_lambda =
      static_cast<int>(cfg.get_int("df.n_lambda", out.path_n_lambda));
  out.path_min_ratio = cfg.get_double("df.min_ratio", out.path_min_ratio);
  out.path_max_steps =
      static_cast<int>(cfg.get_int("df.max_steps", out.path_max_steps));
  out.denoise_n = static_cast<int>(cfg.get_int("denoise.n", out.denoise_n));
  out.denoise_snr = cfg.get_double("denoise.snr", out.denoise_snr);
  out.denoise_levels = cfg.get_doubles("denoise.levels", out.denoise_levels);
  out.denoise_alphas = cfg.get_doubles("denoise.alphas", out.denoise_alphas);
  out.denoise_n_lambda =
      static_cast<int>(cfg.get_int("denoise.n_lambda", out.denoise_n_lambda));
  out.denoise_reps =
      static_cast<int>(cfg.get_int("denoise.reps", out.denoise_reps));
  if (cfg.has("bias.steps")) {
    out.bias_steps.clear();
    for (double v : cfg.get_doubles("bias.steps"))
      out.bias_steps.push_back(static_cast<int>(v));
  }
  if (cfg.has("rvar.grid_B")) {
    out.rvar_grid_B.clear();
    for (double v : cfg.get_doubles("rvar.grid_B"))
      out.rvar_grid_B.push_back(static_cast<int>(v));
  }
  out.rvar_outer = cfg.get_int("rvar.outer", out.rvar_outer);
  out.bv_outer = cfg.get_int("bv.outer", out.bv_outer);
  out.bv_inner = static_cast<int>(cfg.get_int("bv.inner", out.bv_inner));

  if (!(out.scale_factor > 0.0)) throw ParseError("scale_factor must be positive");
  double sf = out.scale_factor;
  if (sf != 1.0) {
    out.n = std::max(4, static_cast<int>(std::lround(out.n * sf)));
    out.p = std::max(2, static_cast<int>(std::lround(out.p * sf)));
    out.reps = std::max(2, static_cast<int>(std::lround(out.reps * sf)));
  }
  out.s = std::min(out.s, out.p);
  for (double a : out.alphas)
    if (!(a > 0.0)) throw ParseError("all alphas must be positive");
  if (out.reps < 2) throw ParseError("reps must be at least 2");

  // Materialize every resolved value so the hash pins the actual run.
  Config raw;
  raw.set("experiment", out.experiment);
  raw.set("n", std::to_string(out.n));
  raw.set("p", std::to_string(out.p));
  raw.set("s", std::to_string(out.s));
  raw.set("snr", fmt(out.snr));
  raw.set("B", std::to_string(out.B));
  {
    std::string a;
    for (std::size_t i = 0; i < out.alphas.size(); ++i)
      a += (i ? "," : "") + fmt(out.alphas[i]);
    raw.set("alphas", a);
  }
  raw.set("reps", std::to_string(out.reps));
  raw.set("seed", std::to_string(out.seed.seed));
  raw.set("seed_stream", std::to_string(out.seed.stream));
  {
    std::string pspec;
    for (std::size_t i = 0; i < out.predictor_specs.size(); ++i)
      pspec += (i ? "," : "") + out.predictor_specs[i];
    raw.set("predictors", pspec);
  }
  raw.set("scale_factor", fmt(out.scale_factor));
  raw.set("oracle_reps", std::to_string(out.oracle_reps));
  raw.set("oracle_reps_cv", std::to_string(out.oracle_reps_cv));
  raw.set("cv.folds", std::to_string(out.cv_folds));
  raw.set("cv.n_lambda", std::to_string(out.cv_n_lambda));
  raw.set("cv.min_ratio", fmt(out.cv_min_ratio));
  raw.set("df.alpha", fmt(out.df_alpha));
  raw.set("df.n_lambda", std::to_string(out.path_n_lambda));
  raw.set("df.min_ratio", fmt(out.path_min_ratio));
  raw.set("df.max_steps", std::to_string(out.path_max_steps));
  raw.set("denoise.n", std::to_string(out.denoise_n));
  raw.set("denoise.snr", fmt(out.denoise_snr));
  {
    std::string lv;
    for (std::size_t i = 0; i < out.denoise_levels.size(); ++i)
      lv += (i ? "," : "") + fmt(out.denoise_levels[i]);
    raw.set("denoise.levels", lv);
    std::string da;
    for (std::size_t i = 0; i < out.denoise_alphas.size(); ++i)
      da += (i ? "," : "") + fmt(out.denoise_alphas[i]);
    raw.set("denoise.alphas", da);
  }
  raw.set("denoise.n_lambda", std::to_string(out.denoise_n_lambda));
  raw.set("denoise.reps", std::to_string(out.denoise_reps));
  {
    std::string ks;
    for (std::size_t i = 0; i < out.bias_steps.size(); ++i)
      ks += (i ? "," : "") + std::to_string(out.bias_steps[i]);
    raw.set("bias.steps", ks);
    std::string bs;
    for (std::size_t i = 0; i < out.rvar_grid_B.size(); ++i)
      bs += (i ? "," : "") + std::to_string(out.rvar_grid_B[i]);
    raw.set("rvar.grid_B", bs);
  }
  raw.set("rvar.outer", std::to_string(out.rvar_outer));
  raw.set("bv.outer", std::to_string(out.bv_outer));
  raw.set("bv.inner", std::to_string(out.bv_inner));
  out.raw = std::move(raw);
  return out;
}

ScenarioTruth build_scenario(const ExperimentConfig& cfg, RngSeed rng) {
  if (cfg.s == 0)
    throw Error("build_scenario: s = 0 leaves the SNR undefined");
  if (cfg.s > cfg.p) throw Error("build_scenario: s must not exceed p");
  ScenarioTruth sc;
  sc.X.resize(cfg.n, cfg.p);
  Rng gx(rng.substream(0x58 /* X */));
  for (int i = 0; i < cfg.n; ++i)
    for (int j = 0; j < cfg.p; ++j) sc.X(i, j) = gx.normal();
  sc.beta = Eigen::VectorXd::Zero(cfg.p);
  Rng gb(rng.substream(0x62657461 /* beta */));
  // Support on the first s coordinates; exchangeable since X is i.i.d.
  for (int j = 0; j < cfg.s; ++j) sc.beta[j] = gb.uniform_symmetric();
  sc.theta = sc.X * sc.beta;
  double var = sample_variance(sc.theta);
  if (!(var > 0.0)) throw Error("build_scenario: degenerate signal variance");
  if (!(cfg.snr > 0.0)) throw Error("build_scenario: snr must be positive");
  sc.sigma2 = var / cfg.snr;
  return sc;
}

std::vector<int> make_fold_assignment(int n, int n_folds, RngSeed rng) {
  if (n_folds < 2 || n_folds > n)
    throw Error("make_fold_assignment: need 2 <= folds <= n");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng gen(rng);
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(gen.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[i], perm[j]);
  }
  std::vector<int> fold(n);
  for (int i = 0; i < n; ++i) fold[perm[i]] = i % n_folds;
  return fold;
}

Eigen::VectorXd denoise_signal(int n, const std::vector<double>& levels) {
  if (levels.empty()) throw Error("denoise_signal: no levels");
  Eigen::VectorXd out(n);
  int segments = static_cast<int>(levels.size());
  for (int i = 0; i < n; ++i) {
    int seg = std::min(segments - 1, i * segments / n);
    out[i] = levels[seg];
  }
  return out;
}

// --- Figure 1 / Figure 2 core -------------------------------------------------

namespace {

struct EstCell {
  double cb = 0.0;
  double by = 0.0;
  std::uint64_t checksum = 0;
  bool ok = false;
};

ExperimentResult run_risk_comparison(const ExperimentConfig& cfg,
                                     const std::string& name) {
  ScenarioTruth sc = build_scenario(cfg, cfg.seed.substream(kTagScenario));
  NormalModel model{sc.theta, sc.sigma2};
  DesignContext ctx(sc.X, sc.beta);
  std::vector<int> folds =
      make_fold_assignment(cfg.n, cfg.cv_folds, cfg.seed.substream(kTagFolds));
  std::vector<Predictor> preds = build_predictors(cfg, folds);
  const std::size_t G = preds.size();
  const std::size_t A = cfg.alphas.size();

  std::vector<OracleEstimate> risk0(G);
  std::vector<std::vector<OracleEstimate>> risk_a(G,
                                                  std::vector<OracleEstimate>(A));
  for (std::size_t g = 0; g < G; ++g) {
    std::int64_t R = oracle_reps_for(cfg, preds[g]);
    risk0[g] = mc_risk(model, preds[g], 0.0, R,
                       cfg.seed.substream(kTagOracle, g * 100), &ctx);
    for (std::size_t a = 0; a < A; ++a)
      risk_a[g][a] = mc_risk(model, preds[g], cfg.alphas[a], R,
                             cfg.seed.substream(kTagOracle, g * 100 + a + 1),
                             &ctx);
  }

  std::vector<EstCell> cells(static_cast<std::size_t>(cfg.reps) * A * G);
  auto cell_at = [&](int rep, std::size_t a, std::size_t g) -> EstCell& {
    return cells[(static_cast<std::size_t>(rep) * A + a) * G + g];
  };
  par::sum_indexed(cfg.reps, [&](std::int64_t r) {
    RngSeed rep_seed = cfg.seed.substream(kTagRep, static_cast<std::uint64_t>(r));
    Eigen::VectorXd y = sample_data(model, rep_seed);
    for (std::size_t a = 0; a < A; ++a) {
      CoupledDrawSet draws = make_coupled_draws(
          y, model.sigma2, cfg.alphas[a], cfg.B, rep_seed.substream(kTagDraws, a));
      std::uint64_t sum = draws.checksum();
      for (std::size_t g = 0; g < G; ++g) {
        EstCell& cell = cell_at(static_cast<int>(r), a, g);
        cell.checksum = sum;
        try {
          cell.cb =
              cb_risk(draws, preds[g], model.sigma2, CbVariant::cb_default, &ctx)
                  .value;
          cell.by = by_risk(y, preds[g], model.sigma2, cfg.alphas[a], draws,
                            ByVariant::by_covariance, &ctx)
                        .value;
          cell.ok = true;
        } catch (const SolverError&) {
          cell.ok = false;
        }
      }
    }
    return 0.0;
  }, 1);

  ExperimentResult result;
  result.name = name;
  int failures = 0;
  for (int r = 0; r < cfg.reps; ++r) {
    for (std::size_t a = 0; a < A; ++a) {
      for (std::size_t g = 0; g < G; ++g) {
        const EstCell& cell = cell_at(r, a, g);
        if (!cell.ok) {
          ++failures;
          continue;
        }
        ResultRow row;
        row.scenario = name;
        row.predictor = preds[g].id();
        row.alpha = cfg.alphas[a];
        row.rep = r;
        row.oracle_risk = risk0[g].value;
        row.oracle_risk_alpha = risk_a[g][a].value;
        row.draw_checksum = cell.checksum;
        row.estimator = "CB";
        row.estimate = cell.cb;
        result.rows.push_back(row);
        row.estimator = "BY";
        row.estimate = cell.by;
        result.rows.push_back(row);
      }
    }
  }

  json summary;
  summary["sigma2"] = model.sigma2;
  summary["solver_failures"] = failures;
  for (std::size_t g = 0; g < G; ++g) {
    json jg;
    jg["oracle_risk"] = risk0[g].value;
    jg["oracle_risk_se"] = risk0[g].std_error;
    for (std::size_t a = 0; a < A; ++a) {
      std::vector<double> cb_vals, by_vals;
      for (int r = 0; r < cfg.reps; ++r) {
        const EstCell& cell = cell_at(r, a, g);
        if (!cell.ok) continue;
        cb_vals.push_back(cell.cb);
        by_vals.push_back(cell.by);
      }
      auto mc = par::summarize(cb_vals);
      auto mb = par::summarize(by_vals);
      json ja;
      ja["alpha"] = cfg.alphas[a];
      ja["oracle_risk_alpha"] = risk_a[g][a].value;
      ja["oracle_risk_alpha_se"] = risk_a[g][a].std_error;
      ja["cb_mean"] = mc.mean;
      ja["cb_se"] = mc.se;
      ja["cb_sd"] = std::sqrt(mc.var);
      ja["by_mean"] = mb.mean;
      ja["by_se"] = mb.se;
      ja["by_sd"] = std::sqrt(mb.var);
      jg["by_alpha"].push_back(ja);
    }
    summary["predictors"][preds[g].id()] = jg;
  }
  result.summary_json = summary.dump(2);
  return result;
}

}  // namespace

ExperimentResult run_figure1(const ExperimentConfig& cfg) {
  return run_risk_comparison(cfg, "figure1");
}

ExperimentResult run_figure2(const ExperimentConfig& cfg) {
  ExperimentConfig dense = cfg;
  dense.predictor_specs = {"lasso_cv"};
  return run_risk_comparison(dense, "figure2");
}

// --- Degrees of freedom paths ---------------------------------------------------

namespace {

// Shared-replication Monte Carlo df for a whole path of fits at once.
// fits_fn(y) must return one fitted vector per path point.
template <class FitsFn>
std::vector<OracleEstimate> mc_df_path(const NormalModel& model, double alpha,
                                       std::int64_t R, RngSeed rng,
                                       std::size_t n_points, FitsFn&& fits_fn) {
  double var_alpha = (1.0 + alpha) * model.sigma2;
  std::vector<std::vector<double>> psi(n_points,
                                       std::vector<double>(static_cast<std::size_t>(R)));
  par::sum_indexed(R, [&](std::int64_t r) {
    Eigen::VectorXd y = sample_elevated(
        model, alpha, rng.substream(kTagRep, static_cast<std::uint64_t>(r)));
    std::vector<Eigen::VectorXd> fits = fits_fn(y);
    for (std::size_t j = 0; j < n_points; ++j)
      psi[j][static_cast<std::size_t>(r)] =
          (y - model.theta).dot(fits[j]) / var_alpha;
    return 0.0;
  }, 16);
  std::vector<OracleEstimate> out(n_points);
  for (std::size_t j = 0; j < n_points; ++j) {
    auto mv = par::summarize(psi[j]);
    out[j] = OracleEstimate{mv.mean, mv.se, R};
  }
  return out;
}

}  // namespace

ExperimentResult run_df_figure(const ExperimentConfig& cfg) {
  ScenarioTruth sc = build_scenario(cfg, cfg.seed.substream(kTagScenario));
  NormalModel model{sc.theta, sc.sigma2};
  DesignContext ctx(sc.X, sc.beta);
  const double alpha = cfg.df_alpha;
  const double sigma2 = model.sigma2;
  const double n = static_cast<double>(cfg.n);

  Eigen::VectorXd y0 =
      sample_data(model, cfg.seed.substream(kTagRep, std::uint64_t{0}));
  std::vector<double> grid = log_grid(lasso_max_lambda(ctx, y0),
                                      cfg.path_min_ratio, cfg.path_n_lambda);
  const int kmax = std::min(cfg.path_max_steps, std::min(cfg.n, cfg.p));
  const std::size_t L = grid.size();
  const std::size_t K = static_cast<std::size_t>(kmax) + 1;

  auto lasso_fits = [&](const Eigen::VectorXd& y) {
    std::vector<Eigen::VectorXd> betas = lasso_path(ctx, y, grid);
    std::vector<Eigen::VectorXd> fits(L);
    for (std::size_t j = 0; j < L; ++j) fits[j] = ctx.X * betas[j];
    return fits;
  };
  auto step_fits = [&](const Eigen::VectorXd& y) {
    Eigen::MatrixXd path = forward_stepwise_path(ctx, y, kmax);
    std::vector<Eigen::VectorXd> fits(K);
    for (std::size_t k = 0; k < K; ++k)
      fits[k] = path.row(static_cast<Eigen::Index>(k)).transpose();
    return fits;
  };

  std::vector<OracleEstimate> lasso_df0 =
      mc_df_path(model, 0.0, cfg.oracle_reps,
                 cfg.seed.substream(kTagOracle, std::uint64_t{0}), L, lasso_fits);
  std::vector<OracleEstimate> lasso_dfa =
      mc_df_path(model, alpha, cfg.oracle_reps,
                 cfg.seed.substream(kTagOracle, std::uint64_t{1}), L, lasso_fits);
  std::vector<OracleEstimate> step_df0 =
      mc_df_path(model, 0.0, cfg.oracle_reps,
                 cfg.seed.substream(kTagOracle, std::uint64_t{2}), K, step_fits);
  std::vector<OracleEstimate> step_dfa =
      mc_df_path(model, alpha, cfg.oracle_reps,
                 cfg.seed.substream(kTagOracle, std::uint64_t{3}), K, step_fits);

  struct PathCell {
    double cb_df = 0.0;
    double ye_df = 0.0;
    double support = 0.0;
    std::uint64_t checksum = 0;
  };
  std::vector<PathCell> lasso_cells(static_cast<std::size_t>(cfg.reps) * L);
  std::vector<PathCell> step_cells(static_cast<std::size_t>(cfg.reps) * K);

  par::sum_indexed(cfg.reps, [&](std::int64_t r) {
    RngSeed rep_seed = cfg.seed.substream(kTagRep, static_cast<std::uint64_t>(r));
    Eigen::VectorXd y = sample_data(model, rep_seed);
    CoupledDrawSet draws = make_coupled_draws(y, sigma2, alpha, cfg.B,
                                              rep_seed.substream(kTagDraws));
    std::uint64_t sum = draws.checksum();
    Eigen::RowVectorXd boot_mean = draws.ystar.colwise().mean();

    // One warm path per bootstrap row, reused across all path points.
    std::vector<std::vector<Eigen::VectorXd>> lasso_draw_fits(cfg.B);
    std::vector<Eigen::MatrixXd> step_draw_fits(cfg.B);
    for (int b = 0; b < cfg.B; ++b) {
      Eigen::VectorXd yb = draws.ystar.row(b).transpose();
      lasso_draw_fits[b] = lasso_fits(yb);
      step_draw_fits[b] = forward_stepwise_path(ctx, yb, kmax);
    }
    std::vector<Eigen::VectorXd> lasso_y = lasso_path(ctx, y, grid);

    auto fill_point = [&](PathCell& cell, auto fit_of_draw) {
      double cb_mean = 0.0, train_mean = 0.0;
      Eigen::VectorXd cov = Eigen::VectorXd::Zero(cfg.n);
      for (int b = 0; b < cfg.B; ++b) {
        Eigen::VectorXd fit = fit_of_draw(b);
        cb_mean += (draws.ydagger.row(b).transpose() - fit).squaredNorm() -
                   draws.omega.row(b).squaredNorm() / alpha - n * sigma2;
        train_mean += (draws.ystar.row(b).transpose() - fit).squaredNorm();
        cov += (draws.ystar.row(b) - boot_mean).transpose().cwiseProduct(fit);
      }
      cb_mean /= cfg.B;
      train_mean /= cfg.B;
      cov /= static_cast<double>(cfg.B - 1);
      cell.cb_df = (cb_mean - train_mean + n * sigma2 * (1.0 + alpha)) /
                   (2.0 * sigma2 * (1.0 + alpha));
      cell.ye_df = cov.sum() / (sigma2 * alpha);
      cell.checksum = sum;
    };

    for (std::size_t j = 0; j < L; ++j) {
      PathCell& cell = lasso_cells[static_cast<std::size_t>(r) * L + j];
      fill_point(cell, [&](int b) { return lasso_draw_fits[b][j]; });
      int active = 0;
      for (Eigen::Index q = 0; q < lasso_y[j].size(); ++q)
        if (lasso_y[j][q] != 0.0) ++active;
      cell.support = active;
    }
    for (std::size_t k = 0; k < K; ++k) {
      PathCell& cell = step_cells[static_cast<std::size_t>(r) * K + k];
      fill_point(cell, [&](int b) {
        return step_draw_fits[b].row(static_cast<Eigen::Index>(k)).transpose();
      });
      cell.support = static_cast<double>(k);
    }
    return 0.0;
  }, 1);

  ExperimentResult result;
  result.name = "df_paths";
  auto emit = [&](const std::string& scen, const std::string& point_id,
                  const PathCell& cell, int rep, const OracleEstimate& df0,
                  const OracleEstimate& dfa) {
    ResultRow row;
    row.scenario = scen;
    row.predictor = point_id;
    row.alpha = alpha;
    row.rep = rep;
    row.oracle_risk = df0.value;
    row.oracle_risk_alpha = dfa.value;
    row.draw_checksum = cell.checksum;
    row.estimator = "cb_df";
    row.estimate = cell.cb_df;
    result.rows.push_back(row);
    row.estimator = "ye_df";
    row.estimate = cell.ye_df;
    result.rows.push_back(row);
  };
  for (int r = 0; r < cfg.reps; ++r) {
    for (std::size_t j = 0; j < L; ++j)
      emit("df_lasso_path", "lasso[" + std::to_string(j) + "]",
           lasso_cells[static_cast<std::size_t>(r) * L + j], r, lasso_df0[j],
           lasso_dfa[j]);
    for (std::size_t k = 0; k < K; ++k)
      emit("df_stepwise_path", "stepwise[" + std::to_string(k) + "]",
           step_cells[static_cast<std::size_t>(r) * K + k], r, step_df0[k],
           step_dfa[k]);
  }

  json summary;
  summary["alpha"] = alpha;
  summary["sigma2"] = sigma2;
  for (std::size_t j = 0; j < L; ++j) {
    double supp = 0.0;
    for (int r = 0; r < cfg.reps; ++r)
      supp += lasso_cells[static_cast<std::size_t>(r) * L + j].support;
    json jj;
    jj["lambda"] = grid[j];
    jj["avg_support"] = supp / cfg.reps;
    jj["mc_df"] = lasso_df0[j].value;
    jj["mc_df_se"] = lasso_df0[j].std_error;
    jj["mc_df_alpha"] = lasso_dfa[j].value;
    summary["lasso_path"].push_back(jj);
  }
  for (std::size_t k = 0; k < K; ++k) {
    json jj;
    jj["k"] = k;
    jj["mc_df"] = step_df0[k].value;
    jj["mc_df_se"] = step_df0[k].std_error;
    jj["mc_df_alpha"] = step_dfa[k].value;
    summary["stepwise_path"].push_back(jj);
  }
  result.summary_json = summary.dump(2);
  return result;
}

// --- 1-D denoising ---------------------------------------------------------------

ExperimentResult run_denoise(const ExperimentConfig& cfg) {
  Eigen::VectorXd signal = denoise_signal(cfg.denoise_n, cfg.denoise_levels);
  double sigma2 = sample_variance(signal) / cfg.denoise_snr;
  NormalModel model{signal, sigma2};
  const double n = static_cast<double>(cfg.denoise_n);

  Eigen::VectorXd y0 =
      sample_data(model, cfg.seed.substream(kTagRep, std::uint64_t{0}));
  // Lambda at which the fit fully fuses: max absolute centered cumulative sum.
  double cum = 0.0, lam_top = 0.0;
  double mean0 = y0.mean();
  for (Eigen::Index i = 0; i < y0.size(); ++i) {
    cum += y0[i] - mean0;
    lam_top = std::max(lam_top, std::abs(cum));
  }
  std::vector<double> grid = log_grid(lam_top, 1e-3, cfg.denoise_n_lambda);
  const std::size_t L = grid.size();
  const std::size_t A = cfg.denoise_alphas.size();

  // Oracle risk per path point at the base level and at each alpha.
  auto oracle_curve = [&](double alpha, std::uint64_t tag) {
    std::vector<std::vector<double>> loss(L,
        std::vector<double>(static_cast<std::size_t>(cfg.oracle_reps)));
    par::sum_indexed(cfg.oracle_reps, [&](std::int64_t r) {
      Eigen::VectorXd y = sample_elevated(
          model, alpha,
          cfg.seed.substream(kTagOracle + tag, static_cast<std::uint64_t>(r)));
      for (std::size_t j = 0; j < L; ++j) {
        Eigen::VectorXd fit = solve_fused_lasso_1d(y, grid[j]);
        loss[j][static_cast<std::size_t>(r)] = (signal - fit).squaredNorm();
      }
      return 0.0;
    }, 16);
    std::vector<OracleEstimate> out(L);
    for (std::size_t j = 0; j < L; ++j) {
      auto mv = par::summarize(loss[j]);
      out[j] = OracleEstimate{mv.mean, mv.se, cfg.oracle_reps};
    }
    return out;
  };
  std::vector<OracleEstimate> risk0 = oracle_curve(0.0, 0);
  std::vector<std::vector<OracleEstimate>> risk_a(A);
  for (std::size_t a = 0; a < A; ++a)
    risk_a[a] = oracle_curve(cfg.denoise_alphas[a], a + 1);

  struct RepCurves {
    std::vector<double> sure;                 // per lambda
    std::vector<std::vector<double>> cb;      // per alpha, per lambda
    std::vector<std::uint64_t> checksums;     // per alpha
  };
  std::vector<RepCurves> reps(static_cast<std::size_t>(cfg.denoise_reps));
  par::sum_indexed(cfg.denoise_reps, [&](std::int64_t r) {
    RngSeed rep_seed = cfg.seed.substream(kTagRep, static_cast<std::uint64_t>(r));
    Eigen::VectorXd y = sample_data(model, rep_seed);
    RepCurves& rc = reps[static_cast<std::size_t>(r)];
    rc.sure.resize(L);
    for (std::size_t j = 0; j < L; ++j) {
      Eigen::VectorXd fit = solve_fused_lasso_1d(y, grid[j]);
      rc.sure[j] = (y - fit).squaredNorm() +
                   2.0 * sigma2 * fused_group_count(fit) - n * sigma2;
    }
    rc.cb.resize(A);
    rc.checksums.resize(A);
    for (std::size_t a = 0; a < A; ++a) {
      double alpha = cfg.denoise_alphas[a];
      CoupledDrawSet draws = make_coupled_draws(y, sigma2, alpha, cfg.B,
                                                rep_seed.substream(kTagDraws, a));
      rc.checksums[a] = draws.checksum();
      rc.cb[a].assign(L, 0.0);
      for (int b = 0; b < cfg.B; ++b) {
        Eigen::VectorXd yb = draws.ystar.row(b).transpose();
        double omega_term = draws.omega.row(b).squaredNorm() / alpha;
        for (std::size_t j = 0; j < L; ++j) {
          Eigen::VectorXd fit = solve_fused_lasso_1d(yb, grid[j]);
          rc.cb[a][j] += (draws.ydagger.row(b).transpose() - fit).squaredNorm() -
                         omega_term - n * sigma2;
        }
      }
      for (std::size_t j = 0; j < L; ++j) rc.cb[a][j] /= cfg.B;
    }
    return 0.0;
  }, 1);

  ExperimentResult result;
  result.name = "denoise";
  auto argmin = [](const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i] < v[best]) best = i;
    return best;
  };

  json summary;
  summary["sigma2"] = sigma2;
  summary["lambda_grid"] = grid;
  std::vector<double> sure_sel_risk;
  std::vector<std::vector<double>> cb_sel_risk(A);
  for (int r = 0; r < cfg.denoise_reps; ++r) {
    const RepCurves& rc = reps[static_cast<std::size_t>(r)];
    for (std::size_t j = 0; j < L; ++j) {
      ResultRow row;
      row.scenario = "denoise";
      row.predictor = "fused[" + std::to_string(j) + "]";
      row.estimator = "SURE";
      row.alpha = 0.0;
      row.rep = r;
      row.estimate = rc.sure[j];
      row.oracle_risk = risk0[j].value;
      row.oracle_risk_alpha = risk0[j].value;
      row.draw_checksum = 0;
      result.rows.push_back(row);
      for (std::size_t a = 0; a < A; ++a) {
        row.estimator = "CB";
        row.alpha = cfg.denoise_alphas[a];
        row.estimate = rc.cb[a][j];
        row.oracle_risk = risk0[j].value;
        row.oracle_risk_alpha = risk_a[a][j].value;
        row.draw_checksum = rc.checksums[a];
        result.rows.push_back(row);
      }
    }
    std::size_t sure_pick = argmin(rc.sure);
    sure_sel_risk.push_back(risk0[sure_pick].value);
    for (std::size_t a = 0; a < A; ++a)
      cb_sel_risk[a].push_back(risk0[argmin(rc.cb[a])].value);
  }
  auto ms = par::summarize(sure_sel_risk);
  summary["sure_selected_oracle_risk"] = ms.mean;
  for (std::size_t a = 0; a < A; ++a) {
    auto mcb = par::summarize(cb_sel_risk[a]);
    json ja;
    ja["alpha"] = cfg.denoise_alphas[a];
    ja["cb_selected_oracle_risk"] = mcb.mean;
    ja["ratio_to_sure"] = mcb.mean / ms.mean;
    summary["cb_selection"].push_back(ja);
  }
  result.summary_json = summary.dump(2);
  return result;
}

// --- Appendix-style studies ------------------------------------------------------

ExperimentResult run_appendixF(const ExperimentConfig& cfg) {
  ExperimentResult result;
  result.name = "appendixF";
  ScenarioTruth sc = build_scenario(cfg, cfg.seed.substream(kTagScenario));
  NormalModel model{sc.theta, sc.sigma2};
  DesignContext ctx(sc.X, sc.beta);
  json summary;
  summary["sigma2"] = model.sigma2;

  // Table 1: measured bias against its upper bounds, forward stepwise.
  Table bias_table;
  bias_table.name = "bias_bounds";
  bias_table.columns = {"k",         "alpha",          "true_bias",
                        "bias_se",   "bound_bd1",      "bound_bd2_leading",
                        "loss_var_alpha", "loss_var_zero", "premise_ok"};
  int kcap = std::min(cfg.n, cfg.p);
  for (int k : cfg.bias_steps) {
    if (k > kcap) {
      summary["bias_skipped_k"].push_back(k);
      continue;
    }
    Predictor g = Predictor::forward_stepwise(k);
    std::vector<BiasBounds> per_alpha;
    for (std::size_t a = 0; a < cfg.alphas.size(); ++a)
      per_alpha.push_back(bias_bounds(
          model, g, cfg.alphas[a], cfg.bv_outer,
          cfg.seed.substream(0x6269, k * 100 + a), &ctx));
    for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
      // Monotone-variance premise, checked on the grid with MC slack.
      bool premise = true;
      if (a > 0) {
        double prev = per_alpha[a - 1].loss_var_alpha;
        premise = per_alpha[a].loss_var_alpha >= 0.8 * prev;
      }
      bias_table.rows.push_back({static_cast<double>(k), cfg.alphas[a],
                                 per_alpha[a].true_bias,
                                 per_alpha[a].true_bias_se,
                                 per_alpha[a].bound_bd1,
                                 per_alpha[a].bound_bd2_leading,
                                 per_alpha[a].loss_var_alpha,
                                 per_alpha[a].loss_var_zero,
                                 premise ? 1.0 : 0.0});
    }
  }
  result.tables.push_back(std::move(bias_table));

  // Table 2: measured reducible variance over the (B, alpha) grid vs the
  // leading terms, lasso at a fixed lambda.
  Table rvar_table;
  rvar_table.name = "rvar_grid";
  rvar_table.columns = {"B",        "alpha",      "measured_rvar",
                        "rvar_se",  "cb_leading", "by_leading"};
  Predictor lasso_g = Predictor::lasso(0.31);
  RvarLeadingTerms base = rvar_leading_terms(model, lasso_g, 1.0, 1,
                                             cfg.rvar_outer,
                                             cfg.seed.substream(0x7276), &ctx);
  for (int B : cfg.rvar_grid_B) {
    for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
      double alpha = cfg.alphas[a];
      OracleEstimate meas = measured_rvar(
          model, lasso_g, alpha, B, cfg.rvar_outer,
          cfg.seed.substream(0x7277, B * 100 + a), &ctx);
      double scale = 1.0 / (static_cast<double>(B) * alpha);
      rvar_table.rows.push_back({static_cast<double>(B), alpha, meas.value,
                                 meas.std_error, base.cb_term * scale,
                                 base.by_term * scale});
    }
  }
  result.tables.push_back(std::move(rvar_table));

  // Table 3: irreducible-variance components for CB and BY on the dense
  // high-SNR scenario with the CV-tuned lasso.
  ExperimentConfig dense = cfg;
  dense.s = cfg.p;
  dense.snr = 2.0;
  ScenarioTruth sc2 = build_scenario(dense, cfg.seed.substream(0x736332));
  NormalModel model2{sc2.theta, sc2.sigma2};
  DesignContext ctx2(sc2.X, sc2.beta);
  std::vector<int> folds = make_fold_assignment(dense.n, dense.cv_folds,
                                                cfg.seed.substream(kTagFolds));
  Predictor cv_g =
      Predictor::lasso_cv(folds, {}, dense.cv_n_lambda, dense.cv_min_ratio);
  Table ivar_table;
  ivar_table.name = "ivar_components";
  ivar_table.columns = {"estimator_cb", "alpha", "bias",   "rvar",
                        "ivar",         "ivar1", "ivar1_se", "ivar2",
                        "ivar2_se",     "cov12", "total_error"};
  for (EstimatorId est : {EstimatorId::CB, EstimatorId::BY}) {
    for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
      BiasVarianceReport rep = bias_variance_report(
          model2, cv_g, cfg.alphas[a], cfg.B, cfg.bv_outer, cfg.bv_inner, est,
          cfg.seed.substream(0x6976, a), &ctx2);
      ivar_table.rows.push_back(
          {est == EstimatorId::CB ? 1.0 : 0.0, cfg.alphas[a], rep.bias,
           rep.rvar, rep.ivar, rep.ivar1, rep.ivar1_se, rep.ivar2, rep.ivar2_se,
           rep.cov12, rep.total_error});
    }
  }
  result.tables.push_back(std::move(ivar_table));
  result.summary_json = summary.dump(2);
  return result;
}

// --- Analysis tables ---------------------------------------------------------------

ExperimentResult run_analyze(const ExperimentConfig& cfg) {
  ExperimentResult result;
  result.name = "analyze";
  ScenarioTruth sc = build_scenario(cfg, cfg.seed.substream(kTagScenario));
  DesignContext ctx(sc.X, sc.beta);

  // Explicit ridge smoother matrix for the linear-smoother probes.
  Eigen::MatrixXd pen = ctx.gram;
  pen.diagonal().array() += static_cast<double>(cfg.n) * 5.0;
  Eigen::MatrixXd S = sc.X * pen.llt().solve(sc.X.transpose());
  Predictor smoother = Predictor::linear_smoother(S);

  // Threshold rules get a mean vector with mass on both sides of t = 1.
  Eigen::VectorXd theta_t(cfg.n);
  for (int i = 0; i < cfg.n; ++i) theta_t[i] = (i % 4) * 0.8;
  NormalModel thresh_model{theta_t, 1.0};
  NormalModel reg_model{sc.theta, sc.sigma2};

  std::int64_t R = cfg.bv_outer * 10;

  Table stein;
  stein.name = "stein_check";
  stein.columns = {"predictor_code", "cov_side", "div_side",
                   "residual",       "residual_se"};
  struct Probe {
    double code;
    Predictor g;
    const NormalModel* model;
    const DesignContext* ctx;
  };
  Predictor soft_g = Predictor::soft_threshold(1.0);
  Predictor hard_g = Predictor::hard_threshold(1.0);
  std::vector<Probe> probes{{0.0, smoother, &reg_model, &ctx},
                            {1.0, soft_g, &thresh_model, nullptr},
                            {2.0, hard_g, &thresh_model, nullptr}};
  for (const auto& probe : probes) {
    SteinCheckReport rep = stein_formula_check(
        *probe.model, probe.g, R, cfg.seed.substream(0x7374, probe.code),
        probe.ctx);
    stein.rows.push_back(
        {probe.code, rep.cov_side, rep.div_side, rep.residual, rep.residual_se});
  }
  result.tables.push_back(std::move(stein));

  Table optim;
  optim.name = "optimism_decomposition";
  optim.columns = {"predictor_code", "alpha", "a_alpha", "a_se",
                   "b_alpha",        "b_se",  "total",   "total_se"};
  for (const auto& probe : {probes[0], probes[1]}) {
    for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
      OptimismDecomposition dec = mc_optimism_decomposition(
          *probe.model, probe.g, cfg.alphas[a], cfg.bv_outer, cfg.bv_inner,
          cfg.seed.substream(0x6f70, probe.code * 100 + a), probe.ctx);
      optim.rows.push_back({probe.code, cfg.alphas[a], dec.a_alpha, dec.a_se,
                            dec.b_alpha, dec.b_se, dec.total, dec.total_se});
    }
  }
  result.tables.push_back(std::move(optim));

  Table bias_tbl;
  bias_tbl.name = "bias_bounds";
  bias_tbl.columns = {"k", "alpha", "true_bias", "bias_se", "bound_bd1"};
  int kcap = std::min(cfg.n, cfg.p);
  for (int k : cfg.bias_steps) {
    if (k > kcap) continue;
    for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
      BiasBounds bb =
          bias_bounds(reg_model, Predictor::forward_stepwise(k), cfg.alphas[a],
                      cfg.bv_outer, cfg.seed.substream(0x6262, k * 100 + a), &ctx);
      bias_tbl.rows.push_back({static_cast<double>(k), cfg.alphas[a],
                               bb.true_bias, bb.true_bias_se, bb.bound_bd1});
    }
  }
  result.tables.push_back(std::move(bias_tbl));

  Table ht;
  ht.name = "ht_closed_form";
  ht.columns = {"dim", "t", "sigma", "alpha", "exact", "mc", "mc_se", "zscore"};
  Rng gen(cfg.seed.substream(0x6874));
  for (int c = 0; c < 50; ++c) {
    int dim = 1 + static_cast<int>(gen.next_u64() % 3);
    Eigen::VectorXd y(dim);
    for (int i = 0; i < dim; ++i) y[i] = 6.0 * gen.uniform() - 3.0;
    double t = 0.2 + 2.3 * gen.uniform();
    double sigma = 0.5 + 1.5 * gen.uniform();
    double alpha = 0.01 + 0.99 * gen.uniform();
    double exact = ht_inner_product_exact(y, t, sigma, alpha);
    OracleEstimate mc = ht_inner_product_mc(
        y, t, sigma, alpha, 1000000, cfg.seed.substream(0x6875, c));
    double z = mc.std_error > 0.0 ? (exact - mc.value) / mc.std_error : 0.0;
    ht.rows.push_back({static_cast<double>(dim), t, sigma, alpha, exact,
                       mc.value, mc.std_error, z});
  }
  result.tables.push_back(std::move(ht));
  result.summary_json = "{}";
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.experiment == "figure1") return run_figure1(cfg);
  if (cfg.experiment == "figure2") return run_figure2(cfg);
  if (cfg.experiment == "df") return run_df_figure(cfg);
  if (cfg.experiment == "denoise") return run_denoise(cfg);
  if (cfg.experiment == "appendixF") return run_appendixF(cfg);
  if (cfg.experiment == "analyze") return run_analyze(cfg);
  throw ParseError("unknown experiment '" + cfg.experiment + "'");
}

// --- Output ---------------------------------------------------------------------

void write_rows_csv(const std::string& path, const std::vector<ResultRow>& rows,
                    const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "scenario,predictor,estimator,alpha,rep,estimate,oracle_risk,"
         "oracle_risk_alpha,draw_checksum,config_hash\n";
  char checksum[20];
  for (const ResultRow& r : rows) {
    if (!std::isfinite(r.estimate) || !std::isfinite(r.oracle_risk) ||
        !std::isfinite(r.oracle_risk_alpha))
      throw Error("non-finite value in result row");
    std::snprintf(checksum, sizeof(checksum), "%016llx",
                  static_cast<unsigned long long>(r.draw_checksum));
    out << r.scenario << ',' << r.predictor << ',' << r.estimator << ','
        << fmt(r.alpha) << ',' << r.rep << ',' << fmt(r.estimate) << ','
        << fmt(r.oracle_risk) << ',' << fmt(r.oracle_risk_alpha) << ','
        << checksum << ',' << config_hash << '\n';
  }
}

void write_table_csv(const std::string& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  for (std::size_t c = 0; c < table.columns.size(); ++c)
    out << (c ? "," : "") << table.columns[c];
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c)
      out << (c ? "," : "") << fmt(row[c]);
    out << '\n';
  }
}

void write_sidecar(const std::string& path, const ExperimentConfig& cfg,
                   const std::string& summary_json) {
  json doc;
  doc["config"] = json::object();
  for (const auto& [key, value] : cfg.raw.entries()) doc["config"][key] = value;
  doc["config_hash"] = cfg.hash();
  doc["summary"] = summary_json.empty() ? json::object()
                                        : json::parse(summary_json);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << doc.dump(2) << '\n';
}

std::vector<std::string> write_experiment(const std::string& out_dir,
                                          const ExperimentConfig& cfg,
                                          const ExperimentResult& result) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  if (!result.rows.empty()) {
    std::string path = out_dir + "/" + result.name + ".csv";
    write_rows_csv(path, result.rows, cfg.hash());
    written.push_back(path);
  }
  for (const Table& t : result.tables) {
    std::string path = out_dir + "/" + result.name + "_" + t.name + ".csv";
    write_table_csv(path, t);
    written.push_back(path);
  }
  std::string sidecar = out_dir + "/" + result.name + "_config.json";
  write_sidecar(sidecar, cfg, result.summary_json);
  written.push_back(sidecar);
  return written;
}

}  // namespace cbrisk
