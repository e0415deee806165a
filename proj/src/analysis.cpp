#include "cbrisk/analysis.hpp"

#include <cmath>

#include "cbrisk/errors.hpp"
#include "cbrisk/parallel.hpp"

namespace cbrisk {

namespace {

constexpr std::uint64_t kTagRep = 0x726570;     // replication index
constexpr std::uint64_t kTagDraws = 0x647277;   // inner coupled draws
constexpr std::uint64_t kTagDirect = 0x646972;  // independent direct stream

// Standard-error of a sample variance via fourth central moments.
double variance_se(const std::vector<double>& v, double mean, double var) {
  std::int64_t n = static_cast<std::int64_t>(v.size());
  if (n < 2) return 0.0;
  std::vector<double> d4(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double d = v[i] - mean;
    d4[i] = d * d * d * d;
  }
  double m4 = par::pairwise_sum(d4) / static_cast<double>(n);
  double s = m4 - var * var;
  if (s < 0.0) s = 0.0;
  return std::sqrt(s / static_cast<double>(n));
}

struct CovWithSe {
  double cov = 0.0;
  double se = 0.0;
};

CovWithSe covariance_with_se(const std::vector<double>& a,
                             const std::vector<double>& b) {
  std::int64_t n = static_cast<std::int64_t>(a.size());
  CovWithSe out;
  if (n < 2) return out;
  double ma = par::pairwise_sum(a) / static_cast<double>(n);
  double mb = par::pairwise_sum(b) / static_cast<double>(n);
  std::vector<double> prod(a.size()), prod2(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    double p = (a[i] - ma) * (b[i] - mb);
    prod[i] = p;
    prod2[i] = p * p;
  }
  out.cov = par::pairwise_sum(prod) / static_cast<double>(n - 1);
  double m22 = par::pairwise_sum(prod2) / static_cast<double>(n);
  double s = m22 - out.cov * out.cov;
  if (s < 0.0) s = 0.0;
  out.se = std::sqrt(s / static_cast<double>(n));
  return out;
}

OracleEstimate to_oracle(const par::MeanVar& mv) {
  return OracleEstimate{mv.mean, mv.se, mv.n};
}

}  // namespace

double normal_pdf(double z) {
  return 0.3989422804014326779399461 * std::exp(-0.5 * z * z);
}

double normal_cdf(double z) {
  // Tail arguments beyond |z| = 37 underflow; clamp explicitly.
  if (z < -37.0) return 0.0;
  if (z > 37.0) return 1.0;
  return 0.5 * std::erfc(-z * 0.7071067811865475244008444);
}

OracleEstimate mc_risk(const NormalModel& model, const Predictor& g,
                       double alpha, std::int64_t R, RngSeed rng,
                       const DesignContext* ctx) {
  if (R < 2) throw Error("mc_risk: R must be at least 2");
  model.validate();
  std::vector<double> loss(static_cast<std::size_t>(R));
  par::fill_indexed(R, loss.data(), [&](std::int64_t r) {
    Eigen::VectorXd y = sample_elevated(
        model, alpha, rng.substream(kTagRep, static_cast<std::uint64_t>(r)));
    return (model.theta - g.predict(y, ctx)).squaredNorm();
  });
  return to_oracle(par::summarize(loss));
}

OracleEstimate mc_df(const NormalModel& model, const Predictor& g, double alpha,
                     std::int64_t R, RngSeed rng, const DesignContext* ctx) {
  if (R < 2) throw Error("mc_df: R must be at least 2");
  model.validate();
  double var_alpha = (1.0 + alpha) * model.sigma2;
  std::vector<double> psi(static_cast<std::size_t>(R));
  par::fill_indexed(R, psi.data(), [&](std::int64_t r) {
    Eigen::VectorXd y = sample_elevated(
        model, alpha, rng.substream(kTagRep, static_cast<std::uint64_t>(r)));
    Eigen::VectorXd fit = g.predict(y, ctx);
    return (y - model.theta).dot(fit) / var_alpha;
  });
  return to_oracle(par::summarize(psi));
}

OracleEstimate mc_structured_risk(const StructuredNormalModel& model,
                                  const Eigen::MatrixXd& A, const Predictor& g,
                                  double alpha, std::int64_t R, RngSeed rng,
                                  const DesignContext* ctx) {
  if (R < 2) throw Error("mc_structured_risk: R must be at least 2");
  Eigen::MatrixXd La = cholesky_lower_spd(A);
  double scale = std::sqrt(1.0 + alpha);
  std::vector<double> loss(static_cast<std::size_t>(R));
  par::fill_indexed(R, loss.data(), [&](std::int64_t r) {
    Rng gen(rng.substream(kTagRep, static_cast<std::uint64_t>(r)));
    Eigen::VectorXd z(model.n());
    for (int i = 0; i < model.n(); ++i) z[i] = gen.normal();
    Eigen::VectorXd y = model.theta + scale * (model.chol_lower * z);
    Eigen::VectorXd diff = model.theta - g.predict(y, ctx);
    return La.triangularView<Eigen::Lower>().solve(diff).squaredNorm();
  });
  return to_oracle(par::summarize(loss));
}

OptimismDecomposition mc_optimism_decomposition(const NormalModel& model,
                                                const Predictor& g, double alpha,
                                                std::int64_t R_outer,
                                                int B_inner, RngSeed rng,
                                                const DesignContext* ctx) {
  if (R_outer < 2 || B_inner < 2)
    throw Error("mc_optimism_decomposition: R_outer and B_inner must be >= 2");
  model.validate();
  std::size_t R = static_cast<std::size_t>(R_outer);
  std::vector<double> a_part(R), b_part(R), direct(R);
  par::sum_indexed(R_outer, [&](std::int64_t r) {
    RngSeed rep_seed = rng.substream(kTagRep, static_cast<std::uint64_t>(r));
    Eigen::VectorXd y = sample_data(model, rep_seed);
    CoupledDrawSet draws = make_coupled_draws(y, model.sigma2, alpha, B_inner,
                                              rep_seed.substream(kTagDraws));
    Eigen::VectorXd gbar = Eigen::VectorXd::Zero(model.n());
    Eigen::MatrixXd fits(B_inner, model.n());
    for (int b = 0; b < B_inner; ++b) {
      fits.row(b) = g.predict(draws.ystar.row(b).transpose(), ctx).transpose();
      gbar += fits.row(b).transpose();
    }
    gbar /= static_cast<double>(B_inner);
    Eigen::RowVectorXd boot_mean = draws.ystar.colwise().mean();
    double a = 0.0;
    for (int b = 0; b < B_inner; ++b)
      a += (draws.ystar.row(b) - boot_mean).dot(fits.row(b));
    a /= static_cast<double>(B_inner - 1);
    a_part[static_cast<std::size_t>(r)] = a;
    b_part[static_cast<std::size_t>(r)] = (y - model.theta).dot(gbar);
    // Fresh elevated draw on its own stream for the direct estimate.
    Eigen::VectorXd ya =
        sample_elevated(model, alpha, rep_seed.substream(kTagDirect));
    direct[static_cast<std::size_t>(r)] =
        (ya - model.theta).dot(g.predict(ya, ctx));
    return 0.0;
  }, 16);
  OptimismDecomposition out;
  auto ma = par::summarize(a_part);
  auto mb = par::summarize(b_part);
  auto mt = par::summarize(direct);
  out.a_alpha = ma.mean;
  out.a_se = ma.se;
  out.b_alpha = mb.mean;
  out.b_se = mb.se;
  out.total = mt.mean;
  out.total_se = mt.se;
  out.replications = R_outer;
  return out;
}

namespace {

OracleEstimate inf_estimator(const Eigen::VectorXd& y, const Predictor& g,
                             double sigma2, double alpha, std::int64_t B_big,
                             RngSeed rng, const DesignContext* ctx,
                             bool cb_training_term) {
  if (!(alpha > 0.0)) throw Error("infinite-bootstrap value needs alpha > 0");
  const double n = static_cast<double>(y.size());
  const double root = std::sqrt(alpha);
  const double sd = std::sqrt(sigma2);
  std::vector<double> vals(static_cast<std::size_t>(B_big));
  par::fill_indexed(B_big, vals.data(), [&](std::int64_t m) {
    Rng gen(rng.substream(kTagDraws, static_cast<std::uint64_t>(m)));
    Eigen::VectorXd omega(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) omega[i] = sd * gen.normal();
    Eigen::VectorXd fit = g.predict(y + root * omega, ctx);
    double inner = (2.0 / root) * omega.dot(fit);
    if (cb_training_term) return (y - fit).squaredNorm() + inner;
    return inner;
  });
  auto mv = par::summarize(vals);
  OracleEstimate out;
  out.replications = B_big;
  out.std_error = mv.se;
  if (cb_training_term) {
    out.value = mv.mean - n * sigma2;
  } else {
    double train = (y - g.predict(y, ctx)).squaredNorm();
    out.value = train + mv.mean - n * sigma2;
  }
  return out;
}

}  // namespace

OracleEstimate cb_inf(const Eigen::VectorXd& y, const Predictor& g,
                      double sigma2, double alpha, std::int64_t B_big,
                      RngSeed rng, const DesignContext* ctx) {
  return inf_estimator(y, g, sigma2, alpha, B_big, rng, ctx, true);
}

OracleEstimate by_inf(const Eigen::VectorXd& y, const Predictor& g,
                      double sigma2, double alpha, std::int64_t B_big,
                      RngSeed rng, const DesignContext* ctx) {
  return inf_estimator(y, g, sigma2, alpha, B_big, rng, ctx, false);
}

double ht_inner_product_exact(const Eigen::VectorXd& y, double t, double sigma,
                              double alpha) {
  // t = 0 degenerates to the identity rule and gives exactly 2 n sigma^2.
  if (t < 0.0) throw Error("ht_inner_product_exact: t must be nonnegative");
  if (!(alpha > 0.0)) throw Error("ht_inner_product_exact: alpha must be positive");
  const double root = std::sqrt(alpha);
  const double denom = root * sigma;
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double plus = (t + y[i]) / denom;
    double minus = (t - y[i]) / denom;
    double pdf_part = (2.0 * sigma * t / root) *
                      (normal_pdf(plus) + normal_pdf(minus));
    double cdf_part = 2.0 * sigma * sigma *
                      (normal_cdf((-y[i] - t) / denom) +
                       normal_cdf((y[i] - t) / denom));
    total += pdf_part + cdf_part;
  }
  return total;
}

OracleEstimate ht_inner_product_mc(const Eigen::VectorXd& y, double t,
                                   double sigma, double alpha, std::int64_t M,
                                   RngSeed rng) {
  const double root = std::sqrt(alpha);
  std::vector<double> vals(static_cast<std::size_t>(M));
  par::fill_indexed(M, vals.data(), [&](std::int64_t m) {
    Rng gen(rng.substream(kTagDraws, static_cast<std::uint64_t>(m)));
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      double w = sigma * gen.normal();
      double z = y[i] + root * w;
      if (std::abs(z) > t) s += w * z;
    }
    return (2.0 / root) * s;
  });
  return to_oracle(par::summarize(vals));
}

double ht_divergence_limit(const Eigen::VectorXd& y, double t, double sigma) {
  int count = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (std::abs(y[i]) == t)
      throw Error("ht_divergence_limit: |y_i| == t is on the boundary");
    if (std::abs(y[i]) > t) ++count;
  }
  return 2.0 * sigma * sigma * count;
}

BiasVarianceReport bias_variance_report(const NormalModel& model,
                                        const Predictor& g, double alpha, int B,
                                        std::int64_t R_outer, int B_inner,
                                        EstimatorId estimator, RngSeed rng,
                                        const DesignContext* ctx) {
  if (R_outer < 2 || B_inner < 2)
    throw Error("bias_variance_report: R_outer and B_inner must be >= 2");
  if (B < 1 || B > B_inner)
    throw Error("bias_variance_report: need 1 <= B <= B_inner");
  if (estimator != EstimatorId::CB && estimator != EstimatorId::BY)
    throw Error("bias_variance_report: estimator must be CB or BY");
  model.validate();
  const bool is_cb = estimator == EstimatorId::CB;
  const double n = static_cast<double>(model.n());
  const double sigma2 = model.sigma2;
  const double root = std::sqrt(alpha);

  OracleEstimate risk0 =
      mc_risk(model, g, 0.0, R_outer, rng.substream(0x72697330), ctx);
  OracleEstimate risk_a =
      mc_risk(model, g, alpha, R_outer, rng.substream(0x72697361), ctx);

  std::size_t R = static_cast<std::size_t>(R_outer);
  std::vector<double> m1(R), m2(R), cond_mean(R), rvar_r(R), est_b(R);
  std::vector<double> s1_sq(R), s2_sq(R), s12(R), s_cm(R);

  par::sum_indexed(R_outer, [&](std::int64_t r) {
    RngSeed rep_seed = rng.substream(kTagRep, static_cast<std::uint64_t>(r));
    Eigen::VectorXd y = sample_data(model, rep_seed);
    CoupledDrawSet draws = make_coupled_draws(y, sigma2, alpha, B_inner,
                                              rep_seed.substream(kTagDraws));
    double train_y = is_cb ? 0.0 : (y - g.predict(y, ctx)).squaredNorm();
    Eigen::VectorXd v1(B_inner), v2(B_inner), per_draw(B_inner);
    for (int b = 0; b < B_inner; ++b) {
      Eigen::VectorXd fit = g.predict(draws.ystar.row(b).transpose(), ctx);
      double w1 = is_cb ? (y - fit).squaredNorm() : train_y;
      double w2 = (2.0 / root) * draws.omega.row(b).transpose().dot(fit);
      v1[b] = w1;
      v2[b] = w2;
      if (is_cb) {
        per_draw[b] = (draws.ydagger.row(b).transpose() - fit).squaredNorm() -
                      draws.omega.row(b).squaredNorm() / alpha - n * sigma2;
      } else {
        // Increment-form BY per-draw value; its B-average matches the BY
        // estimate up to the bootstrap-mean centering.
        per_draw[b] = train_y + w2 - n * sigma2;
      }
    }
    std::size_t idx = static_cast<std::size_t>(r);
    double mean1 = v1.mean(), mean2 = v2.mean();
    m1[idx] = mean1;
    m2[idx] = mean2;
    cond_mean[idx] = mean1 + mean2 - n * sigma2;
    double sv1 = (v1.array() - mean1).square().sum() / (B_inner - 1);
    double sv2 = (v2.array() - mean2).square().sum() / (B_inner - 1);
    double sc = ((v1.array() - mean1) * (v2.array() - mean2)).sum() /
                (B_inner - 1);
    s1_sq[idx] = sv1;
    s2_sq[idx] = sv2;
    s12[idx] = sc;
    double mean_pd = per_draw.mean();
    double sv_pd = (per_draw.array() - mean_pd).square().sum() / (B_inner - 1);
    rvar_r[idx] = sv_pd / static_cast<double>(B);
    est_b[idx] = per_draw.head(B).mean();
    // Conditional-mean series: for CB the training term is also estimated
    // from draws, for BY it is exact.
    double sv_cm = is_cb ? ((v1.array() - mean1) + (v2.array() - mean2))
                                   .square()
                                   .sum() /
                               (B_inner - 1)
                         : sv2;
    s_cm[idx] = sv_cm;
    return 0.0;
  }, 16);

  BiasVarianceReport rep;
  rep.alpha = alpha;
  rep.B = B;
  rep.estimator = estimator;
  rep.replications = R_outer;
  rep.bias = risk_a.value - risk0.value;
  rep.bias_se = std::sqrt(risk_a.std_error * risk_a.std_error +
                          risk0.std_error * risk0.std_error);
  rep.bias_sq = rep.bias * rep.bias;

  auto rv = par::summarize(rvar_r);
  rep.rvar = rv.mean;
  rep.rvar_se = rv.se;

  double inner_scale = static_cast<double>(B_inner);
  auto cm = par::summarize(cond_mean);
  double cm_correction = par::summarize(s_cm).mean / inner_scale;
  rep.ivar = cm.var - cm_correction;
  rep.ivar_se = variance_se(cond_mean, cm.mean, cm.var);

  auto mv1 = par::summarize(m1);
  double c1 = is_cb ? par::summarize(s1_sq).mean / inner_scale : 0.0;
  rep.ivar1 = mv1.var - c1;
  rep.ivar1_se = variance_se(m1, mv1.mean, mv1.var);

  auto mv2 = par::summarize(m2);
  rep.ivar2 = mv2.var - par::summarize(s2_sq).mean / inner_scale;
  rep.ivar2_se = variance_se(m2, mv2.mean, mv2.var);

  CovWithSe cov = covariance_with_se(m1, m2);
  double ccorr = is_cb ? par::summarize(s12).mean / inner_scale : 0.0;
  rep.cov12 = 2.0 * (cov.cov - ccorr);
  rep.cov12_se = 2.0 * cov.se;

  std::vector<double> sq_err(R);
  for (std::size_t i = 0; i < R; ++i) {
    double d = est_b[i] - risk0.value;
    sq_err[i] = d * d;
  }
  auto te = par::summarize(sq_err);
  rep.total_error = te.mean;
  rep.total_error_se = te.se;
  return rep;
}

BiasBounds bias_bounds(const NormalModel& model, const Predictor& g,
                       double alpha, std::int64_t R, RngSeed rng,
                       const DesignContext* ctx) {
  if (R < 2) throw Error("bias_bounds: R must be at least 2");
  model.validate();
  std::vector<double> loss_a(static_cast<std::size_t>(R));
  std::vector<double> loss_0(static_cast<std::size_t>(R));
  par::fill_indexed(R, loss_a.data(), [&](std::int64_t r) {
    Eigen::VectorXd y = sample_elevated(
        model, alpha, rng.substream(0x616c66, static_cast<std::uint64_t>(r)));
    return (model.theta - g.predict(y, ctx)).squaredNorm();
  });
  par::fill_indexed(R, loss_0.data(), [&](std::int64_t r) {
    Eigen::VectorXd y = sample_elevated(
        model, 0.0, rng.substream(0x7a6572, static_cast<std::uint64_t>(r)));
    return (model.theta - g.predict(y, ctx)).squaredNorm();
  });
  auto ma = par::summarize(loss_a);
  auto m0 = par::summarize(loss_0);
  BiasBounds out;
  out.replications = R;
  out.true_bias = ma.mean - m0.mean;
  out.true_bias_se = std::sqrt(ma.se * ma.se + m0.se * m0.se);
  double slope = std::sqrt(static_cast<double>(model.n())) * alpha /
                 std::sqrt(2.0);
  out.relative_bound = slope;
  out.loss_var_alpha = ma.var;
  out.loss_var_zero = m0.var;
  out.bound_bd1 = slope * std::sqrt(ma.var);
  out.bound_bd2_leading = slope * std::sqrt(m0.var);
  return out;
}

RvarLeadingTerms rvar_leading_terms(const NormalModel& model, const Predictor& g,
                                    double alpha, int B, std::int64_t R,
                                    RngSeed rng, const DesignContext* ctx,
                                    const Predictor* g2) {
  if (R < 2) throw Error("rvar_leading_terms: R must be at least 2");
  model.validate();
  double scale = 4.0 * model.sigma2 / (static_cast<double>(B) * alpha);
  std::size_t n_rep = static_cast<std::size_t>(R);
  std::vector<double> train(n_rep), fit_norm(n_rep), diff(n_rep);
  par::sum_indexed(R, [&](std::int64_t r) {
    Eigen::VectorXd y = sample_data(
        model, rng.substream(kTagRep, static_cast<std::uint64_t>(r)));
    Eigen::VectorXd fit = g.predict(y, ctx);
    std::size_t idx = static_cast<std::size_t>(r);
    train[idx] = (y - fit).squaredNorm();
    fit_norm[idx] = fit.squaredNorm();
    diff[idx] = g2 ? (fit - g2->predict(y, ctx)).squaredNorm() : 0.0;
    return 0.0;
  }, 64);
  RvarLeadingTerms out;
  auto mt = par::summarize(train);
  auto mf = par::summarize(fit_norm);
  out.cb_term = scale * mt.mean;
  out.cb_se = scale * mt.se;
  out.by_term = scale * mf.mean;
  out.by_se = scale * mf.se;
  if (g2) {
    auto md = par::summarize(diff);
    out.diff_term = scale * md.mean;
    out.diff_se = scale * md.se;
    out.has_diff = true;
  }
  return out;
}

OracleEstimate measured_rvar(const NormalModel& model, const Predictor& g,
                             double alpha, int B, std::int64_t R_outer,
                             RngSeed rng, const DesignContext* ctx) {
  if (R_outer < 2 || B < 2) throw Error("measured_rvar: need R_outer, B >= 2");
  model.validate();
  std::vector<double> vals(static_cast<std::size_t>(R_outer));
  par::fill_indexed(R_outer, vals.data(), [&](std::int64_t r) {
    RngSeed rep_seed = rng.substream(kTagRep, static_cast<std::uint64_t>(r));
    Eigen::VectorXd y = sample_data(model, rep_seed);
    CoupledDrawSet draws = make_coupled_draws(y, model.sigma2, alpha, B,
                                              rep_seed.substream(kTagDraws));
    RiskEstimate est = cb_risk(draws, g, model.sigma2, CbVariant::cb_default, ctx);
    const Eigen::VectorXd& pd = *est.per_draw;
    double mean = pd.mean();
    double sv = (pd.array() - mean).square().sum() / (B - 1);
    return sv / static_cast<double>(B);
  });
  return to_oracle(par::summarize(vals));
}

SteinCheckReport stein_formula_check(const NormalModel& model, const Predictor& g,
                                     std::int64_t R, RngSeed rng,
                                     const DesignContext* ctx) {
  if (R < 2) throw Error("stein_formula_check: R must be at least 2");
  if (!g.has_analytic_divergence())
    throw Error("stein_formula_check: predictor has no analytic divergence");
  model.validate();
  std::size_t n_rep = static_cast<std::size_t>(R);
  std::vector<double> cov_side(n_rep), div_side(n_rep), resid(n_rep);
  par::sum_indexed(R, [&](std::int64_t r) {
    Eigen::VectorXd y = sample_data(
        model, rng.substream(kTagRep, static_cast<std::uint64_t>(r)));
    Eigen::VectorXd fit = g.predict(y, ctx);
    double cov = (y - model.theta).dot(fit) / model.sigma2;
    double div = g.divergence(y, ctx);
    std::size_t idx = static_cast<std::size_t>(r);
    cov_side[idx] = cov;
    div_side[idx] = div;
    resid[idx] = cov - div;
    return 0.0;
  }, 64);
  SteinCheckReport rep;
  auto mc = par::summarize(cov_side);
  auto md = par::summarize(div_side);
  auto mr = par::summarize(resid);
  rep.cov_side = mc.mean;
  rep.cov_se = mc.se;
  rep.div_side = md.mean;
  rep.div_se = md.se;
  rep.residual = mr.mean;
  rep.residual_se = mr.se;
  rep.replications = R;
  return rep;
}

std::vector<OracleEstimate> risk_alpha_curve(const NormalModel& model,
                                             const Predictor& g,
                                             const std::vector<double>& alpha_grid,
                                             std::int64_t R, RngSeed rng,
                                             const DesignContext* ctx) {
  double prev = -1.0;
  for (double a : alpha_grid) {
    if (a < 0.0) throw Error("risk_alpha_curve: negative alpha in grid");
    if (a < prev) throw Error("risk_alpha_curve: grid must be sorted");
    prev = a;
  }
  std::vector<OracleEstimate> out;
  out.reserve(alpha_grid.size());
  for (std::size_t i = 0; i < alpha_grid.size(); ++i)
    out.push_back(mc_risk(model, g, alpha_grid[i], R,
                          rng.substream(0x637576, i), ctx));
  return out;
}

}  // namespace cbrisk
