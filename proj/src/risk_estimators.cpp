#include "cbrisk/risk_estimators.hpp"

#include <cmath>

#include "cbrisk/errors.hpp"
#include "cbrisk/parallel.hpp"

namespace cbrisk {

std::string to_string(EstimatorId id) {
  switch (id) {
    case EstimatorId::CB: return "CB";
    case EstimatorId::BY: return "BY";
    case EstimatorId::Efron: return "Efron";
    case EstimatorId::SURE: return "SURE";
    case EstimatorId::CB_structured: return "CB_structured";
  }
  return "?";
}

std::string to_string(CbVariant v) {
  switch (v) {
    case CbVariant::cb_default: return "cb_default";
    case CbVariant::cb_raw_pair: return "cb_raw_pair";
    case CbVariant::cb_exact_mean: return "cb_exact_mean";
  }
  return "?";
}

std::string to_string(ByVariant v) {
  switch (v) {
    case ByVariant::by_covariance: return "by_covariance";
    case ByVariant::by_breiman_increment: return "by_breiman_increment";
    case ByVariant::by_ye_per_coordinate: return "by_ye_per_coordinate";
  }
  return "?";
}

CbVariant parse_cb_variant(const std::string& s) {
  if (s == "cb_default" || s == "default") return CbVariant::cb_default;
  if (s == "cb_raw_pair" || s == "raw_pair") return CbVariant::cb_raw_pair;
  if (s == "cb_exact_mean" || s == "exact_mean") return CbVariant::cb_exact_mean;
  throw ParseError("unknown CB variant '" + s + "'");
}

namespace {

// g applied to every bootstrap row; rows of the result match draws.
Eigen::MatrixXd fit_rows(const Eigen::MatrixXd& rows, const Predictor& g,
                         const DesignContext* ctx) {
  Eigen::MatrixXd out(rows.rows(), rows.cols());
  for (Eigen::Index b = 0; b < rows.rows(); ++b)
    out.row(b) = g.predict(rows.row(b).transpose(), ctx).transpose();
  return out;
}

}  // namespace

RiskEstimate cb_risk(const CoupledDrawSet& draws, const Predictor& g,
                     double sigma2, CbVariant variant,
                     const DesignContext* ctx) {
  const int B = draws.B;
  const double n = static_cast<double>(draws.n());
  const double alpha = draws.alpha;
  Eigen::VectorXd per_draw(B);
  for (int b = 0; b < B; ++b) {
    Eigen::VectorXd fit = g.predict(draws.ystar.row(b).transpose(), ctx);
    if (fit.size() != draws.n())
      throw DimensionError("cb_risk: predictor output length mismatch");
    double test_err = (draws.ydagger.row(b).transpose() - fit).squaredNorm();
    switch (variant) {
      case CbVariant::cb_default:
        per_draw[b] =
            test_err - draws.omega.row(b).squaredNorm() / alpha - n * sigma2;
        break;
      case CbVariant::cb_raw_pair:
        per_draw[b] = test_err + draws.ystar.row(b).squaredNorm() -
                      draws.ydagger.row(b).squaredNorm() -
                      n * (1.0 + alpha) * sigma2;
        break;
      case CbVariant::cb_exact_mean:
        per_draw[b] = test_err + n * sigma2 * (alpha - 1.0 / alpha) -
                      n * (1.0 + alpha) * sigma2;
        break;
    }
  }
  RiskEstimate est;
  est.estimator = EstimatorId::CB;
  est.value = per_draw.mean();
  est.per_draw = std::move(per_draw);
  est.alpha = alpha;
  est.B = B;
  est.variant = to_string(variant);
  return est;
}

namespace {

struct BootstrapCov {
  Eigen::VectorXd cov;        // per-coordinate covariance estimate
  Eigen::VectorXd boot_var;   // per-coordinate (s_i^*)^2
};

// Cov_i^* = 1/(B-1) sum_b (center_b,i) g_i(Y^{*b}); centering is either the
// bootstrap mean (Efron/Ye) or y itself (Breiman increments).
BootstrapCov bootstrap_covariances(const CoupledDrawSet& draws,
                                   const Eigen::MatrixXd& fits,
                                   bool center_at_y) {
  const int B = draws.B;
  if (B < 2) throw Error("bootstrap covariance needs B >= 2");
  const Eigen::Index n = draws.y.size();
  Eigen::RowVectorXd boot_mean = draws.ystar.colwise().mean();
  BootstrapCov out;
  out.cov = Eigen::VectorXd::Zero(n);
  out.boot_var = Eigen::VectorXd::Zero(n);
  for (int b = 0; b < B; ++b) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double centered = draws.ystar(b, i) -
                        (center_at_y ? draws.y[i] : boot_mean[i]);
      out.cov[i] += centered * fits(b, i);
      double dev = draws.ystar(b, i) - boot_mean[i];
      out.boot_var[i] += dev * dev;
    }
  }
  out.cov /= static_cast<double>(B - 1);
  out.boot_var /= static_cast<double>(B - 1);
  return out;
}

}  // namespace

RiskEstimate by_risk(const Eigen::VectorXd& y, const Predictor& g, double sigma2,
                     double alpha, const CoupledDrawSet& draws,
                     ByVariant variant, const DesignContext* ctx) {
  if (draws.B < 2) throw Error("by_risk: B must be at least 2");
  if (y.size() != draws.y.size()) throw DimensionError("by_risk: y mismatch");
  const double n = static_cast<double>(y.size());
  Eigen::MatrixXd fits = fit_rows(draws.ystar, g, ctx);
  BootstrapCov bc = bootstrap_covariances(
      draws, fits, variant == ByVariant::by_breiman_increment);
  double train = (y - g.predict(y, ctx)).squaredNorm();
  double cov_term;
  if (variant == ByVariant::by_ye_per_coordinate) {
    double scaled = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i)
      scaled += bc.cov[i] / bc.boot_var[i];
    cov_term = 2.0 * sigma2 * scaled;
  } else {
    cov_term = (2.0 / alpha) * bc.cov.sum();
  }
  RiskEstimate est;
  est.estimator = EstimatorId::BY;
  est.value = train + cov_term - n * sigma2;
  est.alpha = alpha;
  est.B = draws.B;
  est.variant = to_string(variant);
  return est;
}

RiskEstimate efron_risk(const Eigen::VectorXd& y, const Predictor& g,
                        double sigma2, const CoupledDrawSet& draws,
                        const DesignContext* ctx) {
  if (draws.B < 2) throw Error("efron_risk: B must be at least 2");
  if (y.size() != draws.y.size()) throw DimensionError("efron_risk: y mismatch");
  const double n = static_cast<double>(y.size());
  Eigen::MatrixXd fits = fit_rows(draws.ystar, g, ctx);
  BootstrapCov bc = bootstrap_covariances(draws, fits, false);
  double train = (y - g.predict(y, ctx)).squaredNorm();
  RiskEstimate est;
  est.estimator = EstimatorId::Efron;
  est.value = train + 2.0 * bc.cov.sum() - n * sigma2;
  est.alpha = draws.alpha;
  est.B = draws.B;
  est.variant = "efron";
  return est;
}

RiskEstimate sure(const Eigen::VectorXd& y, const Predictor& g, double sigma2,
                  const DesignContext* ctx) {
  if (!g.has_analytic_divergence())
    throw Error("sure: " + g.id() + " has no analytic divergence");
  const double n = static_cast<double>(y.size());
  double train = (y - g.predict(y, ctx)).squaredNorm();
  RiskEstimate est;
  est.estimator = EstimatorId::SURE;
  est.value = train + 2.0 * sigma2 * g.divergence(y, ctx) - n * sigma2;
  est.alpha = 0.0;
  est.B = 0;
  est.variant = "sure";
  return est;
}

DfEstimate cb_df(const CoupledDrawSet& draws, const Predictor& g, double sigma2,
                 const DesignContext* ctx) {
  const double n = static_cast<double>(draws.n());
  const double alpha = draws.alpha;
  RiskEstimate cb = cb_risk(draws, g, sigma2, CbVariant::cb_default, ctx);
  double train = 0.0;
  for (int b = 0; b < draws.B; ++b) {
    Eigen::VectorXd fit = g.predict(draws.ystar.row(b).transpose(), ctx);
    train += (draws.ystar.row(b).transpose() - fit).squaredNorm();
  }
  train /= static_cast<double>(draws.B);
  DfEstimate est;
  est.method = DfMethod::cb_df;
  est.alpha = alpha;
  est.value = (cb.value - train + n * sigma2 * (1.0 + alpha)) /
              (2.0 * sigma2 * (1.0 + alpha));
  return est;
}

DfEstimate ye_df(const Eigen::VectorXd& y, const Predictor& g, double sigma2,
                 double alpha, const CoupledDrawSet& draws,
                 bool per_coordinate_variance, const DesignContext* ctx) {
  if (draws.B < 2) throw Error("ye_df: B must be at least 2");
  Eigen::MatrixXd fits = fit_rows(draws.ystar, g, ctx);
  BootstrapCov bc = bootstrap_covariances(draws, fits, false);
  DfEstimate est;
  est.method = DfMethod::ye_df;
  est.alpha = alpha;
  if (per_coordinate_variance) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) s += bc.cov[i] / bc.boot_var[i];
    est.value = s;
  } else {
    est.value = bc.cov.sum() / (sigma2 * alpha);
  }
  return est;
}

DfEstimate sure_df(const Eigen::VectorXd& y, const Predictor& g,
                   const DesignContext* ctx) {
  DfEstimate est;
  est.method = DfMethod::sure_divergence;
  est.alpha = 0.0;
  est.value = g.divergence(y, ctx);
  return est;
}

RiskEstimate structured_cb_risk(const CoupledDrawSet& draws,
                                const Eigen::MatrixXd& Sigma,
                                const Eigen::MatrixXd& A, const Predictor& g,
                                const DesignContext* ctx) {
  const int B = draws.B;
  const double alpha = draws.alpha;
  if (A.rows() != draws.y.size() || Sigma.rows() != draws.y.size())
    throw DimensionError("structured_cb_risk: matrix size mismatch");
  Eigen::MatrixXd La = cholesky_lower_spd(A);
  auto quad_norm = [&](const Eigen::VectorXd& x) {
    // ||x||_A^2 = x^T A^{-1} x = ||L^{-1} x||^2
    return La.triangularView<Eigen::Lower>().solve(x).squaredNorm();
  };
  Eigen::LLT<Eigen::MatrixXd> llt_a(A);
  double trace_term = llt_a.solve(Sigma).trace();
  Eigen::VectorXd per_draw(B);
  for (int b = 0; b < B; ++b) {
    Eigen::VectorXd fit = g.predict(draws.ystar.row(b).transpose(), ctx);
    per_draw[b] = quad_norm(draws.ydagger.row(b).transpose() - fit) -
                  quad_norm(draws.omega.row(b).transpose()) / alpha -
                  trace_term;
  }
  RiskEstimate est;
  est.estimator = EstimatorId::CB_structured;
  est.value = per_draw.mean();
  est.per_draw = std::move(per_draw);
  est.alpha = alpha;
  est.B = B;
  est.variant = "cb_structured";
  return est;
}

RiskEstimate structured_cb_risk(const Eigen::VectorXd& y,
                                const Eigen::MatrixXd& Sigma,
                                const Eigen::MatrixXd& A, double alpha, int B,
                                const Predictor& g, RngSeed rng,
                                const DesignContext* ctx) {
  CoupledDrawSet draws = make_structured_coupled_draws(y, Sigma, alpha, B, rng);
  return structured_cb_risk(draws, Sigma, A, g, ctx);
}

double bregman_divergence(const BregmanFunction& phi, const Eigen::VectorXd& a,
                          const Eigen::VectorXd& b) {
  return phi.phi(a) - phi.phi(b) - phi.grad(b).dot(a - b);
}

BregmanCheckReport bregman_three_point_check(const BregmanFunction& phi,
                                             const TripleSampler& sampler,
                                             const Predictor& g, std::int64_t M,
                                             RngSeed rng,
                                             const DesignContext* ctx) {
  std::vector<double> special(static_cast<std::size_t>(M));
  std::vector<double> general(static_cast<std::size_t>(M));
  auto one_rep = [&](std::int64_t m) {
    Rng gen(rng.substream(0x6272u /* triples */, static_cast<std::uint64_t>(m)));
    Eigen::VectorXd u, v, w;
    sampler(m, gen, u, v, w);
    Eigen::VectorXd fit = g.predict(u, ctx);
    double dv = bregman_divergence(phi, v, fit);
    double dw = bregman_divergence(phi, w, fit);
    double pu = phi.phi(u), pv = phi.phi(v), pw = phi.phi(w);
    if (!std::isfinite(dv) || !std::isfinite(dw) || !std::isfinite(pu) ||
        !std::isfinite(pv) || !std::isfinite(pw))
      throw Error("bregman_three_point_check: non-finite phi value");
    special[static_cast<std::size_t>(m)] = dv - dw - pu + pw;
    general[static_cast<std::size_t>(m)] =
        dv - dw - pv + pw - phi.grad(fit).dot(w - v);
    return 0.0;
  };
  par::sum_indexed(M, one_rep, 256);
  BregmanCheckReport rep;
  auto s = par::summarize(special);
  auto ge = par::summarize(general);
  rep.special_residual = s.mean;
  rep.special_se = s.se;
  rep.general_residual = ge.mean;
  rep.general_se = ge.se;
  rep.replications = M;
  return rep;
}

}  // namespace cbrisk
