#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "cbrisk/gaussian_model.hpp"
#include "cbrisk/predictors.hpp"
#include "cbrisk/risk_estimators.hpp"
#include "cbrisk/rng.hpp"

namespace cbrisk {

double normal_pdf(double z);
double normal_cdf(double z);

struct OracleEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::int64_t replications = 0;
};

/// Monte Carlo estimate of E||theta - g(Y_alpha)||^2 with Y_alpha ~ N(theta,
/// (1+alpha) sigma2 I). alpha = 0 gives the plain risk.
OracleEstimate mc_risk(const NormalModel& model, const Predictor& g,
                       double alpha, std::int64_t R, RngSeed rng,
                       const DesignContext* ctx = nullptr);

/// Monte Carlo degrees of freedom at level (1+alpha) sigma2, via
/// sum_i E[(Y_i - theta_i) g_i(Y)] / ((1+alpha) sigma2) (theta known).
OracleEstimate mc_df(const NormalModel& model, const Predictor& g, double alpha,
                     std::int64_t R, RngSeed rng,
                     const DesignContext* ctx = nullptr);

/// Monte Carlo risk under correlated errors and a generalized quadratic norm:
/// E||theta - g(Y_alpha)||_A^2 with Y_alpha ~ N(theta, (1+alpha) Sigma).
OracleEstimate mc_structured_risk(const StructuredNormalModel& model,
                                  const Eigen::MatrixXd& A, const Predictor& g,
                                  double alpha, std::int64_t R, RngSeed rng,
                                  const DesignContext* ctx = nullptr);

/// Law-of-total-covariance split of the noise-elevated covariance sum:
/// a_alpha = sum_i E[Cov(Y*_i, g_i(Y*) | Y)], b_alpha = sum_i Cov(Y_i,
/// g_i(Y*)), total = the directly estimated sum_i Cov(Y_alpha,i, g_i(Y_alpha)).
struct OptimismDecomposition {
  double a_alpha = 0.0, a_se = 0.0;
  double b_alpha = 0.0, b_se = 0.0;
  double total = 0.0, total_se = 0.0;
  std::int64_t replications = 0;
};

OptimismDecomposition mc_optimism_decomposition(const NormalModel& model,
                                                const Predictor& g, double alpha,
                                                std::int64_t R_outer,
                                                int B_inner, RngSeed rng,
                                                const DesignContext* ctx = nullptr);

/// Infinite-bootstrap CB value at a fixed data vector, via the variance-
/// reduced expansion: mean over draws of ||y - g(y + sqrt(a) w)||^2 +
/// (2/sqrt(a)) <w, g(y + sqrt(a) w)> minus n sigma2.
OracleEstimate cb_inf(const Eigen::VectorXd& y, const Predictor& g,
                      double sigma2, double alpha, std::int64_t B_big,
                      RngSeed rng, const DesignContext* ctx = nullptr);

/// Same inner-product term, but the training term is the observed ||y -
/// g(y)||^2 (the infinite-bootstrap BY value).
OracleEstimate by_inf(const Eigen::VectorXd& y, const Predictor& g,
                      double sigma2, double alpha, std::int64_t B_big,
                      RngSeed rng, const DesignContext* ctx = nullptr);

/// Closed form of (2/sqrt(a)) sum_i E[w_i (y_i + sqrt(a) w_i) 1{|y_i +
/// sqrt(a) w_i| > t}] for hard thresholding at level t, in terms of the
/// standard normal pdf and cdf.
double ht_inner_product_exact(const Eigen::VectorXd& y, double t, double sigma,
                              double alpha);

/// Brute-force Monte Carlo of the same defining expectation.
OracleEstimate ht_inner_product_mc(const Eigen::VectorXd& y, double t,
                                   double sigma, double alpha, std::int64_t M,
                                   RngSeed rng);

/// alpha -> 0 limit: 2 sigma^2 #{i : |y_i| > t}. Rejects any |y_i| == t.
double ht_divergence_limit(const Eigen::VectorXd& y, double t, double sigma);

/// Error decomposition of the CB or BY estimate against the original risk:
/// squared bias, reducible variance (finite-B part), irreducible variance and
/// its three components (training term, inner-product term, twice their
/// covariance). Inner-draw noise in the conditional means is bias-corrected
/// out of the variance components.
struct BiasVarianceReport {
  double bias = 0.0, bias_se = 0.0, bias_sq = 0.0;
  double rvar = 0.0, rvar_se = 0.0;
  double ivar = 0.0, ivar_se = 0.0;
  double ivar1 = 0.0, ivar1_se = 0.0;
  double ivar2 = 0.0, ivar2_se = 0.0;
  double cov12 = 0.0, cov12_se = 0.0;
  double total_error = 0.0, total_error_se = 0.0;
  double alpha = 0.0;
  int B = 0;
  EstimatorId estimator = EstimatorId::CB;
  std::int64_t replications = 0;
};

BiasVarianceReport bias_variance_report(const NormalModel& model,
                                        const Predictor& g, double alpha, int B,
                                        std::int64_t R_outer, int B_inner,
                                        EstimatorId estimator, RngSeed rng,
                                        const DesignContext* ctx = nullptr);

/// Measured bias of the noise-elevated target together with its two upper
/// bounds: bound_bd1 uses the loss variance at level alpha, bound_bd2_leading
/// the variance at level zero, relative_bound the dimension-only slope.
struct BiasBounds {
  double true_bias = 0.0, true_bias_se = 0.0;
  double bound_bd1 = 0.0;
  double bound_bd2_leading = 0.0;
  double relative_bound = 0.0;
  double loss_var_alpha = 0.0;  // Var(||theta - g(Y_alpha)||^2)
  double loss_var_zero = 0.0;
  std::int64_t replications = 0;
};

BiasBounds bias_bounds(const NormalModel& model, const Predictor& g,
                       double alpha, std::int64_t R, RngSeed rng,
                       const DesignContext* ctx = nullptr);

/// Leading terms of the reducible variance: 4 sigma2 E||Y - g(Y)||^2 / (B a)
/// for CB, 4 sigma2 E||g(Y)||^2 / (B a) for BY, and the shared-draw difference
/// term 4 sigma2 E||g(Y) - g2(Y)||^2 / (B a) when a second rule is given.
struct RvarLeadingTerms {
  double cb_term = 0.0, cb_se = 0.0;
  double by_term = 0.0, by_se = 0.0;
  double diff_term = 0.0, diff_se = 0.0;
  bool has_diff = false;
};

RvarLeadingTerms rvar_leading_terms(const NormalModel& model, const Predictor& g,
                                    double alpha, int B, std::int64_t R,
                                    RngSeed rng,
                                    const DesignContext* ctx = nullptr,
                                    const Predictor* g2 = nullptr);

/// Direct Monte Carlo of the reducible variance of the B-draw CB estimate:
/// mean over datasets of (per-draw sample variance) / B.
OracleEstimate measured_rvar(const NormalModel& model, const Predictor& g,
                             double alpha, int B, std::int64_t R_outer,
                             RngSeed rng, const DesignContext* ctx = nullptr);

/// Two Monte Carlo routes to the same quantity: the covariance form
/// sum_i Cov(Y_i, g_i(Y)) / sigma2 and the expected divergence. For weakly
/// differentiable g the residual is zero in expectation; for hard
/// thresholding it is not.
struct SteinCheckReport {
  double cov_side = 0.0, cov_se = 0.0;
  double div_side = 0.0, div_se = 0.0;
  double residual = 0.0, residual_se = 0.0;
  std::int64_t replications = 0;
};

SteinCheckReport stein_formula_check(const NormalModel& model, const Predictor& g,
                                     std::int64_t R, RngSeed rng,
                                     const DesignContext* ctx = nullptr);

/// mc_risk at each grid point (grid must be sorted, nonnegative).
std::vector<OracleEstimate> risk_alpha_curve(const NormalModel& model,
                                             const Predictor& g,
                                             const std::vector<double>& alpha_grid,
                                             std::int64_t R, RngSeed rng,
                                             const DesignContext* ctx = nullptr);

}  // namespace cbrisk
