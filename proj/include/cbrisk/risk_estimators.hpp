#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>

#include "cbrisk/gaussian_model.hpp"
#include "cbrisk/predictors.hpp"
#include "cbrisk/rng.hpp"

namespace cbrisk {

enum class EstimatorId { CB, BY, Efron, SURE, CB_structured };

enum class CbVariant { cb_default, cb_raw_pair, cb_exact_mean };
enum class ByVariant { by_covariance, by_breiman_increment, by_ye_per_coordinate };

std::string to_string(EstimatorId id);
std::string to_string(CbVariant v);
std::string to_string(ByVariant v);
CbVariant parse_cb_variant(const std::string& s);

struct RiskEstimate {
  EstimatorId estimator = EstimatorId::CB;
  double value = 0.0;
  std::optional<Eigen::VectorXd> per_draw;  // length B when retained
  double alpha = 0.0;
  int B = 0;
  std::string variant;
};

enum class DfMethod { cb_df, ye_df, sure_divergence };

struct DfEstimate {
  double value = 0.0;
  DfMethod method = DfMethod::cb_df;
  double alpha = 0.0;
};

/// Coupled bootstrap risk estimate, unbiased for the noise-elevated risk at
/// level (1+alpha) sigma2 for every B >= 1 and any g. The three variants share
/// that expectation and differ only in variance:
///   cb_default    per-draw ||ydag - g(ystar)||^2 - ||omega||^2/alpha - n s2
///   cb_raw_pair   per-draw ||ydag - g(ystar)||^2 + ||ystar||^2 - ||ydag||^2
///                 - n(1+alpha) s2
///   cb_exact_mean per-draw ||ydag - g(ystar)||^2 + n s2 (alpha - 1/alpha)
///                 - n(1+alpha) s2
RiskEstimate cb_risk(const CoupledDrawSet& draws, const Predictor& g,
                     double sigma2, CbVariant variant = CbVariant::cb_default,
                     const DesignContext* ctx = nullptr);

/// Breiman-Ye estimate: training error + (2/alpha) * sum of bootstrap
/// covariances - n sigma2. Variants: empirical covariance against the
/// bootstrap mean, raw noise increments against y, or per-coordinate variance
/// normalization (2 sigma2 * sum cov_i / s_i^2).
RiskEstimate by_risk(const Eigen::VectorXd& y, const Predictor& g, double sigma2,
                     double alpha, const CoupledDrawSet& draws,
                     ByVariant variant = ByVariant::by_covariance,
                     const DesignContext* ctx = nullptr);

/// Efron's estimate: same covariance term without the 1/alpha inflation.
RiskEstimate efron_risk(const Eigen::VectorXd& y, const Predictor& g,
                        double sigma2, const CoupledDrawSet& draws,
                        const DesignContext* ctx = nullptr);

/// ||y - g(y)||^2 + 2 sigma2 * div g(y) - n sigma2. Requires an analytic
/// divergence.
RiskEstimate sure(const Eigen::VectorXd& y, const Predictor& g, double sigma2,
                  const DesignContext* ctx = nullptr);

/// Unbiased for the degrees of freedom at noise level (1+alpha) sigma2.
DfEstimate cb_df(const CoupledDrawSet& draws, const Predictor& g, double sigma2,
                 const DesignContext* ctx = nullptr);

/// Ye's direct proposal: sum of bootstrap covariances / (sigma2 alpha), or the
/// per-coordinate-variance form when requested.
DfEstimate ye_df(const Eigen::VectorXd& y, const Predictor& g, double sigma2,
                 double alpha, const CoupledDrawSet& draws,
                 bool per_coordinate_variance = false,
                 const DesignContext* ctx = nullptr);

/// Divergence evaluated at y, the df estimate SURE carries.
DfEstimate sure_df(const Eigen::VectorXd& y, const Predictor& g,
                   const DesignContext* ctx = nullptr);

/// Coupled bootstrap under correlated errors Y ~ N(theta, Sigma), loss
/// ||x||_A^2 = x^T A^{-1} x. Unbiased for E||theta - g(Y_alpha)||_A^2 with
/// Y_alpha ~ N(theta, (1+alpha) Sigma). A^{-1} is applied via Cholesky solves.
RiskEstimate structured_cb_risk(const CoupledDrawSet& draws,
                                const Eigen::MatrixXd& Sigma,
                                const Eigen::MatrixXd& A, const Predictor& g,
                                const DesignContext* ctx = nullptr);

/// Convenience overload that samples its own structured draws.
RiskEstimate structured_cb_risk(const Eigen::VectorXd& y,
                                const Eigen::MatrixXd& Sigma,
                                const Eigen::MatrixXd& A, double alpha, int B,
                                const Predictor& g, RngSeed rng,
                                const DesignContext* ctx = nullptr);

/// Convex function with gradient, for the Bregman three-point checks.
struct BregmanFunction {
  std::function<double(const Eigen::VectorXd&)> phi;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
};

/// Draws one independent triple (U, V, W) per replication.
using TripleSampler = std::function<void(std::int64_t rep, Rng& rng,
                                         Eigen::VectorXd& u, Eigen::VectorXd& v,
                                         Eigen::VectorXd& w)>;

struct BregmanCheckReport {
  // Special identity (needs E[V] = E[W], U, V i.i.d.):
  //   E[D(V, g(U))] = E[D(W, g(U))] + E[phi(U)] - E[phi(W)]
  double special_residual = 0.0;
  double special_se = 0.0;
  // General identity for independent U, V, W:
  //   E[D(V,g(U))] - E[D(W,g(U))] = E[phi(V)] - E[phi(W)]
  //                                 + <E[grad phi(g(U))], E[W] - E[V]>
  double general_residual = 0.0;
  double general_se = 0.0;
  std::int64_t replications = 0;
};

BregmanCheckReport bregman_three_point_check(const BregmanFunction& phi,
                                             const TripleSampler& sampler,
                                             const Predictor& g, std::int64_t M,
                                             RngSeed rng,
                                             const DesignContext* ctx = nullptr);

double bregman_divergence(const BregmanFunction& phi, const Eigen::VectorXd& a,
                          const Eigen::VectorXd& b);

}  // namespace cbrisk
