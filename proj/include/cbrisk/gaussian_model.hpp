#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "cbrisk/rng.hpp"

namespace cbrisk {

/// Ground truth for simulations: Y ~ N(theta, sigma2 * I).
struct NormalModel {
  Eigen::VectorXd theta;
  double sigma2 = 1.0;

  int n() const { return static_cast<int>(theta.size()); }
  void validate() const;
};

/// Correlated-error variant: Y ~ N(theta, Sigma) with Sigma positive definite.
/// The lower Cholesky factor is computed (and Sigma vetted) on construction.
struct StructuredNormalModel {
  Eigen::VectorXd theta;
  Eigen::MatrixXd Sigma;
  Eigen::MatrixXd chol_lower;

  StructuredNormalModel(Eigen::VectorXd theta_in, Eigen::MatrixXd sigma_in);
  int n() const { return static_cast<int>(theta.size()); }
};

/// Checks symmetry (1e-10 abs) and factorizes. Near-singular matrices
/// (smallest pivot < 1e-12 times the largest diagonal) are rejected rather
/// than regularized.
Eigen::MatrixXd cholesky_lower_spd(const Eigen::MatrixXd& m);

/// One batch of coupled draws from a single data vector: row b holds
/// (omega^b, ystar^b = y + sqrt(alpha) omega^b, ydagger^b = y - omega^b /
/// sqrt(alpha)). Immutable after construction; safe to share across threads.
struct CoupledDrawSet {
  Eigen::VectorXd y;
  double alpha = 0.0;
  int B = 0;
  Eigen::MatrixXd omega;    // B x n
  Eigen::MatrixXd ystar;    // B x n
  Eigen::MatrixXd ydagger;  // B x n

  int n() const { return static_cast<int>(y.size()); }
  /// FNV-1a over the omega bytes; used to verify shared-draw pairing in
  /// experiment output.
  std::uint64_t checksum() const;
};

/// y_i ~ N(theta_i, sigma2), independent components.
Eigen::VectorXd sample_data(const NormalModel& model, RngSeed rng);

/// Y_alpha ~ N(theta, (1+alpha) sigma2 I). alpha = 0 recovers sample_data.
Eigen::VectorXd sample_elevated(const NormalModel& model, double alpha,
                                RngSeed rng);

/// Y ~ N(theta, Sigma) via the Cholesky factor.
Eigen::VectorXd sample_structured(const StructuredNormalModel& model,
                                  RngSeed rng);

/// omega rows i.i.d. N(0, sigma2 I). Requires alpha > 0 (the noiseless limit
/// is handled analytically elsewhere, never by alpha = 0 draws).
CoupledDrawSet make_coupled_draws(const Eigen::VectorXd& y, double sigma2,
                                  double alpha, int B, RngSeed rng);

/// omega rows i.i.d. N(0, Sigma) via the lower Cholesky factor.
CoupledDrawSet make_structured_coupled_draws(const Eigen::VectorXd& y,
                                             const Eigen::MatrixXd& Sigma,
                                             double alpha, int B, RngSeed rng);

}  // namespace cbrisk
