#include "cbrisk/gaussian_model.hpp"

#include <cmath>
#include <cstring>

#include "cbrisk/errors.hpp"
#include "cbrisk/parallel.hpp"

namespace cbrisk {

namespace {

// Substream tags, one per sampling role.
constexpr std::uint64_t kTagData = 0x7d61746 /* "data" */;
constexpr std::uint64_t kTagOmega = 0x6f6d656761 /* "omega" */;

void fill_standard_normal(Eigen::Ref<Eigen::VectorXd> out, Rng& rng) {
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = rng.normal();
}

}  // namespace

void NormalModel::validate() const {
  if (!(sigma2 > 0.0)) throw Error("NormalModel: sigma2 must be positive");
  if (theta.size() == 0) throw Error("NormalModel: empty theta");
}

Eigen::MatrixXd cholesky_lower_spd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols())
    throw DimensionError("covariance matrix must be square");
  double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10)
    throw SolverError("covariance matrix not symmetric (max asymmetry " +
                      std::to_string(asym) + ")");
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw SolverError("Cholesky factorization failed: matrix not positive definite");
  Eigen::MatrixXd lower = llt.matrixL();
  double max_diag = m.diagonal().maxCoeff();
  double min_pivot = lower.diagonal().minCoeff();
  // Pivots are L_ii^2; reject near-singular input instead of jittering it.
  if (min_pivot * min_pivot < 1e-12 * max_diag)
    throw SolverError("covariance matrix numerically singular");
  return lower;
}

StructuredNormalModel::StructuredNormalModel(Eigen::VectorXd theta_in,
                                             Eigen::MatrixXd sigma_in)
    : theta(std::move(theta_in)), Sigma(std::move(sigma_in)) {
  if (Sigma.rows() != theta.size())
    throw DimensionError("StructuredNormalModel: Sigma size must match theta");
  chol_lower = cholesky_lower_spd(Sigma);
}

std::uint64_t CoupledDrawSet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const double* p, std::size_t count) {
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < count * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  mix(y.data(), static_cast<std::size_t>(y.size()));
  mix(&alpha, 1);
  mix(omega.data(), static_cast<std::size_t>(omega.size()));
  return h;
}

Eigen::VectorXd sample_data(const NormalModel& model, RngSeed rng) {
  model.validate();
  Eigen::VectorXd y(model.n());
  Rng gen(rng.substream(kTagData));
  double sd = std::sqrt(model.sigma2);
  for (int i = 0; i < model.n(); ++i) y[i] = model.theta[i] + sd * gen.normal();
  return y;
}

Eigen::VectorXd sample_elevated(const NormalModel& model, double alpha,
                                RngSeed rng) {
  model.validate();
  if (alpha < 0.0) throw Error("sample_elevated: alpha must be nonnegative");
  Eigen::VectorXd y(model.n());
  Rng gen(rng.substream(kTagData));
  double sd = std::sqrt((1.0 + alpha) * model.sigma2);
  for (int i = 0; i < model.n(); ++i) y[i] = model.theta[i] + sd * gen.normal();
  return y;
}

Eigen::VectorXd sample_structured(const StructuredNormalModel& model,
                                  RngSeed rng) {
  Eigen::VectorXd z(model.n());
  Rng gen(rng.substream(kTagData));
  fill_standard_normal(z, gen);
  return model.theta + model.chol_lower * z;
}

namespace {

CoupledDrawSet couple(const Eigen::VectorXd& y, double alpha, int B,
                      Eigen::MatrixXd omega) {
  CoupledDrawSet d;
  d.y = y;
  d.alpha = alpha;
  d.B = B;
  d.omega = std::move(omega);
  double root = std::sqrt(alpha);
  d.ystar.resize(B, y.size());
  d.ydagger.resize(B, y.size());
  for (int b = 0; b < B; ++b) {
    d.ystar.row(b) = y.transpose() + root * d.omega.row(b);
    d.ydagger.row(b) = y.transpose() - d.omega.row(b) / root;
  }
  return d;
}

}  // namespace

CoupledDrawSet make_coupled_draws(const Eigen::VectorXd& y, double sigma2,
                                  double alpha, int B, RngSeed rng) {
  if (!(sigma2 > 0.0)) throw Error("make_coupled_draws: sigma2 must be positive");
  if (!(alpha > 0.0))
    throw Error("make_coupled_draws: alpha must be strictly positive");
  if (B < 1) throw Error("make_coupled_draws: B must be at least 1");
  Eigen::Index n = y.size();
  Eigen::MatrixXd omega(B, n);
  double sd = std::sqrt(sigma2);
  // Each draw owns a substream so the set replays identically under any
  // parallel schedule.
  for (int b = 0; b < B; ++b) {
    Rng gen(rng.substream(kTagOmega, static_cast<std::uint64_t>(b)));
    for (Eigen::Index i = 0; i < n; ++i) omega(b, i) = sd * gen.normal();
  }
  return couple(y, alpha, B, std::move(omega));
}

CoupledDrawSet make_structured_coupled_draws(const Eigen::VectorXd& y,
                                             const Eigen::MatrixXd& Sigma,
                                             double alpha, int B, RngSeed rng) {
  if (!(alpha > 0.0))
    throw Error("make_structured_coupled_draws: alpha must be strictly positive");
  if (B < 1) throw Error("make_structured_coupled_draws: B must be at least 1");
  if (Sigma.rows() != y.size())
    throw DimensionError("make_structured_coupled_draws: Sigma size mismatch");
  Eigen::MatrixXd lower = cholesky_lower_spd(Sigma);
  Eigen::Index n = y.size();
  Eigen::MatrixXd omega(B, n);
  Eigen::VectorXd z(n);
  for (int b = 0; b < B; ++b) {
    Rng gen(rng.substream(kTagOmega, static_cast<std::uint64_t>(b)));
    fill_standard_normal(z, gen);
    omega.row(b) = (lower * z).transpose();
  }
  return couple(y, alpha, B, std::move(omega));
}

}  // namespace cbrisk
