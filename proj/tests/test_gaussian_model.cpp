#include <doctest.h>

#include <cmath>

#include "cbrisk/errors.hpp"
#include "cbrisk/gaussian_model.hpp"
#include "cbrisk/parallel.hpp"

using namespace cbrisk;

namespace {

// 4-sigma band half-width for a sample variance over m draws, relative scale.
double chi_sq_band(std::int64_t m) { return 4.0 * std::sqrt(2.0 / (m - 1)); }

double column_mean(const Eigen::VectorXd& v) { return v.mean(); }

double sample_var(const Eigen::VectorXd& v) {
  double m = v.mean();
  return (v.array() - m).square().sum() / (v.size() - 1);
}

}  // namespace

TEST_CASE("sample_data moments at zero mean unit variance") {
  NormalModel model{Eigen::VectorXd::Zero(10000), 1.0};
  Eigen::VectorXd y = sample_data(model, RngSeed{11, 0});
  CHECK(std::abs(column_mean(y)) < 4.0 / std::sqrt(10000.0));
  CHECK(sample_var(y) == doctest::Approx(1.0).epsilon(0.10));
}

TEST_CASE("sample_data rejects degenerate variance") {
  NormalModel model{Eigen::VectorXd::Zero(5), 0.0};
  CHECK_THROWS_AS(sample_data(model, RngSeed{1, 0}), Error);
}

TEST_CASE("sample_data moments with shifted mean and sigma2 = 4") {
  // Bounds fixed in advance from normal / chi-square quantiles at n = 10000:
  // mean has sd 0.02 (4 sd = 0.08), variance has sd ~0.057 (4 sd = 0.23).
  NormalModel model{Eigen::VectorXd::Constant(10000, 5.0), 4.0};
  Eigen::VectorXd y = sample_data(model, RngSeed{12, 0});
  double m = column_mean(y);
  double v = sample_var(y);
  CHECK(m >= 4.9);
  CHECK(m <= 5.1);
  CHECK(v >= 3.7);
  CHECK(v <= 4.3);
}

TEST_CASE("sample_elevated variance at alpha = 1") {
  NormalModel model{Eigen::VectorXd::Zero(10000), 1.0};
  Eigen::VectorXd y = sample_elevated(model, 1.0, RngSeed{13, 0});
  double v = sample_var(y);
  CHECK(v >= 1.9);
  CHECK(v <= 2.1);
}

TEST_CASE("sample_elevated at alpha = 0 equals sample_data draw for draw") {
  NormalModel model{Eigen::VectorXd::Constant(50, 2.0), 1.5};
  Eigen::VectorXd a = sample_elevated(model, 0.0, RngSeed{14, 3});
  Eigen::VectorXd b = sample_data(model, RngSeed{14, 3});
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(sample_elevated(model, -0.1, RngSeed{14, 3}), Error);
}

TEST_CASE("coupled draws satisfy the defining algebra exactly") {
  Eigen::VectorXd y(4);
  y << 0.5, -1.0, 2.0, 0.0;
  for (double alpha : {0.05, 0.2, 1.0}) {
    CoupledDrawSet d = make_coupled_draws(y, 1.3, alpha, 16, RngSeed{21, 0});
    double root = std::sqrt(alpha);
    for (int b = 0; b < d.B; ++b) {
      for (int i = 0; i < 4; ++i) {
        CHECK(d.ystar(b, i) == y[i] + root * d.omega(b, i));
        CHECK(d.ydagger(b, i) == y[i] - d.omega(b, i) / root);
        double recon = (d.ystar(b, i) + alpha * d.ydagger(b, i)) / (1.0 + alpha);
        CHECK(recon == doctest::Approx(y[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("alpha = 1 couples symmetrically") {
  Eigen::VectorXd y(3);
  y << 1.0, 2.0, 3.0;
  CoupledDrawSet d = make_coupled_draws(y, 1.0, 1.0, 4, RngSeed{22, 0});
  for (int b = 0; b < d.B; ++b)
    for (int i = 0; i < 3; ++i) {
      double mid = 0.5 * (d.ystar(b, i) + d.ydagger(b, i));
      CHECK(mid == doctest::Approx(y[i]).epsilon(1e-14));
    }
}

TEST_CASE("coupled draws reject alpha <= 0 and B < 1") {
  Eigen::VectorXd y(2);
  y << 0.0, 1.0;
  CHECK_THROWS_AS(make_coupled_draws(y, 1.0, 0.0, 4, RngSeed{1, 0}), Error);
  CHECK_THROWS_AS(make_coupled_draws(y, 1.0, -0.5, 4, RngSeed{1, 0}), Error);
  CHECK_THROWS_AS(make_coupled_draws(y, 1.0, 0.5, 0, RngSeed{1, 0}), Error);
}

TEST_CASE("deterministic replay yields bit-identical draw sets") {
  Eigen::VectorXd y(6);
  y << 1, 2, 3, 4, 5, 6;
  CoupledDrawSet a = make_coupled_draws(y, 2.0, 0.3, 32, RngSeed{77, 5});
  CoupledDrawSet b = make_coupled_draws(y, 2.0, 0.3, 32, RngSeed{77, 5});
  CHECK(a.omega == b.omega);
  CHECK(a.ystar == b.ystar);
  CHECK(a.checksum() == b.checksum());
  CoupledDrawSet c = make_coupled_draws(y, 2.0, 0.3, 32, RngSeed{77, 6});
  CHECK(a.checksum() != c.checksum());
}

TEST_CASE("pair is marginally uncorrelated with the stated marginal variances") {
  // Independence of (Y*, Y-dagger) holds over the joint draw of Y and omega,
  // so each replication redraws the data vector.
  const int M = 100000;
  const double alpha = 0.2, sigma2 = 1.0, theta = 0.7;
  NormalModel model{Eigen::VectorXd::Constant(1, theta), sigma2};
  Eigen::VectorXd s(M), t(M);
  for (int m = 0; m < M; ++m) {
    RngSeed seed = RngSeed{30, 0}.substream(static_cast<std::uint64_t>(m));
    Eigen::VectorXd y = sample_data(model, seed);
    CoupledDrawSet d = make_coupled_draws(y, sigma2, alpha, 1, seed.substream(1));
    s[m] = d.ystar(0, 0);
    t[m] = d.ydagger(0, 0);
  }
  double ms = s.mean(), mt = t.mean();
  double cov = ((s.array() - ms) * (t.array() - mt)).sum() / (M - 1);
  double vs = sample_var(s), vt = sample_var(t);
  double corr = cov / std::sqrt(vs * vt);
  CHECK(std::abs(corr) < 4.0 / std::sqrt(static_cast<double>(M)));
  CHECK(std::abs(vs - (1 + alpha) * sigma2) <
        chi_sq_band(M) * (1 + alpha) * sigma2);
  CHECK(std::abs(vt - (1 + 1 / alpha) * sigma2) <
        chi_sq_band(M) * (1 + 1 / alpha) * sigma2);
}

TEST_CASE("empirical cross covariance of the pair stays near zero") {
  const int M = 200000;
  NormalModel model{Eigen::VectorXd::Zero(1), 1.0};
  Eigen::ArrayXd s(M), t(M);
  for (int m = 0; m < M; ++m) {
    RngSeed seed = RngSeed{31, 0}.substream(static_cast<std::uint64_t>(m));
    Eigen::VectorXd y = sample_data(model, seed);
    CoupledDrawSet d = make_coupled_draws(y, 1.0, 0.2, 1, seed.substream(1));
    s[m] = d.ystar(0, 0);
    t[m] = d.ydagger(0, 0);
  }
  Eigen::ArrayXd prod = (s - s.mean()) * (t - t.mean());
  double cov = prod.sum() / (M - 1);
  double se = std::sqrt((prod - cov).square().sum() / (M - 1) / M);
  CHECK(std::abs(cov) < 4.0 * se);
}

TEST_CASE("structured draws: diagonal covariance variances") {
  Eigen::VectorXd y(2);
  y << 0.0, 0.0;
  Eigen::MatrixXd Sigma(2, 2);
  Sigma << 1.0, 0.0, 0.0, 4.0;
  CoupledDrawSet d =
      make_structured_coupled_draws(y, Sigma, 0.5, 200000, RngSeed{32, 0});
  double v2 = sample_var(d.omega.col(1));
  CHECK(v2 >= 3.9);
  CHECK(v2 <= 4.1);
}

TEST_CASE("structured draws: off-diagonal covariance recovered") {
  Eigen::VectorXd y(2);
  y << 0.0, 0.0;
  Eigen::MatrixXd Sigma(2, 2);
  Sigma << 1.0, 0.5, 0.5, 1.0;
  const int B = 200000;
  CoupledDrawSet d =
      make_structured_coupled_draws(y, Sigma, 0.5, B, RngSeed{33, 0});
  Eigen::VectorXd a = d.omega.col(0), b = d.omega.col(1);
  double ma = a.mean(), mb = b.mean();
  Eigen::ArrayXd prod = (a.array() - ma) * (b.array() - mb);
  double cov = prod.sum() / (B - 1);
  double se = std::sqrt((prod - cov).square().sum() / (B - 1) / B);
  CHECK(std::abs(cov - 0.5) < 4.0 * se);
}

TEST_CASE("structured draws with isotropic Sigma match plain draws in law") {
  Eigen::VectorXd y(3);
  y << 1.0, -1.0, 0.5;
  Eigen::MatrixXd Sigma = 1.7 * Eigen::MatrixXd::Identity(3, 3);
  const int B = 100000;
  CoupledDrawSet d =
      make_structured_coupled_draws(y, Sigma, 0.3, B, RngSeed{34, 0});
  for (int i = 0; i < 3; ++i) {
    double v = sample_var(d.omega.col(i));
    CHECK(std::abs(v - 1.7) < chi_sq_band(B) * 1.7);
  }
}

TEST_CASE("non-SPD and near-singular covariances are rejected") {
  Eigen::VectorXd y(2);
  y << 0.0, 0.0;
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;  // indefinite
  CHECK_THROWS_AS(make_structured_coupled_draws(y, bad, 0.5, 4, RngSeed{1, 0}),
                  SolverError);
  Eigen::MatrixXd asym(2, 2);
  asym << 1.0, 0.5, 0.2, 1.0;
  CHECK_THROWS_AS(make_structured_coupled_draws(y, asym, 0.5, 4, RngSeed{1, 0}),
                  SolverError);
  Eigen::MatrixXd singular(2, 2);
  singular << 1.0, 1.0, 1.0, 1.0 + 1e-15;
  CHECK_THROWS_AS(
      make_structured_coupled_draws(y, singular, 0.5, 4, RngSeed{1, 0}),
      SolverError);
}
