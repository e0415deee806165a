#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace cbrisk {

/// Fixed design matrix for regression rules. Contexts are built once per
/// scenario; the Gram matrix is precomputed here and rule-specific caches
/// (ridge factor, CV fold Grams) key off the context id.
struct DesignContext {
  Eigen::MatrixXd X;
  std::optional<Eigen::VectorXd> beta_true;
  Eigen::MatrixXd gram;  // X^T X
  std::uint64_t id = 0;

  explicit DesignContext(Eigen::MatrixXd x,
                         std::optional<Eigen::VectorXd> beta = std::nullopt);
  int rows() const { return static_cast<int>(X.rows()); }
  int cols() const { return static_cast<int>(X.cols()); }
};

enum class PredictorKind {
  identity,
  zero,
  linear_smoother,
  ridge,
  lasso,
  lasso_cv,
  forward_stepwise,
  soft_threshold,
  hard_threshold,
  fused_lasso_1d,
};

struct LassoResult {
  Eigen::VectorXd beta;
  long iterations = 0;       // coordinate sweeps used
  double kkt_residual = 0.0;  // max-norm subgradient residual
};

struct StepwiseResult {
  Eigen::VectorXd beta;
  std::vector<int> selected;  // columns in selection order
  std::vector<std::string> warnings;
};

// --- Solvers ---------------------------------------------------------------
// Objective convention throughout: (1/(2n)) ||y - X beta||^2 + penalty, with
// no intercept and no column standardization. Under this scaling
// lambda_max = max_j |X_j^T y| / n and the orthogonal-design lasso solution is
// componentwise soft-thresholding at level n*lambda.

/// Coordinate descent for (1/(2n))||y - X b||^2 + lambda ||b||_1. Terminates
/// only when the KKT subgradient residual is below kkt_tol (max-norm).
LassoResult solve_lasso(const DesignContext& ctx, const Eigen::VectorXd& y,
                        double lambda,
                        const Eigen::VectorXd* warm_start = nullptr,
                        double kkt_tol = 1e-9, long max_iter = 100000);

double lasso_max_lambda(const DesignContext& ctx, const Eigen::VectorXd& y);

/// KKT subgradient residual of a candidate solution (independent checker).
double lasso_kkt_residual(const DesignContext& ctx, const Eigen::VectorXd& y,
                          double lambda, const Eigen::VectorXd& beta);

/// Greedy forward selection: each step adds the column with the largest
/// absolute inner product with the current residual (ties to the lowest
/// index), then refits least squares on the selected set.
StepwiseResult solve_forward_stepwise(const DesignContext& ctx,
                                      const Eigen::VectorXd& y, int k);

struct LassoCvResult {
  double lambda = 0.0;
  Eigen::VectorXd beta;
};

/// Grid cross-validation for the lasso: picks the grid point minimizing mean
/// held-out squared error (ties toward larger lambda), then refits on the
/// full data. fold_assignment[i] is the fold id of row i.
LassoCvResult solve_lasso_cv(const DesignContext& ctx, const Eigen::VectorXd& y,
                             const std::vector<int>& fold_assignment,
                             std::vector<double> lambda_grid);

/// Warm-started lasso solutions along a descending lambda grid.
std::vector<Eigen::VectorXd> lasso_path(const DesignContext& ctx,
                                        const Eigen::VectorXd& y,
                                        const std::vector<double>& grid_desc);

/// Fitted values for every step count k = 0..kmax (row k of the result), from
/// one incremental pass.
Eigen::MatrixXd forward_stepwise_path(const DesignContext& ctx,
                                      const Eigen::VectorXd& y, int kmax);

/// Exact minimizer of (1/2)||y - theta||^2 + lambda * sum |theta_{i+1} -
/// theta_i| by dynamic programming over the chain; output is piecewise
/// constant.
Eigen::VectorXd solve_fused_lasso_1d(const Eigen::VectorXd& y, double lambda);

/// Number of constant segments in a piecewise-constant fit.
int fused_group_count(const Eigen::VectorXd& fit);

// --- Prediction rules -------------------------------------------------------

/// A prediction rule g: R^n -> R^n with, where analytically available, the
/// divergence sum_i d g_i / d y_i used by SURE. Rules are pure functions of
/// (y, ctx); heavy per-context precomputation is cached internally and the
/// cache is safe for concurrent use.
class Predictor {
 public:
  static Predictor identity();
  static Predictor zero();
  static Predictor linear_smoother(Eigen::MatrixXd S);
  static Predictor ridge(double lambda);
  static Predictor lasso(double lambda);
  /// Dynamic grid: n_lambda log-spaced points from lambda_max(y) down to
  /// lambda_max * min_ratio. An explicit grid overrides it.
  static Predictor lasso_cv(std::vector<int> fold_assignment,
                            std::vector<double> lambda_grid = {},
                            int n_lambda = 20, double min_ratio = 0.01);
  static Predictor forward_stepwise(int k);
  static Predictor soft_threshold(double t);
  static Predictor hard_threshold(double t);
  static Predictor fused_lasso_1d(double lambda);

  PredictorKind kind() const { return kind_; }
  bool has_analytic_divergence() const;
  bool needs_design() const;
  std::string id() const;

  Eigen::VectorXd predict(const Eigen::VectorXd& y,
                          const DesignContext* ctx = nullptr) const;
  double divergence(const Eigen::VectorXd& y,
                    const DesignContext* ctx = nullptr) const;

  double threshold() const { return t_; }
  double lambda() const { return lambda_; }
  int steps() const { return k_; }

 private:
  Predictor() = default;

  struct RidgeCache {
    Eigen::LLT<Eigen::MatrixXd> factor;  // gram + n*lambda*I
    double trace_smoother = 0.0;
  };
  struct CvCache {
    // Per-fold training Gram (gram_full - X_f^T X_f) and row lists.
    std::vector<Eigen::MatrixXd> train_gram;
    std::vector<std::vector<int>> fold_rows;
  };

  const RidgeCache& ridge_cache(const DesignContext& ctx) const;
  const CvCache& cv_cache(const DesignContext& ctx) const;
  const DesignContext& require_ctx(const DesignContext* ctx) const;

  PredictorKind kind_ = PredictorKind::identity;
  double lambda_ = 0.0;
  double t_ = 0.0;
  int k_ = 0;
  Eigen::MatrixXd smoother_;
  double smoother_trace_ = 0.0;
  std::vector<int> cv_folds_;
  std::vector<double> cv_grid_;
  int cv_n_lambda_ = 20;
  double cv_min_ratio_ = 0.01;

  struct CacheBox {
    std::shared_mutex mutex;
    std::map<std::uint64_t, std::shared_ptr<const RidgeCache>> ridge;
    std::map<std::uint64_t, std::shared_ptr<const CvCache>> cv;
  };
  std::shared_ptr<CacheBox> caches_ = std::make_shared<CacheBox>();
};

Eigen::VectorXd soft_threshold_vec(const Eigen::VectorXd& y, double t);
Eigen::VectorXd hard_threshold_vec(const Eigen::VectorXd& y, double t);

/// Parse a short rule spec: "identity", "zero", "ridge:5", "lasso:0.31",
/// "stepwise:2", "soft:1", "hard:1", "fused:2.5", "lasso_cv". lasso_cv fold
/// assignments must be supplied by the caller.
Predictor parse_predictor_spec(const std::string& spec,
                               const std::vector<int>* cv_folds = nullptr);

}  // namespace cbrisk
