#include "cbrisk/predictors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>

#include "cbrisk/errors.hpp"

namespace cbrisk {

namespace {

std::atomic<std::uint64_t> g_ctx_counter{1};

double soft(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

DesignContext::DesignContext(Eigen::MatrixXd x,
                             std::optional<Eigen::VectorXd> beta)
    : X(std::move(x)), beta_true(std::move(beta)) {
  gram = X.transpose() * X;
  id = g_ctx_counter.fetch_add(1);
}

Eigen::VectorXd soft_threshold_vec(const Eigen::VectorXd& y, double t) {
  Eigen::VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) out[i] = soft(y[i], t);
  return out;
}

Eigen::VectorXd hard_threshold_vec(const Eigen::VectorXd& y, double t) {
  Eigen::VectorXd out(y.size());
  // Boundary |y_i| == t counts as not exceeding.
  for (Eigen::Index i = 0; i < y.size(); ++i)
    out[i] = std::abs(y[i]) > t ? y[i] : 0.0;
  return out;
}

// --- Lasso coordinate descent ------------------------------------------------

namespace {

// Core CD on the Gram form: minimize (1/(2n))||y - X b||^2 + lambda ||b||_1
// given gram = X^T X and c = X^T y / n. Runs until the exact subgradient
// residual (recomputed from gram, not the maintained gradient) drops below
// kkt_tol.
LassoResult cd_solve(const Eigen::MatrixXd& gram, const Eigen::VectorXd& c,
                     double n_rows, double lambda,
                     const Eigen::VectorXd* warm_start, double kkt_tol,
                     long max_iter) {
  const Eigen::Index p = gram.rows();
  Eigen::VectorXd beta =
      warm_start ? *warm_start : Eigen::VectorXd::Zero(p);
  Eigen::VectorXd diag = gram.diagonal() / n_rows;
  Eigen::VectorXd q(p);  // gram * beta / n, maintained incrementally
  if (warm_start && beta.squaredNorm() > 0.0)
    q = gram * beta / n_rows;
  else
    q.setZero();

  auto exact_residual = [&](Eigen::VectorXd* grad_out) {
    Eigen::VectorXd g = c - gram * beta / n_rows;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      double r;
      if (beta[j] > 0.0)
        r = std::abs(g[j] - lambda);
      else if (beta[j] < 0.0)
        r = std::abs(g[j] + lambda);
      else
        r = std::max(0.0, std::abs(g[j]) - lambda);
      worst = std::max(worst, r);
    }
    if (grad_out) *grad_out = std::move(g);
    return worst;
  };

  auto update_coord = [&](Eigen::Index j) {
    if (diag[j] <= 0.0) {
      beta[j] = 0.0;
      return 0.0;
    }
    double rho = c[j] - q[j] + diag[j] * beta[j];
    double bj = soft(rho, lambda) / diag[j];
    double d = bj - beta[j];
    if (d != 0.0) {
      q += gram.col(j) * (d / n_rows);
      beta[j] = bj;
    }
    return std::abs(d) * diag[j];
  };

  // Once coordinate descent has settled on an active set, the solution solves
  // the KKT equality system on that set exactly. Solving it directly and
  // verifying the full conditions cuts off the slow zigzag near interpolation
  // (small lambda with p > n).
  // Solve the KKT equality system on a candidate active set with assumed
  // signs, through a rank-revealing decomposition (the active Gram block is
  // often singular near the interpolation end of the path). Returns the exact
  // residual of the candidate point, or infinity when the solve fails.
  auto solve_candidate = [&](const std::vector<Eigen::Index>& set,
                             const std::vector<double>& sign,
                             Eigen::VectorXd& trial,
                             Eigen::VectorXd& sol) -> double {
    Eigen::Index m = static_cast<Eigen::Index>(set.size());
    Eigen::MatrixXd gaa(m, m);
    Eigen::VectorXd rhs(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = 0; b < m; ++b)
        gaa(a, b) = gram(set[a], set[b]) / n_rows;
      rhs[a] = c[set[a]] - lambda * sign[a];
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(gaa);
    sol = cod.solve(rhs);
    if (!sol.allFinite()) return std::numeric_limits<double>::infinity();
    // Coordinates left at round-off level are really zeros; keeping them
    // would flip subgradient signs in the check below.
    double clean = 1e-11 * sol.cwiseAbs().maxCoeff();
    trial = Eigen::VectorXd::Zero(p);
    for (Eigen::Index a = 0; a < m; ++a)
      trial[set[a]] = std::abs(sol[a]) < clean ? 0.0 : sol[a];
    std::swap(beta, trial);
    double res = exact_residual(nullptr);
    std::swap(beta, trial);
    return res;
  };

  // The coordinates descent crawls toward zero near interpolation are the
  // ones that do not belong in the optimal set; candidates are formed by
  // pruning sign-flipped solves and by dropping the smallest-magnitude
  // coordinates (singles, then pairs). A candidate is taken only when it
  // passes the exact KKT check; anything weaker can livelock against the
  // descent iterates.
  auto try_active_refinement = [&]() -> bool {
    std::vector<Eigen::Index> set;
    std::vector<double> sign;
    for (Eigen::Index j = 0; j < p; ++j)
      if (beta[j] != 0.0) {
        set.push_back(j);
        sign.push_back(beta[j] > 0.0 ? 1.0 : -1.0);
      }
    if (set.empty()) return false;
    Eigen::VectorXd trial, sol;
    double best_res = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_trial;
    auto consider = [&](double res) {
      if (res < best_res) {
        best_res = res;
        best_trial = trial;
      }
    };
    // Straight solve plus sign-flip pruning rounds.
    std::vector<Eigen::Index> cur = set;
    std::vector<double> cur_sign = sign;
    for (int round = 0; round < 6 && !cur.empty(); ++round) {
      double res = solve_candidate(cur, cur_sign, trial, sol);
      if (!std::isfinite(res)) break;
      consider(res);
      if (res <= kkt_tol) break;
      double clean = 1e-11 * sol.cwiseAbs().maxCoeff();
      std::vector<Eigen::Index> kept;
      std::vector<double> kept_sign;
      for (std::size_t a = 0; a < cur.size(); ++a)
        if (!(lambda > 0.0 && sol[static_cast<Eigen::Index>(a)] * cur_sign[a] < 0.0 &&
              std::abs(sol[static_cast<Eigen::Index>(a)]) >= clean)) {
          kept.push_back(cur[a]);
          kept_sign.push_back(cur_sign[a]);
        }
      if (kept.size() == cur.size()) break;  // nothing to prune
      cur = std::move(kept);
      cur_sign = std::move(kept_sign);
    }
    // Victim search: drop small-magnitude coordinates, singles then pairs.
    if (best_res > kkt_tol && set.size() > 1) {
      std::vector<std::size_t> order(set.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(beta[set[a]]) < std::abs(beta[set[b]]);
      });
      auto drop_and_solve = [&](std::size_t va, std::size_t vb) {
        std::vector<Eigen::Index> cand;
        std::vector<double> cand_sign;
        for (std::size_t a = 0; a < set.size(); ++a)
          if (a != order[va] && a != order[vb]) {
            cand.push_back(set[a]);
            cand_sign.push_back(sign[a]);
          }
        double res = solve_candidate(cand, cand_sign, trial, sol);
        if (std::isfinite(res)) consider(res);
      };
      std::size_t tries = std::min<std::size_t>(10, set.size() - 1);
      for (std::size_t v = 0; v < tries && best_res > kkt_tol; ++v)
        drop_and_solve(v, v);
      std::size_t pair_tries = std::min<std::size_t>(6, set.size() - 1);
      for (std::size_t v = 0; v + 1 < pair_tries && best_res > kkt_tol; ++v)
        for (std::size_t w = v + 1; w < pair_tries && best_res > kkt_tol; ++w)
          drop_and_solve(v, w);
    }
    // Null-space walk: when the active Gram block is singular, moving along
    // its null space keeps the fit and gradient fixed, so coordinates can be
    // driven to zero one at a time until the block is regular.
    if (best_res > kkt_tol) {
      Eigen::VectorXd walked = beta;
      for (int walk = 0; walk < 16; ++walk) {
        std::vector<Eigen::Index> wset;
        for (Eigen::Index j = 0; j < p; ++j)
          if (walked[j] != 0.0) wset.push_back(j);
        Eigen::Index m = static_cast<Eigen::Index>(wset.size());
        if (m == 0) break;
        Eigen::MatrixXd gaa(m, m);
        for (Eigen::Index a = 0; a < m; ++a)
          for (Eigen::Index b = 0; b < m; ++b)
            gaa(a, b) = gram(wset[a], wset[b]) / n_rows;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gaa);
        if (es.info() != Eigen::Success) break;
        double top = es.eigenvalues()(m - 1);
        if (es.eigenvalues()(0) > 1e-10 * std::max(top, 1e-300)) break;
        Eigen::VectorXd dir = es.eigenvectors().col(0);
        double best_t = std::numeric_limits<double>::infinity();
        Eigen::Index vanish = -1;
        for (Eigen::Index a = 0; a < m; ++a) {
          if (std::abs(dir[a]) < 1e-8) continue;
          double t = -walked[wset[a]] / dir[a];
          if (std::abs(t) < std::abs(best_t)) {
            best_t = t;
            vanish = a;
          }
        }
        if (vanish < 0 || !std::isfinite(best_t)) break;
        for (Eigen::Index a = 0; a < m; ++a) walked[wset[a]] += best_t * dir[a];
        walked[wset[vanish]] = 0.0;
      }
      std::vector<Eigen::Index> wset;
      std::vector<double> wsign;
      for (Eigen::Index j = 0; j < p; ++j)
        if (walked[j] != 0.0) {
          wset.push_back(j);
          wsign.push_back(walked[j] > 0.0 ? 1.0 : -1.0);
        }
      if (!wset.empty()) {
        double res = solve_candidate(wset, wsign, trial, sol);
        if (std::isfinite(res)) consider(res);
      }
    }
    if (best_res <= kkt_tol) {
      beta = std::move(best_trial);
      return true;
    }
    return false;
  };

  // Momentum polish for stalled descent: accelerated proximal steps move the
  // whole iterate at once and escape the coordinate-wise crawl along a
  // degenerate face. Costs one gram product per iteration.
  auto fista_polish = [&](long iters) {
    double lip = gram.cwiseAbs().rowwise().sum().maxCoeff() / n_rows;
    if (!(lip > 0.0)) return;
    double step = 1.0 / lip;
    Eigen::VectorXd x = beta, z = beta;
    double tk = 1.0;
    for (long it = 0; it < iters; ++it) {
      Eigen::VectorXd grad = gram * z / n_rows - c;
      Eigen::VectorXd x_new(p);
      for (Eigen::Index j = 0; j < p; ++j)
        x_new[j] = soft(z[j] - step * grad[j], step * lambda);
      double tk_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
      z = x_new + ((tk - 1.0) / tk_new) * (x_new - x);
      x = std::move(x_new);
      tk = tk_new;
    }
    beta = std::move(x);
    q = gram * beta / n_rows;
  };

  long sweeps = 0;
  int round = 0;
  double move_tol = std::max(1e-13 * (1.0 + c.cwiseAbs().maxCoeff()),
                             0.02 * kkt_tol);
  double prev_res = std::numeric_limits<double>::infinity();
  std::vector<Eigen::Index> active;
  active.reserve(p);
  while (sweeps < max_iter) {
    // Full sweep refreshes the active set.
    double max_move = 0.0;
    for (Eigen::Index j = 0; j < p; ++j)
      max_move = std::max(max_move, update_coord(j));
    ++sweeps;
    active.clear();
    for (Eigen::Index j = 0; j < p; ++j)
      if (beta[j] != 0.0) active.push_back(j);
    // Cycle the active set until it settles, then re-check globally.
    long inner_cap = sweeps + 256;
    while (max_move >= move_tol && sweeps < max_iter && sweeps < inner_cap) {
      max_move = 0.0;
      for (Eigen::Index j : active)
        max_move = std::max(max_move, update_coord(j));
      ++sweeps;
    }
    double res = exact_residual(nullptr);
    if (res <= kkt_tol) {
      LassoResult out;
      out.beta = std::move(beta);
      out.iterations = sweeps;
      out.kkt_residual = res;
      return out;
    }
    // Plain descent handles almost every solve; the escalations below only
    // engage once progress stalls (degenerate faces near interpolation).
    ++round;
    bool stalled = res > 0.5 * prev_res;
    if (round >= 2 && stalled) {
      if (try_active_refinement()) {
        LassoResult out;
        out.kkt_residual = exact_residual(nullptr);
        out.beta = std::move(beta);
        out.iterations = sweeps;
        return out;
      }
      if (res > 0.7 * prev_res) {
        fista_polish(1000);
        sweeps += 32;
      }
    }
    // Kill drift in the maintained gradient before continuing.
    q = gram * beta / n_rows;
    prev_res = res;
  }
  int active_n = 0;
  for (Eigen::Index j = 0; j < p; ++j)
    if (beta[j] != 0.0) ++active_n;
  throw SolverError("lasso coordinate descent did not reach KKT tolerance after " +
                        std::to_string(sweeps) + " sweeps (residual " +
                        std::to_string(exact_residual(nullptr)) + ", " +
                        std::to_string(active_n) + " active)",
                    sweeps);
}

}  // namespace

LassoResult solve_lasso(const DesignContext& ctx, const Eigen::VectorXd& y,
                        double lambda, const Eigen::VectorXd* warm_start,
                        double kkt_tol, long max_iter) {
  if (lambda < 0.0) throw Error("solve_lasso: lambda must be nonnegative");
  if (y.size() != ctx.X.rows())
    throw DimensionError("solve_lasso: y length does not match design rows");
  double n = static_cast<double>(ctx.rows());
  Eigen::VectorXd c = ctx.X.transpose() * y / n;
  return cd_solve(ctx.gram, c, n, lambda, warm_start, kkt_tol, max_iter);
}

double lasso_max_lambda(const DesignContext& ctx, const Eigen::VectorXd& y) {
  double n = static_cast<double>(ctx.rows());
  return (ctx.X.transpose() * y).cwiseAbs().maxCoeff() / n;
}

double lasso_kkt_residual(const DesignContext& ctx, const Eigen::VectorXd& y,
                          double lambda, const Eigen::VectorXd& beta) {
  // Deliberately routed through X (not the Gram matrix) so it stays
  // independent of the solver's arithmetic.
  Eigen::VectorXd resid = y - ctx.X * beta;
  Eigen::VectorXd g = ctx.X.transpose() * resid / static_cast<double>(ctx.rows());
  double worst = 0.0;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    double r;
    if (beta[j] > 0.0)
      r = std::abs(g[j] - lambda);
    else if (beta[j] < 0.0)
      r = std::abs(g[j] + lambda);
    else
      r = std::max(0.0, std::abs(g[j]) - lambda);
    worst = std::max(worst, r);
  }
  return worst;
}

// --- Forward stepwise ---------------------------------------------------------

StepwiseResult solve_forward_stepwise(const DesignContext& ctx,
                                      const Eigen::VectorXd& y, int k) {
  const int n = ctx.rows();
  const int p = ctx.cols();
  if (k < 0 || k > std::min(n, p))
    throw Error("solve_forward_stepwise: k must lie in [0, min(n, p)]");
  if (y.size() != n)
    throw DimensionError("solve_forward_stepwise: y length mismatch");

  StepwiseResult out;
  Eigen::VectorXd r = y;
  Eigen::MatrixXd Q(n, k);
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(k, k);
  std::vector<char> unavailable(p, 0);
  int step = 0;
  while (step < k) {
    int best = -1;
    double best_val = 0.0;
    for (int j = 0; j < p; ++j) {
      if (unavailable[j]) continue;
      double v = std::abs(ctx.X.col(j).dot(r));
      if (v > best_val) {
        best_val = v;
        best = j;  // strict > keeps the lowest index on ties
      }
    }
    if (best < 0 || best_val <= 1e-12 * (1.0 + y.norm())) break;
    // Two-pass Gram-Schmidt against the current basis.
    Eigen::VectorXd u = ctx.X.col(best);
    Eigen::VectorXd rcol = Eigen::VectorXd::Zero(k);
    for (int pass = 0; pass < 2; ++pass) {
      for (int i = 0; i < step; ++i) {
        double proj = Q.col(i).dot(u);
        rcol[i] += proj;
        u -= proj * Q.col(i);
      }
    }
    double norm_u = u.norm();
    if (norm_u < 1e-10 * ctx.X.col(best).norm()) {
      unavailable[best] = 1;
      out.warnings.push_back("column " + std::to_string(best) +
                             " nearly dependent on selected set; dropped");
      continue;
    }
    Q.col(step) = u / norm_u;
    rcol[step] = norm_u;
    R.col(step).head(step + 1) = rcol.head(step + 1);
    r -= Q.col(step) * Q.col(step).dot(r);
    out.selected.push_back(best);
    unavailable[best] = 1;
    ++step;
  }
  // Refit coefficients by back substitution of R beta_S = Q^T y.
  out.beta = Eigen::VectorXd::Zero(p);
  if (step > 0) {
    Eigen::VectorXd z(step);
    for (int i = 0; i < step; ++i) z[i] = Q.col(i).dot(y);
    Eigen::VectorXd bs =
        R.topLeftCorner(step, step).triangularView<Eigen::Upper>().solve(z);
    for (int i = 0; i < step; ++i) out.beta[out.selected[i]] = bs[i];
  }
  return out;
}

std::vector<Eigen::VectorXd> lasso_path(const DesignContext& ctx,
                                        const Eigen::VectorXd& y,
                                        const std::vector<double>& grid_desc) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(grid_desc.size());
  const Eigen::VectorXd* warm = nullptr;
  for (double lam : grid_desc) {
    LassoResult res = solve_lasso(ctx, y, lam, warm);
    out.push_back(std::move(res.beta));
    warm = &out.back();
  }
  return out;
}

Eigen::MatrixXd forward_stepwise_path(const DesignContext& ctx,
                                      const Eigen::VectorXd& y, int kmax) {
  const int n = ctx.rows();
  const int p = ctx.cols();
  if (kmax < 0 || kmax > std::min(n, p))
    throw Error("forward_stepwise_path: kmax must lie in [0, min(n, p)]");
  Eigen::MatrixXd fits = Eigen::MatrixXd::Zero(kmax + 1, n);
  Eigen::VectorXd r = y;
  Eigen::VectorXd fit = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd Q(n, kmax);
  std::vector<char> unavailable(p, 0);
  int step = 0;
  while (step < kmax) {
    int best = -1;
    double best_val = 0.0;
    for (int j = 0; j < p; ++j) {
      if (unavailable[j]) continue;
      double v = std::abs(ctx.X.col(j).dot(r));
      if (v > best_val) {
        best_val = v;
        best = j;
      }
    }
    if (best < 0 || best_val <= 1e-12 * (1.0 + y.norm())) break;
    Eigen::VectorXd u = ctx.X.col(best);
    for (int pass = 0; pass < 2; ++pass)
      for (int i = 0; i < step; ++i) u -= Q.col(i).dot(u) * Q.col(i);
    double norm_u = u.norm();
    if (norm_u < 1e-10 * ctx.X.col(best).norm()) {
      unavailable[best] = 1;
      continue;
    }
    Q.col(step) = u / norm_u;
    double proj = Q.col(step).dot(r);
    fit += proj * Q.col(step);
    r -= proj * Q.col(step);
    unavailable[best] = 1;
    ++step;
    fits.row(step) = fit.transpose();
  }
  // If selection stalled early the remaining rows repeat the saturated fit.
  for (int k = step + 1; k <= kmax; ++k) fits.row(k) = fit.transpose();
  return fits;
}

// --- Lasso with cross-validation -----------------------------------------------

namespace {

std::vector<double> normalize_grid(std::vector<double> grid) {
  if (grid.empty()) throw Error("solve_lasso_cv: empty lambda grid");
  for (double g : grid)
    if (g < 0.0) throw Error("solve_lasso_cv: negative lambda in grid");
  std::sort(grid.begin(), grid.end(), std::greater<>());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

struct FoldLayout {
  int n_folds = 0;
  std::vector<std::vector<int>> rows;  // rows per fold
};

FoldLayout check_folds(const std::vector<int>& fold_assignment, int n) {
  if (static_cast<int>(fold_assignment.size()) != n)
    throw DimensionError("fold assignment length does not match data");
  int n_folds = 0;
  for (int f : fold_assignment) {
    if (f < 0) throw Error("fold ids must be nonnegative");
    n_folds = std::max(n_folds, f + 1);
  }
  FoldLayout layout;
  layout.n_folds = n_folds;
  layout.rows.resize(n_folds);
  for (int i = 0; i < n; ++i) layout.rows[fold_assignment[i]].push_back(i);
  for (int f = 0; f < n_folds; ++f)
    if (layout.rows[f].empty())
      throw Error("fold " + std::to_string(f) + " has zero rows");
  return layout;
}

// Shared CV engine; fold training Grams may come from a cache.
LassoCvResult run_lasso_cv(const DesignContext& ctx, const Eigen::VectorXd& y,
                           const FoldLayout& layout,
                           const std::vector<Eigen::MatrixXd>& train_gram,
                           const std::vector<double>& grid) {
  const int n = ctx.rows();
  std::vector<double> held_out_sse(grid.size(), 0.0);
  for (int f = 0; f < layout.n_folds; ++f) {
    const auto& rows = layout.rows[f];
    double n_train = static_cast<double>(n - rows.size());
    Eigen::VectorXd xty = ctx.X.transpose() * y;
    for (int i : rows) xty -= ctx.X.row(i).transpose() * y[i];
    Eigen::VectorXd c = xty / n_train;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(ctx.cols());
    for (std::size_t g = 0; g < grid.size(); ++g) {
      LassoResult res =
          cd_solve(train_gram[f], c, n_train, grid[g], &beta, 1e-8, 100000);
      beta = res.beta;
      for (int i : rows) {
        double pred = ctx.X.row(i).dot(beta);
        double d = y[i] - pred;
        held_out_sse[g] += d * d;
      }
    }
  }
  // Grid is descending, so the first strict minimum breaks ties toward the
  // larger lambda.
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (held_out_sse[g] < held_out_sse[best]) best = g;
  LassoCvResult out;
  out.lambda = grid[best];
  out.beta = solve_lasso(ctx, y, out.lambda).beta;
  return out;
}

}  // namespace

LassoCvResult solve_lasso_cv(const DesignContext& ctx, const Eigen::VectorXd& y,
                             const std::vector<int>& fold_assignment,
                             std::vector<double> lambda_grid) {
  if (y.size() != ctx.X.rows())
    throw DimensionError("solve_lasso_cv: y length mismatch");
  FoldLayout layout = check_folds(fold_assignment, ctx.rows());
  std::vector<double> grid = normalize_grid(std::move(lambda_grid));
  std::vector<Eigen::MatrixXd> train_gram(layout.n_folds);
  for (int f = 0; f < layout.n_folds; ++f) {
    Eigen::MatrixXd g = ctx.gram;
    for (int i : layout.rows[f])
      g -= ctx.X.row(i).transpose() * ctx.X.row(i);
    train_gram[f] = std::move(g);
  }
  return run_lasso_cv(ctx, y, layout, train_gram, grid);
}

// --- 1-D fused lasso -----------------------------------------------------------

// Dynamic programming over the chain. The derivative of each forward message
// is kept as a sorted knot list with affine increments; each step clips it at
// -lambda / +lambda (recording the clip points as back-pointers) and adds the
// next squared-error term. Backtracking clamps each coordinate to its clip
// interval, which produces exactly fused values.
Eigen::VectorXd solve_fused_lasso_1d(const Eigen::VectorXd& y, double lambda) {
  if (lambda < 0.0) throw Error("solve_fused_lasso_1d: lambda must be nonnegative");
  const Eigen::Index n = y.size();
  if (n == 0) return y;
  if (n == 1 || lambda == 0.0) return y;

  std::vector<double> x(2 * n), a(2 * n), b(2 * n);
  std::vector<double> clip_lo(n - 1), clip_hi(n - 1);
  Eigen::Index l = n, r = n - 1;  // empty knot range
  double a_left = 1.0, b_left = -y[0];
  double a_right = -1.0, b_right = y[0];  // negated right-side affine

  for (Eigen::Index t = 0; t < n - 1; ++t) {
    // Walk from the left to the point where the derivative reaches -lambda.
    double alo = a_left, blo = b_left;
    Eigen::Index lo = l;
    while (lo <= r && alo * x[lo] + blo <= -lambda) {
      alo += a[lo];
      blo += b[lo];
      ++lo;
    }
    double lo_knot = (-lambda - blo) / alo;
    // Walk from the right to the point where the derivative reaches +lambda.
    double ahi = a_right, bhi = b_right;
    Eigen::Index hi = r;
    while (hi >= lo && -ahi * x[hi] - bhi >= lambda) {
      ahi += a[hi];
      bhi += b[hi];
      --hi;
    }
    double hi_knot = (lambda + bhi) / (-ahi);
    clip_lo[t] = lo_knot;
    clip_hi[t] = hi_knot;

    // Replace the clipped tails with boundary knots and add the next
    // squared-error term.
    l = lo - 1;
    r = hi + 1;
    x[l] = lo_knot;
    a[l] = alo;
    b[l] = blo + lambda;
    x[r] = hi_knot;
    a[r] = ahi;
    b[r] = bhi + lambda;
    a_left = 1.0;
    b_left = -y[t + 1] - lambda;
    a_right = -1.0;
    b_right = y[t + 1] - lambda;
  }

  // Minimize the final message: root of its derivative.
  double alo = a_left, blo = b_left;
  Eigen::Index lo = l;
  while (lo <= r && alo * x[lo] + blo <= 0.0) {
    alo += a[lo];
    blo += b[lo];
    ++lo;
  }
  Eigen::VectorXd theta(n);
  theta[n - 1] = -blo / alo;
  for (Eigen::Index t = n - 2; t >= 0; --t)
    theta[t] = std::clamp(theta[t + 1], clip_lo[t], clip_hi[t]);
  return theta;
}

int fused_group_count(const Eigen::VectorXd& fit) {
  if (fit.size() == 0) return 0;
  int groups = 1;
  for (Eigen::Index i = 0; i + 1 < fit.size(); ++i) {
    double tol = 1e-12 * (1.0 + std::abs(fit[i]) + std::abs(fit[i + 1]));
    if (std::abs(fit[i + 1] - fit[i]) > tol) ++groups;
  }
  return groups;
}

// --- Predictor -------------------------------------------------------------------

Predictor Predictor::identity() {
  Predictor p;
  p.kind_ = PredictorKind::identity;
  return p;
}

Predictor Predictor::zero() {
  Predictor p;
  p.kind_ = PredictorKind::zero;
  return p;
}

Predictor Predictor::linear_smoother(Eigen::MatrixXd S) {
  if (S.rows() != S.cols()) throw DimensionError("smoother matrix must be square");
  Predictor p;
  p.kind_ = PredictorKind::linear_smoother;
  p.smoother_trace_ = S.trace();
  p.smoother_ = std::move(S);
  return p;
}

Predictor Predictor::ridge(double lambda) {
  if (lambda < 0.0) throw Error("ridge: lambda must be nonnegative");
  Predictor p;
  p.kind_ = PredictorKind::ridge;
  p.lambda_ = lambda;
  return p;
}

Predictor Predictor::lasso(double lambda) {
  if (lambda < 0.0) throw Error("lasso: lambda must be nonnegative");
  Predictor p;
  p.kind_ = PredictorKind::lasso;
  p.lambda_ = lambda;
  return p;
}

Predictor Predictor::lasso_cv(std::vector<int> fold_assignment,
                              std::vector<double> lambda_grid, int n_lambda,
                              double min_ratio) {
  Predictor p;
  p.kind_ = PredictorKind::lasso_cv;
  p.cv_folds_ = std::move(fold_assignment);
  if (!lambda_grid.empty()) p.cv_grid_ = normalize_grid(std::move(lambda_grid));
  p.cv_n_lambda_ = n_lambda;
  p.cv_min_ratio_ = min_ratio;
  return p;
}

Predictor Predictor::forward_stepwise(int k) {
  if (k < 0) throw Error("forward_stepwise: k must be nonnegative");
  Predictor p;
  p.kind_ = PredictorKind::forward_stepwise;
  p.k_ = k;
  return p;
}

Predictor Predictor::soft_threshold(double t) {
  if (t < 0.0) throw Error("soft_threshold: t must be nonnegative");
  Predictor p;
  p.kind_ = PredictorKind::soft_threshold;
  p.t_ = t;
  return p;
}

Predictor Predictor::hard_threshold(double t) {
  if (t < 0.0) throw Error("hard_threshold: t must be nonnegative");
  Predictor p;
  p.kind_ = PredictorKind::hard_threshold;
  p.t_ = t;
  return p;
}

Predictor Predictor::fused_lasso_1d(double lambda) {
  if (lambda < 0.0) throw Error("fused_lasso_1d: lambda must be nonnegative");
  Predictor p;
  p.kind_ = PredictorKind::fused_lasso_1d;
  p.lambda_ = lambda;
  return p;
}

bool Predictor::has_analytic_divergence() const {
  switch (kind_) {
    case PredictorKind::lasso_cv:
    case PredictorKind::forward_stepwise:
      return false;
    default:
      return true;
  }
}

bool Predictor::needs_design() const {
  switch (kind_) {
    case PredictorKind::ridge:
    case PredictorKind::lasso:
    case PredictorKind::lasso_cv:
    case PredictorKind::forward_stepwise:
      return true;
    default:
      return false;
  }
}

std::string Predictor::id() const {
  switch (kind_) {
    case PredictorKind::identity: return "identity";
    case PredictorKind::zero: return "zero";
    case PredictorKind::linear_smoother: return "smoother";
    case PredictorKind::ridge: return "ridge:" + fmt_num(lambda_);
    case PredictorKind::lasso: return "lasso:" + fmt_num(lambda_);
    case PredictorKind::lasso_cv: return "lasso_cv";
    case PredictorKind::forward_stepwise: return "stepwise:" + std::to_string(k_);
    case PredictorKind::soft_threshold: return "soft:" + fmt_num(t_);
    case PredictorKind::hard_threshold: return "hard:" + fmt_num(t_);
    case PredictorKind::fused_lasso_1d: return "fused:" + fmt_num(lambda_);
  }
  return "unknown";
}

const DesignContext& Predictor::require_ctx(const DesignContext* ctx) const {
  if (ctx == nullptr)
    throw DimensionError(id() + " requires a design context");
  return *ctx;
}

const Predictor::RidgeCache& Predictor::ridge_cache(
    const DesignContext& ctx) const {
  {
    std::shared_lock lock(caches_->mutex);
    auto it = caches_->ridge.find(ctx.id);
    if (it != caches_->ridge.end()) return *it->second;
  }
  std::unique_lock lock(caches_->mutex);
  auto it = caches_->ridge.find(ctx.id);
  if (it != caches_->ridge.end()) return *it->second;
  auto cache = std::make_shared<RidgeCache>();
  Eigen::MatrixXd m = ctx.gram;
  double scale = static_cast<double>(ctx.rows()) * lambda_;
  m.diagonal().array() += scale;
  cache->factor.compute(m);
  if (cache->factor.info() != Eigen::Success)
    throw SolverError("ridge: factorization of gram + n*lambda*I failed");
  cache->trace_smoother = cache->factor.solve(ctx.gram).trace();
  auto& slot = caches_->ridge[ctx.id];
  slot = std::move(cache);
  return *slot;
}

const Predictor::CvCache& Predictor::cv_cache(const DesignContext& ctx) const {
  {
    std::shared_lock lock(caches_->mutex);
    auto it = caches_->cv.find(ctx.id);
    if (it != caches_->cv.end()) return *it->second;
  }
  std::unique_lock lock(caches_->mutex);
  auto it = caches_->cv.find(ctx.id);
  if (it != caches_->cv.end()) return *it->second;
  FoldLayout layout = check_folds(cv_folds_, ctx.rows());
  auto cache = std::make_shared<CvCache>();
  cache->fold_rows = layout.rows;
  cache->train_gram.resize(layout.n_folds);
  for (int f = 0; f < layout.n_folds; ++f) {
    Eigen::MatrixXd g = ctx.gram;
    for (int i : layout.rows[f]) g -= ctx.X.row(i).transpose() * ctx.X.row(i);
    cache->train_gram[f] = std::move(g);
  }
  auto& slot = caches_->cv[ctx.id];
  slot = std::move(cache);
  return *slot;
}

Eigen::VectorXd Predictor::predict(const Eigen::VectorXd& y,
                                   const DesignContext* ctx) const {
  switch (kind_) {
    case PredictorKind::identity:
      return y;
    case PredictorKind::zero:
      return Eigen::VectorXd::Zero(y.size());
    case PredictorKind::linear_smoother:
      if (smoother_.rows() != y.size())
        throw DimensionError("smoother size does not match data");
      return smoother_ * y;
    case PredictorKind::soft_threshold:
      return soft_threshold_vec(y, t_);
    case PredictorKind::hard_threshold:
      return hard_threshold_vec(y, t_);
    case PredictorKind::fused_lasso_1d:
      return solve_fused_lasso_1d(y, lambda_);
    case PredictorKind::ridge: {
      const DesignContext& c = require_ctx(ctx);
      if (y.size() != c.X.rows()) throw DimensionError("ridge: y length mismatch");
      const RidgeCache& cache = ridge_cache(c);
      Eigen::VectorXd beta = cache.factor.solve(c.X.transpose() * y);
      return c.X * beta;
    }
    case PredictorKind::lasso: {
      const DesignContext& c = require_ctx(ctx);
      return c.X * solve_lasso(c, y, lambda_).beta;
    }
    case PredictorKind::forward_stepwise: {
      const DesignContext& c = require_ctx(ctx);
      return c.X * solve_forward_stepwise(c, y, k_).beta;
    }
    case PredictorKind::lasso_cv: {
      const DesignContext& c = require_ctx(ctx);
      if (y.size() != c.X.rows())
        throw DimensionError("lasso_cv: y length mismatch");
      const CvCache& cache = cv_cache(c);
      std::vector<double> grid = cv_grid_;
      if (grid.empty()) {
        double lmax = lasso_max_lambda(c, y);
        if (lmax <= 0.0) lmax = 1.0;
        grid.resize(cv_n_lambda_);
        for (int i = 0; i < cv_n_lambda_; ++i) {
          double frac = cv_n_lambda_ == 1
                            ? 0.0
                            : static_cast<double>(i) / (cv_n_lambda_ - 1);
          grid[i] = lmax * std::pow(cv_min_ratio_, frac);
        }
      }
      FoldLayout layout;
      layout.n_folds = static_cast<int>(cache.fold_rows.size());
      layout.rows = cache.fold_rows;
      LassoCvResult res = run_lasso_cv(c, y, layout, cache.train_gram, grid);
      return c.X * res.beta;
    }
  }
  throw Error("predict: unknown predictor kind");
}

double Predictor::divergence(const Eigen::VectorXd& y,
                             const DesignContext* ctx) const {
  switch (kind_) {
    case PredictorKind::identity:
      return static_cast<double>(y.size());
    case PredictorKind::zero:
      return 0.0;
    case PredictorKind::linear_smoother:
      return smoother_trace_;
    case PredictorKind::ridge:
      return ridge_cache(require_ctx(ctx)).trace_smoother;
    case PredictorKind::lasso: {
      const DesignContext& c = require_ctx(ctx);
      Eigen::VectorXd beta = solve_lasso(c, y, lambda_).beta;
      int active = 0;
      for (Eigen::Index j = 0; j < beta.size(); ++j)
        if (beta[j] != 0.0) ++active;
      return active;
    }
    case PredictorKind::soft_threshold:
    case PredictorKind::hard_threshold: {
      // For hard thresholding this divergence does not give an unbiased risk
      // estimate; callers probing that bias use it knowingly.
      int count = 0;
      for (Eigen::Index i = 0; i < y.size(); ++i)
        if (std::abs(y[i]) > t_) ++count;
      return count;
    }
    case PredictorKind::fused_lasso_1d:
      return fused_group_count(solve_fused_lasso_1d(y, lambda_));
    case PredictorKind::lasso_cv:
    case PredictorKind::forward_stepwise:
      throw Error("divergence unsupported for " + id());
  }
  throw Error("divergence: unknown predictor kind");
}

Predictor parse_predictor_spec(const std::string& spec,
                               const std::vector<int>* cv_folds) {
  std::string name = spec;
  std::string arg;
  auto pos = spec.find(':');
  if (pos != std::string::npos) {
    name = spec.substr(0, pos);
    arg = spec.substr(pos + 1);
  }
  auto num = [&]() {
    try {
      return std::stod(arg);
    } catch (const std::exception&) {
      throw ParseError("bad numeric argument in predictor spec '" + spec + "'");
    }
  };
  if (name == "identity") return Predictor::identity();
  if (name == "zero") return Predictor::zero();
  if (name == "ridge") return Predictor::ridge(num());
  if (name == "lasso") return Predictor::lasso(num());
  if (name == "stepwise" || name == "forward_stepwise")
    return Predictor::forward_stepwise(static_cast<int>(num()));
  if (name == "soft" || name == "soft_threshold")
    return Predictor::soft_threshold(num());
  if (name == "hard" || name == "hard_threshold")
    return Predictor::hard_threshold(num());
  if (name == "fused" || name == "fused_lasso_1d")
    return Predictor::fused_lasso_1d(num());
  if (name == "lasso_cv") {
    if (cv_folds == nullptr)
      throw ParseError("lasso_cv spec requires a fold assignment");
    return Predictor::lasso_cv(*cv_folds);
  }
  throw ParseError("unknown predictor spec '" + spec + "'");
}

}  // namespace cbrisk
