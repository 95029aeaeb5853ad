#include "msc/msc_solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "msc/errors.hpp"
#include "msc/parallel.hpp"

namespace msc {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_shapes(const Matrix& theta, const DesignSplit& split) {
  if (theta.rows() != split.x_pre.cols() || theta.cols() != split.y_pre.cols()) {
    throw ArgumentError("theta must be n x m (" + std::to_string(split.n()) + " x " +
                        std::to_string(split.m()) + "), got " +
                        std::to_string(theta.rows()) + " x " +
                        std::to_string(theta.cols()));
  }
}

void require_finite_objective(double value, int iteration) {
  if (!std::isfinite(value)) {
    throw NumericError("objective became non-finite at iteration " +
                       std::to_string(iteration));
  }
}

// ---------------------------------------------------------------------------
// Proximal gradient.

FitReport fit_proximal_gradient(const DesignSplit& split, const MscConfig& cfg) {
  const Matrix& x = split.x_pre;
  const Matrix& y = split.y_pre;
  FitReport report;
  report.method = "msc";
  report.lambda_used = cfg.lambda;

  Matrix theta = Matrix::Zero(split.n(), split.m());
  double f = objective(theta, split, cfg.lambda);
  require_finite_objective(f, 0);
  report.objective_trace.push_back(f);
  double step = cfg.step_init;

  for (int it = 1; it <= cfg.max_iter; ++it) {
    report.iterations = it;
    const Matrix direction = subgradient_step_direction(y - x * theta, x);
    Matrix candidate;
    double f_candidate = 0.0;
    bool accepted = false;
    for (;;) {
      candidate = soft_threshold(theta - step * direction, step * cfg.lambda);
      if (candidate == theta) {
        // Fixed point of the prox map at this step size.
        report.theta = std::move(theta);
        report.converged = true;
        return report;
      }
      f_candidate = objective(candidate, split, cfg.lambda);
      require_finite_objective(f_candidate, it);
      if (f_candidate <= f - 1e-12) {
        accepted = true;
        break;
      }
      step *= cfg.step_shrink;
      if (step < cfg.step_floor) break;
    }
    if (!accepted) {
      report.theta = std::move(theta);
      return report;
    }
    const double rel = (f - f_candidate) / std::max(std::abs(f), 1e-300);
    theta = std::move(candidate);
    f = f_candidate;
    report.objective_trace.push_back(f);
    step = std::min(cfg.step_init, 2.0 * step);
    if (rel < cfg.tol) {
      report.converged = true;
      break;
    }
  }
  report.theta = std::move(theta);
  return report;
}

// ---------------------------------------------------------------------------
// ADMM.
//
// Splits the problem as
//
//   min (1/sqrt(T0)) ||R||_* + lambda |B|_1   s.t.  X theta + R = Y, theta = B,
//
// so every block update is exact: theta solves (X'X + I) theta = rhs (via the
// Woodbury identity when n > T0), R is a singular value threshold, and B is a
// soft threshold. The data are rescaled to unit RMS first; the penalty is
// rescaled to match so the minimizer is unchanged.

class ThetaSolver {
 public:
  explicit ThetaSolver(const Matrix& x) : x_(x), woodbury_(x.rows() < x.cols()) {
    const Eigen::Index k = woodbury_ ? x.rows() : x.cols();
    Matrix system = Matrix::Zero(k, k);
    if (woodbury_) {
      system.selfadjointView<Eigen::Lower>().rankUpdate(x);
      outer_ = system.selfadjointView<Eigen::Lower>();
    } else {
      system.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
    }
    system.diagonal().array() += 1.0;
    llt_.compute(system);
    if (llt_.info() != Eigen::Success) {
      throw NumericError("ADMM system matrix is not positive definite");
    }
  }

  // Returns theta = (X'X + I)^{-1} (c + X'w) and stores X theta in `fitted`.
  // With the Woodbury form X theta = (XX' + I)^{-1} (X c + XX' w), and then
  // theta = c + X'(w - X theta), which saves one n x T0 x m product.
  Matrix solve(const Matrix& c, const Matrix& w, Matrix& fitted) const {
    if (woodbury_) {
      Matrix rhs = x_ * c;
      rhs.noalias() += outer_ * w;
      fitted = llt_.solve(rhs);
      Matrix theta = c;
      theta.noalias() += x_.transpose() * (w - fitted);
      return theta;
    }
    Matrix rhs = c;
    rhs.noalias() += x_.transpose() * w;
    Matrix theta = llt_.solve(rhs);
    fitted.noalias() = x_ * theta;
    return theta;
  }

 private:
  const Matrix& x_;
  bool woodbury_;
  Matrix outer_;  // XX' (Woodbury form only)
  Eigen::LLT<Matrix, Eigen::Lower> llt_;
};

FitReport fit_admm(const DesignSplit& split, const MscConfig& cfg) {
  const int t0 = split.t0();
  const Eigen::Index n = split.n();
  const Eigen::Index m = split.m();
  const double inv_sqrt_t = 1.0 / std::sqrt(static_cast<double>(t0));

  FitReport report;
  report.method = "msc";
  report.lambda_used = cfg.lambda;

  const double scale = split.y_pre.norm() / std::sqrt(static_cast<double>(split.y_pre.size()));
  Matrix theta_best = Matrix::Zero(n, m);
  double f_best = objective(theta_best, split, cfg.lambda);
  require_finite_objective(f_best, 0);
  report.objective_trace.push_back(f_best);
  if (scale == 0.0) {
    report.theta = std::move(theta_best);
    report.converged = true;
    return report;
  }

  const Matrix y = split.y_pre / scale;
  const Matrix x = split.x_pre / scale;
  const double lambda = cfg.lambda / scale;
  const ThetaSolver solver(x);

  Matrix theta = Matrix::Zero(n, m);
  Matrix b = Matrix::Zero(n, m);
  Matrix r = y;
  Matrix u = Matrix::Zero(t0, m);
  Matrix v = Matrix::Zero(n, m);
  Matrix fitted(t0, m);
  double rho = cfg.rho > 0.0 ? cfg.rho : 1.0;
  const double eps_abs = 1e-3 * cfg.admm_tol;
  const double sqrt_primal = std::sqrt(static_cast<double>(t0 * m + n * m));
  const double sqrt_dual = std::sqrt(static_cast<double>(n * m));

  auto consider = [&](const Matrix& candidate) {
    const double f = objective(candidate, split, cfg.lambda);
    require_finite_objective(f, report.iterations);
    if (f <= f_best - 1e-12) {
      f_best = f;
      theta_best = candidate;
      report.objective_trace.push_back(f);
    }
  };

  for (int it = 1; it <= cfg.max_iter; ++it) {
    report.iterations = it;
    theta = solver.solve(b - v, y - r - u, fitted);

    const Matrix r_old = r;
    const Matrix b_old = b;
    r = singular_value_threshold(y - fitted - u, inv_sqrt_t / rho);
    b = soft_threshold(theta + v, lambda / rho);

    const Matrix primal_fit = fitted + r - y;
    const Matrix primal_link = theta - b;
    u += primal_fit;
    v += primal_link;

    const bool check = it % 10 == 0;
    if (!check) continue;

    const double r_primal =
        std::sqrt(primal_fit.squaredNorm() + primal_link.squaredNorm());
    Matrix dual = x.transpose() * (r - r_old);
    dual -= b - b_old;
    const double r_dual = rho * dual.norm();
    const double eps_primal =
        eps_abs * sqrt_primal +
        cfg.admm_tol * std::max({std::sqrt(fitted.squaredNorm() + theta.squaredNorm()),
                                 std::sqrt(r.squaredNorm() + b.squaredNorm()), y.norm()});
    Matrix dual_scale = x.transpose() * u;
    dual_scale += v;
    const double eps_dual = eps_abs * sqrt_dual + cfg.admm_tol * rho * dual_scale.norm();

    if (it % 50 == 0) consider(b);
    if (r_primal <= eps_primal && r_dual <= eps_dual) {
      report.converged = true;
      break;
    }
    if (r_primal > 10.0 * r_dual) {
      rho *= 2.0;
      u /= 2.0;
      v /= 2.0;
    } else if (r_dual > 10.0 * r_primal) {
      rho /= 2.0;
      u *= 2.0;
      v *= 2.0;
    }
  }
  consider(b);
  report.theta = std::move(theta_best);
  return report;
}

}  // namespace

void MscConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ArgumentError("lambda must be finite and >= 0");
  }
  if (!(c > 1.0)) throw ArgumentError("c must exceed 1");
  if (max_iter < 1) throw ArgumentError("max_iter must be >= 1");
  if (!(tol > 0.0)) throw ArgumentError("tol must be > 0");
  if (!(step_init > 0.0)) throw ArgumentError("step_init must be > 0");
  if (!(step_shrink > 0.0 && step_shrink < 1.0)) {
    throw ArgumentError("step_shrink must lie in (0, 1)");
  }
  if (!(step_floor > 0.0)) throw ArgumentError("step_floor must be > 0");
  if (!(rho >= 0.0)) throw ArgumentError("rho must be >= 0 (0 selects the default)");
  if (!(admm_tol > 0.0)) throw ArgumentError("admm_tol must be > 0");
}

double objective(const Matrix& theta, const DesignSplit& split, double lambda) {
  check_shapes(theta, split);
  const Matrix residual = split.y_pre - split.x_pre * theta;
  const double inv_sqrt_t = 1.0 / std::sqrt(static_cast<double>(split.t0()));
  return inv_sqrt_t * nuclear_norm(residual) + lambda * theta.cwiseAbs().sum();
}

Matrix subgradient_step_direction(const Matrix& residual, const Matrix& x) {
  if (residual.rows() != x.rows()) {
    throw ArgumentError("residual and x must have the same number of rows");
  }
  const double inv_sqrt_t = 1.0 / std::sqrt(static_cast<double>(residual.rows()));
  const PolarFactor polar = polar_factor(residual);
  return -inv_sqrt_t * (x.transpose() * polar.uv);
}

FitReport fit(const DesignSplit& split, const MscConfig& config) {
  split.validate();
  config.validate();
  const auto start = Clock::now();
  FitReport report = config.algorithm == MscAlgorithm::kProximalGradient
                         ? fit_proximal_gradient(split, config)
                         : fit_admm(split, config);
  report.wall_clock_seconds = seconds_since(start);
  if (!report.theta.allFinite()) {
    throw NumericError("fit produced non-finite weights");
  }
  return report;
}

double default_lambda(int n, int t0, double c) {
  if (n < 1 || t0 < 1) throw ArgumentError("n and t0 must be >= 1");
  if (!(c > 1.0)) throw ArgumentError("c must exceed 1");
  const double nd = static_cast<double>(n);
  const double td = static_cast<double>(t0);
  return 2.0 * c * std::pow(nd * std::log(nd * td) / td, 0.25);
}

CvResult cross_validate(const DesignSplit& split, std::span<const double> grid,
                        int blocks, const WeightFitter& fitter, int threads) {
  split.validate();
  if (blocks < 2) throw ArgumentError("cross-validation needs at least 2 blocks");
  const int t0 = split.t0();
  if (t0 < 2 * blocks) {
    throw ArgumentError("t0 = " + std::to_string(t0) + " is too small for " +
                        std::to_string(blocks) + " blocks (need t0 >= 2 * blocks)");
  }
  if (grid.empty()) throw ArgumentError("lambda grid is empty");
  for (double lambda : grid) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
      throw ArgumentError("lambda grid values must be finite and >= 0");
    }
  }

  std::vector<DesignSplit> folds;
  for (int b = 1; b <= blocks; ++b) {
    const auto edge = [&](int k) {
      return static_cast<int>(std::lround(static_cast<double>(t0) * k / (blocks + 1)));
    };
    const int train = std::max(1, edge(b));
    const int stop = std::min(t0, edge(b + 1));
    DesignSplit fold;
    fold.y_pre = split.y_pre.topRows(train);
    fold.x_pre = split.x_pre.topRows(train);
    fold.y_post = split.y_pre.middleRows(train, stop - train);
    fold.x_post = split.x_pre.middleRows(train, stop - train);
    folds.push_back(std::move(fold));
  }

  const std::size_t n_folds = folds.size();
  std::vector<double> scores(grid.size() * n_folds, 0.0);
  parallel_for(scores.size(), threads, [&](std::size_t task) {
    const DesignSplit& fold = folds[task % n_folds];
    const Matrix theta = fitter(fold, grid[task / n_folds]);
    const Matrix err = fold.x_post * theta - fold.y_post;
    scores[task] = std::sqrt(err.squaredNorm() / static_cast<double>(err.size()));
  });

  CvResult result;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    CvRow row;
    row.lambda = grid[g];
    row.fold_rmse.assign(scores.begin() + static_cast<std::ptrdiff_t>(g * n_folds),
                         scores.begin() + static_cast<std::ptrdiff_t>((g + 1) * n_folds));
    double total = 0.0;
    for (double s : row.fold_rmse) total += s;
    row.mean_rmse = total / static_cast<double>(n_folds);
    result.table.push_back(std::move(row));
  }
  const CvRow* best = &result.table.front();
  for (const CvRow& row : result.table) {
    const double tie = 1e-12 * std::max(std::abs(best->mean_rmse), 1.0);
    if (row.mean_rmse < best->mean_rmse - tie ||
        (std::abs(row.mean_rmse - best->mean_rmse) <= tie && row.lambda > best->lambda)) {
      best = &row;
    }
  }
  result.best_lambda = best->lambda;
  return result;
}

CvResult cross_validate(const DesignSplit& split, std::span<const double> grid,
                        int blocks, const MscConfig& base, int threads) {
  const WeightFitter fitter = [base](const DesignSplit& fold, double lambda) {
    MscConfig cfg = base;
    cfg.lambda = lambda;
    return fit(fold, cfg).theta;
  };
  return cross_validate(split, grid, blocks, fitter, threads);
}

}  // namespace msc
