#include "msc/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "msc/errors.hpp"
#include "msc/parallel.hpp"

namespace msc {
namespace {

Matrix gram_of(const Matrix& x) {
  Matrix gram = Matrix::Zero(x.cols(), x.cols());
  gram.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  return gram.selfadjointView<Eigen::Lower>();
}

// ---------------------------------------------------------------------------
// SCUL: covariance-update coordinate descent.
//
// `corr` tracks X'(y - Xw), so a coordinate update costs one Gram column.
// Donor paths are strongly collinear (every unit sits on its own level), which
// makes plain sweeps crawl; after each sweep the sign-fixed subproblem on the
// active set is solved exactly and the iterate moves toward that solution,
// stopping at the first sign change. Both moves only lower the objective.
// Converged means the lasso KKT conditions hold to `tol`.

double kkt_violation(const Vector& w, const Vector& corr, double t0, double lambda) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    const double c = corr(k) / t0;
    const double gap = w(k) == 0.0 ? std::abs(c) - lambda
                                   : std::abs(c - std::copysign(lambda, w(k)));
    worst = std::max(worst, gap);
  }
  return worst;
}

// Moves w toward the minimizer of the lasso objective restricted to the
// current support and signs. When the support's Gram block is singular (more
// active donors than the data can separate) the restricted objective is flat
// or linear along its null space: if the right-hand side has a null-space
// component the step follows it downhill, otherwise it goes to the
// minimum-change solution. Either way the move stops at the first sign change.
// Returns 0 if no move is possible, 1 if the step reached its target, and 2 if
// a coordinate was dropped on the way.
int active_set_step(const Matrix& gram, const Vector& xty, double threshold,
                    Vector& w) {
  std::vector<Eigen::Index> active;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    if (w(k) != 0.0) active.push_back(k);
  }
  if (active.empty()) return 0;
  const auto a = static_cast<Eigen::Index>(active.size());
  Matrix sub(a, a);
  Vector rhs(a);
  Vector current(a);
  for (Eigen::Index p = 0; p < a; ++p) {
    const Eigen::Index k = active[static_cast<std::size_t>(p)];
    for (Eigen::Index q = 0; q < a; ++q) sub(p, q) = gram(k, active[static_cast<std::size_t>(q)]);
    current(p) = w(k);
    rhs(p) = xty(k) - std::copysign(threshold, w(k));
  }

  Vector direction;  // the move is current + step * direction, step in [0, max_step]
  double max_step = 1.0;
  Eigen::LLT<Matrix> llt(sub);
  const double scale = std::max(sub.diagonal().maxCoeff(), 1.0);
  if (llt.info() == Eigen::Success &&
      llt.matrixLLT().diagonal().array().square().minCoeff() >= 1e-12 * scale) {
    direction = llt.solve(rhs) - current;
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sub);
    if (eig.info() != Eigen::Success) return 0;
    const Vector& ev = eig.eigenvalues();
    const Matrix& vecs = eig.eigenvectors();
    const double cutoff = 1e-10 * std::max(ev.cwiseAbs().maxCoeff(), 1.0);
    const Vector gradient = rhs - sub * current;  // negative gradient
    const Vector coef = vecs.transpose() * gradient;
    Vector null_part = Vector::Zero(a);
    Vector range_part = Vector::Zero(a);
    for (Eigen::Index i = 0; i < a; ++i) {
      if (ev(i) > cutoff) {
        range_part += (coef(i) / ev(i)) * vecs.col(i);
      } else {
        null_part += coef(i) * vecs.col(i);
      }
    }
    if (null_part.norm() > 1e-9 * std::max(gradient.norm(), 1e-300)) {
      // Linear decrease along null_part; only a sign change can stop it.
      direction = null_part;
      max_step = std::numeric_limits<double>::infinity();
    } else {
      direction = range_part;
    }
  }

  double step = max_step;
  Eigen::Index blocking = -1;
  for (Eigen::Index p = 0; p < a; ++p) {
    if (direction(p) != 0.0 && std::signbit(direction(p)) != std::signbit(current(p))) {
      const double cross = -current(p) / direction(p);
      if (cross < step) {
        step = cross;
        blocking = p;
      }
    }
  }
  if (!std::isfinite(step)) return 0;
  for (Eigen::Index p = 0; p < a; ++p) {
    const Eigen::Index k = active[static_cast<std::size_t>(p)];
    const double next = current(p) + step * direction(p);
    // Guard against rounding flipping a sign that should have stayed put.
    w(k) = p == blocking || std::signbit(next) != std::signbit(current(p)) ? 0.0 : next;
  }
  return blocking < 0 ? 1 : 2;
}

// Solves from the warm start in w.
bool lasso_stage(const Matrix& gram, const Vector& xty, double t0, double lambda,
                 int max_iter, double tol, Vector& w) {
  const Eigen::Index n = gram.rows();
  const double threshold = t0 * lambda;
  Vector corr = xty - gram * w;

  for (int sweep = 0; sweep < max_iter; ++sweep) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const double gkk = gram(k, k);
      if (gkk <= 0.0) continue;
      const double next = soft_threshold(corr(k) + gkk * w(k), threshold) / gkk;
      const double delta = next - w(k);
      if (delta != 0.0) {
        corr.noalias() -= delta * gram.col(k);
        w(k) = next;
      }
    }
    // Recompute rather than trust the running updates.
    corr = xty - gram * w;
    if (kkt_violation(w, corr, t0, lambda) <= tol) return true;
    // Shrink the support until the sign-fixed solution is reachable.
    int status = 2;
    for (Eigen::Index drop = 0; status == 2 && drop < n; ++drop) {
      status = active_set_step(gram, xty, threshold, w);
    }
    if (status != 0) {
      corr = xty - gram * w;
      if (kkt_violation(w, corr, t0, lambda) <= tol) return true;
    }
  }
  return false;
}

// A cold start at a small penalty activates most donors in the first sweep and
// then sheds them one singular active-set step at a time; walking down a
// geometric penalty path keeps the support near its final size throughout.
bool lasso_column(const Matrix& gram, const Vector& xty, double t0, double lambda,
                  int max_iter, double tol, Vector& w) {
  constexpr int kStages = 30;
  w.setZero(gram.rows());
  const double lambda_max = xty.cwiseAbs().maxCoeff() / t0;
  if (lambda >= lambda_max) return true;
  const double ratio = std::pow(lambda / lambda_max, 1.0 / kStages);
  for (int stage = 1; stage < kStages; ++stage) {
    lasso_stage(gram, xty, t0, lambda_max * std::pow(ratio, stage), max_iter, tol, w);
  }
  return lasso_stage(gram, xty, t0, lambda, max_iter, tol, w);
}

// ---------------------------------------------------------------------------
// ROLS: sum-to-one ridge.

Eigen::LLT<Matrix> factor_ridge(const Matrix& x, double ridge) {
  Matrix system = gram_of(x);
  system.diagonal().array() += ridge;
  Eigen::LLT<Matrix> llt(system);
  const double scale = std::max(system.diagonal().maxCoeff(), 1.0);
  if (llt.info() != Eigen::Success ||
      llt.matrixLLT().diagonal().array().square().minCoeff() < 1e-12 * scale) {
    throw RankDeficiencyError(
        "x'x + ridge*I is singular; ROLS needs ridge > 0 when donors outnumber "
        "pre-treatment periods");
  }
  return llt;
}

Vector sum_to_one_solve(const Eigen::LLT<Matrix>& llt, const Vector& xty) {
  const Vector ones = Vector::Ones(xty.size());
  const Vector z = llt.solve(xty);
  const Vector a = llt.solve(ones);
  const double mu = (z.sum() - 1.0) / a.sum();
  return z - mu * a;
}

// ---------------------------------------------------------------------------
// PSC: projected gradient over the simplex.
//
// Each iteration takes a backtracking projected-gradient step, then moves
// toward the exact minimizer on the current face (support fixed, sum-to-one
// equality only), stopping where a weight would turn negative. The face step
// is what makes progress along the nearly collinear donor directions.

struct PscColumn {
  Vector w;
  bool converged = false;
};

// Simplex KKT gap: on the support the gradient must be constant, off the
// support it must not be smaller.
double simplex_kkt_gap(const Vector& w, const Vector& grad) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  double off_min = lo;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    if (w(k) > 0.0) {
      lo = std::min(lo, grad(k));
      hi = std::max(hi, grad(k));
    } else {
      off_min = std::min(off_min, grad(k));
    }
  }
  return std::max(hi - lo, std::max(0.0, lo - off_min));
}

// Same status codes as active_set_step.
int face_step(const Matrix& x, const Vector& y, const Vector& penalty, Vector& w) {
  std::vector<Eigen::Index> support;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    if (w(k) > 0.0) support.push_back(k);
  }
  const auto a = static_cast<Eigen::Index>(support.size());
  if (a < 2 || a > x.rows()) return 0;
  Matrix xs(x.rows(), a);
  Vector current(a);
  Vector lin(a);
  for (Eigen::Index p = 0; p < a; ++p) {
    const Eigen::Index k = support[static_cast<std::size_t>(p)];
    xs.col(p) = x.col(k);
    current(p) = w(k);
    lin(p) = penalty(k) / 2.0;
  }
  const Matrix gram = xs.transpose() * xs;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) return 0;
  const double scale = std::max(gram.diagonal().maxCoeff(), 1.0);
  if (llt.matrixLLT().diagonal().array().square().minCoeff() < 1e-12 * scale) return 0;
  const Vector z = llt.solve(Vector(xs.transpose() * y - lin));
  const Vector g1 = llt.solve(Vector::Ones(a));
  const Vector target = z + ((1.0 - z.sum()) / g1.sum()) * g1;

  double step = 1.0;
  Eigen::Index blocking = -1;
  for (Eigen::Index p = 0; p < a; ++p) {
    if (target(p) < 0.0) {
      const double cross = current(p) / (current(p) - target(p));
      if (cross < step) {
        step = cross;
        blocking = p;
      }
    }
  }
  for (Eigen::Index p = 0; p < a; ++p) {
    const Eigen::Index k = support[static_cast<std::size_t>(p)];
    w(k) = p == blocking ? 0.0 : std::max(current(p) + step * (target(p) - current(p)), 0.0);
  }
  w /= w.sum();
  return blocking < 0 ? 1 : 2;
}

PscColumn psc_column(const Matrix& x, const Vector& y, double lambda, int max_iter,
                     double tol) {
  const Eigen::Index n = x.cols();
  const Vector penalty = lambda * (x.colwise() - y).colwise().squaredNorm().transpose();

  auto value = [&](const Vector& w, Vector& resid) {
    resid = x * w - y;
    return resid.squaredNorm() + penalty.dot(w);
  };
  auto gradient = [&](const Vector& resid) {
    Vector grad = 2.0 * (x.transpose() * resid);
    grad += penalty;
    return grad;
  };

  PscColumn out;
  Vector w = Vector::Constant(n, 1.0 / static_cast<double>(n));
  Vector resid;
  double f = value(w, resid);
  // Start from the inverse of a cheap curvature bound; backtracking and the
  // growth step adapt it from there.
  double step = 1.0 / std::max(2.0 * x.squaredNorm(), 1e-300);
  Vector trial_resid;
  for (int it = 0; it < max_iter; ++it) {
    const Vector grad = gradient(resid);
    if (simplex_kkt_gap(w, grad) <= tol * std::max(grad.cwiseAbs().maxCoeff(), 1.0)) {
      out.converged = true;
      break;
    }
    Vector trial;
    double f_trial = 0.0;
    for (;;) {
      trial = project_simplex(Vector(w - step * grad));
      const Vector diff = trial - w;
      f_trial = value(trial, trial_resid);
      if (f_trial <= f + grad.dot(diff) + diff.squaredNorm() / (2.0 * step) + 1e-14 * std::abs(f)) {
        break;
      }
      step *= 0.5;
      if (step < 1e-300) break;
    }
    if (f_trial < f) {
      w = std::move(trial);
      resid.swap(trial_resid);
      f = f_trial;
    }
    step *= 2.0;

    Vector polished = w;
    int status = 2;
    for (Eigen::Index drop = 0; status == 2 && drop < n; ++drop) {
      status = face_step(x, y, penalty, polished);
    }
    if (status != 0) {
      const double f_polished = value(polished, trial_resid);
      if (f_polished <= f) {
        w = std::move(polished);
        resid.swap(trial_resid);
        f = f_polished;
      }
    }
  }
  out.w = std::move(w);
  return out;
}

void check_penalty(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ArgumentError("lambda must be finite and >= 0");
  }
}

}  // namespace

std::string_view baseline_name(BaselineMethod method) {
  switch (method) {
    case BaselineMethod::kPsc: return "psc";
    case BaselineMethod::kScul: return "scul";
    case BaselineMethod::kRols: return "rols";
  }
  throw ArgumentError("unknown baseline method");
}

void BaselineConfig::validate() const {
  check_penalty(lambda);
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) {
    throw ArgumentError("ridge must be finite and >= 0");
  }
  if (max_iter < 1) throw ArgumentError("max_iter must be >= 1");
  if (!(tol > 0.0)) throw ArgumentError("tol must be > 0");
  if (threads < 1) throw ArgumentError("threads must be >= 1");
}

BaselineWeights fit_scul(const DesignSplit& split, double lambda,
                         const BaselineConfig& config) {
  split.validate();
  check_penalty(lambda);
  config.validate();
  const Matrix gram = gram_of(split.x_pre);
  const Matrix xty = split.x_pre.transpose() * split.y_pre;
  const double t0 = static_cast<double>(split.t0());

  BaselineWeights out;
  out.theta.resize(split.n(), split.m());
  std::vector<char> converged(static_cast<std::size_t>(split.m()), 0);
  parallel_for(converged.size(), config.threads, [&](std::size_t j) {
    const auto col = static_cast<Eigen::Index>(j);
    Vector w;
    converged[j] = lasso_column(gram, xty.col(col), t0, lambda, config.max_iter,
                                config.tol, w);
    out.theta.col(col) = w;
  });
  out.unconverged_columns =
      static_cast<int>(std::count(converged.begin(), converged.end(), 0));
  return out;
}

BaselineWeights fit_rols(const DesignSplit& split, double ridge,
                         const BaselineConfig& config) {
  split.validate();
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) {
    throw ArgumentError("ridge must be finite and >= 0");
  }
  config.validate();
  const Matrix& x = split.x_pre;
  BaselineWeights out;
  out.theta.resize(split.n(), split.m());

  if (!config.rols_per_unit) {
    const Eigen::LLT<Matrix> llt = factor_ridge(x, ridge);
    const Matrix xty = x.transpose() * split.y_pre;
    parallel_for(static_cast<std::size_t>(split.m()), config.threads, [&](std::size_t j) {
      const auto col = static_cast<Eigen::Index>(j);
      out.theta.col(col) = sum_to_one_solve(llt, xty.col(col));
    });
    return out;
  }
  parallel_for(static_cast<std::size_t>(split.m()), config.threads, [&](std::size_t j) {
    const auto col = static_cast<Eigen::Index>(j);
    const Eigen::LLT<Matrix> llt = factor_ridge(x, ridge);
    out.theta.col(col) = sum_to_one_solve(llt, x.transpose() * split.y_pre.col(col));
  });
  return out;
}

BaselineWeights fit_psc(const DesignSplit& split, double lambda,
                        const BaselineConfig& config) {
  split.validate();
  check_penalty(lambda);
  config.validate();
  BaselineWeights out;
  out.theta.resize(split.n(), split.m());
  std::vector<char> converged(static_cast<std::size_t>(split.m()), 0);
  parallel_for(converged.size(), config.threads, [&](std::size_t j) {
    const auto col = static_cast<Eigen::Index>(j);
    PscColumn fit = psc_column(split.x_pre, split.y_pre.col(col), lambda,
                               config.max_iter, config.tol);
    converged[j] = fit.converged;
    out.theta.col(col) = fit.w;
  });
  out.unconverged_columns =
      static_cast<int>(std::count(converged.begin(), converged.end(), 0));
  return out;
}

FitReport fit_baseline(const DesignSplit& split, const BaselineConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  BaselineWeights weights;
  double used = config.lambda;
  switch (config.method) {
    case BaselineMethod::kPsc:
      weights = fit_psc(split, config.lambda, config);
      break;
    case BaselineMethod::kScul:
      weights = fit_scul(split, config.lambda, config);
      break;
    case BaselineMethod::kRols:
      weights = fit_rols(split, config.ridge, config);
      used = config.ridge;
      break;
    default:
      throw ArgumentError("unknown baseline method");
  }
  FitReport report;
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.theta = std::move(weights.theta);
  report.lambda_used = used;
  report.method = std::string(baseline_name(config.method));
  report.unconverged_columns = weights.unconverged_columns;
  report.converged = weights.unconverged_columns == 0;
  report.iterations = 0;
  return report;
}

}  // namespace msc
