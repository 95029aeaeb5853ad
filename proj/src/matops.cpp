#include "msc/matops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "msc/errors.hpp"

namespace msc {
namespace {

constexpr int kMaxSweeps = 80;

struct JacobiResult {
  Matrix w;  // columns are u_j * d_j
  Matrix v;
};

// Hestenes one-sided Jacobi on a tall (rows >= cols) matrix. Rotates column
// pairs in cyclic order until every pair is orthogonal to sqrt(rows) * eps
// (floored at 4 eps); a bare eps test can stall on a pair whose rotation no
// longer changes anything in floating point.
JacobiResult one_sided_jacobi(Matrix w, bool want_v) {
  const Eigen::Index cols = w.cols();
  Matrix v;
  if (want_v) v = Matrix::Identity(cols, cols);
  const double tol = std::numeric_limits<double>::epsilon() *
                    std::sqrt(std::max(static_cast<double>(w.rows()), 16.0));

  int sweep = 0;
  for (;; ++sweep) {
    if (sweep == kMaxSweeps) {
      throw NumericError("Jacobi SVD did not converge after " +
                         std::to_string(kMaxSweeps) + " sweeps");
    }
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < cols; ++p) {
      for (Eigen::Index q = p + 1; q < cols; ++q) {
        auto cp = w.col(p);
        auto cq = w.col(q);
        const double alpha = cp.squaredNorm();
        const double beta = cq.squaredNorm();
        const double gamma = cp.dot(cq);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
          const double a = w(i, p);
          const double b = w(i, q);
          w(i, p) = c * a - s * b;
          w(i, q) = s * a + c * b;
        }
        if (want_v) {
          for (Eigen::Index i = 0; i < cols; ++i) {
            const double a = v(i, p);
            const double b = v(i, q);
            v(i, p) = c * a - s * b;
            v(i, q) = s * a + c * b;
          }
        }
      }
    }
    if (!rotated) break;
  }
  return {std::move(w), std::move(v)};
}

// Extends the columns of `u` flagged in `fill` to an orthonormal set using
// unit vectors and two rounds of Gram-Schmidt.
void complete_orthonormal(Matrix& u, const std::vector<bool>& fill) {
  Eigen::Index candidate = 0;
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    if (!fill[static_cast<std::size_t>(j)]) continue;
    for (; candidate < u.rows(); ++candidate) {
      Vector e = Vector::Unit(u.rows(), candidate);
      for (int round = 0; round < 2; ++round) {
        for (Eigen::Index k = 0; k < u.cols(); ++k) {
          if (k == j || (fill[static_cast<std::size_t>(k)] && k > j)) continue;
          e -= u.col(k).dot(e) * u.col(k);
        }
      }
      const double norm = e.norm();
      if (norm > 1e-8) {
        u.col(j) = e / norm;
        ++candidate;
        break;
      }
    }
  }
}

void require_finite(const Matrix& mat) {
  if (!mat.allFinite()) throw ArgumentError("matrix has non-finite entries");
}

// Reduces a tall matrix to its square triangular factor before the Jacobi
// sweeps; the sweeps then run on k-length columns instead of rows-length ones.
struct Reduced {
  Matrix r;
  Matrix q;  // empty when no reduction was applied
};

Reduced reduce_tall(const Matrix& tall, bool want_q) {
  const Eigen::Index k = tall.cols();
  if (tall.rows() <= k + k / 2) return {tall, Matrix()};
  Eigen::HouseholderQR<Matrix> qr(tall);
  Reduced out;
  out.r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  if (want_q) out.q = qr.householderQ() * Matrix::Identity(tall.rows(), k);
  return out;
}

}  // namespace

SvdFactors svd(const Matrix& mat) {
  require_finite(mat);
  const bool wide = mat.rows() < mat.cols();
  const Matrix tall = wide ? Matrix(mat.transpose()) : mat;
  const Eigen::Index k = tall.cols();

  Reduced reduced = reduce_tall(tall, true);
  JacobiResult jr = one_sided_jacobi(std::move(reduced.r), true);

  Vector d(k);
  for (Eigen::Index j = 0; j < k; ++j) d(j) = jr.w.col(j).norm();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return d(a) > d(b); });

  Matrix u_small(jr.w.rows(), k);
  Matrix v(k, k);
  Vector d_sorted(k);
  std::vector<bool> fill(static_cast<std::size_t>(k), false);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index src = order[static_cast<std::size_t>(j)];
    d_sorted(j) = d(src);
    v.col(j) = jr.v.col(src);
    if (d(src) > std::numeric_limits<double>::min()) {
      u_small.col(j) = jr.w.col(src) / d(src);
    } else {
      u_small.col(j).setZero();
      fill[static_cast<std::size_t>(j)] = true;
    }
  }
  complete_orthonormal(u_small, fill);
  Matrix u = reduced.q.size() > 0 ? Matrix(reduced.q * u_small) : u_small;

  if (wide) return {std::move(v), std::move(d_sorted), std::move(u)};
  return {std::move(u), std::move(d_sorted), std::move(v)};
}

Vector singular_values(const Matrix& mat) {
  require_finite(mat);
  const Matrix tall = mat.rows() < mat.cols() ? Matrix(mat.transpose()) : mat;
  JacobiResult jr = one_sided_jacobi(reduce_tall(tall, false).r, false);
  Vector d = jr.w.colwise().norm().transpose();
  std::sort(d.begin(), d.end(), std::greater<>());
  return d;
}

double nuclear_norm(const Matrix& mat) {
  if (mat.size() == 0) return 0.0;
  return singular_values(mat).sum();
}

Matrix soft_threshold(const Matrix& mat, double tau) {
  if (tau < 0.0) throw ArgumentError("soft_threshold needs tau >= 0");
  return mat.unaryExpr([tau](double x) { return soft_threshold(x, tau); });
}

Matrix ols_multi(const Matrix& x, const Matrix& y, double ridge) {
  if (ridge < 0.0) throw ArgumentError("ridge must be nonnegative");
  if (x.rows() != y.rows()) {
    throw ArgumentError("x and y must have the same number of rows");
  }
  const Eigen::Index n = x.cols();
  Matrix gram = Matrix::Zero(n, n);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  gram = gram.selfadjointView<Eigen::Lower>();
  gram.diagonal().array() += ridge;

  Eigen::LLT<Matrix> llt(gram);
  const double scale = std::max(gram.diagonal().maxCoeff(), 1.0);
  if (llt.info() != Eigen::Success ||
      llt.matrixLLT().diagonal().array().square().minCoeff() < 1e-12 * scale) {
    throw RankDeficiencyError(
        "x'x + ridge*I is singular or indefinite; use ridge > 0 or the "
        "square-root lasso estimator");
  }
  return llt.solve(x.transpose() * y);
}

Vector project_simplex(std::span<const double> w) {
  if (w.empty()) throw ArgumentError("cannot project an empty vector");
  std::vector<double> sorted(w.begin(), w.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double shift = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumulative += sorted[k];
    const double candidate = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (sorted[k] - candidate > 0.0) shift = candidate;
  }
  Vector out(static_cast<Eigen::Index>(w.size()));
  for (std::size_t i = 0; i < w.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = std::max(w[i] - shift, 0.0);
  }
  const double total = out.sum();
  if (total > 0.0) {
    out /= total;
  } else {
    // Only reachable through overflow in the inputs.
    out.setConstant(1.0 / static_cast<double>(w.size()));
  }
  return out;
}

Vector project_simplex(const Vector& w) {
  return project_simplex(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
}

Matrix singular_value_threshold(const Matrix& mat, double tau) {
  if (tau < 0.0) throw ArgumentError("singular_value_threshold needs tau >= 0");
  require_finite(mat);
  const bool wide = mat.rows() < mat.cols();
  const Eigen::Index k = wide ? mat.rows() : mat.cols();
  Matrix gram = Matrix::Zero(k, k);
  if (wide) {
    gram.selfadjointView<Eigen::Lower>().rankUpdate(mat);
  } else {
    gram.selfadjointView<Eigen::Lower>().rankUpdate(mat.transpose());
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  if (eig.info() != Eigen::Success) {
    throw NumericError("eigensolver failed in singular_value_threshold");
  }
  Vector shrink(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double sigma = std::sqrt(std::max(eig.eigenvalues()(i), 0.0));
    shrink(i) = sigma > tau ? (sigma - tau) / sigma : 0.0;
  }
  const Matrix& basis = eig.eigenvectors();
  const Matrix projector = basis * shrink.asDiagonal() * basis.transpose();
  return wide ? Matrix(projector * mat) : Matrix(mat * projector);
}

PolarFactor polar_factor(const Matrix& mat) {
  PolarFactor out;
  out.uv = Matrix::Zero(mat.rows(), mat.cols());
  if (mat.size() == 0 || mat.isZero(0.0)) return out;
  const SvdFactors f = svd(mat);
  const double cutoff = kRankTolerance * f.d(0);
  for (Eigen::Index j = 0; j < f.d.size(); ++j) {
    out.nuclear_norm += f.d(j);
    if (f.d(j) > cutoff) ++out.rank;
  }
  out.uv.noalias() = f.u.leftCols(out.rank) * f.v.leftCols(out.rank).transpose();
  return out;
}

}  // namespace msc
