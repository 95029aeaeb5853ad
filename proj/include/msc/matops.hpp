#pragma once

#include <Eigen/Dense>
#include <span>

namespace msc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Thin SVD: input = u * diag(d) * v', with k = min(rows, cols).
struct SvdFactors {
  Matrix u;  // rows x k, orthonormal columns
  Vector d;  // k, nonnegative, descending
  Matrix v;  // cols x k, orthonormal columns

  Matrix reconstruct() const { return u * d.asDiagonal() * v.transpose(); }
};

// Singular values below this fraction of the largest one are treated as zero
// when forming the polar factor of a residual.
inline constexpr double kRankTolerance = 1e-12;

// One-sided (Hestenes) Jacobi SVD with a fixed cyclic sweep order. Throws
// NumericError if the sweeps do not converge, and ArgumentError on non-finite
// input.
SvdFactors svd(const Matrix& mat);

// Singular values only, descending.
Vector singular_values(const Matrix& mat);

double nuclear_norm(const Matrix& mat);

// Entrywise sign(x) * max(|x| - tau, 0).
Matrix soft_threshold(const Matrix& mat, double tau);

inline double soft_threshold(double x, double tau) {
  if (x > tau) return x - tau;
  if (x < -tau) return x + tau;
  return 0.0;
}

// Solves (x'x + ridge I) theta = x'y for all columns of y with a single
// Cholesky factorization. Throws RankDeficiencyError when the system is
// singular or numerically indefinite.
Matrix ols_multi(const Matrix& x, const Matrix& y, double ridge);

// Euclidean projection onto {w >= 0, sum(w) = 1} by sort-and-shift.
Vector project_simplex(std::span<const double> w);
Vector project_simplex(const Vector& w);

// Proximal map of tau * ||.||_*: shrinks every singular value by tau. Uses a
// symmetric eigendecomposition of the smaller Gram matrix, which is accurate
// for the singular values that survive the shrinkage.
Matrix singular_value_threshold(const Matrix& mat, double tau);

// Polar factor U_E V_E' of `mat` restricted to singular directions above
// kRankTolerance * d_max, plus the nuclear norm. Zero matrix -> zero factor.
struct PolarFactor {
  Matrix uv;
  double nuclear_norm = 0.0;
  int rank = 0;
};
PolarFactor polar_factor(const Matrix& mat);

}  // namespace msc
