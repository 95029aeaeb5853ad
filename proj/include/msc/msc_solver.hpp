#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "msc/matops.hpp"
#include "msc/panel.hpp"

namespace msc {

// How `fit` minimizes the square-root lasso objective.
enum class MscAlgorithm {
  // Alternating direction method of multipliers with exact block updates.
  // Handles rank-deficient residuals, where the loss is not differentiable.
  kAdmm,
  // Proximal gradient on the total objective with backtracking, using the
  // polar factor of the residual as the loss gradient.
  kProximalGradient,
};

struct MscConfig {
  double lambda = 0.0;
  double c = 1.1;  // constant in default_lambda, must exceed 1
  int max_iter = 10000;
  double tol = 1e-8;  // relative objective change
  double step_init = 1.0;
  double step_shrink = 0.5;
  double step_floor = 1e-12;
  MscAlgorithm algorithm = MscAlgorithm::kAdmm;
  double rho = 0.0;        // ADMM penalty; 0 picks the default, then adapts
  double admm_tol = 1e-3;  // relative primal/dual residual tolerance

  // Throws ArgumentError on out-of-range values.
  void validate() const;
};

struct FitReport {
  Matrix theta;  // n x m; column j holds donor weights for treated unit j
  double lambda_used = 0.0;
  int iterations = 0;
  std::vector<double> objective_trace;  // accepted iterates, nonincreasing
  bool converged = false;
  double wall_clock_seconds = 0.0;
  std::string method;
  // Baseline fits flag columns that hit their iteration cap here.
  int unconverged_columns = 0;
};

// (1/sqrt(T0)) * ||Y - X theta||_* + lambda * sum |theta_ij|.
double objective(const Matrix& theta, const DesignSplit& split, double lambda);

// Loss gradient -(1/sqrt(T0)) X' U_E V_E' for the given residual, restricted
// to singular directions above kRankTolerance * d_max. Zero residual gives the
// zero matrix.
Matrix subgradient_step_direction(const Matrix& residual, const Matrix& x);

FitReport fit(const DesignSplit& split, const MscConfig& config);

// 2 c (n ln(n t0) / t0)^(1/4).
double default_lambda(int n, int t0, double c = 1.1);

struct CvRow {
  double lambda = 0.0;
  double mean_rmse = 0.0;
  std::vector<double> fold_rmse;
};

struct CvResult {
  double best_lambda = 0.0;
  std::vector<CvRow> table;  // grid order
};

// Fits weights for a (training) split at one penalty level.
using WeightFitter = std::function<Matrix(const DesignSplit&, double)>;

// Rolling-origin cross-validation over the pre-treatment rows. Fold b
// (1..blocks) trains on the first round(t0 * b / (blocks + 1)) rows and scores
// RMSE on the following block. Ties go to the larger penalty. Folds run on up
// to `threads` workers and are merged by fold index.
CvResult cross_validate(const DesignSplit& split, std::span<const double> grid,
                        int blocks, const WeightFitter& fitter, int threads = 1);

// Same, with the square-root lasso as the fitter.
CvResult cross_validate(const DesignSplit& split, std::span<const double> grid,
                        int blocks = 5, const MscConfig& base = {},
                        int threads = 1);

}  // namespace msc
