#pragma once

#include <string_view>

#include "msc/matops.hpp"
#include "msc/msc_solver.hpp"
#include "msc/panel.hpp"

namespace msc {

// Per-treated-unit comparison estimators. Each treated column is fit on its
// own; nothing is pooled across columns.
enum class BaselineMethod { kPsc, kScul, kRols };

std::string_view baseline_name(BaselineMethod method);

struct BaselineConfig {
  BaselineMethod method = BaselineMethod::kRols;
  double lambda = 0.0;  // PSC and SCUL penalty
  double ridge = 1.0;   // ROLS regularizer
  int max_iter = 10000;
  double tol = 1e-10;
  // ROLS: factor X'X + ridge*I once and share it (default), or redo the
  // factorization for every treated unit as a stand-alone per-unit fit would.
  bool rols_per_unit = false;
  // Fit columns on this many threads. Timing runs keep this at 1.
  int threads = 1;

  void validate() const;
};

struct BaselineWeights {
  Matrix theta;  // n x m
  int unconverged_columns = 0;
};

// Lasso per column, min (1/(2 T0)) ||y - Xw||^2 + lambda ||w||_1, by cyclic
// coordinate descent on the covariance form. Columns that hit max_iter are
// counted, not rejected.
BaselineWeights fit_scul(const DesignSplit& split, double lambda,
                         const BaselineConfig& config = {});

// Sum-to-one ridge per column: min ||y - Xw||^2 + ridge ||w||^2 s.t. 1'w = 1,
// from the KKT closed form. Throws RankDeficiencyError if X'X + ridge*I cannot
// be factored.
BaselineWeights fit_rols(const DesignSplit& split, double ridge,
                         const BaselineConfig& config = {});

// Penalized synthetic control per column over the simplex:
// min ||y - Xw||^2 + lambda * sum_k w_k ||y - x_k||^2, by projected gradient
// with backtracking.
BaselineWeights fit_psc(const DesignSplit& split, double lambda,
                        const BaselineConfig& config = {});

// Dispatches on config.method; the reported wall clock covers the weight
// computation only.
FitReport fit_baseline(const DesignSplit& split, const BaselineConfig& config);

}  // namespace msc
