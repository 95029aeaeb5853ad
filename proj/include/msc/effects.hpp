#pragma once

#include <optional>

#include "msc/matops.hpp"

namespace msc {

struct EffectReport {
  Matrix counterfactuals;    // T1 x m
  Matrix per_unit_effects;   // T1 x m, observed minus counterfactual
  Vector att_per_period;     // T1, mean over treated units
  double att = 0.0;          // mean over every post cell
  std::optional<double> rmse;      // simulation only
  std::optional<double> att_bias;  // simulation only
};

// x_post * theta.
Matrix predict_counterfactual(const Matrix& theta, const Matrix& x_post);

// Throws ArgumentError when there are no post-treatment periods or the shapes
// differ.
EffectReport att(const Matrix& y_post, const Matrix& counterfactuals);

// sqrt(mean((counterfactuals - true_y0)^2)).
double rmse(const Matrix& counterfactuals, const Matrix& true_y0);

}  // namespace msc
