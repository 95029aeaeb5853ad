#include "msc/effects.hpp"

#include <cmath>
#include <string>

#include "msc/errors.hpp"

namespace msc {
namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ArgumentError(std::string(what) + ": shapes differ (" + shape(a) + " vs " +
                        shape(b) + ")");
  }
}

}  // namespace

Matrix predict_counterfactual(const Matrix& theta, const Matrix& x_post) {
  if (x_post.cols() != theta.rows()) {
    throw ArgumentError("predict_counterfactual: x_post is " + shape(x_post) +
                        " but theta is " + shape(theta));
  }
  return x_post * theta;
}

EffectReport att(const Matrix& y_post, const Matrix& counterfactuals) {
  require_same_shape(y_post, counterfactuals, "att");
  if (y_post.rows() == 0) throw ArgumentError("no post-treatment periods");
  if (y_post.cols() == 0) throw ArgumentError("no treated units");
  EffectReport report;
  report.counterfactuals = counterfactuals;
  report.per_unit_effects = y_post - counterfactuals;
  report.att_per_period = report.per_unit_effects.rowwise().mean();
  report.att = report.per_unit_effects.mean();
  return report;
}

double rmse(const Matrix& counterfactuals, const Matrix& true_y0) {
  require_same_shape(counterfactuals, true_y0, "rmse");
  if (counterfactuals.size() == 0) throw ArgumentError("rmse of an empty matrix");
  return std::sqrt((counterfactuals - true_y0).squaredNorm() /
                   static_cast<double>(counterfactuals.size()));
}

}  // namespace msc
