#pragma once

#include "gpstack/cwm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gpstack {

namespace detail {
inline void check_pair(const Vector& yhat, const Vector& y, Index min_n, const char* what) {
  if (yhat.size() != y.size()) throw SchemaError(std::string(what) + ": length mismatch");
  if (y.size() < min_n) throw ValidationError(std::string(what) + ": need at least " + std::to_string(min_n) + " values");
}
}  // namespace detail

inline double mse(const Vector& yhat, const Vector& y) {
  detail::check_pair(yhat, y, 1, "mse");
  return (yhat - y).squaredNorm() / static_cast<double>(y.size());
}

inline double mae(const Vector& yhat, const Vector& y) {
  detail::check_pair(yhat, y, 1, "mae");
  return (yhat - y).cwiseAbs().mean();
}

struct Correlation {
  double value = 0.0;
  bool degenerate = false;  // one input had zero variance; value is reported as 0
};

inline Correlation pearson(const Vector& yhat, const Vector& y) {
  detail::check_pair(yhat, y, 2, "pearson");
  const Vector a = yhat.array() - yhat.mean();
  const Vector b = y.array() - y.mean();
  const double sa = a.norm(), sb = b.norm();
  if (!(sa > 0) || !(sb > 0)) return {0.0, true};
  return {std::clamp(a.dot(b) / (sa * sb), -1.0, 1.0), false};
}

/// Aggregates are means over points. `pointwise_*` hold the per-point values.
struct DecompositionReport {
  double weighted_error = 0.0;  // mean of sum_i beta_i (f - y_i)^2
  double ambiguity = 0.0;       // mean of sum_i beta_i (ybar - y_i)^2
  double ensemble_error = 0.0;  // mean of (f - ybar)^2
  double residual = 0.0;        // largest pointwise |weighted_error - ambiguity - ensemble_error|
  Vector pointwise_weighted_error;
  Vector pointwise_ambiguity;
  Vector pointwise_ensemble_error;
};

inline DecompositionReport ambiguity_decomposition(const Matrix& predictions, const Vector& beta, const Vector& f) {
  if (predictions.cols() != beta.size()) throw SchemaError("ambiguity_decomposition: beta length must equal columns");
  if (predictions.rows() != f.size()) throw SchemaError("ambiguity_decomposition: target length must equal rows");
  if ((beta.array() < 0).any() || std::abs(beta.sum() - 1.0) > 1e-9)
    throw ValidationError("ambiguity_decomposition: beta must lie on the simplex");
  const Vector ybar = predictions * beta;
  DecompositionReport r;
  r.pointwise_weighted_error = (predictions.colwise() - f).array().square().matrix() * beta;
  r.pointwise_ambiguity = ((-predictions).colwise() + ybar).array().square().matrix() * beta;
  r.pointwise_ensemble_error = (f - ybar).array().square();
  r.weighted_error = r.pointwise_weighted_error.mean();
  r.ambiguity = r.pointwise_ambiguity.mean();
  r.ensemble_error = r.pointwise_ensemble_error.mean();
  r.residual =
      (r.pointwise_weighted_error - r.pointwise_ambiguity - r.pointwise_ensemble_error).cwiseAbs().maxCoeff();
  return r;
}

/// Pointwise squared errors of two ensembles against a known target.
struct InequalityReport {
  Vector e_gp;
  Vector e_cwm;
  double mean_gp = 0.0;
  double mean_cwm = 0.0;
  double fraction_gp_not_worse = 0.0;  // share of points with e_gp <= e_cwm
  bool holds_on_average = false;       // mean_gp <= mean_cwm + tolerance
};

inline InequalityReport verify_gp_inequality(const Vector& gp_prediction, const Vector& cwm_prediction,
                                             const Vector& f, double tolerance = 1e-10) {
  if (gp_prediction.size() != f.size() || cwm_prediction.size() != f.size())
    throw SchemaError("verify_gp_inequality: length mismatch");
  if (f.size() < 1) throw ValidationError("verify_gp_inequality: empty input");
  InequalityReport r;
  r.e_gp = (gp_prediction - f).array().square();
  r.e_cwm = (cwm_prediction - f).array().square();
  r.mean_gp = r.e_gp.mean();
  r.mean_cwm = r.e_cwm.mean();
  Index ok = 0;
  for (Index i = 0; i < f.size(); ++i) ok += r.e_gp[i] <= r.e_cwm[i] + tolerance;
  r.fraction_gp_not_worse = static_cast<double>(ok) / static_cast<double>(f.size());
  r.holds_on_average = r.mean_gp <= r.mean_cwm + tolerance;
  return r;
}

}  // namespace gpstack
