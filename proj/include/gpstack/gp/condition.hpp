#pragma once

#include "gpstack/gp/kernel.hpp"

#include <numbers>
#include <optional>

namespace gpstack {

/// Predictive distribution of the latent mean at the prediction points.
struct GpPosterior {
  Vector mean;
  Vector variance;                   // diagonal of the predictive covariance
  std::optional<Matrix> covariance;  // full matrix, only when requested
};

namespace detail {

inline void check_conformal(const Vector& y, const Vector& mean_train, const Vector& mean_pred, const Matrix& K_train,
                            const Matrix& K_cross) {
  const Index n = y.size();
  if (mean_train.size() != n || K_train.rows() != n || K_train.cols() != n || K_cross.cols() != n ||
      K_cross.rows() != mean_pred.size())
    throw SchemaError("gp_condition_dense: non-conformal dimensions");
}

}  // namespace detail

/// mu* = m' + K' (K + s I)^-1 (y - m);  Sigma* = K'' - K' (K + s I)^-1 K'^T, via Cholesky solves.
/// `K_cross` is prediction x training.
inline GpPosterior gp_condition_dense(const Vector& y, const Vector& mean_train, const Vector& mean_pred,
                                      const Matrix& K_train, const Matrix& K_cross, const Matrix& K_pred,
                                      double sigma_e2, bool full_covariance = false) {
  detail::check_conformal(y, mean_train, mean_pred, K_train, K_cross);
  if (K_pred.rows() != mean_pred.size() || K_pred.cols() != mean_pred.size())
    throw SchemaError("gp_condition_dense: K_pred must be square over the prediction points");
  if (!(sigma_e2 >= 0)) throw ValidationError("gp_condition_dense: sigma_e2 must be >= 0");

  Matrix Ky = K_train;
  Ky.diagonal().array() += sigma_e2;
  const auto chol = robust_cholesky(Ky);
  GpPosterior post;
  const Vector alpha = chol.llt.solve(y - mean_train);
  post.mean = mean_pred + K_cross * alpha;
  const Matrix V = chol.llt.matrixL().solve(K_cross.transpose());
  if (full_covariance) {
    Matrix S = K_pred - V.transpose() * V;
    S = 0.5 * (S + S.transpose());
    post.variance = S.diagonal();
    post.covariance = std::move(S);
  } else {
    post.variance = K_pred.diagonal() - V.colwise().squaredNorm().transpose();
  }
  return post;
}

/// Diagonal-only variant: `prior_var` holds the prior variance at each prediction point.
inline GpPosterior gp_condition_dense_diag(const Vector& y, const Vector& mean_train, const Vector& mean_pred,
                                           const Matrix& K_train, const Matrix& K_cross, const Vector& prior_var,
                                           double sigma_e2) {
  detail::check_conformal(y, mean_train, mean_pred, K_train, K_cross);
  Matrix Ky = K_train;
  Ky.diagonal().array() += sigma_e2;
  const auto chol = robust_cholesky(Ky);
  GpPosterior post;
  post.mean = mean_pred + K_cross * chol.llt.solve(y - mean_train);
  const Matrix V = chol.llt.matrixL().solve(K_cross.transpose());
  post.variance = prior_var - V.colwise().squaredNorm().transpose();
  return post;
}

inline double log_marginal_likelihood(const Vector& y, const Vector& mean_train, const Matrix& K_train,
                                      double sigma_e2) {
  const Index n = y.size();
  if (mean_train.size() != n || K_train.rows() != n || K_train.cols() != n)
    throw SchemaError("log_marginal_likelihood: non-conformal dimensions");
  Matrix Ky = K_train;
  Ky.diagonal().array() += sigma_e2;
  const auto chol = robust_cholesky(Ky);
  const Vector w = chol.llt.matrixL().solve(y - mean_train);
  const double logdet = 2.0 * chol.llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * w.squaredNorm() - 0.5 * logdet - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

}  // namespace gpstack
