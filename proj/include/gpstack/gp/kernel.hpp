#pragma once

#include "gpstack/core.hpp"
#include "gpstack/dataset.hpp"

#include <Eigen/Cholesky>
#include <boost/math/special_functions/bessel.hpp>

#include <cmath>
#include <numbers>
#include <vector>

namespace gpstack {

/// theta = {log kappa, log tau, sigma_e^2, phi, beta}. kappa = sqrt(2) / range; the spatial
/// marginal variance is 1 / tau; beta weights the stacked (or linear) mean.
struct GpHyperParams {
  double log_kappa = 0.0;
  double log_tau = 0.0;
  double sigma_e2 = 1.0;
  double phi = 0.0;
  Vector beta = Vector::Ones(1);

  double kappa() const { return std::exp(log_kappa); }
  double tau() const { return std::exp(log_tau); }
  double range() const { return std::numbers::sqrt2 / kappa(); }
  double variance() const { return 1.0 / tau(); }

  static double log_kappa_for_range(double range) { return std::log(std::numbers::sqrt2 / range); }

  /// Throws unless kappa, tau, sigma_e2 > 0, |phi| < 1 and (when `simplex`) beta is a convex combination.
  void validate(bool simplex = true) const {
    if (!std::isfinite(log_kappa) || !std::isfinite(log_tau) || !(sigma_e2 > 0) || !std::isfinite(sigma_e2) ||
        !(std::abs(phi) < 1.0))
      throw ValidationError("GP hyperparameters: need kappa, tau, sigma_e2 > 0 and |phi| < 1");
    if (!beta.allFinite()) throw ValidationError("GP hyperparameters: non-finite beta");
    if (simplex && (beta.size() < 1 || (beta.array() < 0).any() || std::abs(beta.sum() - 1.0) > 1e-9))
      throw ValidationError("GP hyperparameters: beta must lie on the probability simplex");
  }
};

/// x K_1(x), continuous at 0 with limit 1.
inline double x_bessel_k1(double x) {
  if (x < 1e-10) return 1.0;
  if (x > 700.0) return 0.0;
  return x * boost::math::cyl_bessel_k(1, x);
}

/// Matern nu = 1: (kappa / tau) d K_1(kappa d); equals 1 / tau at d = 0.
inline double matern1_cov(double dist, double kappa, double tau) {
  if (!(dist >= 0) || !(kappa > 0) || !(tau > 0))
    throw ValidationError("matern1_cov: need dist >= 0, kappa > 0, tau > 0");
  return x_bessel_k1(kappa * dist) / tau;
}

/// Equirectangular planar distance in degrees: longitude differences shrink by cos(mean latitude).
inline double planar_distance(double lon1, double lat1, double lon2, double lat2) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double dx = (lon1 - lon2) * std::cos(0.5 * (lat1 + lat2) * deg);
  const double dy = lat1 - lat2;
  return std::hypot(dx, dy);
}

inline double planar_distance(const SpaceTimePoint& a, const SpaceTimePoint& b) {
  return planar_distance(a.lon, a.lat, b.lon, b.lat);
}

/// Unit-variance AR(1) correlation phi^|dt|.
inline double ar1_correlation(double phi, int dt) {
  return dt == 0 ? 1.0 : std::pow(phi, std::abs(dt));
}

/// Separable space-time covariance k(s_i, s_j) phi^|t_i - t_j|.
inline double joint_cov(const SpaceTimePoint& a, const SpaceTimePoint& b, const GpHyperParams& p) {
  return matern1_cov(planar_distance(a, b), p.kappa(), p.tau()) * ar1_correlation(p.phi, a.t - b.t);
}

inline Matrix build_joint_cov(const std::vector<SpaceTimePoint>& pts, const GpHyperParams& p) {
  if (!(std::abs(p.phi) < 1.0)) throw ValidationError("build_joint_cov: need |phi| < 1");
  const auto n = static_cast<Index>(pts.size());
  Matrix K(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j <= i; ++j) K(i, j) = K(j, i) = joint_cov(pts[static_cast<std::size_t>(i)], pts[static_cast<std::size_t>(j)], p);
  return K;
}

/// rows: `a`, columns: `b`.
inline Matrix build_cross_cov(const std::vector<SpaceTimePoint>& a, const std::vector<SpaceTimePoint>& b,
                              const GpHyperParams& p) {
  Matrix K(static_cast<Index>(a.size()), static_cast<Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) K(static_cast<Index>(i), static_cast<Index>(j)) = joint_cov(a[i], b[j], p);
  return K;
}

/// Pairwise distances and month offsets, so repeated covariance builds during optimisation skip the geometry.
class CovarianceCache {
public:
  explicit CovarianceCache(const std::vector<SpaceTimePoint>& pts) : dist_(pts.size(), pts.size()), dt_(pts.size(), pts.size()) {
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        const auto ii = static_cast<Index>(i), jj = static_cast<Index>(j);
        dist_(ii, jj) = dist_(jj, ii) = planar_distance(pts[i], pts[j]);
        dt_(ii, jj) = dt_(jj, ii) = std::abs(pts[i].t - pts[j].t);
      }
  }

  Matrix covariance(const GpHyperParams& p) const {
    const Index n = dist_.rows();
    const double kappa = p.kappa(), var = p.variance();
    int max_dt = n ? dt_.maxCoeff() : 0;
    std::vector<double> phi_pow(static_cast<std::size_t>(max_dt) + 1, 1.0);
    for (int k = 1; k <= max_dt; ++k) phi_pow[static_cast<std::size_t>(k)] = ar1_correlation(p.phi, k);
    Matrix K(n, n);
    for (Index j = 0; j < n; ++j)
      for (Index i = j; i < n; ++i)
        K(i, j) = K(j, i) = var * x_bessel_k1(kappa * dist_(i, j)) * phi_pow[static_cast<std::size_t>(dt_(i, j))];
    return K;
  }

  Index size() const { return dist_.rows(); }
  const Matrix& distances() const { return dist_; }

private:
  Matrix dist_;
  Eigen::MatrixXi dt_;
};

/// Cholesky factor of a symmetric matrix, retrying with diagonal jitter
/// 1e-10, 1e-9, ..., 1e-6 (relative to the mean diagonal) before giving up.
struct RobustCholesky {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;
};

inline RobustCholesky robust_cholesky(const Matrix& A) {
  RobustCholesky out;
  out.llt.compute(A);
  if (out.llt.info() == Eigen::Success) return out;
  const double scale = std::max(A.diagonal().cwiseAbs().mean(), 1e-300);
  for (double eps = 1e-10; eps <= 1e-6 * 1.0000001; eps *= 10.0) {
    Matrix B = A;
    B.diagonal().array() += eps * scale;
    out.llt.compute(B);
    if (out.llt.info() == Eigen::Success) {
      out.jitter = eps * scale;
      return out;
    }
  }
  const Eigen::LDLT<Matrix> ldlt(A);
  throw NumericalError("Cholesky failed after jitter escalation to 1e-6 (reciprocal condition estimate " +
                       format_real(ldlt.rcond()) + ")");
}

}  // namespace gpstack
