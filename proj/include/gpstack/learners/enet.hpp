#pragma once

#include "gpstack/core.hpp"

#include <Eigen/QR>

#include <cstdint>
#include <limits>
#include <numeric>

namespace gpstack {

/// Affine model intercept + x . coef on the original column scale.
struct LinearModel {
  double intercept = 0.0;
  Vector coef;

  Vector predict(const Matrix& X) const { return (X * coef).array() + intercept; }
};

/// Column centring and unit (population) variance scaling. Constant columns get scale 0.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& X) {
    Standardizer s;
    s.mean = X.colwise().mean().transpose();
    s.scale.resize(X.cols());
    for (Index j = 0; j < X.cols(); ++j) {
      const double var = (X.col(j).array() - s.mean[j]).square().mean();
      s.scale[j] = var > 1e-24 * std::max(1.0, s.mean[j] * s.mean[j]) ? std::sqrt(var) : 0.0;
    }
    return s;
  }

  Matrix apply(const Matrix& X) const {
    Matrix Z = X.rowwise() - mean.transpose();
    for (Index j = 0; j < Z.cols(); ++j) Z.col(j) = scale[j] > 0 ? Vector(Z.col(j) / scale[j]) : Vector::Zero(Z.rows());
    return Z;
  }
};

struct EnetParams {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  int path_length = 0;  // > 0: pick lambda by K-fold CV along a log-spaced path
  double alpha = 0.5;   // path mixing: lambda1 = alpha * lambda, lambda2 = (1 - alpha) * lambda
  int cv_folds = 5;
  double tolerance = 1e-9;
  int max_sweeps = 10000;
};

struct EnetSolution {
  Vector beta;  // standardised scale
  int sweeps = 0;
  bool converged = false;
};

/// Cyclic coordinate descent for ||yc - Z b||^2 + l2 ||b||^2 + l1 ||b||_1 on standardised Z
/// (unit population variance, so ||z_j||^2 = n for non-constant columns).
inline EnetSolution enet_coordinate_descent(const Matrix& Z, const Vector& yc, double l1, double l2, double tol,
                                            int max_sweeps, const Vector* warm = nullptr) {
  const Index m = Z.cols();
  EnetSolution s;
  s.beta = warm ? *warm : Vector::Zero(m);
  Vector r = yc - Z * s.beta;
  Vector norms = Z.colwise().squaredNorm().transpose();
  for (s.sweeps = 1; s.sweeps <= max_sweeps; ++s.sweeps) {
    double max_delta = 0.0, max_beta = 0.0;
    for (Index j = 0; j < m; ++j) {
      if (norms[j] == 0.0) {
        s.beta[j] = 0.0;
        continue;
      }
      const double old = s.beta[j];
      const double rho = Z.col(j).dot(r) + norms[j] * old;
      const double half = 0.5 * l1;
      const double shrunk = rho > half ? rho - half : (rho < -half ? rho + half : 0.0);
      const double updated = shrunk / (norms[j] + l2);
      if (updated != old) {
        r.noalias() -= (updated - old) * Z.col(j);
        s.beta[j] = updated;
      }
      max_delta = std::max(max_delta, std::abs(updated - old));
      max_beta = std::max(max_beta, std::abs(updated));
    }
    if (max_delta <= tol * std::max(1.0, max_beta)) {
      s.converged = true;
      break;
    }
  }
  return s;
}

struct EnetModel {
  LinearModel linear;
  Standardizer standardizer;
  Vector beta_standardized;
  double lambda1 = 0.0;
  double lambda2 = 0.0;

  Vector predict(const Matrix& X) const { return linear.predict(X); }
};

namespace detail {

inline EnetModel enet_fixed(const Matrix& X, const Vector& y, double l1, double l2, const EnetParams& p) {
  EnetModel model;
  model.standardizer = Standardizer::fit(X);
  const Matrix Z = model.standardizer.apply(X);
  const double ybar = y.mean();
  const Vector yc = y.array() - ybar;
  const auto sol = enet_coordinate_descent(Z, yc, l1, l2, p.tolerance, p.max_sweeps);
  model.beta_standardized = sol.beta;
  model.lambda1 = l1;
  model.lambda2 = l2;
  model.linear.coef = Vector::Zero(X.cols());
  model.linear.intercept = ybar;
  for (Index j = 0; j < X.cols(); ++j) {
    if (model.standardizer.scale[j] == 0.0) continue;
    model.linear.coef[j] = sol.beta[j] / model.standardizer.scale[j];
    model.linear.intercept -= model.linear.coef[j] * model.standardizer.mean[j];
  }
  return model;
}

inline std::vector<std::pair<double, double>> enet_path(const Matrix& X, const Vector& y, const EnetParams& p) {
  const Standardizer st = Standardizer::fit(X);
  const Matrix Z = st.apply(X);
  const Vector yc = y.array() - y.mean();
  const double max_corr = (Z.transpose() * yc).cwiseAbs().maxCoeff();
  const double alpha = std::max(p.alpha, 1e-3);
  const double lambda_max = std::max(2.0 * max_corr / alpha, 1e-12);
  std::vector<std::pair<double, double>> path;
  for (int k = 0; k < p.path_length; ++k) {
    const double frac = p.path_length == 1 ? 0.0 : static_cast<double>(k) / (p.path_length - 1);
    const double lambda = lambda_max * std::pow(1e-4, frac);
    path.emplace_back(p.alpha * lambda, (1.0 - p.alpha) * lambda);
  }
  return path;
}

}  // namespace detail

/// Elastic net on standardised columns with an unpenalised intercept; coefficients are reported on the
/// original scale. With path_length > 0 the penalty is chosen by K-fold CV over a log-spaced path.
inline EnetModel fit_enet(const Matrix& X, const Vector& y, const EnetParams& p, std::uint64_t seed) {
  if (X.rows() < 1) throw ValidationError("enet: no rows");
  require_finite(X, "enet: X");
  require_finite(y, "enet: y");
  if (p.path_length <= 0) return detail::enet_fixed(X, y, p.lambda1, p.lambda2, p);

  const auto path = detail::enet_path(X, y, p);
  const Index n = X.rows();
  const int k = static_cast<int>(std::min<Index>(p.cv_folds, n));
  if (k < 2) return detail::enet_fixed(X, y, path.back().first, path.back().second, p);

  std::vector<int> fold(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) fold[static_cast<std::size_t>(i)] = static_cast<int>(i % k);
  Rng rng(derive_seed(seed, 0xe7e7));
  shuffle_in_place(fold, rng);

  std::vector<double> cv_err(path.size(), 0.0);
  for (int f = 0; f < k; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) (fold[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
    const Matrix Xtr = select_rows(X, train);
    const Vector ytr = select_rows(y, train);
    const Matrix Xte = select_rows(X, test);
    const Vector yte = select_rows(y, test);
    const Standardizer st = Standardizer::fit(Xtr);
    const Matrix Z = st.apply(Xtr);
    const Matrix Zte = st.apply(Xte);
    const double ybar = ytr.mean();
    const Vector yc = ytr.array() - ybar;
    Vector warm = Vector::Zero(X.cols());
    for (std::size_t l = 0; l < path.size(); ++l) {
      const auto sol = enet_coordinate_descent(Z, yc, path[l].first, path[l].second, p.tolerance, p.max_sweeps, &warm);
      warm = sol.beta;
      const Vector pred = (Zte * sol.beta).array() + ybar;
      cv_err[l] += (pred - yte).squaredNorm();
    }
  }
  std::size_t best = 0;
  for (std::size_t l = 1; l < path.size(); ++l)
    if (cv_err[l] < cv_err[best]) best = l;
  return detail::enet_fixed(X, y, path[best].first, path[best].second, p);
}

/// Ordinary least squares with intercept (rank-revealing QR). Backs the "linear-mean" learner.
inline LinearModel fit_linear(const Matrix& X, const Vector& y) {
  if (X.rows() < 1) throw ValidationError("linear: no rows");
  require_finite(X, "linear: X");
  require_finite(y, "linear: y");
  Matrix D(X.rows(), X.cols() + 1);
  D.col(0).setOnes();
  D.rightCols(X.cols()) = X;
  const Vector b = D.colPivHouseholderQr().solve(y);
  return {b[0], b.tail(X.cols())};
}

}  // namespace gpstack
