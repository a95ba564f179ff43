#pragma once

// Constrained weighted mean: least squares over the probability simplex.

#include "gpstack/core.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <functional>
#include <limits>
#include <vector>

namespace gpstack {

struct SimplexWeights {
  Vector beta;
  double objective = 0.0;     // ||y - H beta||^2 at the returned beta
  double kkt_residual = 0.0;  // largest violation of the simplex KKT conditions
  int iterations = 0;
  bool degenerate = false;    // fewer rows than columns: beta is one of several minimisers
};

/// Euclidean projection onto {b >= 0, sum b = 1} (sort-and-threshold).
inline SimplexWeights project_simplex(const Vector& v) {
  if (v.size() < 1) throw ValidationError("project_simplex: empty vector");
  require_finite(v, "project_simplex");
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0) theta = t;
  }
  SimplexWeights w;
  w.beta = (v.array() - theta).max(0.0);
  return w;
}

inline Vector cwm_predict(const SimplexWeights& w, const Matrix& P) {
  if (P.cols() != w.beta.size())
    throw SchemaError("cwm_predict: prediction matrix has " + std::to_string(P.cols()) + " columns, weights have " +
                      std::to_string(w.beta.size()));
  return P * w.beta;
}

namespace detail {

/// Largest KKT violation at a feasible beta: the gradient must equal nu on the support and be >= nu off it.
inline double simplex_kkt_residual(const Vector& grad, const Vector& beta) {
  double nu = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < beta.size(); ++i)
    if (beta[i] > 0) nu = std::min(nu, grad[i]);
  double res = 0.0;
  for (Index i = 0; i < beta.size(); ++i) {
    if (beta[i] > 0) res = std::max(res, std::abs(grad[i] - nu));
    else res = std::max(res, std::max(0.0, nu - grad[i]));
  }
  return res;
}

/// Minimises ||y - H_S b||^2 subject to sum b = 1 over the support S (minimum-norm solution if singular).
inline Vector equality_ls(const Matrix& HtH, const Vector& Hty, const std::vector<Index>& S, Index L) {
  const auto k = static_cast<Index>(S.size());
  Matrix K = Matrix::Zero(k + 1, k + 1);
  Vector rhs(k + 1);
  for (Index a = 0; a < k; ++a) {
    for (Index b = 0; b < k; ++b) K(a, b) = 2.0 * HtH(S[static_cast<std::size_t>(a)], S[static_cast<std::size_t>(b)]);
    K(a, k) = K(k, a) = 1.0;
    rhs[a] = 2.0 * Hty[S[static_cast<std::size_t>(a)]];
  }
  rhs[k] = 1.0;
  const Vector sol = K.completeOrthogonalDecomposition().solve(rhs);
  Vector out = Vector::Zero(L);
  for (Index a = 0; a < k; ++a) out[S[static_cast<std::size_t>(a)]] = sol[a];
  return out;
}

}  // namespace detail

/// Projected gradient (step 1 / Lipschitz bound) from the barycentre, stopped when the objective improves by
/// less than 1e-12, then refined by an active-set pass on the identified support so the result satisfies the
/// KKT conditions to rounding error.
inline SimplexWeights fit_cwm(const Matrix& H, const Vector& y, int max_iterations = 10000) {
  const Index n = H.rows(), L = H.cols();
  if (L < 1) throw ValidationError("fit_cwm: need at least one column");
  if (y.size() != n) throw SchemaError("fit_cwm: H and y row counts differ");
  require_finite(H, "fit_cwm: H");
  require_finite(y, "fit_cwm: y");

  SimplexWeights w;
  w.degenerate = n < L;
  const Matrix HtH = H.transpose() * H;
  const Vector Hty = H.transpose() * y;
  const double yty = y.squaredNorm();
  auto objective = [&](const Vector& b) { return yty - 2.0 * b.dot(Hty) + b.dot(HtH * b); };
  auto gradient = [&](const Vector& b) -> Vector { return 2.0 * (HtH * b - Hty); };

  if (L == 1) {
    w.beta = Vector::Ones(1);
    w.objective = (y - H.col(0)).squaredNorm();
    return w;
  }

  const double lipschitz = 2.0 * Eigen::SelfAdjointEigenSolver<Matrix>(HtH, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  Vector beta = Vector::Constant(L, 1.0 / static_cast<double>(L));
  double f = objective(beta);
  if (lipschitz > 0) {
    const double step = 1.0 / lipschitz;
    for (w.iterations = 1; w.iterations <= max_iterations; ++w.iterations) {
      Vector next = project_simplex(beta - step * gradient(beta)).beta;
      const double fn = objective(next);
      const double improvement = f - fn;
      beta = std::move(next);
      f = fn;
      if (improvement < 1e-12) break;
    }
  }

  // active-set refinement, primal feasible throughout
  std::vector<Index> S;
  for (Index i = 0; i < L; ++i)
    if (beta[i] > 0) S.push_back(i);
  for (int it = 0; it < 4 * static_cast<int>(L) + 20 && !S.empty(); ++it) {
    const Vector b = detail::equality_ls(HtH, Hty, S, L);
    double alpha = 1.0;
    Index blocking = -1;
    for (Index i : S)
      if (b[i] < 0) {
        const double a = beta[i] / (beta[i] - b[i]);
        if (a < alpha) {
          alpha = a;
          blocking = i;
        }
      }
    Vector cand = beta + alpha * (b - beta);
    for (Index i = 0; i < L; ++i) cand[i] = std::max(0.0, cand[i]);
    cand /= cand.sum();
    if (objective(cand) <= f + 1e-12 * std::max(1.0, std::abs(f))) {
      beta = cand;
      f = objective(beta);
    }
    if (blocking >= 0) {
      S.erase(std::remove(S.begin(), S.end(), blocking), S.end());
      beta[blocking] = 0.0;
      beta /= beta.sum();
      f = objective(beta);
      continue;
    }
    const Vector g = gradient(beta);
    double nu = 0.0;
    for (Index i : S) nu += g[i];
    nu /= static_cast<double>(S.size());
    Index enter = -1;
    double worst = -1e-12 * std::max(1.0, g.cwiseAbs().maxCoeff());
    for (Index i = 0; i < L; ++i)
      if (std::find(S.begin(), S.end(), i) == S.end() && g[i] - nu < worst) {
        worst = g[i] - nu;
        enter = i;
      }
    if (enter < 0) break;
    S.push_back(enter);
    std::sort(S.begin(), S.end());
  }

  w.beta = beta;
  w.objective = (y - H * beta).squaredNorm();
  w.kkt_residual = detail::simplex_kkt_residual(gradient(beta), beta);
  return w;
}

}  // namespace gpstack
