#pragma once

#include "gpstack/core.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <string>
#include <vector>

namespace gpstack {

/// Clamped B-spline basis on a covariate range mapped to [0, 1]. Inputs outside the
/// training range are clamped, so extrapolation is constant.
struct BSplineBasis {
  std::vector<double> knots;  // full clamped knot vector, u-space
  int degree = 3;
  double lo = 0.0;
  double hi = 1.0;

  int size() const { return static_cast<int>(knots.size()) - degree - 1; }

  double to_unit(double x) const {
    if (hi <= lo) return 0.0;
    return std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
  }

  /// Knot span containing u; the closed right end belongs to the last non-empty span.
  std::size_t span(double u) const {
    const std::size_t last = static_cast<std::size_t>(size()) - 1;
    if (u >= knots[last + 1]) return last;
    const auto it = std::upper_bound(knots.begin(), knots.end(), u);
    return static_cast<std::size_t>(std::distance(knots.begin(), it)) - 1;
  }

  /// d-th derivative (in u) of every basis function of degree q at u, evaluated on `sp`.
  std::vector<double> derivative(int q, int d, double u, std::size_t sp) const {
    const std::size_t count = knots.size() - static_cast<std::size_t>(q) - 1;
    std::vector<double> out(count, 0.0);
    if (q == 0) {
      if (d == 0 && sp < count) out[sp] = 1.0;
      return out;
    }
    const auto lower = derivative(q - 1, d > 0 ? d - 1 : 0, u, sp);
    for (std::size_t i = 0; i < count; ++i) {
      const double a = knots[i + static_cast<std::size_t>(q)] - knots[i];
      const double b = knots[i + static_cast<std::size_t>(q) + 1] - knots[i + 1];
      if (d == 0) {
        if (a > 0) out[i] += (u - knots[i]) / a * lower[i];
        if (b > 0) out[i] += (knots[i + static_cast<std::size_t>(q) + 1] - u) / b * lower[i + 1];
      } else {
        if (a > 0) out[i] += q * lower[i] / a;
        if (b > 0) out[i] -= q * lower[i + 1] / b;
      }
    }
    return out;
  }

  Vector eval(double x) const {
    const double u = to_unit(x);
    const auto v = derivative(degree, 0, u, span(u));
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
  }

  Matrix design(const Vector& x) const {
    Matrix B(x.size(), size());
    for (Index i = 0; i < x.size(); ++i) B.row(i) = eval(x[i]).transpose();
    return B;
  }

  /// Exact integral of f''(u)^2 as a quadratic form in the coefficients (3-point Gauss per span).
  Matrix penalty() const {
    const int k = size();
    Matrix S = Matrix::Zero(k, k);
    if (degree < 2) return S;
    static constexpr double node = 0.7745966692414834;  // sqrt(3/5)
    static constexpr double w[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    for (std::size_t s = 0; s + 1 < knots.size(); ++s) {
      const double a = knots[s], b = knots[s + 1];
      if (!(b > a)) continue;
      const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
      const double us[3] = {mid - half * node, mid, mid + half * node};
      for (int g = 0; g < 3; ++g) {
        const auto d2 = derivative(degree, 2, us[g], s);
        const Eigen::Map<const Vector> v(d2.data(), static_cast<Index>(d2.size()));
        S.noalias() += w[g] * half * v * v.transpose();
      }
    }
    return 0.5 * (S + S.transpose());
  }

  /// Basis of up to `k` functions with interior knots at quantiles of the distinct values of `x`.
  static BSplineBasis build(const Vector& x, int k) {
    std::vector<double> v(x.data(), x.data() + x.size());
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    BSplineBasis b;
    b.lo = v.front();
    b.hi = v.back();
    const int distinct = static_cast<int>(v.size());
    const int k_eff = std::max(2, std::min(k, distinct));
    b.degree = std::min(3, k_eff - 1);
    const int interior = k_eff - b.degree - 1;
    std::vector<double> inner;
    for (int i = 1; i <= interior; ++i) {
      const double q = static_cast<double>(i) / (interior + 1);
      const auto idx = static_cast<std::size_t>(std::llround(q * static_cast<double>(distinct - 1)));
      const double u = b.to_unit(v[idx]);
      if (u > 0.0 && u < 1.0 && (inner.empty() || u > inner.back())) inner.push_back(u);
    }
    b.knots.assign(static_cast<std::size_t>(b.degree) + 1, 0.0);
    b.knots.insert(b.knots.end(), inner.begin(), inner.end());
    b.knots.insert(b.knots.end(), static_cast<std::size_t>(b.degree) + 1, 1.0);
    return b;
  }
};

struct GamParams {
  int basis_size = 8;
  double lambda = -1.0;  // < 0: choose per term by GCV during the first backfitting sweep
  int max_sweeps = 100;
  double tolerance = 1e-8;
};

struct GamTerm {
  int column = 0;
  BSplineBasis basis;
  Vector coef;
  double lambda = 0.0;

  double eval(double x) const { return basis.eval(x).dot(coef); }
};

/// beta0 + sum_j f_j(x_j); each f_j is centred over the training rows.
struct GamModel {
  double intercept = 0.0;
  std::vector<GamTerm> terms;
  std::vector<std::string> warnings;

  Vector predict(const Matrix& X) const {
    Vector out = Vector::Constant(X.rows(), intercept);
    for (const auto& t : terms)
      for (Index i = 0; i < X.rows(); ++i) out[i] += t.eval(X(i, t.column));
    return out;
  }
};

/// Penalised objective after each backfitting sweep (smoothing parameters fixed from sweep 1 on).
struct GamTrace {
  std::vector<double> objective;
  int sweeps = 0;
};

/// log10-spaced smoothing grid searched by GCV.
inline std::vector<double> gam_lambda_grid() {
  std::vector<double> g;
  for (int e = -16; e <= 8; ++e) g.push_back(std::pow(10.0, 0.5 * e));
  return g;
}

inline GamModel fit_gam(const Matrix& X, const Vector& y, const GamParams& p, GamTrace* trace = nullptr) {
  const Index n = X.rows();
  if (n < 2) throw ValidationError("gam: need at least 2 rows");
  require_finite(X, "gam: X");
  require_finite(y, "gam: y");

  GamModel model;
  model.intercept = y.mean();
  std::vector<Matrix> B, S;
  for (Index j = 0; j < X.cols(); ++j) {
    const Vector x = X.col(j);
    if ((x.array() == x[0]).all()) {
      model.warnings.push_back("column " + std::to_string(j) + ": constant, term dropped");
      continue;
    }
    GamTerm t;
    t.column = static_cast<int>(j);
    t.basis = BSplineBasis::build(x, p.basis_size);
    if (t.basis.size() < p.basis_size)
      model.warnings.push_back("column " + std::to_string(j) + ": basis size reduced to " +
                               std::to_string(t.basis.size()));
    t.coef = Vector::Zero(t.basis.size());
    B.push_back(t.basis.design(x));
    S.push_back(t.basis.penalty());
    model.terms.push_back(std::move(t));
  }

  const std::size_t L = model.terms.size();
  Matrix F = Matrix::Zero(n, static_cast<Index>(L));
  const Vector yc = y.array() - model.intercept;
  const auto grid = gam_lambda_grid();
  std::vector<double> ridge(L);
  for (std::size_t j = 0; j < L; ++j) ridge[j] = 1e-10 * B[j].squaredNorm() / static_cast<double>(B[j].cols());

  // Penalty roots: S_j = R_j^T R_j.
  std::vector<Matrix> root(L);
  for (std::size_t j = 0; j < L; ++j) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(S[j]);
    // straight lines are unpenalised; rounding leaves tiny eigenvalues there that a huge lambda would amplify
    Vector ev = es.eigenvalues();
    const double cut = 1e-10 * ev.cwiseAbs().maxCoeff();
    for (Index k = 0; k < ev.size(); ++k) ev[k] = ev[k] > cut ? std::sqrt(ev[k]) : 0.0;
    root[j] = ev.asDiagonal() * es.eigenvectors().transpose();
  }

  auto objective = [&]() {
    double obj = (yc - F.rowwise().sum()).squaredNorm();
    for (std::size_t j = 0; j < L; ++j) {
      const auto& c = model.terms[j].coef;
      obj += model.terms[j].lambda * (root[j] * c).squaredNorm() + ridge[j] * c.squaredNorm();
    }
    return obj;
  };

  // Penalised least squares as an augmented QR problem [B; sqrt(lambda) R; sqrt(ridge) I] c ~ [r; 0; 0].
  // Normal equations square the conditioning, which is fatal once lambda is large.
  struct Solved {
    Vector coef;
    double edf;
  };
  auto solve = [&](std::size_t j, double lambda, const Vector& r, bool want_edf) {
    const Index k = B[j].cols();
    Matrix A(n + 2 * k, k);
    A.topRows(n) = B[j];
    A.middleRows(n, k) = std::sqrt(lambda) * root[j];
    A.bottomRows(k) = std::sqrt(ridge[j]) * Matrix::Identity(k, k);
    Vector rhs = Vector::Zero(n + 2 * k);
    rhs.head(n) = r;
    Eigen::ColPivHouseholderQR<Matrix> qr(A);
    Solved out{qr.solve(rhs), 0.0};
    if (want_edf) {
      // trace of the hat matrix = squared Frobenius norm of the data rows of the thin Q
      const Matrix Q = qr.householderQ() * Matrix::Identity(n + 2 * k, k);
      out.edf = Q.topRows(n).squaredNorm();
    }
    return out;
  };

  double prev = std::numeric_limits<double>::infinity();
  for (int sweep = 1; sweep <= std::max(1, p.max_sweeps); ++sweep) {
    for (std::size_t j = 0; j < L; ++j) {
      auto& term = model.terms[j];
      const Vector r = yc - F.rowwise().sum() + F.col(static_cast<Index>(j));
      if (sweep == 1) {
        if (p.lambda >= 0) {
          term.lambda = p.lambda;
        } else {
          double best = std::numeric_limits<double>::infinity();
          for (double lambda : grid) {
            const auto fit = solve(j, lambda, r, true);
            const double rss = (r - B[j] * fit.coef).squaredNorm();
            const double edf = fit.edf;
            const double denom = static_cast<double>(n) - edf;
            const double gcv = denom > 0 ? static_cast<double>(n) * rss / (denom * denom)
                                         : std::numeric_limits<double>::infinity();
            if (gcv < best) {
              best = gcv;
              term.lambda = lambda;
            }
          }
        }
      }
      Vector c = solve(j, term.lambda, r, false).coef;
      // B-splines sum to one, so shifting every coefficient shifts the curve
      c.array() -= (B[j] * c).mean();
      term.coef = c;
      F.col(static_cast<Index>(j)) = B[j] * c;
    }
    const double obj = objective();
    if (trace) {
      trace->objective.push_back(obj);
      trace->sweeps = sweep;
    }
    if (std::abs(prev - obj) <= p.tolerance * std::max(1.0, obj)) break;
    prev = obj;
  }
  return model;
}

}  // namespace gpstack
