#include "gpstack/cwm.hpp"

#include <gtest/gtest.h>

#include <limits>

using namespace gpstack;

namespace {

Matrix random_matrix(Index n, Index m, Rng& rng, double scale = 1.0) {
  Matrix X(n, m);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) X(i, j) = scale * (2.0 * uniform01(rng) - 1.0);
  return X;
}

Vector random_simplex(Index L, Rng& rng) {
  Vector v(L);
  for (Index i = 0; i < L; ++i) v[i] = -std::log(1.0 - uniform01(rng));
  return v / v.sum();
}

// Exhaustive search over the 2-simplex at the given resolution; returns the best grid point.
template <class F>
Vector simplex_grid_argmin(F objective, int steps) {
  double best = std::numeric_limits<double>::infinity();
  Vector arg(3);
  for (int i = 0; i <= steps; ++i)
    for (int j = 0; i + j <= steps; ++j) {
      Vector b(3);
      b << double(i) / steps, double(j) / steps, double(steps - i - j) / steps;
      const double v = objective(b);
      if (v < best) best = v, arg = b;
    }
  return arg;
}

double objective(const Matrix& H, const Vector& y, const Vector& b) { return (y - H * b).squaredNorm(); }

}  // namespace

TEST(ProjectSimplex, Examples) {
  EXPECT_TRUE(project_simplex(Vector::Constant(2, 0.6)).beta.isApprox(Vector::Constant(2, 0.5), 1e-15));
  EXPECT_EQ(project_simplex(Vector::Unit(3, 0)).beta, Vector::Unit(3, 0));
  EXPECT_TRUE(project_simplex(Vector::Constant(3, -5.0)).beta.isApprox(Vector::Constant(3, 1.0 / 3), 1e-15));
}

TEST(ProjectSimplex, MatchesGridOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector v = random_matrix(3, 1, rng, 2.0);
    const Vector p = project_simplex(v).beta;
    const Vector g = simplex_grid_argmin([&](const Vector& b) { return (b - v).squaredNorm(); }, 1000);
    EXPECT_LE((p - g).cwiseAbs().maxCoeff(), 1e-3) << v.transpose();
  }
}

TEST(ProjectSimplex, IdempotentAndNonExpansive) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Index L = 1 + static_cast<Index>(uniform_index(rng, 6));
    const Vector a = random_matrix(L, 1, rng, 3.0), b = random_matrix(L, 1, rng, 3.0);
    const Vector pa = project_simplex(a).beta, pb = project_simplex(b).beta;
    EXPECT_GE(pa.minCoeff(), 0.0);
    EXPECT_NEAR(pa.sum(), 1.0, 1e-12);
    EXPECT_LT((project_simplex(pa).beta - pa).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LE((pa - pb).norm(), (a - b).norm() + 1e-12);
  }
}

TEST(CwmPredict, Examples) {
  SimplexWeights w;
  w.beta = Vector::Constant(2, 0.5);
  Matrix P(1, 2);
  P << 1, 3;
  EXPECT_DOUBLE_EQ(cwm_predict(w, P)[0], 2.0);
  Rng rng(3);
  const Matrix Q = random_matrix(10, 3, rng);
  w.beta = Vector::Unit(3, 0);
  EXPECT_EQ(cwm_predict(w, Q), Q.col(0));
  EXPECT_THROW(cwm_predict(w, P), SchemaError);
}

TEST(CwmPredict, WithinRowRange) {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index L = 1 + static_cast<Index>(uniform_index(rng, 5));
    SimplexWeights w;
    w.beta = random_simplex(L, rng);
    const Matrix P = random_matrix(8, L, rng, 5.0);
    const Vector out = cwm_predict(w, P);
    for (Index i = 0; i < 8; ++i) {
      EXPECT_GE(out[i], P.row(i).minCoeff() - 1e-12);
      EXPECT_LE(out[i], P.row(i).maxCoeff() + 1e-12);
    }
  }
}

TEST(FitCwm, SingleColumn) {
  Rng rng(5);
  const auto w = fit_cwm(random_matrix(10, 1, rng), random_matrix(10, 1, rng));
  EXPECT_EQ(w.beta, Vector::Ones(1));
}

TEST(FitCwm, ExactColumnWins) {
  Rng rng(6);
  const Index n = 50;
  const Vector y = random_matrix(n, 1, rng);
  Matrix H(n, 3);
  H.col(0) = y;
  H.col(1) = random_matrix(n, 1, rng);
  H.col(2) = random_matrix(n, 1, rng);
  const auto w = fit_cwm(H, y);
  EXPECT_LT((w.beta - Vector::Unit(3, 0)).cwiseAbs().maxCoeff(), 1e-6);
  const Vector g = simplex_grid_argmin([&](const Vector& b) { return objective(H, y, b); }, 1000);
  EXPECT_LT((w.beta - g).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(FitCwm, MatchesGridOracleOnRandomProblems) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix H = random_matrix(30, 3, rng);
    const Vector y = H * random_simplex(3, rng) + 0.3 * random_matrix(30, 1, rng);
    const auto w = fit_cwm(H, y);
    const Vector g = simplex_grid_argmin([&](const Vector& b) { return objective(H, y, b); }, 500);
    EXPECT_LE(w.objective, objective(H, y, g) + 1e-12);
    EXPECT_NEAR(w.objective, objective(H, y, w.beta), 1e-10);
    EXPECT_LT(w.kkt_residual, 1e-8);
  }
}

TEST(FitCwm, NeverWorseThanAnyVertex) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const Index L = 2 + static_cast<Index>(uniform_index(rng, 5));
    const Index n = 3 + static_cast<Index>(uniform_index(rng, 40));
    const Matrix H = random_matrix(n, L, rng);
    const Vector y = random_matrix(n, 1, rng);
    const auto w = fit_cwm(H, y);
    EXPECT_GE(w.beta.minCoeff(), 0.0);
    EXPECT_NEAR(w.beta.sum(), 1.0, 1e-12);
    for (Index j = 0; j < L; ++j) EXPECT_LE(w.objective, (y - H.col(j)).squaredNorm() + 1e-12);
  }
}

TEST(FitCwm, TwinColumnsMatchSingleColumnObjective) {
  Rng rng(9);
  const Matrix H0 = random_matrix(40, 2, rng);
  const Vector y = 0.4 * H0.col(0) + 0.6 * H0.col(1) + 0.1 * random_matrix(40, 1, rng);
  Matrix H(40, 3);
  H << H0.col(0), H0.col(0), H0.col(1);
  const auto a = fit_cwm(H, y), b = fit_cwm(H0, y);
  EXPECT_NEAR(a.objective, b.objective, 1e-10);
  EXPECT_LT((H * a.beta - H0 * b.beta).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FitCwm, DegenerateFlagged) {
  Rng rng(10);
  const auto w = fit_cwm(random_matrix(2, 4, rng), random_matrix(2, 1, rng));
  EXPECT_TRUE(w.degenerate);
  EXPECT_NEAR(w.beta.sum(), 1.0, 1e-12);
}

TEST(FitCwm, NonFiniteRejected) {
  Matrix H = Matrix::Ones(4, 2);
  H(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(fit_cwm(H, Vector::Ones(4)), ValidationError);
  EXPECT_THROW(fit_cwm(Matrix::Ones(4, 2), Vector::Ones(3)), SchemaError);
}
