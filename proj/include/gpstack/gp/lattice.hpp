#pragma once

// Precision-form (GMRF) machinery on a regular planar lattice.

#include "gpstack/gp/condition.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <vector>

namespace gpstack {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Tridiagonal precision of a unit-marginal-variance AR(1); its inverse is phi^|i-j|.
inline SparseMatrix ar1_precision(int T, double phi) {
  if (T < 1) throw ValidationError("ar1_precision: T must be >= 1");
  if (!(std::abs(phi) < 1.0)) throw ValidationError("ar1_precision: need |phi| < 1");
  SparseMatrix Q(T, T);
  if (T == 1) {
    Q.insert(0, 0) = 1.0;
    return Q;
  }
  const double s = 1.0 / (1.0 - phi * phi);
  std::vector<Triplet> trip;
  for (int i = 0; i < T; ++i) {
    const bool end = i == 0 || i == T - 1;
    trip.emplace_back(i, i, s * (end ? 1.0 : 1.0 + phi * phi));
    if (i + 1 < T && phi != 0.0) {
      trip.emplace_back(i, i + 1, -s * phi);
      trip.emplace_back(i + 1, i, -s * phi);
    }
  }
  Q.setFromTriplets(trip.begin(), trip.end());
  return Q;
}

/// nx x ny lattice with spacing h. Site index = iy * nx + ix.
struct LatticeGeometry {
  int nx = 3;
  int ny = 3;
  double h = 1.0;

  Index sites() const { return static_cast<Index>(nx) * ny; }
  Index index(int ix, int iy) const { return static_cast<Index>(iy) * nx + ix; }
};

/// Five-point Laplacian; neighbours outside the lattice are dropped (zero boundary).
inline SparseMatrix lattice_laplacian(const LatticeGeometry& g) {
  const double w = 1.0 / (g.h * g.h);
  std::vector<Triplet> trip;
  for (int iy = 0; iy < g.ny; ++iy)
    for (int ix = 0; ix < g.nx; ++ix) {
      const Index i = g.index(ix, iy);
      trip.emplace_back(i, i, -4.0 * w);
      if (ix > 0) trip.emplace_back(i, g.index(ix - 1, iy), w);
      if (ix + 1 < g.nx) trip.emplace_back(i, g.index(ix + 1, iy), w);
      if (iy > 0) trip.emplace_back(i, g.index(ix, iy - 1), w);
      if (iy + 1 < g.ny) trip.emplace_back(i, g.index(ix, iy + 1), w);
    }
  SparseMatrix L(g.sites(), g.sites());
  L.setFromTriplets(trip.begin(), trip.end());
  return L;
}

/// Q_s = tau^2 h^2 (kappa^2 I - L)^T (kappa^2 I - L): the lattice analogue of (kappa^2 - Laplacian)(tau f) = W,
/// with h^2 the white-noise cell area.
inline SparseMatrix spatial_precision(const LatticeGeometry& g, double kappa, double tau) {
  SparseMatrix I(g.sites(), g.sites());
  I.setIdentity();
  const SparseMatrix K = kappa * kappa * I - lattice_laplacian(g);
  SparseMatrix Q = SparseMatrix(K.transpose()) * K;
  Q *= tau * tau * g.h * g.h;
  Q.prune(0.0);
  return Q;
}

inline SparseMatrix kronecker(const SparseMatrix& A, const SparseMatrix& B) {
  std::vector<Triplet> trip;
  trip.reserve(static_cast<std::size_t>(A.nonZeros() * B.nonZeros()));
  for (int ka = 0; ka < A.outerSize(); ++ka)
    for (SparseMatrix::InnerIterator a(A, ka); a; ++a)
      for (int kb = 0; kb < B.outerSize(); ++kb)
        for (SparseMatrix::InnerIterator b(B, kb); b; ++b)
          trip.emplace_back(a.row() * B.rows() + b.row(), a.col() * B.cols() + b.col(), a.value() * b.value());
  SparseMatrix K(A.rows() * B.rows(), A.cols() * B.cols());
  K.setFromTriplets(trip.begin(), trip.end());
  return K;
}

/// Rows pick latent sites: row k has a single 1 at column sites[k].
inline SparseMatrix selection_matrix(Index latent_sites, const std::vector<Index>& sites) {
  SparseMatrix A(static_cast<Index>(sites.size()), latent_sites);
  std::vector<Triplet> trip;
  for (std::size_t k = 0; k < sites.size(); ++k) {
    if (sites[k] < 0 || sites[k] >= latent_sites) throw ValidationError("selection_matrix: site out of range");
    trip.emplace_back(static_cast<Index>(k), sites[k], 1.0);
  }
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

/// Q over lattice x time latent sites (latent index = t * sites + s) and the observation matrix A.
struct SparsePrecision {
  SparseMatrix Q;
  SparseMatrix A;

  /// Each A row must be a convex interpolation (non-negative, sums to one) over valid latent sites.
  void validate() const {
    if (Q.rows() != Q.cols()) throw SchemaError("SparsePrecision: Q must be square");
    if (A.cols() != Q.rows()) throw SchemaError("SparsePrecision: A columns must match latent sites");
    const SparseMatrix At = A.transpose();
    for (int k = 0; k < At.outerSize(); ++k) {
      double s = 0.0;
      for (SparseMatrix::InnerIterator it(At, k); it; ++it) {
        if (it.value() < 0) throw ValidationError("SparsePrecision: negative observation weight");
        s += it.value();
      }
      if (std::abs(s - 1.0) > 1e-12) throw ValidationError("SparsePrecision: observation row does not sum to 1");
    }
  }
};

/// Q = Q_time (x) Q_space with the unit-variance AR(1) in time; A defaults to the identity.
inline SparsePrecision lattice_gmrf_precision(const LatticeGeometry& g, int months, const GpHyperParams& p) {
  if (g.nx < 3 || g.ny < 3) throw ValidationError("lattice_gmrf_precision: lattice must be at least 3x3");
  SparsePrecision sp;
  sp.Q = kronecker(ar1_precision(months, p.phi), spatial_precision(g, p.kappa(), p.tau()));
  sp.A.resize(sp.Q.rows(), sp.Q.cols());
  sp.A.setIdentity();
  Eigen::SimplicialLLT<SparseMatrix> chol(sp.Q);
  if (chol.info() != Eigen::Success) throw NumericalError("lattice_gmrf_precision: Q is not positive definite");
  return sp;
}

/// Precision-form conditioning: with Q' = Q + A^T A / s, the latent posterior mean is
/// Q'^-1 A^T (y - m) / s and predictions are m' + A_pred (latent mean).
/// Marginal variances are diag(A_pred Q'^-1 A_pred^T).
inline GpPosterior gp_condition_precision(const SparsePrecision& sp, const SparseMatrix& A_pred, const Vector& y,
                                          const Vector& mean_obs, const Vector& mean_pred, double sigma_e2) {
  sp.validate();
  if (y.size() != sp.A.rows() || mean_obs.size() != y.size() || A_pred.cols() != sp.Q.rows() ||
      mean_pred.size() != A_pred.rows())
    throw SchemaError("gp_condition_precision: non-conformal dimensions");
  if (!(sigma_e2 > 0)) throw ValidationError("gp_condition_precision: sigma_e2 must be > 0");

  const SparseMatrix At = sp.A.transpose();
  SparseMatrix Qpost = sp.Q + (At * sp.A) / sigma_e2;
  Eigen::SimplicialLLT<SparseMatrix> chol(Qpost);
  if (chol.info() != Eigen::Success) throw NumericalError("gp_condition_precision: sparse Cholesky failed");
  const Vector latent = chol.solve(Vector(At * (y - mean_obs)) / sigma_e2);

  GpPosterior post;
  post.mean = mean_pred + A_pred * latent;
  post.variance.resize(A_pred.rows());
  const SparseMatrix Apt = A_pred.transpose();
  for (int k = 0; k < Apt.outerSize(); ++k) {
    const Vector a = Apt.col(k);
    post.variance[k] = a.dot(chol.solve(a));
  }
  return post;
}

}  // namespace gpstack
