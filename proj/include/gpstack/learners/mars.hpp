#pragma once

#include "gpstack/core.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <numeric>
#include <limits>
#include <vector>

namespace gpstack {

/// max(0, x - knot) for direction +1, max(0, knot - x) for direction -1.
inline double hinge(double x, double knot, int direction) {
  return std::max(0.0, direction > 0 ? x - knot : knot - x);
}

struct HingeFactor {
  int feature = 0;
  double knot = 0.0;
  int direction = 1;
};

/// Product of hinge factors; the empty product is the intercept.
struct MarsBasis {
  std::vector<HingeFactor> factors;

  int degree() const { return static_cast<int>(factors.size()); }
  bool uses(int feature) const {
    return std::any_of(factors.begin(), factors.end(), [&](const auto& f) { return f.feature == feature; });
  }
  template <class Row>
  double eval(const Row& x) const {
    double v = 1.0;
    for (const auto& f : factors) v *= hinge(x[f.feature], f.knot, f.direction);
    return v;
  }
  Vector eval(const Matrix& X) const {
    Vector out(X.rows());
    for (Index i = 0; i < X.rows(); ++i) out[i] = eval(X.row(i));
    return out;
  }
};

struct MarsParams {
  int max_terms = 21;
  int max_degree = 1;
  double penalty = 3.0;  // GCV cost per knot
  int max_knots = 30;    // candidate knots per feature; 0 = every observed value
};

struct MarsModel {
  std::vector<MarsBasis> basis;
  Vector coef;

  Vector predict(const Matrix& X) const {
    Vector out = Vector::Zero(X.rows());
    for (std::size_t k = 0; k < basis.size(); ++k) out += coef[static_cast<Index>(k)] * basis[k].eval(X);
    return out;
  }
};

/// GCV = (RSS / n) / (1 - C / n)^2, C = terms + penalty * (terms - 1) / 2.
inline double mars_gcv(double rss, Index n, std::size_t terms, double penalty) {
  const double c = static_cast<double>(terms) + penalty * (static_cast<double>(terms) - 1.0) / 2.0;
  const double nn = static_cast<double>(n);
  if (c >= nn) return std::numeric_limits<double>::infinity();
  const double d = 1.0 - c / nn;
  return rss / nn / (d * d);
}

/// Diagnostics from the two passes.
struct MarsTrace {
  std::size_t forward_terms = 0;
  double forward_gcv = 0.0;
  double final_gcv = 0.0;
};

namespace detail {

inline double lstsq_rss(const Matrix& B, const Vector& y, Vector* coef = nullptr) {
  const Eigen::ColPivHouseholderQR<Matrix> qr(B);
  const Vector c = qr.solve(y);
  if (coef) *coef = c;
  return (y - B * c).squaredNorm();
}

inline std::vector<double> knot_candidates(const Vector& x, int max_knots) {
  std::vector<double> v(x.data(), x.data() + x.size());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  if (max_knots <= 0 || static_cast<int>(v.size()) <= max_knots) return v;
  std::vector<double> out;
  for (int i = 0; i < max_knots; ++i) {
    const auto idx = static_cast<std::size_t>(
        std::llround(static_cast<double>(i) * static_cast<double>(v.size() - 1) / (max_knots - 1)));
    if (out.empty() || v[idx] > out.back()) out.push_back(v[idx]);
  }
  return out;
}

}  // namespace detail

/// Forward pass adds reflected hinge pairs at candidate knots; backward pass deletes terms one at a
/// time and keeps the subset with the lowest GCV.
inline MarsModel fit_mars(const Matrix& X, const Vector& y, const MarsParams& p, MarsTrace* trace = nullptr) {
  if (p.max_terms < 1) throw ValidationError("mars: max_terms must be >= 1");
  const Index n = X.rows();
  if (n < 2) throw ValidationError("mars: need at least 2 rows");
  require_finite(X, "mars: X");
  require_finite(y, "mars: y");

  std::vector<MarsBasis> basis{MarsBasis{}};
  std::vector<Vector> cols{Vector::Ones(n)};
  // orthonormal basis of span(cols)
  Matrix Q(n, p.max_terms + 2);
  Index q_cols = 0;
  auto append_orthonormal = [&](const Vector& v) {
    Vector w = v;
    for (int pass = 0; pass < 2; ++pass)
      for (Index k = 0; k < q_cols; ++k) w -= Q.col(k).dot(w) * Q.col(k);
    const double nrm = w.norm();
    if (nrm <= 1e-10 * std::max(1.0, v.norm())) return false;
    Q.col(q_cols++) = w / nrm;
    return true;
  };
  append_orthonormal(cols[0]);
  Vector r = y - Q.leftCols(q_cols) * (Q.leftCols(q_cols).transpose() * y);
  const double tss = r.squaredNorm();

  std::vector<std::vector<double>> knots;
  for (Index j = 0; j < X.cols(); ++j) knots.push_back(detail::knot_candidates(X.col(j), p.max_knots));

  while (static_cast<int>(basis.size()) + 1 <= p.max_terms && r.squaredNorm() > 1e-14 * std::max(tss, 1e-300)) {
    struct Best {
      double gain = 0.0;
      std::size_t parent = 0;
      int feature = -1;
      double knot = 0.0;
      bool use_plus = false, use_minus = false;
    } best;
    const auto Qc = Q.leftCols(q_cols);
    const bool room_for_pair = static_cast<int>(basis.size()) + 2 <= p.max_terms;

    for (std::size_t parent = 0; parent < basis.size(); ++parent) {
      if (basis[parent].degree() >= p.max_degree) continue;
      const Vector& pv = cols[parent];
      for (int f = 0; f < static_cast<int>(X.cols()); ++f) {
        if (basis[parent].uses(f)) continue;
        for (double t : knots[static_cast<std::size_t>(f)]) {
          Vector hp(n), hm(n);
          for (Index i = 0; i < n; ++i) {
            hp[i] = pv[i] * hinge(X(i, f), t, 1);
            hm[i] = pv[i] * hinge(X(i, f), t, -1);
          }
          const Vector qp = Qc.transpose() * hp, qm = Qc.transpose() * hm;
          const double gpp = hp.squaredNorm() - qp.squaredNorm();
          const double gmm = hm.squaredNorm() - qm.squaredNorm();
          const double gpm = hp.dot(hm) - qp.dot(qm);
          const double ap = hp.dot(r), am = hm.dot(r);
          const bool okp = gpp > 1e-10 * std::max(1e-300, hp.squaredNorm());
          const bool okm = gmm > 1e-10 * std::max(1e-300, hm.squaredNorm());
          double gain = 0.0;
          bool up = false, um = false;
          if (okp && okm && room_for_pair) {
            const double det = gpp * gmm - gpm * gpm;
            if (det > 1e-10 * gpp * gmm) {
              gain = (gmm * ap * ap - 2 * gpm * ap * am + gpp * am * am) / det;
              up = um = true;
            }
          }
          if (!up) {
            const double g1 = okp ? ap * ap / gpp : 0.0;
            const double g2 = okm ? am * am / gmm : 0.0;
            if (g1 >= g2 && okp) {
              gain = g1;
              up = true;
            } else if (okm) {
              gain = g2;
              um = true;
            }
          }
          if (gain > best.gain) best = {gain, parent, f, t, up, um};
        }
      }
    }
    if (best.feature < 0 || best.gain <= 1e-9 * tss) break;

    bool added = false;
    for (int dir : {1, -1}) {
      if ((dir > 0 && !best.use_plus) || (dir < 0 && !best.use_minus)) continue;
      MarsBasis b = basis[best.parent];
      b.factors.push_back({best.feature, best.knot, dir});
      Vector v = b.eval(X);
      if (append_orthonormal(v)) {
        basis.push_back(std::move(b));
        cols.push_back(std::move(v));
        added = true;
      }
    }
    if (!added) break;
    const auto Qn = Q.leftCols(q_cols);
    r = y - Qn * (Qn.transpose() * y);
  }

  // backward pass
  Matrix B(n, static_cast<Index>(basis.size()));
  for (std::size_t k = 0; k < basis.size(); ++k) B.col(static_cast<Index>(k)) = cols[k];
  std::vector<std::size_t> active(basis.size());
  std::iota(active.begin(), active.end(), std::size_t{0});
  auto sub = [&](const std::vector<std::size_t>& idx) {
    Matrix M(n, static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) M.col(static_cast<Index>(k)) = B.col(static_cast<Index>(idx[k]));
    return M;
  };
  const double forward_gcv = mars_gcv(detail::lstsq_rss(B, y), n, active.size(), p.penalty);
  std::vector<std::size_t> best_set = active;
  double best_gcv = forward_gcv;
  while (active.size() > 1) {
    double best_rss = std::numeric_limits<double>::infinity();
    std::size_t drop = 0;
    for (std::size_t k = 1; k < active.size(); ++k) {  // never drop the intercept
      auto trial = active;
      trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(k));
      const double rss = detail::lstsq_rss(sub(trial), y);
      if (rss < best_rss) {
        best_rss = rss;
        drop = k;
      }
    }
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(drop));
    const double gcv = mars_gcv(best_rss, n, active.size(), p.penalty);
    if (gcv < best_gcv) {
      best_gcv = gcv;
      best_set = active;
    }
  }

  MarsModel model;
  for (auto k : best_set) model.basis.push_back(basis[k]);
  detail::lstsq_rss(sub(best_set), y, &model.coef);
  if (trace) {
    trace->forward_terms = basis.size();
    trace->forward_gcv = forward_gcv;
    trace->final_gcv = best_gcv;
  }
  return model;
}

}  // namespace gpstack
