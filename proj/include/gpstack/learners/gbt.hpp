#pragma once

#include "gpstack/learners/tree.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>

namespace gpstack {

struct GbtParams {
  int n_trees = 100;
  double shrinkage = 0.1;
  int max_depth = 3;
  double subsample = 0.8;  // row fraction per stage, drawn without replacement
  double colsample = 0.8;  // column fraction per stage
  int min_leaf = 5;
};

/// f(x) = base + shrinkage * sum_m T_m(x), base = mean(y).
struct GbtModel {
  double base = 0.0;
  double shrinkage = 0.1;
  std::vector<RegressionTree> trees;

  template <class Row>
  double predict_row(const Row& x, std::size_t stages) const {
    double f = base;
    for (std::size_t m = 0; m < std::min(stages, trees.size()); ++m) f += shrinkage * trees[m].predict(x);
    return f;
  }

  /// Prediction using only the first `stages` trees.
  Vector predict(const Matrix& X, std::size_t stages) const {
    Vector out(X.rows());
    for (Index r = 0; r < X.rows(); ++r) out[r] = predict_row(X.row(r), stages);
    return out;
  }

  Vector predict(const Matrix& X) const { return predict(X, trees.size()); }
};

inline GbtModel fit_gbt(const Matrix& X, const Vector& y, const GbtParams& p, std::uint64_t seed) {
  const Index n = X.rows();
  if (n < 2) throw ValidationError("gbt: need at least 2 rows");
  require_finite(X, "gbt: X");
  require_finite(y, "gbt: y");

  GbtModel model;
  model.base = y.mean();
  model.shrinkage = p.shrinkage;
  Vector f = Vector::Constant(n, model.base);

  Rng rng(derive_seed(seed, 0x9b7));
  const auto m = static_cast<int>(X.cols());
  const auto n_rows = std::max<Index>(1, static_cast<Index>(std::llround(p.subsample * static_cast<double>(n))));
  const int n_cols = std::max(1, static_cast<int>(std::lround(p.colsample * m)));
  const TreeParams tp{p.max_depth, p.min_leaf, 0};

  std::vector<Index> all_rows(static_cast<std::size_t>(n));
  std::iota(all_rows.begin(), all_rows.end(), Index{0});
  std::vector<int> all_cols(static_cast<std::size_t>(m));
  std::iota(all_cols.begin(), all_cols.end(), 0);

  for (int stage = 0; stage < p.n_trees; ++stage) {
    const Vector residual = y - f;
    std::vector<Index> rows = all_rows;
    if (n_rows < n) {
      shuffle_in_place(rows, rng);
      rows.resize(static_cast<std::size_t>(n_rows));
      std::sort(rows.begin(), rows.end());
    }
    std::vector<int> cols = all_cols;
    if (n_cols < m) {
      shuffle_in_place(cols, rng);
      cols.resize(static_cast<std::size_t>(n_cols));
      std::sort(cols.begin(), cols.end());
    }
    RegressionTree tree = fit_tree(X, residual, std::move(rows), tp, rng, std::move(cols));
    for (Index r = 0; r < n; ++r) f[r] += p.shrinkage * tree.predict(X.row(r));
    model.trees.push_back(std::move(tree));
  }
  return model;
}

}  // namespace gpstack
