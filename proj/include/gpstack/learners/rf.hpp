#pragma once

#include "gpstack/learners/tree.hpp"

#include <cstdint>
#include <numeric>

namespace gpstack {

struct RfParams {
  int n_trees = 200;
  int features_per_split = 0;  // 0: ceil(m / 3)
  int min_leaf = 5;
  int max_depth = 32;
  bool bootstrap = true;  // false: every tree sees the identity resample
};

/// Unweighted mean of bootstrap trees.
struct RfModel {
  std::vector<RegressionTree> trees;

  template <class Row>
  double predict_row(const Row& x) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(x);
    return s / static_cast<double>(trees.size());
  }

  Vector predict(const Matrix& X) const {
    Vector out(X.rows());
    for (Index r = 0; r < X.rows(); ++r) out[r] = predict_row(X.row(r));
    return out;
  }

  /// rows x B matrix of individual tree predictions.
  Matrix per_tree(const Matrix& X) const {
    Matrix out(X.rows(), static_cast<Index>(trees.size()));
    for (std::size_t b = 0; b < trees.size(); ++b) out.col(static_cast<Index>(b)) = trees[b].predict(X);
    return out;
  }
};

inline RfModel fit_rf(const Matrix& X, const Vector& y, const RfParams& p, std::uint64_t seed) {
  if (p.n_trees < 1) throw ValidationError("rf: n_trees must be >= 1");
  const Index n = X.rows();
  if (n < 1) throw ValidationError("rf: no rows");
  require_finite(X, "rf: X");
  require_finite(y, "rf: y");

  const auto m = static_cast<int>(X.cols());
  const int mtry = p.features_per_split > 0 ? std::min(p.features_per_split, m) : std::max(1, (m + 2) / 3);
  const TreeParams tp{p.max_depth, p.min_leaf, mtry};

  RfModel model;
  model.trees.reserve(static_cast<std::size_t>(p.n_trees));
  for (int b = 0; b < p.n_trees; ++b) {
    Rng rng(derive_seed(seed, 0x7f, static_cast<std::uint64_t>(b)));
    std::vector<Index> rows(static_cast<std::size_t>(n));
    if (p.bootstrap) {
      for (auto& r : rows) r = static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(n)));
    } else {
      std::iota(rows.begin(), rows.end(), Index{0});
    }
    model.trees.push_back(fit_tree(X, y, std::move(rows), tp, rng));
  }
  return model;
}

}  // namespace gpstack
