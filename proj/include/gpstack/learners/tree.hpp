#pragma once

#include "gpstack/core.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace gpstack {

/// Internal nodes carry (feature, threshold, children); leaves carry `value`.
/// A row goes left when x[feature] <= threshold.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;

  bool is_leaf() const { return feature < 0; }
};

struct TreeParams {
  int max_depth = 3;
  int min_leaf = 1;
  int features_per_split = 0;  // 0: every allowed feature at every split
};

class RegressionTree {
public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  template <class Row>
  double predict(const Row& x) const {
    int i = 0;
    while (!nodes_[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes_[static_cast<std::size_t>(i)];
      i = x[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes_[static_cast<std::size_t>(i)].value;
  }

  /// Index of the leaf reached by `x`.
  template <class Row>
  int leaf_of(const Row& x) const {
    int i = 0;
    while (!nodes_[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes_[static_cast<std::size_t>(i)];
      i = x[n.feature] <= n.threshold ? n.left : n.right;
    }
    return i;
  }

  Vector predict(const Matrix& X) const {
    Vector out(X.rows());
    for (Index r = 0; r < X.rows(); ++r) out[r] = predict(X.row(r));
    return out;
  }

  int depth() const { return depth_from(0); }
  const std::vector<TreeNode>& nodes() const { return nodes_; }

private:
  int depth_from(int i) const {
    const auto& n = nodes_[static_cast<std::size_t>(i)];
    return n.is_leaf() ? 0 : 1 + std::max(depth_from(n.left), depth_from(n.right));
  }

  std::vector<TreeNode> nodes_;
};

namespace detail {

class TreeBuilder {
public:
  TreeBuilder(const Matrix& X, const Vector& y, const TreeParams& p, std::vector<int> allowed, Rng& rng)
      : X_(X), y_(y), p_(p), allowed_(std::move(allowed)), rng_(rng) {}

  RegressionTree build(std::vector<Index> rows) {
    grow(rows, 0);
    return RegressionTree(std::move(nodes_));
  }

private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };

  int grow(std::vector<Index>& rows, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double sum = 0.0;
    for (Index r : rows) sum += y_[r];
    nodes_[static_cast<std::size_t>(id)].value = rows.empty() ? 0.0 : sum / static_cast<double>(rows.size());

    if (depth >= p_.max_depth || static_cast<int>(rows.size()) < 2 * p_.min_leaf) return id;
    const Split s = best_split(rows, sum);
    if (s.feature < 0) return id;

    std::vector<Index> left, right;
    for (Index r : rows) (X_(r, s.feature) <= s.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    nodes_[static_cast<std::size_t>(id)].feature = s.feature;
    nodes_[static_cast<std::size_t>(id)].threshold = s.threshold;
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  std::vector<int> candidate_features() {
    if (p_.features_per_split <= 0 || p_.features_per_split >= static_cast<int>(allowed_.size()))
      return allowed_;
    std::vector<int> pool = allowed_;
    // partial Fisher-Yates: first k entries become the sample
    for (int i = 0; i < p_.features_per_split; ++i) {
      const auto j = static_cast<std::size_t>(i) + uniform_index(rng_, pool.size() - static_cast<std::size_t>(i));
      std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    }
    pool.resize(static_cast<std::size_t>(p_.features_per_split));
    std::sort(pool.begin(), pool.end());
    return pool;
  }

  // Exact search over sorted distinct values. Ties keep the lower feature, then the lower threshold.
  Split best_split(const std::vector<Index>& rows, double total) {
    const auto n = static_cast<double>(rows.size());
    double ss = 0.0;
    const double mean = total / n;
    for (Index r : rows) ss += (y_[r] - mean) * (y_[r] - mean);
    Split best;
    if (!(ss > 0.0)) return best;
    best.gain = 1e-12 * ss;

    std::vector<std::pair<double, double>> xy(rows.size());
    for (int f : candidate_features()) {
      for (std::size_t i = 0; i < rows.size(); ++i) xy[i] = {X_(rows[i], f), y_[rows[i]] - mean};
      std::sort(xy.begin(), xy.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      double left_sum = 0.0;
      const auto min_leaf = static_cast<std::size_t>(p_.min_leaf);
      for (std::size_t k = 0; k + 1 < xy.size(); ++k) {
        left_sum += xy[k].second;
        if (xy[k].first == xy[k + 1].first) continue;
        const std::size_t nl = k + 1, nr = xy.size() - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        // centred sums: the right-hand sum is -left_sum
        const double gain = left_sum * left_sum * n / (static_cast<double>(nl) * static_cast<double>(nr));
        if (gain > best.gain) {
          double thr = xy[k].first + 0.5 * (xy[k + 1].first - xy[k].first);
          if (!(thr < xy[k + 1].first)) thr = xy[k].first;
          best = {f, thr, gain};
        }
      }
    }
    return best;
  }

  const Matrix& X_;
  const Vector& y_;
  TreeParams p_;
  std::vector<int> allowed_;
  Rng& rng_;
  std::vector<TreeNode> nodes_;
};

}  // namespace detail

/// Greedy variance-reduction regression tree on the given rows (duplicates allowed, as in a bootstrap).
inline RegressionTree fit_tree(const Matrix& X, const Vector& y, std::vector<Index> rows, const TreeParams& p,
                               Rng& rng, std::vector<int> allowed_features = {}) {
  if (allowed_features.empty()) {
    allowed_features.resize(static_cast<std::size_t>(X.cols()));
    std::iota(allowed_features.begin(), allowed_features.end(), 0);
  }
  detail::TreeBuilder b(X, y, p, std::move(allowed_features), rng);
  return b.build(std::move(rows));
}

}  // namespace gpstack
