#include "mmpred/trees.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mmpred::models {

double Tree::predict(const double* row) const { return nodes[leaf_index(row)].value; }

int Tree::leaf_index(const double* row) const {
  int idx = 0;
  while (nodes[idx].feature >= 0) {
    idx = row[nodes[idx].feature] <= nodes[idx].threshold ? nodes[idx].left : nodes[idx].right;
  }
  return idx;
}

int Tree::n_leaves() const {
  int c = 0;
  for (const auto& n : nodes) c += n.feature < 0;
  return c;
}

namespace {

struct Builder {
  const std::vector<double>& X;
  int n;
  int d;
  const std::vector<double>& y;
  const TreeOptions& opt;
  Rng& rng;
  Tree tree;

  double row_val(int row, int feature) const { return X[static_cast<size_t>(row) * d + feature]; }

  int build(std::vector<int> rows, int depth) {
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double sum = 0.0;
    for (int r : rows) sum += y[r];
    const double mean = sum / static_cast<double>(rows.size());
    tree.nodes[node_id].value = mean;
    if (depth >= opt.max_depth || static_cast<int>(rows.size()) < opt.min_samples_split) {
      return node_id;
    }

    // Candidate features: all, or a random subset without replacement.
    std::vector<int> features(d);
    std::iota(features.begin(), features.end(), 0);
    if (opt.feature_subsample > 0 && opt.feature_subsample < d) {
      rng.shuffle(features);
      features.resize(opt.feature_subsample);
      std::sort(features.begin(), features.end());
    }

    double parent_sse = 0.0;
    for (int r : rows) parent_sse += (y[r] - mean) * (y[r] - mean);

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_gain = 1e-12;
    std::vector<int> order(rows);
    for (int f : features) {
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double va = row_val(a, f), vb = row_val(b, f);
        return va != vb ? va < vb : a < b;
      });
      double left_sum = 0.0, left_sq = 0.0;
      double total_sq = 0.0;
      for (int r : order) total_sq += y[r] * y[r];
      const int m = static_cast<int>(order.size());
      for (int i = 0; i < m - 1; ++i) {
        const double yi = y[order[i]];
        left_sum += yi;
        left_sq += yi * yi;
        if (row_val(order[i], f) == row_val(order[i + 1], f)) continue;
        const int nl = i + 1, nr = m - nl;
        if (nl < opt.min_samples_leaf || nr < opt.min_samples_leaf) continue;
        const double right_sum = sum - left_sum;
        const double right_sq = total_sq - left_sq;
        const double sse = (left_sq - left_sum * left_sum / nl) +
                           (right_sq - right_sum * right_sum / nr);
        const double gain = parent_sse - sse;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = 0.5 * (row_val(order[i], f) + row_val(order[i + 1], f));
        }
      }
    }
    if (best_feature < 0) return node_id;

    std::vector<int> left_rows, right_rows;
    for (int r : rows) {
      (row_val(r, best_feature) <= best_threshold ? left_rows : right_rows).push_back(r);
    }
    if (left_rows.empty() || right_rows.empty()) return node_id;
    tree.nodes[node_id].feature = best_feature;
    tree.nodes[node_id].threshold = best_threshold;
    const int left_id = build(std::move(left_rows), depth + 1);
    tree.nodes[node_id].left = left_id;
    const int right_id = build(std::move(right_rows), depth + 1);
    tree.nodes[node_id].right = right_id;
    return node_id;
  }
};

}  // namespace

Tree fit_regression_tree(const std::vector<double>& X, int n, int d,
                         const std::vector<double>& targets, const std::vector<int>& rows,
                         const TreeOptions& options, Rng& rng) {
  Builder b{X, n, d, targets, options, rng, {}};
  b.build(rows, 0);
  return std::move(b.tree);
}

}  // namespace mmpred::models
