#pragma once

#include <cstdint>
#include <vector>

#include "mmpred/rng.hpp"

namespace mmpred::models {

// CART regression tree with squared-error splits. On 0/1 targets variance
// reduction coincides with gini improvement, so the same builder serves both
// the boosted trees (residual targets) and the random forest (class targets).
struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(const double* row) const;
  int leaf_index(const double* row) const;
  int n_leaves() const;
};

struct TreeOptions {
  int max_depth = 3;
  int min_samples_leaf = 1;
  int min_samples_split = 2;
  // 0 = consider every feature; otherwise a random subset of this size per split.
  int feature_subsample = 0;
};

// X row-major [n x d]; rows selects the training subset (duplicates allowed,
// supporting bootstrap resamples).
Tree fit_regression_tree(const std::vector<double>& X, int n, int d,
                         const std::vector<double>& targets, const std::vector<int>& rows,
                         const TreeOptions& options, Rng& rng);

}  // namespace mmpred::models
