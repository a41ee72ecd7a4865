#include "mmpred/splits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmpred/error.hpp"
#include "mmpred/metrics.hpp"
#include "mmpred/rng.hpp"

namespace mmpred::eval {

namespace {

std::vector<std::vector<int>> indices_by_class(const std::vector<int>& labels) {
  std::vector<std::vector<int>> by_class(2);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw split_error("split: labels must be binary");
    by_class[labels[i]].push_back(static_cast<int>(i));
  }
  return by_class;
}

}  // namespace

std::pair<std::vector<int>, std::vector<int>> stratified_split(const std::vector<int>& labels,
                                                               double fraction, uint64_t seed) {
  if (fraction <= 0.0 || fraction >= 1.0) {
    throw config_error("stratified_split: fraction must lie in (0,1), got " +
                       std::to_string(fraction));
  }
  auto by_class = indices_by_class(labels);
  for (int c = 0; c < 2; ++c) {
    if (by_class[c].size() < 2) {
      throw split_error("stratified_split: class " + std::to_string(c) + " has " +
                        std::to_string(by_class[c].size()) + " members (need >= 2)");
    }
  }
  // Largest-remainder rounding of per-class dev counts against the global
  // target round(fraction * n).
  const int n = static_cast<int>(labels.size());
  const int target = static_cast<int>(std::llround(fraction * n));
  int base_total = 0;
  std::vector<int> take(2);
  std::vector<double> remainder(2);
  for (int c = 0; c < 2; ++c) {
    const double exact = fraction * static_cast<double>(by_class[c].size());
    take[c] = static_cast<int>(std::floor(exact));
    remainder[c] = exact - take[c];
    base_total += take[c];
  }
  int leftover = target - base_total;
  std::vector<int> cls_order = {0, 1};
  std::sort(cls_order.begin(), cls_order.end(),
            [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (int c : cls_order) {
    if (leftover <= 0) break;
    if (take[c] < static_cast<int>(by_class[c].size())) {
      ++take[c];
      --leftover;
    }
  }

  Rng rng(seed ^ 0x5354524154ULL);
  std::pair<std::vector<int>, std::vector<int>> out;
  for (int c = 0; c < 2; ++c) {
    auto idx = by_class[c];
    rng.shuffle(idx);
    for (size_t i = 0; i < idx.size(); ++i) {
      (static_cast<int>(i) < take[c] ? out.first : out.second).push_back(idx[i]);
    }
  }
  std::sort(out.first.begin(), out.first.end());
  std::sort(out.second.begin(), out.second.end());
  if (out.second.empty()) throw split_error("stratified_split: empty holdout");
  return out;
}

std::vector<int> stratified_kfold(const std::vector<int>& labels, int k, uint64_t seed) {
  if (k < 2) throw config_error("stratified_kfold: k must be >= 2");
  auto by_class = indices_by_class(labels);
  for (int c = 0; c < 2; ++c) {
    if (static_cast<int>(by_class[c].size()) < k) {
      throw split_error("stratified_kfold: class " + std::to_string(c) + " smaller than k=" +
                        std::to_string(k));
    }
  }
  Rng rng(seed ^ 0x4b464f4cULL);
  std::vector<int> fold(labels.size(), -1);
  for (int c = 0; c < 2; ++c) {
    auto idx = by_class[c];
    rng.shuffle(idx);
    // Rotate the starting fold per class so fold sizes stay balanced.
    const int start = static_cast<int>(rng.uniform_int(0, k - 1));
    for (size_t i = 0; i < idx.size(); ++i) {
      fold[idx[i]] = static_cast<int>((start + i) % k);
    }
  }
  return fold;
}

NestedCvResult nested_cv(const std::vector<int>& labels, int n_candidates, const FitPredictFn& fit,
                         const SplitPlan& plan) {
  if (plan.mode != SplitMode::nested) throw config_error("nested_cv: plan.mode must be nested");
  if (n_candidates < 1) throw config_error("nested_cv: no candidates");
  const int n = static_cast<int>(labels.size());
  NestedCvResult result;
  result.pooled_probs.assign(n, 0.0);
  result.pooled_labels = labels;
  result.fold_of_sample.assign(n, -1);

  const std::vector<int> outer_fold = stratified_kfold(labels, plan.outer_folds, plan.seed);
  for (int of = 0; of < plan.outer_folds; ++of) {
    std::vector<int> train_idx, test_idx;
    for (int i = 0; i < n; ++i) {
      (outer_fold[i] == of ? test_idx : train_idx).push_back(i);
    }
    std::vector<int> train_labels(train_idx.size());
    for (size_t i = 0; i < train_idx.size(); ++i) train_labels[i] = labels[train_idx[i]];

    // Inner selection; re-seed the resplit when a fold degenerates.
    std::vector<int> inner_fold;
    bool ok = false;
    for (int attempt = 0; attempt < 3 && !ok; ++attempt) {
      inner_fold = stratified_kfold(train_labels, plan.inner_folds,
                                    plan.seed + 1000 * (of + 1) + attempt);
      ok = true;
      for (int f = 0; f < plan.inner_folds && ok; ++f) {
        int pos = 0, neg = 0;
        for (size_t i = 0; i < train_labels.size(); ++i) {
          if (inner_fold[i] != f) continue;
          (train_labels[i] == 1 ? pos : neg)++;
        }
        if (pos == 0 || neg == 0) ok = false;
      }
    }
    if (!ok) throw split_error("nested_cv: degenerate inner folds after 3 attempts");

    NestedCvResult::OuterFold fold_out;
    fold_out.test_indices = test_idx;
    fold_out.candidate_mean_auprc.assign(n_candidates, 0.0);
    for (int cand = 0; cand < n_candidates; ++cand) {
      double sum = 0.0;
      for (int f = 0; f < plan.inner_folds; ++f) {
        std::vector<int> inner_train, inner_val;
        for (size_t i = 0; i < train_idx.size(); ++i) {
          (inner_fold[i] == f ? inner_val : inner_train).push_back(train_idx[i]);
        }
        const std::vector<double> probs =
            fit(inner_train, inner_val, cand, plan.seed + 7919 * (of + 1) + f);
        std::vector<int> val_labels(inner_val.size());
        for (size_t i = 0; i < inner_val.size(); ++i) val_labels[i] = labels[inner_val[i]];
        sum += auprc(probs, val_labels);
      }
      fold_out.candidate_mean_auprc[cand] = sum / plan.inner_folds;
      if (fold_out.winner < 0 ||
          fold_out.candidate_mean_auprc[cand] > fold_out.winner_mean_auprc) {
        fold_out.winner = cand;
        fold_out.winner_mean_auprc = fold_out.candidate_mean_auprc[cand];
      }
    }

    // Refit the winner on the full outer-training set; pool test predictions.
    const std::vector<double> test_probs =
        fit(train_idx, test_idx, fold_out.winner, plan.seed + 104729 * (of + 1));
    for (size_t i = 0; i < test_idx.size(); ++i) {
      result.pooled_probs[test_idx[i]] = test_probs[i];
      result.fold_of_sample[test_idx[i]] = of;
    }
    result.folds.push_back(std::move(fold_out));
  }
  return result;
}

}  // namespace mmpred::eval
