#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mmpred::eval {

enum class SplitMode { tripod2a, nested };

struct SplitPlan {
  SplitMode mode = SplitMode::tripod2a;
  int outer_folds = 5;
  int inner_folds = 5;
  double dev_fraction = 0.8;
  uint64_t seed = 0;
};

// Per-class proportional split with largest-remainder rounding; deterministic
// in seed. Returns (dev indices, holdout indices), both sorted.
std::pair<std::vector<int>, std::vector<int>> stratified_split(const std::vector<int>& labels,
                                                               double fraction, uint64_t seed);

// Stratified k-fold partition: fold id per sample, each fold's positive count
// within one patient of the proportional share.
std::vector<int> stratified_kfold(const std::vector<int>& labels, int k, uint64_t seed);

// A hyperparameter candidate is opaque here; eval only ranks them.
struct NestedCvResult {
  struct OuterFold {
    std::vector<int> test_indices;
    int winner = -1;                 // index into the candidate list
    double winner_mean_auprc = 0.0;  // mean inner-validation AUPRC
    std::vector<double> candidate_mean_auprc;
  };
  std::vector<OuterFold> folds;
  // Pooled outer-test predictions in original sample order.
  std::vector<double> pooled_probs;
  std::vector<int> pooled_labels;
  std::vector<int> fold_of_sample;
};

// fit(train_indices, eval_indices, candidate, seed) -> probabilities on
// eval_indices. Inner selection maximizes mean inner-validation AUPRC;
// the winner is refit on the full outer-training set.
using FitPredictFn = std::function<std::vector<double>(
    const std::vector<int>& train_indices, const std::vector<int>& eval_indices, int candidate,
    uint64_t seed)>;

NestedCvResult nested_cv(const std::vector<int>& labels, int n_candidates, const FitPredictFn& fit,
                         const SplitPlan& plan);

}  // namespace mmpred::eval
