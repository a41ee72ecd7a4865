#pragma once

#include <cstdint>
#include <vector>

#include "mmpred/metrics.hpp"

namespace mmpred::eval {

struct BootstrapCi {
  Interval interval;
  double point_estimate = 0.0;
  int degenerate_redraws = 0;  // single-class resamples that were redrawn
};

// Percentile bootstrap with B resamples (replacement). Resamples holding a
// single class are redrawn and counted; more than 50% degenerate draws is an
// error. Deterministic in seed.
BootstrapCi bootstrap_ci(const std::vector<double>& probs, const std::vector<int>& labels,
                         Metric metric, int n_resamples = 2000, double alpha = 0.05,
                         uint64_t seed = 0);

// Shared-index bootstrap score blocks for rank statistics: one row per
// replicate, one column per classifier, every classifier evaluated on the
// same resample so the blocks are paired.
std::vector<std::vector<double>> bootstrap_score_blocks(
    const std::vector<std::vector<double>>& probs_per_classifier, const std::vector<int>& labels,
    Metric metric, int n_replicates, uint64_t seed);

}  // namespace mmpred::eval
