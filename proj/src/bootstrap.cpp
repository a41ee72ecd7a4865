#include "mmpred/bootstrap.hpp"

#include <algorithm>
#include <cmath>

#include "mmpred/error.hpp"
#include "mmpred/rng.hpp"

namespace mmpred::eval {

namespace {

// Linear interpolation between order statistics (the numpy default).
double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * (static_cast<double>(values.size()) - 1.0);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = static_cast<size_t>(std::ceil(pos));
  if (lo == hi) return values[lo];
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

bool needs_both_classes(Metric m) { return m == Metric::auroc || m == Metric::auprc; }

}  // namespace

BootstrapCi bootstrap_ci(const std::vector<double>& probs, const std::vector<int>& labels,
                         Metric metric, int n_resamples, double alpha, uint64_t seed) {
  const int n = static_cast<int>(probs.size());
  if (n < 10) throw config_error("bootstrap_ci: need n >= 10, got " + std::to_string(n));
  if (n_resamples < 2) throw config_error("bootstrap_ci: need at least 2 resamples");

  BootstrapCi out;
  out.point_estimate = single_metric(probs, labels, metric);

  Rng rng(seed ^ 0x424f4f54ULL);
  std::vector<double> stats;
  stats.reserve(n_resamples);
  std::vector<double> p(n);
  std::vector<int> y(n);
  int degenerate = 0;
  const int max_attempts = n_resamples * 2;
  int attempts = 0;
  while (static_cast<int>(stats.size()) < n_resamples && attempts < max_attempts) {
    ++attempts;
    int pos = 0;
    for (int i = 0; i < n; ++i) {
      const int idx = static_cast<int>(rng.uniform_int(0, n - 1));
      p[i] = probs[idx];
      y[i] = labels[idx];
      pos += y[i];
    }
    if (needs_both_classes(metric) && (pos == 0 || pos == n)) {
      ++degenerate;
      continue;
    }
    stats.push_back(single_metric(p, y, metric));
  }
  out.degenerate_redraws = degenerate;
  if (static_cast<int>(stats.size()) < n_resamples) {
    throw pipeline_error("bootstrap_ci: more than 50% of resamples were single-class (" +
                         std::to_string(degenerate) + " redraws)");
  }
  out.interval.lower = percentile(stats, alpha / 2.0);
  out.interval.upper = percentile(stats, 1.0 - alpha / 2.0);
  return out;
}

std::vector<std::vector<double>> bootstrap_score_blocks(
    const std::vector<std::vector<double>>& probs_per_classifier, const std::vector<int>& labels,
    Metric metric, int n_replicates, uint64_t seed) {
  if (probs_per_classifier.empty()) throw config_error("bootstrap_score_blocks: no classifiers");
  const int n = static_cast<int>(labels.size());
  for (const auto& p : probs_per_classifier) {
    if (static_cast<int>(p.size()) != n) {
      throw dim_error("bootstrap_score_blocks: prediction length mismatch");
    }
  }
  Rng rng(seed ^ 0x424c4f434bULL);
  std::vector<std::vector<double>> blocks;
  blocks.reserve(n_replicates);
  std::vector<int> idx(n), y(n);
  std::vector<double> p(n);
  int guard = 0;
  while (static_cast<int>(blocks.size()) < n_replicates) {
    if (++guard > n_replicates * 3) {
      throw pipeline_error("bootstrap_score_blocks: resamples keep degenerating");
    }
    int pos = 0;
    for (int i = 0; i < n; ++i) {
      idx[i] = static_cast<int>(rng.uniform_int(0, n - 1));
      y[i] = labels[idx[i]];
      pos += y[i];
    }
    if (needs_both_classes(metric) && (pos == 0 || pos == n)) continue;
    std::vector<double> row;
    row.reserve(probs_per_classifier.size());
    for (const auto& probs : probs_per_classifier) {
      for (int i = 0; i < n; ++i) p[i] = probs[idx[i]];
      row.push_back(single_metric(p, y, metric));
    }
    blocks.push_back(std::move(row));
  }
  return blocks;
}

}  // namespace mmpred::eval
