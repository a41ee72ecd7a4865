#pragma once

#include <optional>
#include <vector>

namespace mmpred::eval {

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

struct MetricReport {
  double auprc = 0.0;
  double auroc = 0.0;
  double f1_macro = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  // False when the labels held a single class: threshold metrics are valid
  // but the area metrics are undefined (NaN).
  bool areas_defined = true;
  std::optional<Interval> auprc_ci, auroc_ci, f1_macro_ci, sensitivity_ci, specificity_ci;
};

enum class Metric { auprc, auroc, f1_macro, sensitivity, specificity };

// Rank-based AUROC (Mann-Whitney normalization, average ranks on ties).
// Requires both classes present.
double auroc(const std::vector<double>& probs, const std::vector<int>& labels);

// Step-wise (non-interpolated) precision-recall integration; tied scores are
// processed as one threshold group. Requires at least one positive.
double auprc(const std::vector<double>& probs, const std::vector<int>& labels);

// Threshold metrics at p >= threshold; F1 of an empty denominator is 0.
MetricReport compute_metrics(const std::vector<double>& probs, const std::vector<int>& labels,
                             double threshold = 0.5);

double metric_value(const MetricReport& r, Metric m);
double single_metric(const std::vector<double>& probs, const std::vector<int>& labels, Metric m,
                     double threshold = 0.5);

}  // namespace mmpred::eval
