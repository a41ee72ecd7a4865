#include "mmpred/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmpred/error.hpp"

namespace mmpred::eval {

namespace {

void check_inputs(const std::vector<double>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) throw dim_error("metrics: probs/labels length mismatch");
  if (probs.empty()) throw dim_error("metrics: empty input");
  for (double p : probs) {
    if (!std::isfinite(p)) throw dim_error("metrics: non-finite probability");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw dim_error("metrics: labels must be binary");
  }
}

int count_pos(const std::vector<int>& labels) {
  return static_cast<int>(std::count(labels.begin(), labels.end(), 1));
}

}  // namespace

double auroc(const std::vector<double>& probs, const std::vector<int>& labels) {
  check_inputs(probs, labels);
  const int n = static_cast<int>(probs.size());
  const int np = count_pos(labels);
  const int nn = n - np;
  if (np == 0 || nn == 0) {
    throw split_error("auroc: needs both classes, got " + std::to_string(np) + " positives of " +
                      std::to_string(n));
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[a] < probs[b]; });
  // Average ranks over tie groups; sum positive ranks.
  double rank_sum_pos = 0.0;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j < n && probs[order[j]] == probs[order[i]]) ++j;
    const double avg_rank = 0.5 * (i + 1 + j);  // ranks are 1-based
    for (int k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  return (rank_sum_pos - 0.5 * np * (np + 1.0)) / (static_cast<double>(np) * nn);
}

double auprc(const std::vector<double>& probs, const std::vector<int>& labels) {
  check_inputs(probs, labels);
  const int n = static_cast<int>(probs.size());
  const int np = count_pos(labels);
  if (np == 0) throw split_error("auprc: no positive labels");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[a] > probs[b]; });
  double area = 0.0;
  double tp = 0.0, fp = 0.0;
  double prev_recall = 0.0;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j < n && probs[order[j]] == probs[order[i]]) ++j;
    for (int k = i; k < j; ++k) {
      if (labels[order[k]] == 1)
        tp += 1.0;
      else
        fp += 1.0;
    }
    const double recall = tp / np;
    const double precision = tp / (tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

MetricReport compute_metrics(const std::vector<double>& probs, const std::vector<int>& labels,
                             double threshold) {
  check_inputs(probs, labels);
  MetricReport r;
  int tp = 0, fp = 0, tn = 0, fn = 0;
  for (size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    if (labels[i] == 1) {
      pred ? ++tp : ++fn;
    } else {
      pred ? ++fp : ++tn;
    }
  }
  r.sensitivity = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.specificity = (tn + fp) > 0 ? static_cast<double>(tn) / (tn + fp) : 0.0;
  const double f1_pos = (2 * tp + fp + fn) > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
  const double f1_neg = (2 * tn + fp + fn) > 0 ? 2.0 * tn / (2.0 * tn + fp + fn) : 0.0;
  r.f1_macro = 0.5 * (f1_pos + f1_neg);
  const int np = count_pos(labels);
  const int nn = static_cast<int>(labels.size()) - np;
  if (np == 0 || nn == 0) {
    r.areas_defined = false;
    r.auroc = std::nan("");
    r.auprc = std::nan("");
    return r;
  }
  r.auroc = auroc(probs, labels);
  r.auprc = auprc(probs, labels);
  return r;
}

double metric_value(const MetricReport& r, Metric m) {
  switch (m) {
    case Metric::auprc:
      return r.auprc;
    case Metric::auroc:
      return r.auroc;
    case Metric::f1_macro:
      return r.f1_macro;
    case Metric::sensitivity:
      return r.sensitivity;
    case Metric::specificity:
      return r.specificity;
  }
  return 0.0;
}

double single_metric(const std::vector<double>& probs, const std::vector<int>& labels, Metric m,
                     double threshold) {
  if (m == Metric::auroc) return auroc(probs, labels);
  if (m == Metric::auprc) return auprc(probs, labels);
  return metric_value(compute_metrics(probs, labels, threshold), m);
}

}  // namespace mmpred::eval
