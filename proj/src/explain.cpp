#include "mmpred/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmpred/error.hpp"
#include "mmpred/linalg.hpp"
#include "mmpred/rng.hpp"

namespace mmpred::explainer {

std::vector<std::vector<int>> per_feature_groups(const SerializedSample& s) {
  std::vector<std::vector<int>> groups;
  groups.reserve(s.n_features());
  for (int f = 0; f < s.n_features(); ++f) groups.push_back({f});
  return groups;
}

std::vector<std::vector<int>> per_modality_groups(const SerializedSample& s) {
  std::vector<std::vector<int>> groups(4);
  for (int f = 0; f < s.n_features(); ++f) {
    groups[static_cast<int>(s.coords[f].modality)].push_back(f);
  }
  // Drop empty modalities (e.g. a patient without notes).
  std::vector<std::vector<int>> out;
  for (auto& g : groups) {
    if (!g.empty()) out.push_back(std::move(g));
  }
  return out;
}

namespace {

std::vector<double> masked_by_groups(const SerializedSample& s,
                                     const std::vector<std::vector<int>>& groups,
                                     const std::vector<bool>& group_on) {
  std::vector<int> masked;
  for (size_t g = 0; g < groups.size(); ++g) {
    if (!group_on[g]) masked.insert(masked.end(), groups[g].begin(), groups[g].end());
  }
  return mask_features(s, masked);
}

double log_binomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

}  // namespace

Attribution exact_shapley(const ScoreFn& model, const SerializedSample& sample,
                          const std::vector<std::vector<int>>& groups) {
  const int M = static_cast<int>(groups.size());
  if (M < 1) throw config_error("exact_shapley: no feature groups");
  if (M > 15) {
    throw config_error("exact_shapley: " + std::to_string(M) +
                       " groups exceed the 2^15 enumeration bound");
  }
  // One model call per subset.
  const uint32_t n_subsets = 1u << M;
  std::vector<double> value(n_subsets);
  std::vector<bool> on(M);
  for (uint32_t mask = 0; mask < n_subsets; ++mask) {
    for (int g = 0; g < M; ++g) on[g] = (mask >> g) & 1u;
    value[mask] = model(sample, masked_by_groups(sample, groups, on));
  }

  // phi_i = sum_S |S|!(M-|S|-1)!/M! [v(S+i) - v(S)]
  std::vector<double> weight(M);
  for (int s = 0; s < M; ++s) {
    weight[s] = std::exp(std::lgamma(s + 1.0) + std::lgamma(M - s) - std::lgamma(M + 1.0));
  }
  Attribution out;
  out.phi.assign(M, 0.0);
  out.base_value = value[0];
  out.full_value = value[n_subsets - 1];
  for (uint32_t mask = 0; mask < n_subsets; ++mask) {
    const int size = __builtin_popcount(mask);
    for (int g = 0; g < M; ++g) {
      if (mask & (1u << g)) continue;
      out.phi[g] += weight[size] * (value[mask | (1u << g)] - value[mask]);
    }
  }
  return out;
}

Attribution kernel_shap(const ScoreFn& model, const SerializedSample& sample,
                        const std::vector<std::vector<int>>& groups,
                        const KernelShapOptions& options) {
  const int M = static_cast<int>(groups.size());
  if (M < 1) throw config_error("kernel_shap: no feature groups");
  if (options.n_coalitions < M + 2) {
    throw config_error("kernel_shap: need at least M+2 coalitions, got " +
                       std::to_string(options.n_coalitions));
  }

  Attribution out;
  {
    std::vector<bool> none(M, false), all(M, true);
    out.base_value = model(sample, masked_by_groups(sample, groups, none));
    out.full_value = model(sample, masked_by_groups(sample, groups, all));
  }
  if (M == 1) {
    out.phi = {out.full_value - out.base_value};
    return out;
  }

  // Interior coalitions (sizes 1..M-1): full enumeration when it fits the
  // budget, otherwise sampled against the size distribution implied by the
  // Shapley kernel. The all-on/all-off endpoints carry infinite weight and
  // enter through the two constraints below instead.
  struct Row {
    uint32_t mask;
    double weight;
  };
  std::vector<Row> rows;
  const double interior_budget = options.n_coalitions - 2;
  const bool enumerate = M <= 26 && std::pow(2.0, M) - 2.0 <= interior_budget;
  if (enumerate) {
    for (uint32_t mask = 1; mask + 1 < (1u << M); ++mask) {
      const int z = __builtin_popcount(mask);
      const double w =
          (M - 1.0) / (std::exp(log_binomial(M, z)) * static_cast<double>(z) * (M - z));
      rows.push_back({mask, w});
    }
  } else {
    // Kernel mass per coalition size: (M-1)/(z(M-z)) over all C(M,z) subsets.
    std::vector<double> size_mass(M, 0.0);
    double total_mass = 0.0;
    for (int z = 1; z <= M - 1; ++z) {
      size_mass[z] = (M - 1.0) / (static_cast<double>(z) * (M - z));
      total_mass += size_mass[z];
    }
    Rng rng(options.seed ^ 0x5348415057ULL);
    std::vector<int> order(M);
    std::iota(order.begin(), order.end(), 0);
    const int budget = static_cast<int>(interior_budget);
    for (int c = 0; c < budget; ++c) {
      double u = rng.uniform() * total_mass;
      int z = 1;
      while (z < M - 1 && u > size_mass[z]) {
        u -= size_mass[z];
        ++z;
      }
      rng.shuffle(order);
      uint32_t mask = 0;
      for (int i = 0; i < z; ++i) mask |= 1u << order[i];
      rows.push_back({mask, 1.0});  // sampling already follows the kernel
    }
  }

  // Constrained WLS: phi_0 = base_value fixed; sum phi = full - base enforced
  // by eliminating the last feature.
  const double delta = out.full_value - out.base_value;
  const int K = M - 1;
  std::vector<double> gram(static_cast<size_t>(K) * K, 0.0);
  std::vector<double> rhs(K, 0.0);
  std::vector<bool> on(M);
  std::vector<double> x(K);
  for (const Row& row : rows) {
    for (int g = 0; g < M; ++g) on[g] = (row.mask >> g) & 1u;
    const double v = model(sample, masked_by_groups(sample, groups, on));
    const double z_last = on[M - 1] ? 1.0 : 0.0;
    const double y = v - out.base_value - z_last * delta;
    for (int g = 0; g < K; ++g) x[g] = (on[g] ? 1.0 : 0.0) - z_last;
    for (int a = 0; a < K; ++a) {
      rhs[a] += row.weight * x[a] * y;
      for (int b = a; b < K; ++b) gram[static_cast<size_t>(a) * K + b] += row.weight * x[a] * x[b];
    }
  }
  for (int a = 0; a < K; ++a) {
    for (int b = 0; b < a; ++b) {
      gram[static_cast<size_t>(a) * K + b] = gram[static_cast<size_t>(b) * K + a];
    }
  }
  std::vector<double> solution;
  if (!spd_solve(gram, rhs, K, solution)) {
    // Singular system: ridge fallback.
    for (int a = 0; a < K; ++a) gram[static_cast<size_t>(a) * K + a] += options.ridge;
    if (!spd_solve(gram, rhs, K, solution)) {
      throw pipeline_error("kernel_shap: WLS system remained singular after ridge fallback");
    }
  }
  out.phi.assign(M, 0.0);
  double partial = 0.0;
  for (int g = 0; g < K; ++g) {
    out.phi[g] = solution[g];
    partial += solution[g];
  }
  out.phi[M - 1] = delta - partial;
  return out;
}

ModalityRelevance modality_relevance_of(const Attribution& attribution,
                                        const SerializedSample& sample) {
  if (attribution.phi.size() != static_cast<size_t>(sample.n_features())) {
    throw dim_error("modality_relevance: attribution is not per-feature");
  }
  ModalityRelevance out;
  double total = 0.0;
  for (int f = 0; f < sample.n_features(); ++f) {
    const double a = std::fabs(attribution.phi[f]);
    out.shares[static_cast<int>(sample.coords[f].modality)] += a;
    total += a;
  }
  if (total <= 0.0) {
    out.uniform_fallback = true;
    out.shares = {0.25, 0.25, 0.25, 0.25};
    return out;
  }
  for (auto& s : out.shares) s /= total;
  return out;
}

ModalityRelevance global_relevance(const std::vector<ModalityRelevance>& per_patient) {
  ModalityRelevance out;
  if (per_patient.empty()) {
    out.uniform_fallback = true;
    out.shares = {0.25, 0.25, 0.25, 0.25};
    return out;
  }
  for (const auto& p : per_patient) {
    for (int m = 0; m < 4; ++m) out.shares[m] += p.shares[m];
  }
  for (auto& s : out.shares) s /= static_cast<double>(per_patient.size());
  return out;
}

std::vector<int> top_percentile_local(const std::vector<double>& phi, double pct) {
  if (pct <= 0.0 || pct >= 100.0) {
    throw config_error("top_percentile_local: pct must lie in (0,100)");
  }
  const int n = static_cast<int>(phi.size());
  if (n == 0) return {};
  std::vector<double> magnitude(n);
  for (int i = 0; i < n; ++i) magnitude[i] = std::fabs(phi[i]);
  std::vector<double> sorted = magnitude;
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  const int k = std::max(1, static_cast<int>(std::ceil(pct / 100.0 * n)));
  const double cutoff = sorted[std::min(k, n) - 1];
  std::vector<int> selected;
  for (int i = 0; i < n; ++i) {
    if (magnitude[i] >= cutoff) selected.push_back(i);  // ties all included
  }
  return selected;
}

FaithfulnessCurve perturbation_curve(const ScoreFn& model,
                                     const std::vector<SerializedSample>& samples,
                                     const std::vector<Attribution>& attributions,
                                     MaskStrategy strategy, const std::vector<double>& fractions,
                                     uint64_t seed) {
  if (samples.size() != attributions.size()) {
    throw dim_error("perturbation_curve: samples/attributions length mismatch");
  }
  for (size_t i = 1; i < fractions.size(); ++i) {
    if (fractions[i] <= fractions[i - 1]) {
      throw config_error("perturbation_curve: fractions must be strictly increasing");
    }
  }
  FaithfulnessCurve curve;
  curve.strategy = strategy;
  curve.fractions = fractions;
  curve.mean_output.assign(fractions.size(), 0.0);

  for (size_t si = 0; si < samples.size(); ++si) {
    const SerializedSample& s = samples[si];
    const int M = s.n_features();
    std::vector<int> order(M);
    std::iota(order.begin(), order.end(), 0);
    switch (strategy) {
      case MaskStrategy::high_to_low:
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
          return std::fabs(attributions[si].phi[a]) > std::fabs(attributions[si].phi[b]);
        });
        break;
      case MaskStrategy::low_to_high:
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
          return std::fabs(attributions[si].phi[a]) < std::fabs(attributions[si].phi[b]);
        });
        break;
      case MaskStrategy::random_order: {
        Rng rng(seed ^ (0x50455254ULL + si));
        rng.shuffle(order);
        break;
      }
    }
    for (size_t fi = 0; fi < fractions.size(); ++fi) {
      const int n_masked = static_cast<int>(std::llround(fractions[fi] * M));
      std::vector<int> masked(order.begin(), order.begin() + std::min(n_masked, M));
      curve.mean_output[fi] += model(s, mask_features(s, masked));
    }
  }
  for (auto& v : curve.mean_output) v /= static_cast<double>(samples.size());
  return curve;
}

double output_drop_area(const FaithfulnessCurve& curve) {
  // Trapezoid integral of (y(0) - y(f)) over the fraction grid.
  const double y0 = curve.mean_output.front();
  double area = 0.0;
  for (size_t i = 1; i < curve.fractions.size(); ++i) {
    const double drop_prev = y0 - curve.mean_output[i - 1];
    const double drop_cur = y0 - curve.mean_output[i];
    area += 0.5 * (drop_prev + drop_cur) * (curve.fractions[i] - curve.fractions[i - 1]);
  }
  return area;
}

double crossing_fraction(const FaithfulnessCurve& curve, double boundary) {
  for (size_t i = 0; i < curve.fractions.size(); ++i) {
    if (curve.mean_output[i] < boundary) {
      if (i == 0) return curve.fractions[0];
      const double y1 = curve.mean_output[i - 1], y2 = curve.mean_output[i];
      const double x1 = curve.fractions[i - 1], x2 = curve.fractions[i];
      const double t = (boundary - y1) / (y2 - y1);
      return x1 + t * (x2 - x1);
    }
  }
  // Never crossed: one grid step past the end keeps comparisons meaningful.
  return curve.fractions.back() + (curve.fractions.size() > 1
                                       ? curve.fractions[1] - curve.fractions[0]
                                       : 1.0);
}

}  // namespace mmpred::explainer
