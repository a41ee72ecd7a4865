#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "mmpred/serialize.hpp"

namespace mmpred::explainer {

// Model under explanation: probability of the positive class from a flat
// serialized vector (sentinels included). The layout argument identifies the
// sample the values belong to, so one scorer can serve many patients.
using ScoreFn =
    std::function<double(const SerializedSample& layout, const std::vector<double>& values)>;

struct Attribution {
  std::vector<double> phi;  // one value per feature group
  double base_value = 0.0;  // model output on the fully-masked sample
  double full_value = 0.0;  // model output on the unmasked sample
};

// Feature groups over SerializedSample feature indices (not flat positions).
std::vector<std::vector<int>> per_feature_groups(const SerializedSample& s);
std::vector<std::vector<int>> per_modality_groups(const SerializedSample& s);

// Exhaustive Shapley values over <= 15 groups (2^M model calls); the
// non-approximate oracle kernel_shap is verified against.
Attribution exact_shapley(const ScoreFn& model, const SerializedSample& sample,
                          const std::vector<std::vector<int>>& feature_groups);

struct KernelShapOptions {
  int n_coalitions = 2048;  // capped at 2^M - 2 interior coalitions
  uint64_t seed = 0;
  double ridge = 1e-9;  // fallback regularization for a singular system
};

// Weighted least-squares Shapley estimate over sampled coalitions with the
// Shapley kernel (M-1)/(C(M,z) z (M-z)); the all-on/all-off coalitions enter
// exactly through the efficiency constraint. Deterministic in seed.
Attribution kernel_shap(const ScoreFn& model, const SerializedSample& sample,
                        const std::vector<std::vector<int>>& feature_groups,
                        const KernelShapOptions& options = {});

struct ModalityRelevance {
  // Mean |phi| share per modality; uniform_fallback set when an all-zero
  // attribution forced uniform shares.
  std::array<double, 4> shares{};
  bool uniform_fallback = false;
};

ModalityRelevance modality_relevance_of(const Attribution& attribution,
                                        const SerializedSample& sample);
// Cohort-level mean of per-patient shares.
ModalityRelevance global_relevance(const std::vector<ModalityRelevance>& per_patient);

// Per-patient features whose |phi| lies above the (100 - pct) percentile;
// ties at the cutoff are all included.
std::vector<int> top_percentile_local(const std::vector<double>& phi, double pct = 0.1);

enum class MaskStrategy { high_to_low, low_to_high, random_order };

struct FaithfulnessCurve {
  MaskStrategy strategy;
  std::vector<double> fractions;  // strictly increasing, 0 .. 1
  std::vector<double> mean_output;
};

// Masks the given share of features (per sample, in strategy order) with the
// modality imputation symbols and records the mean model output.
FaithfulnessCurve perturbation_curve(const ScoreFn& model,
                                     const std::vector<SerializedSample>& samples,
                                     const std::vector<Attribution>& attributions,
                                     MaskStrategy strategy, const std::vector<double>& fractions,
                                     uint64_t seed = 0);

// Area between the unperturbed level and the curve (output-drop area).
double output_drop_area(const FaithfulnessCurve& curve);
// Smallest masked fraction at which the curve crosses below 0.5 (linear
// interpolation between grid points; 1.0 + grid step when it never crosses).
double crossing_fraction(const FaithfulnessCurve& curve, double boundary = 0.5);

}  // namespace mmpred::explainer
