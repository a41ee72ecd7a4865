#pragma once

#include <string>
#include <vector>

#include "mmpred/preprocess.hpp"

namespace mmpred::explainer {

enum class Modality : int { statics = 0, labs = 1, meds = 2, text = 3 };
const char* modality_name(Modality m);

// Position descriptor for one non-sentinel feature in the flat vector.
struct FeatureCoord {
  Modality modality;
  int channel;   // static feature index / lab channel / med group / note index
  int timestep;  // month index for series, token position within note, 0 for static
  int flat_pos;  // index into SerializedSample.values
};

// Flat float64 vector: Static, Labs, Meds, Text separated by +inf; -inf
// between monthly timesteps inside Labs/Meds and between notes inside Text.
struct SerializedSample {
  std::vector<double> values;
  // Layout metadata needed for the exact inverse.
  int static_dim = 0;
  int lab_channels = 0;
  int lab_months = 0;
  int med_groups = 0;
  int med_months = 0;
  std::vector<int> note_token_counts;
  std::vector<int> note_months;
  std::string patient_id;
  int label = 0;

  std::vector<FeatureCoord> coords;    // non-sentinel positions, serialized order
  std::vector<int> sentinel_positions; // every +-inf position

  int n_features() const { return static_cast<int>(coords.size()); }
};

// The default layout is the pipeline's [channels x 6] encoding; the explicit
// overload supports arbitrary toy layouts.
SerializedSample serialize(const prep::MultimodalSample& sample);
SerializedSample serialize(const prep::MultimodalSample& sample, int lab_channels,
                           int lab_months, int med_groups, int med_months);
prep::MultimodalSample deserialize(const SerializedSample& s);

// Per-modality imputation symbols used for SHAP masking and perturbation:
// Static -> 0, Labs -> -1, Meds -> 0, Text -> PAD id.
double imputation_symbol(Modality m);

// Replaces the masked features' positions with their imputation symbols.
std::vector<double> mask_features(const SerializedSample& s,
                                  const std::vector<int>& masked_feature_indices);

}  // namespace mmpred::explainer
