#include "mmpred/serialize.hpp"

#include <cmath>
#include <limits>

#include "mmpred/error.hpp"
#include "mmpred/tokenizer.hpp"

namespace mmpred::explainer {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::statics: return "static";
    case Modality::labs: return "labs";
    case Modality::meds: return "meds";
    case Modality::text: return "text";
  }
  return "?";
}

double imputation_symbol(Modality m) {
  switch (m) {
    case Modality::statics: return 0.0;
    case Modality::labs: return prep::kLabMissing;
    case Modality::meds: return 0.0;
    case Modality::text: return static_cast<double>(prep::WordPieceTokenizer::kPad);
  }
  return 0.0;
}

SerializedSample serialize(const prep::MultimodalSample& sample) {
  const int lab_channels = static_cast<int>(sample.labs.size()) / prep::kInputMonths;
  const int med_groups = static_cast<int>(sample.meds.size()) / prep::kInputMonths;
  return serialize(sample, lab_channels, prep::kInputMonths, med_groups, prep::kInputMonths);
}

SerializedSample serialize(const prep::MultimodalSample& sample, int lab_channels,
                           int lab_months, int med_groups, int med_months) {
  if (static_cast<int>(sample.labs.size()) != lab_channels * lab_months ||
      static_cast<int>(sample.meds.size()) != med_groups * med_months) {
    throw dim_error("serialize: layout does not match the sample's modality sizes");
  }
  SerializedSample out;
  out.static_dim = static_cast<int>(sample.static_values.size());
  out.lab_channels = lab_channels;
  out.lab_months = lab_months;
  out.med_groups = med_groups;
  out.med_months = med_months;
  for (const auto& note : sample.note_tokens) {
    out.note_token_counts.push_back(static_cast<int>(note.size()));
  }
  out.note_months = sample.note_months;
  out.patient_id = sample.patient_id;
  out.label = sample.label;

  auto push_value = [&](double v, Modality m, int channel, int timestep) {
    if (!std::isfinite(v)) {
      throw encode_error("serialize: non-finite feature value collides with the sentinels");
    }
    out.coords.push_back({m, channel, timestep, static_cast<int>(out.values.size())});
    out.values.push_back(v);
  };
  auto push_sentinel = [&](double v) {
    out.sentinel_positions.push_back(static_cast<int>(out.values.size()));
    out.values.push_back(v);
  };

  // Static block.
  for (int i = 0; i < out.static_dim; ++i) {
    push_value(sample.static_values[i], Modality::statics, i, 0);
  }
  push_sentinel(kInf);

  // Labs: timestep-major, -inf between months.
  for (int m = 0; m < out.lab_months; ++m) {
    if (m > 0) push_sentinel(-kInf);
    for (int c = 0; c < out.lab_channels; ++c) {
      push_value(sample.labs[static_cast<size_t>(c) * out.lab_months + m], Modality::labs, c, m);
    }
  }
  push_sentinel(kInf);

  // Meds: timestep-major, -inf between months.
  for (int m = 0; m < out.med_months; ++m) {
    if (m > 0) push_sentinel(-kInf);
    for (int g = 0; g < out.med_groups; ++g) {
      push_value(sample.meds[static_cast<size_t>(g) * out.med_months + m], Modality::meds, g, m);
    }
  }
  push_sentinel(kInf);

  // Text: token ids as float64 (exact below 2^53), -inf between notes.
  for (size_t note = 0; note < sample.note_tokens.size(); ++note) {
    if (note > 0) push_sentinel(-kInf);
    for (size_t t = 0; t < sample.note_tokens[note].size(); ++t) {
      push_value(static_cast<double>(sample.note_tokens[note][t]), Modality::text,
                 static_cast<int>(note), static_cast<int>(t));
    }
  }
  return out;
}

prep::MultimodalSample deserialize(const SerializedSample& s) {
  prep::MultimodalSample out;
  out.patient_id = s.patient_id;
  out.label = s.label;
  out.static_values.assign(s.static_dim, 0.0);
  out.labs.assign(static_cast<size_t>(s.lab_channels) * s.lab_months, prep::kLabMissing);
  out.meds.assign(static_cast<size_t>(s.med_groups) * s.med_months, 0.0);
  out.note_tokens.resize(s.note_token_counts.size());
  for (size_t i = 0; i < s.note_token_counts.size(); ++i) {
    out.note_tokens[i].assign(s.note_token_counts[i], 0);
  }
  out.note_months = s.note_months;

  for (const auto& c : s.coords) {
    const double v = s.values[c.flat_pos];
    switch (c.modality) {
      case Modality::statics:
        out.static_values[c.channel] = v;
        break;
      case Modality::labs:
        out.labs[static_cast<size_t>(c.channel) * s.lab_months + c.timestep] = v;
        break;
      case Modality::meds:
        out.meds[static_cast<size_t>(c.channel) * s.med_months + c.timestep] = v;
        break;
      case Modality::text:
        out.note_tokens[c.channel][c.timestep] = static_cast<int>(v);
        break;
    }
  }
  return out;
}

std::vector<double> mask_features(const SerializedSample& s,
                                  const std::vector<int>& masked_feature_indices) {
  std::vector<double> values = s.values;
  for (int f : masked_feature_indices) {
    if (f < 0 || f >= s.n_features()) throw dim_error("mask_features: index out of range");
    const FeatureCoord& c = s.coords[f];
    values[c.flat_pos] = imputation_symbol(c.modality);
  }
  return values;
}

}  // namespace mmpred::explainer
