#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mmpred/models.hpp"
#include "mmpred/preprocess.hpp"

namespace mmpred::fusion {

// ----- early fusion -----

struct FusedTabular {
  models::TabularData data;
  std::vector<std::string> feature_names;
};

struct EarlyFuseOptions {
  // Average observed months only (-1 sentinels skipped); an all-missing lab
  // row stays -1. When false the sentinels enter the mean as raw values.
  bool skip_missing_sentinels = true;
  // Meds fused as monthly mean; false = 6-month total.
  bool med_mean = true;
};

FusedTabular early_fuse(const std::vector<prep::MultimodalSample>& samples,
                        const prep::Vocabularies& vocab, const EarlyFuseOptions& options = {});

// ----- late fusion -----

// Convex combination of member probabilities, weights proportional to mean
// validation AUPRC. All-zero AUPRCs fall back to uniform weights.
class LateEnsemble {
 public:
  explicit LateEnsemble(const std::vector<double>& validation_auprcs);

  const std::vector<double>& weights() const { return weights_; }
  bool uniform_fallback() const { return uniform_fallback_; }
  std::vector<double> combine(const std::vector<std::vector<double>>& member_probs) const;

 private:
  std::vector<double> weights_;
  bool uniform_fallback_ = false;
};

// ----- intermediate fusion -----

// The four modality inputs side by side, row-aligned.
struct MultiInput {
  models::TabularData statics;
  models::SeriesData labs;
  models::SeriesData meds;
  models::TokenData text;
  std::vector<int> y;

  int n() const { return statics.n; }
  MultiInput subset(const std::vector<int>& rows) const;
};

MultiInput multi_input_from(const std::vector<prep::MultimodalSample>& samples,
                            const prep::Vocabularies& vocab);

enum class FusionStage { frozen, finetuned };

// Decapitated unimodal deep encoders (fitted weights reused) feeding a
// jointly trained head: dense -> ReLU -> batchnorm -> dropout -> dense(1)
// -> sigmoid. Stage 1 trains only the head with encoders frozen; stage 2
// fine-tunes end to end at a 10x smaller learning rate.
class IntermediateModel {
 public:
  struct Donors {
    std::unique_ptr<models::DeepModel> statics, labs, meds, text;
  };

  IntermediateModel(Donors donors, int head_units, double dropout, uint64_t seed);

  FusionStage stage() const { return stage_; }
  int head_input_dim() const;
  long long parameter_count();

  // Stage 1: head-only updates, encoders frozen (bit-identical).
  void train_frozen_stage(const MultiInput& train, const MultiInput& val,
                          const models::TrainConfig& config);
  // Stage 2: end-to-end fine-tuning at a 10x smaller learning rate. Only the
  // frozen -> finetuned transition is allowed.
  void finetune_stage(const MultiInput& train, const MultiInput& val,
                      const models::TrainConfig& config);
  void train_two_stage(const MultiInput& train, const MultiInput& val,
                       const models::TrainConfig& config);
  std::vector<double> predict_proba(const MultiInput& data) const;

  // Bitwise snapshot of the encoder parameters (freezing contract checks).
  uint64_t encoder_checksum();

  num::Checkpoint to_checkpoint() const;
  void restore_checkpoint(const num::Checkpoint& ck);

  models::DeepModel& encoder(int modality);  // 0=static 1=labs 2=meds 3=text

 private:
  void run_stage_impl(const MultiInput& train, const MultiInput& val,
                      const models::TrainConfig& config, bool finetune);
  num::Tensor forward_rows(const MultiInput& data, const std::vector<int>& rows);
  std::vector<num::NamedParam> head_parameters();
  std::vector<num::NamedParam> all_parameters();
  void set_train_mode(bool train, bool encoders_too);

  Donors donors_;
  num::Dense head_fc_, head_out_;
  num::BatchNorm1d head_bn_;
  num::Dropout head_drop_;
  FusionStage stage_ = FusionStage::frozen;
  int head_units_;
  double dropout_rate_;
  uint64_t seed_;
};

}  // namespace mmpred::fusion
