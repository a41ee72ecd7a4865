#pragma once

#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "mmpred/checkpoint.hpp"
#include "mmpred/layers.hpp"
#include "mmpred/tensor.hpp"
#include "mmpred/trees.hpp"

namespace mmpred::models {

enum class ModelKind {
  knn,
  logreg,
  gbt,
  rforest,
  mlp,
  rocket,
  c22features,
  gru_rnn,
  text_encoder
};

const char* kind_name(ModelKind k);
ModelKind kind_from_name(const std::string& name);
bool kind_is_deep(ModelKind k);

// ----- model inputs -----

struct TabularData {
  int n = 0, d = 0;
  std::vector<double> x;  // row-major
  std::vector<int> y;     // empty at inference
  const double* row(int i) const { return x.data() + static_cast<size_t>(i) * d; }
};

struct SeriesData {
  int n = 0, channels = 0, steps = 0;
  std::vector<double> x;  // [n][channels][steps], -1 = missing sentinel
  std::vector<int> y;
  double at(int i, int c, int t) const {
    return x[(static_cast<size_t>(i) * channels + c) * steps + t];
  }
};

struct TokenData {
  std::vector<std::vector<int>> streams;  // flattened note streams
  std::vector<int> y;
  int vocab = 0;
  int n() const { return static_cast<int>(streams.size()); }
};

using ModelInput = std::variant<TabularData, SeriesData, TokenData>;

// ----- hyperparameters -----

struct HyperPoint {
  std::map<std::string, double> num;
  std::map<std::string, std::string> cat;

  double get(const std::string& key, double fallback) const;
  std::string get_cat(const std::string& key, const std::string& fallback) const;
  std::string to_string() const;
};

// Default hyperparameter search grids per model kind (knn carries a small
// default of its own; the rest follow the training schedule's fixed grids).
std::vector<HyperPoint> default_grid(ModelKind kind);

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  int batch_size = 32;
  int max_epochs = 300;
  int patience = 20;
  double val_fraction = 0.2;  // carved for early stopping when no val set given
  // Text encoder stand-in size (desk scale).
  int text_d_model = 64;
  int text_heads = 4;
  int text_blocks = 2;
  int text_ffn = 128;
  bool text_pretrain = false;
  int pretrain_epochs = 2;
  size_t workers = 1;
};

// ----- fitted models -----

class Model {
 public:
  virtual ~Model() = default;
  virtual ModelKind kind() const = 0;
  virtual std::vector<double> predict_proba(const ModelInput& data) const = 0;
  virtual void save(const std::string& checkpoint_path) const;
  virtual num::Checkpoint to_checkpoint() const = 0;

  HyperPoint hyperparameters;
  uint64_t train_seed = 0;
  std::string modality;  // informational tag set by the pipeline
};

// Deep models expose their latent path so intermediate fusion can decapitate
// them (remove the output layer, keep hidden + BN + dropout).
class DeepModel : public Model {
 public:
  virtual int latent_dim() const = 0;
  // Latent representations for a batch of rows (graph-building when in
  // train mode); the latent path is hidden + batchnorm + dropout, i.e. the
  // model with its output layer removed.
  virtual num::Tensor encode_rows(const ModelInput& data, const std::vector<int>& rows) = 0;
  virtual void set_train_mode(bool train) = 0;
  virtual std::vector<num::NamedParam> encoder_parameters() = 0;  // without the head
  virtual std::vector<num::NamedParam> all_parameters() = 0;
  virtual std::unique_ptr<DeepModel> clone_deep() const = 0;
  virtual void restore_state(const num::Checkpoint& ck) = 0;
};

std::unique_ptr<Model> fit_model(ModelKind kind, const ModelInput& train, const HyperPoint& hp,
                                 uint64_t seed, const TrainConfig& config = {},
                                 const ModelInput* validation = nullptr);

std::unique_ptr<Model> model_from_checkpoint(ModelKind kind, const num::Checkpoint& ck,
                                             uint64_t seed);

// Range-checked convenience wrapper.
std::vector<double> predict_proba(const Model& model, const ModelInput& data);

// Catch22-style summary features (documented 8-feature subset), exposed for
// tests: mean, std, longest streak above mean, first acf zero, histogram
// mode (5 bins), slope, proportion above mean, last minus first.
std::vector<double> c22_channel_features(const std::vector<double>& series);
constexpr int kC22FeaturesPerChannel = 8;

TabularData series_to_c22_features(const SeriesData& s);

}  // namespace mmpred::models
