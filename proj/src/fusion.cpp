#include "mmpred/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmpred/error.hpp"
#include "mmpred/metrics.hpp"

namespace mmpred::fusion {

using models::DeepModel;
using models::ModelInput;
using models::TrainConfig;
using num::Checkpoint;
using num::NamedParam;
using num::Tensor;

FusedTabular early_fuse(const std::vector<prep::MultimodalSample>& samples,
                        const prep::Vocabularies& vocab, const EarlyFuseOptions& options) {
  FusedTabular out;
  for (const auto& name : vocab.static_features) out.feature_names.push_back("static:" + name);
  for (const auto& ch : vocab.lab_channels) out.feature_names.push_back("lab:" + ch);
  for (const auto& g : vocab.med_groups) out.feature_names.push_back("med:" + g);

  const int C = vocab.n_lab_channels();
  const int G = vocab.n_med_groups();
  out.data.n = static_cast<int>(samples.size());
  out.data.d = vocab.static_dim() + C + G;
  out.data.x.reserve(static_cast<size_t>(out.data.n) * out.data.d);
  for (const auto& s : samples) {
    out.data.x.insert(out.data.x.end(), s.static_values.begin(), s.static_values.end());
    for (int c = 0; c < C; ++c) {
      double sum = 0.0;
      int observed = 0;
      for (int m = 0; m < prep::kInputMonths; ++m) {
        const double v = s.labs[static_cast<size_t>(c) * prep::kInputMonths + m];
        if (options.skip_missing_sentinels && v == prep::kLabMissing) continue;
        sum += v;
        ++observed;
      }
      out.data.x.push_back(observed > 0 ? sum / observed : prep::kLabMissing);
    }
    for (int g = 0; g < G; ++g) {
      double sum = 0.0;
      for (int m = 0; m < prep::kInputMonths; ++m) {
        sum += s.meds[static_cast<size_t>(g) * prep::kInputMonths + m];
      }
      out.data.x.push_back(options.med_mean ? sum / prep::kInputMonths : sum);
    }
    out.data.y.push_back(s.label);
  }
  return out;
}

LateEnsemble::LateEnsemble(const std::vector<double>& validation_auprcs) {
  if (validation_auprcs.size() < 2) {
    throw config_error("late fusion needs at least 2 members, got " +
                       std::to_string(validation_auprcs.size()));
  }
  double total = 0.0;
  for (double a : validation_auprcs) {
    if (a < 0.0) throw config_error("late fusion: negative validation AUPRC");
    total += a;
  }
  weights_.resize(validation_auprcs.size());
  if (total <= 0.0) {
    uniform_fallback_ = true;
    std::fill(weights_.begin(), weights_.end(), 1.0 / weights_.size());
  } else {
    for (size_t i = 0; i < weights_.size(); ++i) weights_[i] = validation_auprcs[i] / total;
  }
}

std::vector<double> LateEnsemble::combine(
    const std::vector<std::vector<double>>& member_probs) const {
  if (member_probs.size() != weights_.size()) {
    throw dim_error("late fusion: member count mismatch");
  }
  const size_t n = member_probs[0].size();
  for (const auto& p : member_probs) {
    if (p.size() != n) throw dim_error("late fusion: prediction length mismatch");
  }
  std::vector<double> out(n, 0.0);
  for (size_t m = 0; m < weights_.size(); ++m) {
    for (size_t i = 0; i < n; ++i) out[i] += weights_[m] * member_probs[m][i];
  }
  return out;
}

MultiInput multi_input_from(const std::vector<prep::MultimodalSample>& samples,
                            const prep::Vocabularies& vocab) {
  MultiInput in;
  in.statics.n = static_cast<int>(samples.size());
  in.statics.d = vocab.static_dim();
  in.labs.n = in.meds.n = in.statics.n;
  in.labs.channels = vocab.n_lab_channels();
  in.meds.channels = vocab.n_med_groups();
  in.labs.steps = in.meds.steps = prep::kInputMonths;
  in.text.vocab = vocab.tokenizer.vocab_size();
  for (const auto& s : samples) {
    in.statics.x.insert(in.statics.x.end(), s.static_values.begin(), s.static_values.end());
    in.labs.x.insert(in.labs.x.end(), s.labs.begin(), s.labs.end());
    in.meds.x.insert(in.meds.x.end(), s.meds.begin(), s.meds.end());
    in.text.streams.push_back(prep::flatten_notes(s, vocab.max_tokens));
    in.statics.y.push_back(s.label);
    in.labs.y.push_back(s.label);
    in.meds.y.push_back(s.label);
    in.text.y.push_back(s.label);
    in.y.push_back(s.label);
  }
  return in;
}

MultiInput MultiInput::subset(const std::vector<int>& rows) const {
  MultiInput out;
  out.statics.d = statics.d;
  out.statics.n = static_cast<int>(rows.size());
  out.labs.n = out.meds.n = out.statics.n;
  out.labs.channels = labs.channels;
  out.meds.channels = meds.channels;
  out.labs.steps = labs.steps;
  out.meds.steps = meds.steps;
  out.text.vocab = text.vocab;
  const size_t lab_stride = static_cast<size_t>(labs.channels) * labs.steps;
  const size_t med_stride = static_cast<size_t>(meds.channels) * meds.steps;
  for (int r : rows) {
    out.statics.x.insert(out.statics.x.end(), statics.row(r), statics.row(r) + statics.d);
    out.labs.x.insert(out.labs.x.end(), labs.x.begin() + r * lab_stride,
                      labs.x.begin() + (r + 1) * lab_stride);
    out.meds.x.insert(out.meds.x.end(), meds.x.begin() + r * med_stride,
                      meds.x.begin() + (r + 1) * med_stride);
    out.text.streams.push_back(text.streams[r]);
    out.statics.y.push_back(y[r]);
    out.labs.y.push_back(y[r]);
    out.meds.y.push_back(y[r]);
    out.text.y.push_back(y[r]);
    out.y.push_back(y[r]);
  }
  return out;
}

IntermediateModel::IntermediateModel(Donors donors, int head_units, double dropout,
                                     uint64_t seed)
    : donors_(std::move(donors)), head_units_(head_units), dropout_rate_(dropout), seed_(seed) {
  if (!donors_.statics || !donors_.labs || !donors_.meds || !donors_.text) {
    throw config_error("intermediate fusion: all four modality donors are required");
  }
  Rng rng(seed ^ 0x4946ULL);
  const int latent = head_input_dim();
  head_fc_ = num::Dense(latent, head_units, rng);
  head_bn_ = num::BatchNorm1d(head_units);
  head_drop_.rate = dropout;
  head_drop_.rng = Rng(seed ^ 0x44524f34ULL);
  head_out_ = num::Dense(head_units, 1, rng);
}

int IntermediateModel::head_input_dim() const {
  return donors_.statics->latent_dim() + donors_.labs->latent_dim() +
         donors_.meds->latent_dim() + donors_.text->latent_dim();
}

long long IntermediateModel::parameter_count() {
  long long count = 0;
  for (auto& [name, p] : all_parameters()) {
    (void)name;
    count += static_cast<long long>(p.size());
  }
  return count;
}

models::DeepModel& IntermediateModel::encoder(int modality) {
  switch (modality) {
    case 0: return *donors_.statics;
    case 1: return *donors_.labs;
    case 2: return *donors_.meds;
    case 3: return *donors_.text;
  }
  throw config_error("intermediate fusion: modality index out of range");
}

Tensor IntermediateModel::forward_rows(const MultiInput& data, const std::vector<int>& rows) {
  std::vector<Tensor> latents;
  latents.push_back(donors_.statics->encode_rows(data.statics, rows));
  latents.push_back(donors_.labs->encode_rows(data.labs, rows));
  latents.push_back(donors_.meds->encode_rows(data.meds, rows));
  latents.push_back(donors_.text->encode_rows(data.text, rows));
  Tensor joint = num::concat_cols(latents);
  Tensor h = head_drop_.forward(head_bn_.forward(num::relu(head_fc_.forward(joint))));
  return num::sigmoid(head_out_.forward(h));
}

std::vector<NamedParam> IntermediateModel::head_parameters() {
  std::vector<NamedParam> p;
  head_fc_.collect("if.head.fc", p);
  head_bn_.collect("if.head.bn", p);
  head_out_.collect("if.head.out", p);
  return p;
}

std::vector<NamedParam> IntermediateModel::all_parameters() {
  std::vector<NamedParam> p = head_parameters();
  for (auto& [name, t] : donors_.statics->all_parameters()) p.emplace_back("if.s." + name, t);
  for (auto& [name, t] : donors_.labs->all_parameters()) p.emplace_back("if.l." + name, t);
  for (auto& [name, t] : donors_.meds->all_parameters()) p.emplace_back("if.m." + name, t);
  for (auto& [name, t] : donors_.text->all_parameters()) p.emplace_back("if.t." + name, t);
  return p;
}

void IntermediateModel::set_train_mode(bool train, bool encoders_too) {
  head_bn_.train_mode = train;
  head_drop_.train_mode = train;
  const bool enc = train && encoders_too;
  donors_.statics->set_train_mode(enc);
  donors_.labs->set_train_mode(enc);
  donors_.meds->set_train_mode(enc);
  donors_.text->set_train_mode(enc);
}

uint64_t IntermediateModel::encoder_checksum() {
  uint64_t h = 14695981039346656037ULL;
  auto mix = [&](const std::vector<NamedParam>& params) {
    for (const auto& [name, t] : params) {
      (void)name;
      const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
      for (size_t i = 0; i < t.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    }
  };
  mix(donors_.statics->all_parameters());
  mix(donors_.labs->all_parameters());
  mix(donors_.meds->all_parameters());
  mix(donors_.text->all_parameters());
  return h;
}

namespace {

struct StopState {
  double best = -1.0;
  int best_epoch = -1;
  Checkpoint state;
};

}  // namespace

void IntermediateModel::train_frozen_stage(const MultiInput& train, const MultiInput& val,
                                           const TrainConfig& config) {
  if (stage_ != FusionStage::frozen) {
    throw fit_error("intermediate fusion: frozen stage on an already fine-tuned model");
  }
  // Frozen encoders in eval mode are row-deterministic, so their latents are
  // computed once and the head trains on the cached matrices.
  set_train_mode(false, true);
  auto cache_latents = [&](const MultiInput& data) {
    std::vector<int> rows(data.n());
    std::iota(rows.begin(), rows.end(), 0);
    std::vector<Tensor> latents;
    latents.push_back(donors_.statics->encode_rows(data.statics, rows));
    latents.push_back(donors_.labs->encode_rows(data.labs, rows));
    latents.push_back(donors_.meds->encode_rows(data.meds, rows));
    latents.push_back(donors_.text->encode_rows(data.text, rows));
    return num::concat_cols(latents).detach();
  };
  const Tensor train_latents = cache_latents(train);
  const Tensor val_latents = cache_latents(val);

  num::Adam opt(config.lr, config.weight_decay);
  opt.add_params(head_parameters());
  Rng rng(seed_ ^ 0x49465452ULL);
  auto head_forward = [&](const Tensor& latents, const std::vector<int>& rows) {
    Tensor joint = Tensor::zeros(static_cast<int>(rows.size()), latents.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
      std::copy(latents.data() + static_cast<size_t>(rows[i]) * latents.cols(),
                latents.data() + static_cast<size_t>(rows[i] + 1) * latents.cols(),
                joint.data() + i * latents.cols());
    }
    Tensor h = head_drop_.forward(head_bn_.forward(num::relu(head_fc_.forward(joint))));
    return num::sigmoid(head_out_.forward(h));
  };

  StopState stop;
  const bool has_val = !val.y.empty();
  std::vector<int> all_val_rows(val.n());
  std::iota(all_val_rows.begin(), all_val_rows.end(), 0);
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::vector<int> order(train.n());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    head_bn_.train_mode = true;
    head_drop_.train_mode = true;
    for (int start = 0; start < train.n(); start += config.batch_size) {
      const int end = std::min(start + config.batch_size, train.n());
      if (end - start < 2) continue;
      std::vector<int> batch(order.begin() + start, order.begin() + end);
      opt.zero_grad();
      Tensor probs = head_forward(train_latents, batch);
      Tensor target = Tensor::zeros(static_cast<int>(batch.size()), 1);
      for (size_t i = 0; i < batch.size(); ++i) target.data()[i] = train.y[batch[i]];
      Tensor loss = num::bce_loss(probs, target);
      if (!std::isfinite(loss.item())) {
        if (stop.best_epoch >= 0) restore_checkpoint(stop.state);
        throw fit_error("intermediate fusion: frozen-stage training diverged at epoch " +
                        std::to_string(epoch) + "; restored last good checkpoint");
      }
      loss.backward();
      opt.step();
    }
    if (!has_val) continue;
    head_bn_.train_mode = false;
    head_drop_.train_mode = false;
    Tensor val_probs = head_forward(val_latents, all_val_rows);
    const double metric =
        eval::auprc(std::vector<double>(val_probs.data(), val_probs.data() + val_probs.size()),
                    val.y);
    if (metric > stop.best + 1e-12) {
      stop.best = metric;
      stop.best_epoch = epoch;
      stop.state = to_checkpoint();
    } else if (epoch - stop.best_epoch >= config.patience) {
      break;
    }
  }
  if (stop.best_epoch >= 0) restore_checkpoint(stop.state);
  set_train_mode(false, true);
}

void IntermediateModel::finetune_stage(const MultiInput& train, const MultiInput& val,
                                       const TrainConfig& config) {
  if (stage_ != FusionStage::frozen) {
    throw fit_error("intermediate fusion: only the frozen -> finetuned transition is allowed");
  }
  stage_ = FusionStage::finetuned;
  run_stage_impl(train, val, config, true);
}

void IntermediateModel::train_two_stage(const MultiInput& train, const MultiInput& val,
                                        const TrainConfig& config) {
  train_frozen_stage(train, val, config);
  finetune_stage(train, val, config);
}

void IntermediateModel::run_stage_impl(const MultiInput& train, const MultiInput& val,
                                       const TrainConfig& config, bool finetune) {
  Rng rng(seed_ ^ (finetune ? 0x49465432ULL : 0x49465452ULL));

  auto run_stage = [&](bool finetune) {
    models::TrainConfig cfg = config;
    if (finetune) cfg.lr = config.lr * 0.1;  // gentler end-to-end pass
    num::Adam opt(cfg.lr);
    opt.add_params(finetune ? all_parameters() : head_parameters());
    set_train_mode(true, finetune);

    StopState stop;
    const bool has_val = !val.y.empty();
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
      std::vector<int> order(train.n());
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      for (int start = 0; start < train.n(); start += cfg.batch_size) {
        const int end = std::min(start + cfg.batch_size, train.n());
        if (end - start < 2) continue;
        std::vector<int> batch(order.begin() + start, order.begin() + end);
        opt.zero_grad();
        Tensor probs = forward_rows(train, batch);
        Tensor target = Tensor::zeros(static_cast<int>(batch.size()), 1);
        for (size_t i = 0; i < batch.size(); ++i) target.data()[i] = train.y[batch[i]];
        Tensor loss = num::bce_loss(probs, target);
        if (!std::isfinite(loss.item())) {
          if (stop.best_epoch >= 0) restore_checkpoint(stop.state);
          throw fit_error("intermediate fusion: training diverged at epoch " +
                          std::to_string(epoch) + "; restored last good checkpoint");
        }
        loss.backward();
        opt.step();
      }
      if (!has_val) continue;
      const std::vector<double> vp = predict_proba(val);
      const double metric = eval::auprc(vp, val.y);
      set_train_mode(true, finetune);
      if (metric > stop.best + 1e-12) {
        stop.best = metric;
        stop.best_epoch = epoch;
        stop.state = to_checkpoint();
      } else if (epoch - stop.best_epoch >= cfg.patience) {
        break;
      }
    }
    if (stop.best_epoch >= 0) restore_checkpoint(stop.state);
    set_train_mode(false, true);
  };

  run_stage(finetune);
}

std::vector<double> IntermediateModel::predict_proba(const MultiInput& data) const {
  auto* self = const_cast<IntermediateModel*>(this);
  // Write-free when the model already sits in eval mode (fitted state).
  const bool head_train = head_bn_.train_mode;
  if (head_train) self->set_train_mode(false, true);
  std::vector<int> rows(data.n());
  std::iota(rows.begin(), rows.end(), 0);
  Tensor probs = self->forward_rows(data, rows);
  if (head_train) self->set_train_mode(true, stage_ == FusionStage::finetuned);
  return std::vector<double>(probs.data(), probs.data() + probs.size());
}

Checkpoint IntermediateModel::to_checkpoint() const {
  auto* self = const_cast<IntermediateModel*>(this);
  Checkpoint ck = Checkpoint::capture(self->head_parameters());
  ck.put("if.head.bn.run_mean", Tensor::from_vec(1, head_units_, head_bn_.running_mean));
  ck.put("if.head.bn.run_var", Tensor::from_vec(1, head_units_, head_bn_.running_var));
  ck.put("if.meta", Tensor::from_vec(1, 3, {static_cast<double>(head_units_), dropout_rate_,
                                            stage_ == FusionStage::finetuned ? 1.0 : 0.0}));
  auto merge = [&](const char* prefix, const Checkpoint& sub) {
    for (const auto& [name, t] : sub.entries) ck.put(std::string(prefix) + name, t);
  };
  merge("if.s.", donors_.statics->to_checkpoint());
  merge("if.l.", donors_.labs->to_checkpoint());
  merge("if.m.", donors_.meds->to_checkpoint());
  merge("if.t.", donors_.text->to_checkpoint());
  return ck;
}

void IntermediateModel::restore_checkpoint(const Checkpoint& ck) {
  ck.restore(head_parameters());
  head_bn_.running_mean = ck.get("if.head.bn.run_mean").vec();
  head_bn_.running_var = ck.get("if.head.bn.run_var").vec();
  const auto& meta = ck.get("if.meta").vec();
  stage_ = meta[2] > 0.5 ? FusionStage::finetuned : FusionStage::frozen;
  auto split = [&](const char* prefix) {
    Checkpoint sub;
    const std::string pre(prefix);
    for (const auto& [name, t] : ck.entries) {
      if (name.rfind(pre, 0) == 0) sub.entries[name.substr(pre.size())] = t;
    }
    return sub;
  };
  donors_.statics->restore_state(split("if.s."));
  donors_.labs->restore_state(split("if.l."));
  donors_.meds->restore_state(split("if.m."));
  donors_.text->restore_state(split("if.t."));
}

}  // namespace mmpred::fusion
