#include "mmpred/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mmpred/bootstrap.hpp"
#include "mmpred/error.hpp"
#include "mmpred/explain.hpp"
#include "mmpred/metrics.hpp"
#include "mmpred/report.hpp"
#include "mmpred/stats.hpp"
#include "mmpred/threadpool.hpp"

namespace mmpred::pipeline {

namespace fs = std::filesystem;
using models::HyperPoint;
using models::Model;
using models::ModelInput;
using models::ModelKind;
using nlohmann::json;

const char* row_name(Row r) {
  switch (r) {
    case Row::statics: return "static";
    case Row::labs: return "labs";
    case Row::meds: return "meds";
    case Row::text: return "text";
    case Row::ef: return "ef";
    case Row::lf: return "lf";
    case Row::intermediate: return "if";
    case Row::intermediate_censored: return "if_censored";
  }
  return "?";
}

namespace {

const char* row_display(Row r) {
  switch (r) {
    case Row::statics: return "Static";
    case Row::labs: return "Labs";
    case Row::meds: return "Meds";
    case Row::text: return "Text";
    case Row::ef: return "EF (w/o text)";
    case Row::lf: return "LF";
    case Row::intermediate: return "IF";
    case Row::intermediate_censored: return "IF (censored)";
  }
  return "?";
}

const std::vector<Row> kUnimodalRows = {Row::statics, Row::labs, Row::meds, Row::text, Row::ef};

// Tie-break order: simpler kinds first.
int kind_simplicity(ModelKind k) {
  switch (k) {
    case ModelKind::logreg: return 0;
    case ModelKind::knn: return 1;
    case ModelKind::c22features: return 2;
    case ModelKind::rocket: return 3;
    case ModelKind::gbt: return 4;
    case ModelKind::rforest: return 5;
    case ModelKind::mlp: return 6;
    case ModelKind::gru_rnn: return 7;
    case ModelKind::text_encoder: return 8;
  }
  return 9;
}

void sort_candidates(std::vector<Candidate>& c) {
  std::stable_sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
    const int sa = kind_simplicity(a.kind), sb = kind_simplicity(b.kind);
    if (sa != sb) return sa < sb;
    return a.hp.to_string() < b.hp.to_string();
  });
}

std::vector<Candidate> expand(std::initializer_list<ModelKind> kinds, bool quick) {
  std::vector<Candidate> out;
  for (ModelKind k : kinds) {
    auto grid = models::default_grid(k);
    if (quick) grid.resize(1);
    for (auto& hp : grid) out.push_back({k, std::move(hp)});
  }
  sort_candidates(out);
  return out;
}

}  // namespace

const std::vector<Row>& all_rows() {
  static const std::vector<Row> rows = {Row::statics, Row::labs,        Row::meds,
                                        Row::text,    Row::ef,          Row::lf,
                                        Row::intermediate, Row::intermediate_censored};
  return rows;
}

std::vector<Candidate> candidates_for_tabular(const RunConfig& cfg) {
  return expand({ModelKind::knn, ModelKind::logreg, ModelKind::gbt, ModelKind::rforest,
                 ModelKind::mlp},
                cfg.quick_grid);
}

std::vector<Candidate> candidates_for_series(const RunConfig& cfg) {
  return expand({ModelKind::rocket, ModelKind::c22features, ModelKind::gru_rnn}, cfg.quick_grid);
}

std::vector<Candidate> candidates_for_text(const RunConfig& cfg) {
  return expand({ModelKind::text_encoder}, cfg.quick_grid);
}

std::string RunConfig::to_json() const {
  json j;
  j["fixture"] = fixture;
  j["cohort_file"] = cohort_file;
  j["n_patients"] = n_patients;
  j["positive_fraction"] = positive_fraction;
  j["seed"] = seed;
  j["split_mode"] = split.mode == eval::SplitMode::nested ? "nested" : "tripod2a";
  j["outer_folds"] = split.outer_folds;
  j["inner_folds"] = split.inner_folds;
  j["dev_fraction"] = split.dev_fraction;
  j["lr"] = train.lr;
  j["batch_size"] = train.batch_size;
  j["max_epochs"] = train.max_epochs;
  j["patience"] = train.patience;
  j["text_d_model"] = train.text_d_model;
  j["text_heads"] = train.text_heads;
  j["text_blocks"] = train.text_blocks;
  j["text_ffn"] = train.text_ffn;
  j["text_pretrain"] = train.text_pretrain;
  j["tokenizer_vocab"] = tokenizer_vocab;
  j["max_tokens"] = max_tokens;
  j["quick_grid"] = quick_grid;
  j["if_head_units"] = if_head_units;
  j["explain_samples"] = explain_samples;
  j["shap_coalitions"] = shap_coalitions;
  j["bootstrap_resamples"] = bootstrap_resamples;
  j["rank_blocks"] = rank_blocks;
  j["out_dir"] = out_dir;
  j["jobs"] = jobs;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  RunConfig c;
  c.fixture = j.value("fixture", "");
  c.cohort_file = j.value("cohort_file", "");
  c.n_patients = j.value("n_patients", 200);
  c.positive_fraction = j.value("positive_fraction", 0.4);
  c.seed = j.value("seed", 1ULL);
  c.split.mode = j.value("split_mode", "tripod2a") == std::string("nested")
                     ? eval::SplitMode::nested
                     : eval::SplitMode::tripod2a;
  c.split.outer_folds = j.value("outer_folds", 5);
  c.split.inner_folds = j.value("inner_folds", 5);
  c.split.dev_fraction = j.value("dev_fraction", 0.8);
  c.split.seed = c.seed;
  c.train.lr = j.value("lr", 1e-3);
  c.train.batch_size = j.value("batch_size", 32);
  c.train.max_epochs = j.value("max_epochs", 300);
  c.train.patience = j.value("patience", 20);
  c.train.text_d_model = j.value("text_d_model", 64);
  c.train.text_heads = j.value("text_heads", 4);
  c.train.text_blocks = j.value("text_blocks", 2);
  c.train.text_ffn = j.value("text_ffn", 128);
  c.train.text_pretrain = j.value("text_pretrain", false);
  c.tokenizer_vocab = j.value("tokenizer_vocab", 512);
  c.max_tokens = j.value("max_tokens", 512);
  c.quick_grid = j.value("quick_grid", false);
  c.if_head_units = j.value("if_head_units", 64);
  c.explain_samples = j.value("explain_samples", 20);
  c.shap_coalitions = j.value("shap_coalitions", 512);
  c.bootstrap_resamples = j.value("bootstrap_resamples", 2000);
  c.rank_blocks = j.value("rank_blocks", 200);
  c.out_dir = j.value("out_dir", "run");
  c.jobs = j.value("jobs", 0ULL);
  return c;
}

void RunConfig::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw pipeline_error("cannot write config " + path);
  os << to_json() << '\n';
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw pipeline_error("cannot read config " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return from_json(buf.str());
}

DataBundle DataBundle::from(prep::EncodedDataset ds) {
  DataBundle b;
  b.dataset = std::move(ds);
  b.multi = fusion::multi_input_from(b.dataset.samples, b.dataset.vocab);
  b.ef = fusion::early_fuse(b.dataset.samples, b.dataset.vocab);
  return b;
}

models::ModelInput subset_input(Row row, const DataBundle& data, const std::vector<int>& rows) {
  switch (row) {
    case Row::statics: {
      models::TabularData t;
      t.d = data.multi.statics.d;
      t.n = static_cast<int>(rows.size());
      for (int r : rows) {
        t.x.insert(t.x.end(), data.multi.statics.row(r), data.multi.statics.row(r) + t.d);
        t.y.push_back(data.multi.y[r]);
      }
      return t;
    }
    case Row::ef: {
      models::TabularData t;
      t.d = data.ef.data.d;
      t.n = static_cast<int>(rows.size());
      for (int r : rows) {
        t.x.insert(t.x.end(), data.ef.data.row(r), data.ef.data.row(r) + t.d);
        t.y.push_back(data.multi.y[r]);
      }
      return t;
    }
    case Row::labs:
    case Row::meds: {
      const models::SeriesData& src = row == Row::labs ? data.multi.labs : data.multi.meds;
      models::SeriesData s;
      s.channels = src.channels;
      s.steps = src.steps;
      s.n = static_cast<int>(rows.size());
      const size_t stride = static_cast<size_t>(src.channels) * src.steps;
      for (int r : rows) {
        s.x.insert(s.x.end(), src.x.begin() + r * stride, src.x.begin() + (r + 1) * stride);
        s.y.push_back(data.multi.y[r]);
      }
      return s;
    }
    case Row::text: {
      models::TokenData t;
      t.vocab = data.multi.text.vocab;
      for (int r : rows) {
        t.streams.push_back(data.multi.text.streams[r]);
        t.y.push_back(data.multi.y[r]);
      }
      return t;
    }
    default:
      throw config_error("subset_input: fusion rows have no single-modality input");
  }
}

ModalitySelection select_candidates(Row row, const DataBundle& dev,
                                    const std::vector<Candidate>& candidates,
                                    const RunConfig& cfg, uint64_t seed) {
  const std::vector<int> labels = dev.dataset.labels();
  const std::vector<int> fold = eval::stratified_kfold(labels, cfg.split.inner_folds, seed);
  const int n_folds = cfg.split.inner_folds;

  struct Job {
    int candidate;
    int fold;
  };
  std::vector<Job> jobs;
  for (int c = 0; c < static_cast<int>(candidates.size()); ++c) {
    for (int f = 0; f < n_folds; ++f) jobs.push_back({c, f});
  }
  std::vector<double> job_auprc(jobs.size(), 0.0);
  const size_t workers = cfg.jobs == 0 ? default_workers() : cfg.jobs;
  parallel_for(jobs.size(), workers, [&](size_t ji) {
    const Job& job = jobs[ji];
    std::vector<int> train_rows, val_rows;
    for (size_t i = 0; i < labels.size(); ++i) {
      (fold[i] == job.fold ? val_rows : train_rows).push_back(static_cast<int>(i));
    }
    const ModelInput train_in = subset_input(row, dev, train_rows);
    const ModelInput val_in = subset_input(row, dev, val_rows);
    const Candidate& cand = candidates[job.candidate];
    auto model = models::fit_model(cand.kind, train_in, cand.hp,
                                   seed + 31 * job.candidate + job.fold, cfg.train, &val_in);
    std::vector<int> val_labels;
    for (int r : val_rows) val_labels.push_back(labels[r]);
    job_auprc[ji] = eval::auprc(model->predict_proba(val_in), val_labels);
  });

  ModalitySelection sel;
  for (int c = 0; c < static_cast<int>(candidates.size()); ++c) {
    double mean = 0.0;
    for (int f = 0; f < n_folds; ++f) mean += job_auprc[static_cast<size_t>(c) * n_folds + f];
    mean /= n_folds;
    sel.log.push_back({candidates[c], mean});
    if (sel.winner < 0 || mean > sel.log[sel.winner].mean_val_auprc) sel.winner = c;
    if (models::kind_is_deep(candidates[c].kind)) {
      if (sel.best_deep < 0 || mean > sel.log[sel.best_deep].mean_val_auprc) sel.best_deep = c;
    }
  }
  return sel;
}

namespace {

std::unique_ptr<Model> refit(Row row, const DataBundle& dev, const Candidate& cand,
                             const RunConfig& cfg, uint64_t seed) {
  std::vector<int> rows(dev.n());
  std::iota(rows.begin(), rows.end(), 0);
  const ModelInput full = subset_input(row, dev, rows);
  return models::fit_model(cand.kind, full, cand.hp, seed, cfg.train);
}

std::unique_ptr<models::DeepModel> to_deep(std::unique_ptr<Model> m) {
  auto* deep = dynamic_cast<models::DeepModel*>(m.get());
  if (!deep) throw pipeline_error("expected a deep model for intermediate fusion");
  m.release();
  return std::unique_ptr<models::DeepModel>(deep);
}

}  // namespace

TrainedSplit train_on_split(const DataBundle& dev, const RunConfig& cfg, uint64_t seed) {
  TrainedSplit out;

  // Stage 1: unimodal zoos and early fusion, exhaustive grid per modality.
  std::map<Row, ModalitySelection> selections;
  for (Row row : kUnimodalRows) {
    std::vector<Candidate> candidates;
    switch (row) {
      case Row::statics:
      case Row::ef:
        candidates = candidates_for_tabular(cfg);
        break;
      case Row::labs:
      case Row::meds:
        candidates = candidates_for_series(cfg);
        break;
      default:
        candidates = candidates_for_text(cfg);
        break;
    }
    ModalitySelection sel =
        select_candidates(row, dev, candidates, cfg, seed + 101 * (static_cast<int>(row) + 1));
    for (size_t i = 0; i < sel.log.size(); ++i) {
      out.selection_rows.push_back(
          {"unimodal+ef", row_name(row), models::kind_name(sel.log[i].candidate.kind),
           sel.log[i].candidate.hp.to_string(), report::format_double(sel.log[i].mean_val_auprc),
           static_cast<int>(i) == sel.winner ? "winner" : ""});
    }
    const Candidate& win = sel.log[sel.winner].candidate;
    out.winner_candidates[row] = win;
    out.winner_val_auprc[row] = sel.log[sel.winner].mean_val_auprc;
    auto model = refit(row, dev, win, cfg, seed + 997 * (static_cast<int>(row) + 1));
    model->modality = row_name(row);
    out.unimodal[row] = std::move(model);
    selections[row] = std::move(sel);
  }

  // Stage 2: late fusion over the four unimodal winners, weights from the
  // stage-1 mean validation AUPRCs.
  out.late_members = {Row::statics, Row::labs, Row::meds, Row::text};
  std::vector<double> member_auprcs;
  for (Row r : out.late_members) member_auprcs.push_back(out.winner_val_auprc[r]);
  out.late = std::make_unique<fusion::LateEnsemble>(member_auprcs);
  out.selection_rows.push_back({"lf", "lf", "avg_weighted", "", "", ""});

  // Stage 3: intermediate fusion from the best deep model per modality,
  // reusing their fitted weights; two-point dropout grid.
  auto deep_donor = [&](Row row) -> std::unique_ptr<models::DeepModel> {
    const ModalitySelection& sel = selections[row];
    if (sel.best_deep < 0) throw pipeline_error("no deep candidate for " + std::string(row_name(row)));
    const Candidate& cand = sel.log[sel.best_deep].candidate;
    // Reuse the winner refit when it is already the best deep model.
    if (sel.best_deep == sel.winner) {
      auto* deep = dynamic_cast<models::DeepModel*>(out.unimodal[row].get());
      if (deep) return deep->clone_deep();
    }
    auto refit_deep = refit(row, dev, cand, cfg, seed + 1999 * (static_cast<int>(row) + 1));
    return to_deep(std::move(refit_deep));
  };

  const std::vector<int> dev_labels = dev.dataset.labels();
  auto [if_train_rows, if_val_rows] = eval::stratified_split(dev_labels, 0.8, seed ^ 0x494656ULL);
  const fusion::MultiInput if_train = dev.multi.subset(if_train_rows);
  const fusion::MultiInput if_val = dev.multi.subset(if_val_rows);

  std::vector<double> if_dropouts = {0.2, 0.3};
  if (cfg.quick_grid) if_dropouts = {0.2};
  double best_auprc = -1.0;
  for (double dropout : if_dropouts) {
    fusion::IntermediateModel::Donors donors;
    donors.statics = deep_donor(Row::statics);
    donors.labs = deep_donor(Row::labs);
    donors.meds = deep_donor(Row::meds);
    donors.text = deep_donor(Row::text);
    auto candidate = std::make_unique<fusion::IntermediateModel>(
        std::move(donors), cfg.if_head_units, dropout, seed ^ 0x4946ULL);
    candidate->train_two_stage(if_train, if_val, cfg.train);
    const double auprc = eval::auprc(candidate->predict_proba(if_val), if_val.y);
    out.selection_rows.push_back({"if", "if", "if",
                                  "dropout=" + report::format_double(dropout),
                                  report::format_double(auprc),
                                  auprc > best_auprc ? "winner" : ""});
    if (auprc > best_auprc) {
      best_auprc = auprc;
      out.intermediate = std::move(candidate);
    }
  }
  out.if_val_auprc = best_auprc;
  return out;
}

std::map<Row, std::vector<double>> predict_all_rows(const TrainedSplit& trained,
                                                    const DataBundle& data,
                                                    const DataBundle& data_censored) {
  std::map<Row, std::vector<double>> out;
  std::vector<int> rows(data.n());
  std::iota(rows.begin(), rows.end(), 0);
  for (Row row : kUnimodalRows) {
    const ModelInput in = subset_input(row, data, rows);
    out[row] = models::predict_proba(*trained.unimodal.at(row), in);
  }
  std::vector<std::vector<double>> member_probs;
  for (Row r : trained.late_members) member_probs.push_back(out[r]);
  out[Row::lf] = trained.late->combine(member_probs);
  out[Row::intermediate] = trained.intermediate->predict_proba(data.multi);
  out[Row::intermediate_censored] = trained.intermediate->predict_proba(data_censored.multi);
  return out;
}

// ----- command implementations -----

namespace {

std::vector<synthgen::RawPatient> resolve_cohort(const RunConfig& cfg, std::string* source_desc) {
  if (!cfg.cohort_file.empty()) {
    *source_desc = "file:" + cfg.cohort_file;
    return synthgen::load_cohort(cfg.cohort_file);
  }
  synthgen::GeneratorConfig gen;
  if (!cfg.fixture.empty()) {
    gen = synthgen::cohort_fixture(cfg.fixture, cfg.seed);
    *source_desc = "fixture:" + cfg.fixture;
  } else {
    gen = synthgen::cohort_fixture("breast-like", cfg.seed);  // default signal plan
    gen.name = "";
    gen.n_patients = cfg.n_patients;
    gen.positive_fraction = cfg.positive_fraction;
    *source_desc = "generated";
  }
  return synthgen::generate_cohort(gen);
}

std::vector<synthgen::RawPatient> subset_patients(const std::vector<synthgen::RawPatient>& all,
                                                  const std::vector<int>& idx) {
  std::vector<synthgen::RawPatient> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(all[i]);
  return out;
}

struct PredictionTable {
  std::vector<std::string> patient_ids;
  std::vector<int> labels;
  std::vector<int> fold;  // -1 in tripod mode
  std::map<Row, std::vector<double>> probs;

  void save(const std::string& path) const {
    std::vector<std::string> header = {"patient_id", "label", "fold"};
    for (Row r : all_rows()) header.push_back(row_name(r));
    std::vector<std::vector<std::string>> rows;
    for (size_t i = 0; i < patient_ids.size(); ++i) {
      std::vector<std::string> row = {patient_ids[i], std::to_string(labels[i]),
                                      std::to_string(fold[i])};
      for (Row r : all_rows()) row.push_back(report::format_double(probs.at(r)[i]));
      rows.push_back(std::move(row));
    }
    report::write_csv(path, header, rows);
  }

  static PredictionTable load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
      throw pipeline_error("missing predictions at " + path +
                           "; run the `train` stage for this directory first");
    }
    PredictionTable t;
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (cells.size() != 3 + all_rows().size()) {
        throw pipeline_error("malformed predictions row in " + path);
      }
      t.patient_ids.push_back(cells[0]);
      t.labels.push_back(std::stoi(cells[1]));
      t.fold.push_back(std::stoi(cells[2]));
      size_t col = 3;
      for (Row r : all_rows()) t.probs[r].push_back(std::stod(cells[col++]));
    }
    return t;
  }
};

std::string model_meta_json(const Model& m, const prep::Vocabularies& vocab) {
  json j;
  j["kind"] = models::kind_name(m.kind());
  j["modality"] = m.modality;
  j["seed"] = m.train_seed;
  json hp;
  for (const auto& [k, v] : m.hyperparameters.num) hp[k] = v;
  for (const auto& [k, v] : m.hyperparameters.cat) hp[k] = v;
  j["hyperparameters"] = hp;
  j["schema_hash"] = prep::schema_hash(vocab);
  return j.dump(2);
}

void save_trained(const TrainedSplit& trained, const prep::Vocabularies& vocab,
                  const fs::path& models_dir) {
  fs::create_directories(models_dir);
  for (Row row : kUnimodalRows) {
    const Model& m = *trained.unimodal.at(row);
    m.save((models_dir / (std::string(row_name(row)) + ".bin")).string());
    std::ofstream meta(models_dir / (std::string(row_name(row)) + ".json"), std::ios::binary);
    meta << model_meta_json(m, vocab) << '\n';
  }
  trained.intermediate->to_checkpoint().save((models_dir / "if.bin").string());
  {
    json meta;
    meta["kind"] = "if";
    meta["stage"] = trained.intermediate->stage() == fusion::FusionStage::finetuned
                        ? "finetuned"
                        : "frozen";
    meta["head_input_dim"] = trained.intermediate->head_input_dim();
    meta["parameter_count"] = trained.intermediate->parameter_count();
    char hash_buf[24];
    std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                  static_cast<unsigned long long>(trained.intermediate->encoder_checksum()));
    meta["donor_encoder_checksum"] = hash_buf;
    json donors;
    const char* names[] = {"static", "labs", "meds", "text"};
    for (int m = 0; m < 4; ++m) {
      donors[names[m]] = {{"kind", models::kind_name(trained.intermediate->encoder(m).kind())},
                          {"latent_dim", trained.intermediate->encoder(m).latent_dim()}};
    }
    meta["donors"] = donors;
    meta["schema_hash"] = prep::schema_hash(vocab);
    std::ofstream os(models_dir / "if.json", std::ios::binary);
    os << meta.dump(2) << '\n';
  }
  json lf;
  lf["weights"] = trained.late->weights();
  json members = json::array();
  for (Row r : trained.late_members) members.push_back(row_name(r));
  lf["members"] = members;
  lf["uniform_fallback"] = trained.late->uniform_fallback();
  std::ofstream lf_os(models_dir / "lf.json", std::ios::binary);
  lf_os << lf.dump(2) << '\n';
}

}  // namespace

void cmd_generate(const RunConfig& cfg, const std::string& output_path) {
  std::string source;
  const auto cohort = resolve_cohort(cfg, &source);
  synthgen::save_cohort(cohort, output_path);
}

void cmd_train(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const fs::path out(cfg.out_dir);
  cfg.save((out / "resolved_config.json").string());

  std::string source;
  const auto cohort = resolve_cohort(cfg, &source);
  synthgen::save_cohort(cohort, (out / "cohort.jsonl").string());
  std::vector<int> labels;
  for (const auto& p : cohort) labels.push_back(p.label);

  prep::BuildOptions build_opts;
  build_opts.tokenizer_vocab_size = cfg.tokenizer_vocab;
  build_opts.max_tokens = cfg.max_tokens;

  PredictionTable predictions;

  if (cfg.split.mode == eval::SplitMode::tripod2a) {
    auto [dev_idx, holdout_idx] = eval::stratified_split(labels, cfg.split.dev_fraction, cfg.seed);
    const auto dev_patients = subset_patients(cohort, dev_idx);
    const auto holdout_patients = subset_patients(cohort, holdout_idx);
    const prep::Vocabularies vocab = prep::build_vocabularies(dev_patients, build_opts);

    DataBundle dev = DataBundle::from(prep::encode_cohort(dev_patients, vocab));
    DataBundle holdout = DataBundle::from(prep::encode_cohort(holdout_patients, vocab));
    prep::EncodeOptions censor;
    censor.censor_notes = true;
    DataBundle holdout_censored =
        DataBundle::from(prep::encode_cohort(holdout_patients, vocab, censor));

    prep::save_dataset(dev.dataset, (out / "dataset_dev.json").string());
    prep::save_dataset(holdout.dataset, (out / "dataset_eval.json").string());
    prep::save_dataset(holdout_censored.dataset, (out / "dataset_eval_censored.json").string());

    TrainedSplit trained = train_on_split(dev, cfg, cfg.seed);
    save_trained(trained, vocab, out / "models");
    report::write_csv((out / "selection_log.csv").string(),
                      {"stage", "modality", "kind", "hyperparameters", "mean_val_auprc", "note"},
                      trained.selection_rows);

    auto probs = predict_all_rows(trained, holdout, holdout_censored);
    for (size_t i = 0; i < holdout.dataset.samples.size(); ++i) {
      predictions.patient_ids.push_back(holdout.dataset.samples[i].patient_id);
      predictions.labels.push_back(holdout.dataset.samples[i].label);
      predictions.fold.push_back(-1);
    }
    predictions.probs = std::move(probs);
  } else {
    // Nested mode: fresh vocabularies per outer fold (built on the outer
    // training patients only), predictions pooled over the test folds.
    const std::vector<int> outer = eval::stratified_kfold(labels, cfg.split.outer_folds, cfg.seed);
    const int n = static_cast<int>(cohort.size());
    std::vector<double> pooled_init(n, 0.0);
    for (Row r : all_rows()) predictions.probs[r] = pooled_init;
    predictions.patient_ids.resize(n);
    predictions.labels.resize(n);
    predictions.fold.assign(n, -1);
    std::vector<std::vector<std::string>> selection_rows;

    for (int of = 0; of < cfg.split.outer_folds; ++of) {
      std::vector<int> train_idx, test_idx;
      for (int i = 0; i < n; ++i) (outer[i] == of ? test_idx : train_idx).push_back(i);
      const auto train_patients = subset_patients(cohort, train_idx);
      const auto test_patients = subset_patients(cohort, test_idx);
      const prep::Vocabularies vocab = prep::build_vocabularies(train_patients, build_opts);

      DataBundle dev = DataBundle::from(prep::encode_cohort(train_patients, vocab));
      DataBundle test = DataBundle::from(prep::encode_cohort(test_patients, vocab));
      prep::EncodeOptions censor;
      censor.censor_notes = true;
      DataBundle test_censored =
          DataBundle::from(prep::encode_cohort(test_patients, vocab, censor));

      TrainedSplit trained = train_on_split(dev, cfg, cfg.seed + 7919 * (of + 1));
      for (auto& row : trained.selection_rows) {
        row.insert(row.begin(), "fold" + std::to_string(of));
        selection_rows.push_back(row);
      }
      auto probs = predict_all_rows(trained, test, test_censored);
      for (size_t i = 0; i < test_idx.size(); ++i) {
        const int gi = test_idx[i];
        predictions.patient_ids[gi] = test.dataset.samples[i].patient_id;
        predictions.labels[gi] = test.dataset.samples[i].label;
        predictions.fold[gi] = of;
        for (Row r : all_rows()) predictions.probs[r][gi] = probs[r][i];
      }
      if (of == 0) {
        // Fold 0's artifacts back the explain stage.
        save_trained(trained, vocab, out / "models");
        prep::save_dataset(test.dataset, (out / "dataset_eval.json").string());
        prep::save_dataset(test_censored.dataset,
                           (out / "dataset_eval_censored.json").string());
      }
    }
    report::write_csv(
        (out / "selection_log.csv").string(),
        {"fold", "stage", "modality", "kind", "hyperparameters", "mean_val_auprc", "note"},
        selection_rows);
  }
  predictions.save((out / "predictions.csv").string());
}

namespace {

std::vector<std::string> metric_row(const std::string& display, const std::string& classifier,
                                    const eval::MetricReport& r) {
  return {display,
          classifier,
          report::format_double(r.auprc),
          report::format_double(r.auroc),
          report::format_double(r.f1_macro),
          report::format_double(r.specificity),
          report::format_double(r.sensitivity)};
}

std::string classifier_label(Row row, const fs::path& run_dir) {
  switch (row) {
    case Row::lf:
      return "Avg (weighted)";
    case Row::intermediate:
    case Row::intermediate_censored:
      return "IF";
    default: {
      std::ifstream meta(run_dir / "models" / (std::string(row_name(row)) + ".json"));
      if (!meta) return "?";
      json j;
      meta >> j;
      return j.value("kind", "?");
    }
  }
}

}  // namespace

void cmd_evaluate(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "resolved_config.json")) {
    throw pipeline_error("no resolved_config.json in " + run_dir + "; run `train` first");
  }
  const RunConfig cfg = RunConfig::load((dir / "resolved_config.json").string());
  const PredictionTable pred = PredictionTable::load((dir / "predictions.csv").string());
  const bool nested = cfg.split.mode == eval::SplitMode::nested;

  // The evaluate stage owns the seven trained rows; the censored re-test row
  // is emitted by the explain stage.
  std::vector<Row> rows(all_rows().begin(), all_rows().end());
  rows.pop_back();

  const std::vector<std::string> header = {"modality", "classifier",  "auprc", "auroc",
                                           "f1_macro", "specificity", "sensitivity"};
  std::vector<std::vector<std::string>> out_rows;
  std::vector<std::vector<std::string>> formatted_rows;
  for (Row row : rows) {
    const auto& probs = pred.probs.at(row);
    const eval::MetricReport r = eval::compute_metrics(probs, pred.labels);
    out_rows.push_back(metric_row(row_display(row), classifier_label(row, dir), r));
    if (nested) {
      std::vector<std::string> frow = {row_display(row), classifier_label(row, dir)};
      for (eval::Metric m : {eval::Metric::auprc, eval::Metric::auroc, eval::Metric::f1_macro,
                             eval::Metric::specificity, eval::Metric::sensitivity}) {
        const eval::BootstrapCi ci = eval::bootstrap_ci(probs, pred.labels, m,
                                                        cfg.bootstrap_resamples, 0.05, cfg.seed);
        frow.push_back(report::formatted_metric_cell(ci.point_estimate, ci.interval.lower,
                                                     ci.interval.upper));
        out_rows.back().push_back(report::format_double(ci.interval.lower));
        out_rows.back().push_back(report::format_double(ci.interval.upper));
      }
      formatted_rows.push_back(std::move(frow));
    }
  }
  std::vector<std::string> full_header = header;
  if (nested) {
    for (const char* m : {"auprc", "auroc", "f1_macro", "specificity", "sensitivity"}) {
      full_header.push_back(std::string(m) + "_ci_lo");
      full_header.push_back(std::string(m) + "_ci_hi");
    }
    // Match the header order of the numeric metric columns.
    std::vector<std::string> reordered = {"modality", "classifier"};
    for (const char* m : {"auprc", "auroc", "f1_macro", "specificity", "sensitivity"}) {
      reordered.push_back(m);
    }
    for (const char* m : {"auprc", "auroc", "f1_macro", "specificity", "sensitivity"}) {
      reordered.push_back(std::string(m) + "_ci_lo");
      reordered.push_back(std::string(m) + "_ci_hi");
    }
    full_header = reordered;
  }
  report::write_csv((dir / "results.csv").string(), full_header, out_rows);

  if (nested) {
    report::write_csv((dir / "results_formatted.csv").string(),
                      {"modality", "classifier", "auprc", "auroc", "f1_macro", "specificity",
                       "sensitivity"},
                      formatted_rows);

    // Rank statistics over paired bootstrap AUPRC blocks of the pooled
    // predictions (all eight classifiers, censored included).
    std::vector<std::vector<double>> per_classifier;
    std::vector<std::string> names;
    for (Row row : all_rows()) {
      per_classifier.push_back(pred.probs.at(row));
      names.push_back(row_display(row));
    }
    const auto blocks = eval::bootstrap_score_blocks(per_classifier, pred.labels,
                                                     eval::Metric::auprc, cfg.rank_blocks,
                                                     cfg.seed ^ 0x52414e4bULL);
    const eval::RankMatrix rm = eval::RankMatrix::from_scores(blocks);
    const eval::FriedmanResult fr = eval::friedman_test(rm);
    report::write_csv((dir / "rank_friedman.csv").string(),
                      {"n_blocks", "k", "chi2", "p_value"},
                      {{std::to_string(rm.blocks()), std::to_string(rm.classifiers()),
                        report::format_double(fr.chi2), report::format_double(fr.p_value)}});

    const auto pmat = eval::nemenyi_posthoc(rm);
    std::vector<std::vector<std::string>> prow;
    for (size_t i = 0; i < pmat.size(); ++i) {
      std::vector<std::string> r = {names[i]};
      for (double v : pmat[i]) r.push_back(report::format_double(v));
      prow.push_back(std::move(r));
    }
    std::vector<std::string> pheader = {"classifier"};
    pheader.insert(pheader.end(), names.begin(), names.end());
    report::write_csv((dir / "rank_nemenyi.csv").string(), pheader, prow);

    const std::vector<double> mean_ranks = rm.mean_ranks();
    const double cd = eval::critical_difference(rm.classifiers(), rm.blocks(), 0.05);
    const eval::CdDiagramData cd_data = eval::cd_diagram_data(mean_ranks, cd);
    std::vector<std::vector<std::string>> cd_rows;
    for (size_t i = 0; i < mean_ranks.size(); ++i) {
      cd_rows.push_back({names[i], report::format_double(mean_ranks[i])});
    }
    cd_rows.push_back({"CD(alpha=0.05)", report::format_double(cd)});
    report::write_csv((dir / "rank_mean.csv").string(), {"classifier", "mean_rank"}, cd_rows);
    report::svg_cd_diagram((dir / "cd_diagram.svg").string(), "Critical difference (AUPRC ranks)",
                           names, cd_data);
  }
}

void cmd_explain(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "models" / "if.bin")) {
    throw pipeline_error("no intermediate-fusion checkpoint in " + run_dir +
                         "/models; run `train` first");
  }
  const RunConfig cfg = RunConfig::load((dir / "resolved_config.json").string());
  prep::EncodedDataset eval_ds = prep::load_dataset((dir / "dataset_eval.json").string());
  auto intermediate = load_intermediate((dir / "models" / "if.bin").string(), cfg.seed);

  // Scorer over serialized samples: rebuild the sample, run the IF model.
  const prep::Vocabularies& vocab = eval_ds.vocab;
  explainer::ScoreFn scorer = [&](const explainer::SerializedSample& layout,
                                  const std::vector<double>& values) {
    explainer::SerializedSample tmp = layout;
    tmp.values = values;
    prep::MultimodalSample sample = explainer::deserialize(tmp);
    fusion::MultiInput in = fusion::multi_input_from({sample}, vocab);
    return intermediate->predict_proba(in)[0];
  };

  // Local attributions for the first explain_samples patients.
  const int n_explain = std::min<int>(cfg.explain_samples, eval_ds.n());
  std::vector<explainer::SerializedSample> serialized;
  std::vector<explainer::Attribution> attributions;
  std::vector<explainer::ModalityRelevance> relevances;
  std::vector<std::vector<std::string>> attribution_rows;
  for (int i = 0; i < n_explain; ++i) {
    explainer::SerializedSample s = explainer::serialize(eval_ds.samples[i]);
    explainer::KernelShapOptions opt;
    opt.n_coalitions = std::max(cfg.shap_coalitions, s.n_features() + 2);
    opt.seed = cfg.seed + i;
    explainer::Attribution a =
        explainer::kernel_shap(scorer, s, explainer::per_feature_groups(s), opt);
    relevances.push_back(explainer::modality_relevance_of(a, s));
    for (int f = 0; f < s.n_features(); ++f) {
      const auto& c = s.coords[f];
      attribution_rows.push_back({s.patient_id, explainer::modality_name(c.modality),
                                  std::to_string(c.channel), std::to_string(c.timestep),
                                  report::format_double(a.phi[f])});
    }
    serialized.push_back(std::move(s));
    attributions.push_back(std::move(a));
  }
  report::write_csv((dir / "attributions.csv").string(),
                    {"patient_id", "modality", "channel", "timestep", "phi"}, attribution_rows);

  const explainer::ModalityRelevance global = explainer::global_relevance(relevances);
  report::write_csv((dir / "modality_relevance.csv").string(), {"modality", "share"},
                    {{"static", report::format_double(global.shares[0])},
                     {"labs", report::format_double(global.shares[1])},
                     {"meds", report::format_double(global.shares[2])},
                     {"text", report::format_double(global.shares[3])}});
  report::svg_bar_chart((dir / "modality_relevance.svg").string(),
                        "Global modality relevance (mean |phi| share)",
                        {"Static", "Labs", "Meds", "Text"},
                        {global.shares[0], global.shares[1], global.shares[2], global.shares[3]});

  // Perturbation faithfulness on the positive explained samples.
  std::vector<explainer::SerializedSample> positive_samples;
  std::vector<explainer::Attribution> positive_attrs;
  for (int i = 0; i < n_explain; ++i) {
    if (eval_ds.samples[i].label == 1) {
      positive_samples.push_back(serialized[i]);
      positive_attrs.push_back(attributions[i]);
    }
  }
  if (!positive_samples.empty()) {
    std::vector<double> grid;
    for (int g = 0; g <= 10; ++g) grid.push_back(g / 10.0);
    std::vector<report::LineSeries> series;
    std::vector<std::vector<std::string>> curve_rows;
    const std::pair<explainer::MaskStrategy, const char*> strategies[] = {
        {explainer::MaskStrategy::high_to_low, "High to Low"},
        {explainer::MaskStrategy::low_to_high, "Low to High"},
        {explainer::MaskStrategy::random_order, "Random"}};
    for (const auto& [strategy, label] : strategies) {
      const explainer::FaithfulnessCurve curve = explainer::perturbation_curve(
          scorer, positive_samples, positive_attrs, strategy, grid, cfg.seed);
      report::LineSeries ls;
      ls.label = label;
      ls.x = curve.fractions;
      ls.y = curve.mean_output;
      series.push_back(std::move(ls));
      for (size_t i = 0; i < grid.size(); ++i) {
        curve_rows.push_back({label, report::format_double(curve.fractions[i]),
                              report::format_double(curve.mean_output[i])});
      }
    }
    report::write_csv((dir / "perturbation.csv").string(),
                      {"strategy", "masked_fraction", "mean_output"}, curve_rows);
    report::svg_line_chart((dir / "perturbation.svg").string(),
                           "Perturbation faithfulness (positive holdout samples)", series,
                           "masked fraction", "mean model output");
  }

  // Censored re-test: the IF row next to its censored-text counterpart.
  const PredictionTable pred = PredictionTable::load((dir / "predictions.csv").string());
  std::vector<std::vector<std::string>> censored_rows;
  for (Row row : {Row::intermediate, Row::intermediate_censored}) {
    const eval::MetricReport r = eval::compute_metrics(pred.probs.at(row), pred.labels);
    censored_rows.push_back(metric_row(row_display(row), "IF", r));
  }
  report::write_csv((dir / "results_censored.csv").string(),
                    {"modality", "classifier", "auprc", "auroc", "f1_macro", "specificity",
                     "sensitivity"},
                    censored_rows);
}

void cmd_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  std::ofstream os(dir / "report.md", std::ios::binary);
  if (!os) throw pipeline_error("cannot write report.md in " + run_dir);
  os << "# Run report\n\n";
  for (const char* file : {"results.csv", "results_formatted.csv", "results_censored.csv",
                           "rank_friedman.csv", "rank_mean.csv", "modality_relevance.csv"}) {
    const fs::path p = dir / file;
    if (!fs::exists(p)) continue;
    os << "## " << file << "\n\n";
    std::ifstream is(p, std::ios::binary);
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
      os << "| ";
      for (char c : line) os << (c == ',' ? std::string(" | ") : std::string(1, c));
      os << " |\n";
      if (first) {
        size_t cols = std::count(line.begin(), line.end(), ',') + 1;
        os << "|";
        for (size_t i = 0; i < cols; ++i) os << " --- |";
        os << "\n";
        first = false;
      }
    }
    os << "\n";
  }
}

std::unique_ptr<fusion::IntermediateModel> load_intermediate(const std::string& checkpoint_path,
                                                             uint64_t seed) {
  const num::Checkpoint ck = num::Checkpoint::load(checkpoint_path);
  auto sub_ck = [&](const char* prefix) {
    num::Checkpoint sub;
    const std::string pre(prefix);
    for (const auto& [name, t] : ck.entries) {
      if (name.rfind(pre, 0) == 0) sub.entries[name.substr(pre.size())] = t;
    }
    return sub;
  };
  auto donor = [&](const char* prefix) -> std::unique_ptr<models::DeepModel> {
    num::Checkpoint sub = sub_ck(prefix);
    ModelKind kind;
    if (sub.has("mlp.meta")) {
      kind = ModelKind::mlp;
    } else if (sub.has("gru.meta")) {
      kind = ModelKind::gru_rnn;
    } else if (sub.has("text.meta")) {
      kind = ModelKind::text_encoder;
    } else {
      throw pipeline_error("unrecognized donor checkpoint under " + std::string(prefix));
    }
    return to_deep(models::model_from_checkpoint(kind, sub, seed));
  };
  fusion::IntermediateModel::Donors donors;
  donors.statics = donor("if.s.");
  donors.labs = donor("if.l.");
  donors.meds = donor("if.m.");
  donors.text = donor("if.t.");
  const auto& meta = ck.get("if.meta").vec();
  auto model = std::make_unique<fusion::IntermediateModel>(
      std::move(donors), static_cast<int>(meta[0]), meta[1], seed);
  model->restore_checkpoint(ck);
  return model;
}

}  // namespace mmpred::pipeline
