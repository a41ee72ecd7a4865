#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mmpred/fusion.hpp"
#include "mmpred/models.hpp"
#include "mmpred/preprocess.hpp"
#include "mmpred/splits.hpp"
#include "mmpred/synthgen.hpp"

namespace mmpred::pipeline {

// The seven trained prediction rows plus the censored re-test row.
enum class Row { statics, labs, meds, text, ef, lf, intermediate, intermediate_censored };
const char* row_name(Row r);
const std::vector<Row>& all_rows();

struct RunConfig {
  // Cohort source: a named fixture, an existing file, or ad-hoc generation.
  std::string fixture;
  std::string cohort_file;
  int n_patients = 200;
  double positive_fraction = 0.4;
  uint64_t seed = 1;

  eval::SplitPlan split;

  models::TrainConfig train;
  int tokenizer_vocab = 512;
  int max_tokens = 512;
  bool quick_grid = false;  // one default point per kind instead of Table-3 grids
  int if_head_units = 64;

  int explain_samples = 20;
  int shap_coalitions = 512;
  int bootstrap_resamples = 2000;
  int rank_blocks = 200;

  std::string out_dir = "run";
  size_t jobs = 0;  // 0 = logical cores

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  void save(const std::string& path) const;
  static RunConfig load(const std::string& path);
};

struct Candidate {
  models::ModelKind kind;
  models::HyperPoint hp;
};

// Candidate grids per modality; static and EF share the tabular zoo.
std::vector<Candidate> candidates_for_tabular(const RunConfig& cfg);
std::vector<Candidate> candidates_for_series(const RunConfig& cfg);
std::vector<Candidate> candidates_for_text(const RunConfig& cfg);

// One encoded split with the derived model inputs built once.
struct DataBundle {
  prep::EncodedDataset dataset;
  fusion::MultiInput multi;
  fusion::FusedTabular ef;

  static DataBundle from(prep::EncodedDataset ds);
  int n() const { return dataset.n(); }
};

models::ModelInput subset_input(Row row, const DataBundle& data, const std::vector<int>& rows);

struct SelectionEntry {
  Candidate candidate;
  double mean_val_auprc = 0.0;
};

struct ModalitySelection {
  std::vector<SelectionEntry> log;  // every grid point, selection order
  int winner = -1;                  // index into log
  int best_deep = -1;               // best deep-kind entry (IF donor), -1 if none
};

// 5-fold stratified grid search on the development split, maximizing mean
// validation AUPRC. Ties fall to the simpler kind, then the lexicographic
// hyperparameter string (the candidate list is pre-sorted that way).
ModalitySelection select_candidates(Row row, const DataBundle& dev,
                                    const std::vector<Candidate>& candidates,
                                    const RunConfig& cfg, uint64_t seed);

// Everything cmd_train produces for one development/holdout split.
struct TrainedSplit {
  std::map<Row, std::unique_ptr<models::Model>> unimodal;  // statics/labs/meds/text/ef winners
  std::map<Row, Candidate> winner_candidates;
  std::map<Row, double> winner_val_auprc;
  std::unique_ptr<fusion::LateEnsemble> late;
  std::vector<Row> late_members;
  std::unique_ptr<fusion::IntermediateModel> intermediate;
  double if_val_auprc = 0.0;
  std::vector<std::vector<std::string>> selection_rows;  // selection_log.csv payload
};

TrainedSplit train_on_split(const DataBundle& dev, const RunConfig& cfg, uint64_t seed);

// Predictions for every row on an encoded bundle (censored uses the
// censored-text encoding of the same patients).
std::map<Row, std::vector<double>> predict_all_rows(const TrainedSplit& trained,
                                                    const DataBundle& data,
                                                    const DataBundle& data_censored);

// ----- batch commands (the CLI front end calls these) -----

void cmd_generate(const RunConfig& cfg, const std::string& output_path);
void cmd_train(const RunConfig& cfg);
void cmd_evaluate(const std::string& run_dir);
void cmd_explain(const std::string& run_dir);
void cmd_report(const std::string& run_dir);

// Reload helpers used by evaluate/explain and the tests.
std::unique_ptr<fusion::IntermediateModel> load_intermediate(const std::string& checkpoint_path,
                                                             uint64_t seed);

}  // namespace mmpred::pipeline
