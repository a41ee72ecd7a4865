#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmpred/error.hpp"
#include "mmpred/pipeline.hpp"

using namespace mmpred::pipeline;
namespace fs = std::filesystem;

namespace {

RunConfig smoke_config(const std::string& out_dir) {
  RunConfig cfg;
  cfg.n_patients = 80;
  cfg.positive_fraction = 0.4;
  cfg.seed = 5;
  cfg.quick_grid = true;
  cfg.train.max_epochs = 6;
  cfg.train.patience = 3;
  cfg.train.text_d_model = 8;
  cfg.train.text_heads = 2;
  cfg.train.text_blocks = 1;
  cfg.train.text_ffn = 16;
  cfg.tokenizer_vocab = 280;
  cfg.max_tokens = 48;
  cfg.explain_samples = 3;
  cfg.shap_coalitions = 64;
  cfg.bootstrap_resamples = 50;
  cfg.rank_blocks = 20;
  cfg.out_dir = out_dir;
  cfg.jobs = 2;
  cfg.split.seed = cfg.seed;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("run config json round trip") {
  RunConfig cfg = smoke_config("x");
  cfg.split.mode = mmpred::eval::SplitMode::nested;
  RunConfig back = RunConfig::from_json(cfg.to_json());
  CHECK(back.n_patients == cfg.n_patients);
  CHECK(back.seed == cfg.seed);
  CHECK(back.split.mode == mmpred::eval::SplitMode::nested);
  CHECK(back.train.max_epochs == cfg.train.max_epochs);
  CHECK(back.quick_grid == cfg.quick_grid);
  CHECK(back.max_tokens == cfg.max_tokens);
}

TEST_CASE("tripod train/evaluate/explain produce the expected artifacts") {
  const std::string dir = "pipe_smoke_run";
  fs::remove_all(dir);
  RunConfig cfg = smoke_config(dir);
  cmd_train(cfg);

  for (const char* f :
       {"resolved_config.json", "cohort.jsonl", "dataset_dev.json", "dataset_eval.json",
        "dataset_eval_censored.json", "predictions.csv", "selection_log.csv",
        "models/static.bin", "models/labs.bin", "models/meds.bin", "models/text.bin",
        "models/ef.bin", "models/if.bin", "models/lf.json"}) {
    CHECK_MESSAGE(fs::exists(fs::path(dir) / f), f);
  }

  cmd_evaluate(dir);
  CHECK(fs::exists(fs::path(dir) / "results.csv"));
  const std::string results = slurp(fs::path(dir) / "results.csv");
  CHECK(results.find("auprc,auroc,f1_macro,specificity,sensitivity") != std::string::npos);
  for (const char* row : {"Static", "Labs", "Meds", "Text", "EF (w/o text)", "LF", "IF"}) {
    CHECK_MESSAGE(results.find(row) != std::string::npos, row);
  }
  // Evaluate twice: identical bytes.
  cmd_evaluate(dir);
  CHECK(slurp(fs::path(dir) / "results.csv") == results);

  cmd_explain(dir);
  for (const char* f : {"attributions.csv", "modality_relevance.csv", "modality_relevance.svg",
                        "perturbation.csv", "perturbation.svg", "results_censored.csv"}) {
    CHECK_MESSAGE(fs::exists(fs::path(dir) / f), f);
  }
  const std::string censored = slurp(fs::path(dir) / "results_censored.csv");
  CHECK(censored.find("IF (censored)") != std::string::npos);
  const std::string relevance = slurp(fs::path(dir) / "modality_relevance.csv");
  for (const char* m : {"static", "labs", "meds", "text"}) {
    CHECK(relevance.find(m) != std::string::npos);
  }
  // Perturbation SVG carries the three labeled strategies.
  const std::string svg = slurp(fs::path(dir) / "perturbation.svg");
  for (const char* s : {"High to Low", "Low to High", "Random"}) {
    CHECK(svg.find(s) != std::string::npos);
  }

  cmd_report(dir);
  CHECK(fs::exists(fs::path(dir) / "report.md"));
  fs::remove_all(dir);
}

TEST_CASE("evaluate without train is an actionable error") {
  const std::string dir = "pipe_missing_run";
  fs::remove_all(dir);
  fs::create_directories(dir);
  CHECK_THROWS_WITH_AS(cmd_evaluate(dir), doctest::Contains("train"), mmpred::pipeline_error);
  RunConfig cfg = smoke_config(dir);
  cfg.save((fs::path(dir) / "resolved_config.json").string());
  CHECK_THROWS_WITH_AS(cmd_evaluate(dir), doctest::Contains("predictions"),
                       mmpred::pipeline_error);
  CHECK_THROWS_WITH_AS(cmd_explain(dir), doctest::Contains("intermediate-fusion checkpoint"),
                       mmpred::pipeline_error);
  fs::remove_all(dir);
}

TEST_CASE("nested mode pools predictions over every patient") {
  const std::string dir = "pipe_nested_run";
  fs::remove_all(dir);
  RunConfig cfg = smoke_config(dir);
  cfg.n_patients = 60;
  cfg.split.mode = mmpred::eval::SplitMode::nested;
  cfg.split.outer_folds = 3;
  cfg.split.inner_folds = 3;
  cfg.train.max_epochs = 4;
  cmd_train(cfg);
  const std::string preds = slurp(fs::path(dir) / "predictions.csv");
  const size_t n_lines = std::count(preds.begin(), preds.end(), '\n');
  CHECK(n_lines == 61);  // header + one row per patient

  cmd_evaluate(dir);
  for (const char* f : {"results.csv", "results_formatted.csv", "rank_friedman.csv",
                        "rank_nemenyi.csv", "rank_mean.csv", "cd_diagram.svg"}) {
    CHECK_MESSAGE(fs::exists(fs::path(dir) / f), f);
  }
  const std::string formatted = slurp(fs::path(dir) / "results_formatted.csv");
  CHECK(formatted.find('[') != std::string::npos);  // "0.735 [0.562, 0.845]"-style cells

  // The explain stage runs off fold-0 artifacts in nested mode.
  cmd_explain(dir);
  for (const char* f : {"attributions.csv", "modality_relevance.svg", "perturbation.csv",
                        "results_censored.csv"}) {
    CHECK_MESSAGE(fs::exists(fs::path(dir) / f), f);
  }
  cmd_report(dir);
  CHECK(fs::exists(fs::path(dir) / "report.md"));
  fs::remove_all(dir);
}

TEST_CASE("generate command writes fixture-shaped cohort files deterministically") {
  RunConfig cfg;
  cfg.fixture = "lung-like";
  cfg.seed = 1;
  cmd_generate(cfg, "lung_smoke.jsonl");
  const std::string a = slurp("lung_smoke.jsonl");
  CHECK(std::count(a.begin(), a.end(), '\n') == 870);
  cmd_generate(cfg, "lung_smoke2.jsonl");
  CHECK(slurp("lung_smoke2.jsonl") == a);  // identical file content on rerun
  fs::remove("lung_smoke.jsonl");
  fs::remove("lung_smoke2.jsonl");
}

TEST_CASE("selection log carries one row per grid point per modality") {
  const std::string dir = "pipe_sel_run";
  fs::remove_all(dir);
  RunConfig cfg = smoke_config(dir);
  cmd_train(cfg);
  const std::string log = slurp(fs::path(dir) / "selection_log.csv");
  // Quick grid: one point per kind. Tabular zoo appears for static and ef.
  for (const char* kind : {"knn", "logreg", "gbt", "rforest", "mlp", "rocket", "c22features",
                           "gru_rnn", "text_encoder"}) {
    CHECK_MESSAGE(log.find(kind) != std::string::npos, kind);
  }
  CHECK(log.find("winner") != std::string::npos);
  // Winner per modality is the max mean validation AUPRC among its rows.
  std::istringstream is(log);
  std::string line;
  std::getline(is, line);  // header
  std::map<std::string, double> best;
  std::map<std::string, double> winner_score;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 6 || cells[0] != "unimodal+ef") continue;
    const double score = std::stod(cells[4]);
    best[cells[1]] = std::max(best.count(cells[1]) ? best[cells[1]] : -1.0, score);
    if (cells[5] == "winner") winner_score[cells[1]] = score;
  }
  REQUIRE(winner_score.size() == 5);
  for (const auto& [modality, score] : winner_score) {
    CHECK(score == doctest::Approx(best[modality]));
  }
  fs::remove_all(dir);
}
