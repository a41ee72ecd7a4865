// mmpred: batch CLI for the multimodal metastasis-risk pipeline.
// Commands: generate | train | evaluate | explain | report.
// Exit codes: 0 success, 2 configuration error, 3 pipeline error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mmpred/error.hpp"
#include "mmpred/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using mmpred::pipeline::RunConfig;

// Relative output paths live under MMPRED_OUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("MMPRED_OUT_ROOT");
  if (!root || *root == '\0' || fs::path(path).is_absolute()) return path;
  return (fs::path(root) / path).string();
}

void add_config_options(CLI::App* cmd, RunConfig& cfg, std::string& config_file) {
  cmd->add_option("--config", config_file, "JSON config file (flags override its values)");
  cmd->add_option("--fixture", cfg.fixture,
                  "cohort fixture: breast-like|colon-like|lung-like|prostate-like");
  cmd->add_option("--cohort", cfg.cohort_file, "existing cohort .jsonl file");
  cmd->add_option("--n", cfg.n_patients, "ad-hoc cohort size");
  cmd->add_option("--pos-frac", cfg.positive_fraction, "ad-hoc positive fraction");
  cmd->add_option("--seed", cfg.seed, "global seed");
  cmd->add_option("--mode", [&cfg](const std::vector<std::string>& vals) {
        if (vals.empty()) return false;
        if (vals[0] == "nested") {
          cfg.split.mode = mmpred::eval::SplitMode::nested;
        } else if (vals[0] == "tripod2a") {
          cfg.split.mode = mmpred::eval::SplitMode::tripod2a;
        } else {
          return false;
        }
        return true;
      },
      "validation design: tripod2a (default) or nested");
  cmd->add_option("--out", cfg.out_dir, "output run directory");
  cmd->add_option("--jobs", cfg.jobs, "worker threads (0 = logical cores)");
  cmd->add_option("--max-epochs", cfg.train.max_epochs, "training epoch cap");
  cmd->add_option("--patience", cfg.train.patience, "early-stopping patience");
  cmd->add_option("--lr", cfg.train.lr, "optimizer learning rate");
  cmd->add_option("--batch-size", cfg.train.batch_size, "minibatch size");
  cmd->add_option("--max-tokens", cfg.max_tokens, "flattened note stream cap");
  cmd->add_option("--tokenizer-vocab", cfg.tokenizer_vocab, "wordpiece vocabulary size");
  cmd->add_option("--text-d-model", cfg.train.text_d_model, "text encoder width");
  cmd->add_option("--text-blocks", cfg.train.text_blocks, "transformer blocks");
  cmd->add_option("--text-heads", cfg.train.text_heads, "attention heads");
  cmd->add_option("--text-ffn", cfg.train.text_ffn, "transformer FFN width");
  cmd->add_flag("--text-pretrain", cfg.train.text_pretrain,
                "masked-token pretraining pass before supervised fitting");
  cmd->add_flag("--quick-grid", cfg.quick_grid,
                "one default grid point per model kind (smoke runs)");
  cmd->add_option("--explain-samples", cfg.explain_samples, "patients to explain");
  cmd->add_option("--shap-coalitions", cfg.shap_coalitions, "sampled SHAP coalitions");
  cmd->add_option("--bootstrap", cfg.bootstrap_resamples, "bootstrap resamples for CIs");
  cmd->add_option("--rank-blocks", cfg.rank_blocks, "bootstrap blocks for rank statistics");
}

RunConfig merge_config(const std::string& config_file, const RunConfig& flag_values,
                       const CLI::App* cmd) {
  if (config_file.empty()) return flag_values;
  RunConfig merged = RunConfig::load(config_file);
  // CLI flags beat file values when the user actually passed them.
  RunConfig out = merged;
  auto passed = [&](const std::string& name) { return cmd->count(name) > 0; };
  if (passed("--fixture")) out.fixture = flag_values.fixture;
  if (passed("--cohort")) out.cohort_file = flag_values.cohort_file;
  if (passed("--n")) out.n_patients = flag_values.n_patients;
  if (passed("--pos-frac")) out.positive_fraction = flag_values.positive_fraction;
  if (passed("--seed")) out.seed = flag_values.seed;
  if (passed("--mode")) out.split.mode = flag_values.split.mode;
  if (passed("--out")) out.out_dir = flag_values.out_dir;
  if (passed("--jobs")) out.jobs = flag_values.jobs;
  if (passed("--max-epochs")) out.train.max_epochs = flag_values.train.max_epochs;
  if (passed("--patience")) out.train.patience = flag_values.train.patience;
  if (passed("--lr")) out.train.lr = flag_values.train.lr;
  if (passed("--batch-size")) out.train.batch_size = flag_values.train.batch_size;
  if (passed("--max-tokens")) out.max_tokens = flag_values.max_tokens;
  if (passed("--tokenizer-vocab")) out.tokenizer_vocab = flag_values.tokenizer_vocab;
  if (passed("--text-d-model")) out.train.text_d_model = flag_values.train.text_d_model;
  if (passed("--text-blocks")) out.train.text_blocks = flag_values.train.text_blocks;
  if (passed("--text-heads")) out.train.text_heads = flag_values.train.text_heads;
  if (passed("--text-ffn")) out.train.text_ffn = flag_values.train.text_ffn;
  if (passed("--text-pretrain")) out.train.text_pretrain = flag_values.train.text_pretrain;
  if (passed("--quick-grid")) out.quick_grid = flag_values.quick_grid;
  if (passed("--explain-samples")) out.explain_samples = flag_values.explain_samples;
  if (passed("--shap-coalitions")) out.shap_coalitions = flag_values.shap_coalitions;
  if (passed("--bootstrap")) out.bootstrap_resamples = flag_values.bootstrap_resamples;
  if (passed("--rank-blocks")) out.rank_blocks = flag_values.rank_blocks;
  out.split.seed = out.seed;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal metastasis-risk pipeline (synthetic cohorts)"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_file;
  std::string generate_output = "cohort.jsonl";
  std::string run_dir;

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic cohort file");
  add_config_options(generate, cfg, config_file);
  generate->add_option("-o,--output", generate_output, "cohort output path");

  CLI::App* train = app.add_subcommand("train", "three-stage training schedule");
  add_config_options(train, cfg, config_file);

  CLI::App* evaluate = app.add_subcommand("evaluate", "metrics (+CIs and rank stats in nested mode)");
  evaluate->add_option("--run-dir", run_dir, "trained run directory")->required();

  CLI::App* explain = app.add_subcommand("explain", "SHAP, faithfulness curves, censored re-test");
  explain->add_option("--run-dir", run_dir, "trained run directory")->required();

  CLI::App* rep = app.add_subcommand("report", "aggregate run artifacts into report.md");
  rep->add_option("--run-dir", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      const RunConfig resolved = merge_config(config_file, cfg, generate);
      mmpred::pipeline::cmd_generate(resolved, resolve_out(generate_output));
    } else if (train->parsed()) {
      RunConfig resolved = merge_config(config_file, cfg, train);
      resolved.out_dir = resolve_out(resolved.out_dir);
      resolved.split.seed = resolved.seed;
      mmpred::pipeline::cmd_train(resolved);
    } else if (evaluate->parsed()) {
      mmpred::pipeline::cmd_evaluate(resolve_out(run_dir));
    } else if (explain->parsed()) {
      mmpred::pipeline::cmd_explain(resolve_out(run_dir));
    } else if (rep->parsed()) {
      mmpred::pipeline::cmd_report(resolve_out(run_dir));
    }
  } catch (const mmpred::config_error& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "pipeline error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
