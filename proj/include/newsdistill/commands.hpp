#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "newsdistill/bench.hpp"
#include "newsdistill/config.hpp"
#include "newsdistill/gradcheck.hpp"
#include "newsdistill/tasks.hpp"

namespace newsdistill {

struct StepRecord {
  int phase = 0;
  StepReport report;
};

// Everything one training run produced. Artifacts under config.out_dir:
//   steps.jsonl   one line per optimizer step
//   metrics.json  per-epoch validation, best epoch, test metrics
//   best.ckpt     best validation checkpoint of the deliverable model
//   final.ckpt    state after the last epoch
//   config.txt    the effective configuration
//   vocab.txt     MIND runs without a given vocabulary
struct TrainRun {
  RunConfig config;  // effective configuration (vocab size filled in)
  tasks::TrainState state;
  std::vector<StepRecord> steps;
  std::vector<tasks::EpochReport> epochs;
  std::vector<tasks::ModelMetrics> test;       // final models
  std::vector<tasks::ModelMetrics> best_test;  // models of best.ckpt
};

TrainRun run_train(const RunConfig& config, std::ostream* log = nullptr);

// Evaluates a checkpoint with dropout off. The data comes from data_config when
// given, otherwise from the configuration stored in the checkpoint. Writes
// eval_<split>.json under out_dir.
std::vector<tasks::ModelMetrics> run_eval(const std::filesystem::path& checkpoint, const RunConfig* data_config,
                                          const std::string& split, const std::filesystem::path& out_dir,
                                          std::ostream* log = nullptr);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const;
};

struct TableRun {
  Table table;
  std::vector<TrainRun> runs;  // one per row
};

// One run per beta in config.sweep_betas under out_dir/beta_<beta>/; writes sweep_beta.csv.
TableRun run_sweep_beta(const RunConfig& config, std::ostream* log = nullptr);

// Full model and the three single-removal variants under out_dir/ablate/<variant>/;
// writes ablation.csv.
TableRun run_ablate(const RunConfig& config, std::ostream* log = nullptr);

// Writes gradcheck.json.
std::vector<GradcheckResult> run_gradcheck(const RunConfig& config, std::ostream* log = nullptr);

// Writes bench.json.
BenchReport run_bench(const RunConfig& config, std::ostream* log = nullptr);

// One steps.jsonl line.
std::string step_json(const StepRecord& step);

}  // namespace newsdistill
