#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lth/calib.hpp"
#include "lth/data.hpp"
#include "lth/metrics.hpp"
#include "lth/network.hpp"
#include "lth/optimizer.hpp"
#include "lth/pruning.hpp"

namespace lth {

enum class OptimKind { Adam, Sgd };

struct OptimizerConfig {
  OptimKind kind = OptimKind::Adam;
  double lr = 1e-4;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<std::pair<std::size_t, double>> milestones;
};

enum class DatasetKind { Idx, Blobs };
enum class HalfSelect { None, A, B };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::Blobs;
  // idx
  std::filesystem::path train_images, train_labels;
  std::filesystem::path test_images, test_labels;
  // blobs
  std::size_t classes = 10;
  std::size_t per_class_n = 500;
  std::size_t test_per_class_n = 200;
  std::size_t dim = 784;
  double separation = 3.0;
  std::uint64_t blob_seed = 1;
  // optional class-balanced half split of the training set
  HalfSelect half = HalfSelect::None;
  std::uint64_t split_seed = 0;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  NetworkSpec network;
  OptimizerConfig optimizer;
  std::size_t epochs = 10;
  std::size_t batch_size = 60;
  StrategySpec strategy;
  PruneConfig prune;
  std::size_t eval_bins = 15;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "lth_run";

  void validate() const;
};

// Flat "key = value" text; '#' starts a comment. Unknown keys are
// rejected.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::filesystem::path& path);

struct LedgerRow {
  std::size_t iteration = 0;
  double remaining_weights_pct = 100.0;
  double accuracy = 0.0;
  double ece = 0.0;
  double nll_mean = 0.0;
  double brier = 0.0;
  std::string strategy;
  std::string reinit_mode;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
  std::string source_run;  // transfer runs only
};

struct RunLedger {
  std::vector<LedgerRow> rows;
  bool warning = false;  // prune exhaustion produced a partial ledger
};

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

TrainTestSplit load_experiment_data(const DatasetConfig& cfg);

// Full training loop (epochs x batches) for the configured strategy and
// optimizer; deterministic per (config, rng_stream).
void train_model(ParamSet& params, const Mask& mask, const Dataset& train,
                 const ExperimentConfig& cfg, std::uint64_t rng_stream);

// Deterministic single-pass evaluation, dropout off. Honors LTH_THREADS.
PredictionSet evaluate(const ParamSet& params, const Mask& mask,
                       const Dataset& test);

// The iterative magnitude pruning loop: train dense, then per iteration
// prune / reinit / retrain / evaluate. Writes ledger.csv, init_params.lthp,
// mask_iter_*.lthm and preds_iter_*.json under cfg.output_dir.
RunLedger run_lth(const ExperimentConfig& cfg);

// Retrains each source-iteration ticket (mask (.) source theta_i) on the
// target dataset. random_ticket reinitializes at matched sparsity.
RunLedger run_transfer(const std::filesystem::path& source_dir,
                       const ExperimentConfig& cfg, bool random_ticket);

// Header exactly: iteration,remaining_weights_pct,accuracy,ece,nll_mean,
// brier,strategy,reinit_mode,seed,wall_seconds (plus ,source_run when any
// row carries one). Floats at 6 decimals, LF endings, atomic write.
void emit_csv(const RunLedger& ledger, const std::filesystem::path& path);
RunLedger load_csv(const std::filesystem::path& path);

void emit_predictions(const PredictionSet& preds,
                      const std::filesystem::path& path);
PredictionSet load_predictions(const std::filesystem::path& path);

// Four SVGs (accuracy/ece/nll/brier vs remaining % descending), one
// polyline per strategy, drawn without external assets.
void emit_plots(const std::vector<std::filesystem::path>& ledger_paths,
                const std::filesystem::path& out_dir);

}  // namespace lth
