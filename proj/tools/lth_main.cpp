#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lth/errors.hpp"
#include "lth/harness.hpp"

namespace {

int run_command(const std::string& config_path, const std::string& out_dir) {
  lth::ExperimentConfig cfg = lth::parse_config_file(config_path);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  lth::RunLedger ledger = lth::run_lth(cfg);
  std::cout << "wrote " << (cfg.output_dir / "ledger.csv").string() << " ("
            << ledger.rows.size() << " rows)"
            << (ledger.warning ? " [partial: prune exhausted]" : "") << "\n";
  return 0;
}

int transfer_command(const std::string& source_dir,
                     const std::string& config_path, bool random_ticket) {
  lth::ExperimentConfig cfg = lth::parse_config_file(config_path);
  lth::RunLedger ledger = lth::run_transfer(source_dir, cfg, random_ticket);
  std::cout << "wrote " << (cfg.output_dir / "transfer_ledger.csv").string()
            << " (" << ledger.rows.size() << " rows)\n";
  return 0;
}

int metrics_command(const std::string& pred_path, std::size_t bins,
                    bool nll_as_sum) {
  lth::PredictionSet preds = lth::load_predictions(pred_path);
  double nll = nll_as_sum ? lth::nll_sum(preds) : lth::nll_mean(preds);
  std::printf("%.6f,%.6f,%.6f,%.6f\n", lth::accuracy(preds),
              lth::ece(preds, bins).ece, nll, lth::brier(preds));
  return 0;
}

int plot_command(const std::vector<std::string>& ledgers,
                 const std::string& out_dir) {
  std::vector<std::filesystem::path> paths(ledgers.begin(), ledgers.end());
  lth::emit_plots(paths, out_dir);
  std::cout << "wrote accuracy/ece/nll/brier SVGs under " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lottery-ticket training with calibration strategies"};
  app.require_subcommand(1);

  std::string config_path, out_dir, source_dir, pred_path;
  std::vector<std::string> ledgers;
  std::size_t bins = 15;
  bool random_ticket = false;
  bool nll_as_sum = false;

  auto* run = app.add_subcommand("run", "Iterative magnitude pruning run");
  run->add_option("--config", config_path, "experiment config file")
      ->required();
  run->add_option("--out", out_dir, "override output directory");

  auto* transfer =
      app.add_subcommand("transfer", "Retrain source tickets on a new dataset");
  transfer->add_option("--source", source_dir, "source run directory")
      ->required();
  transfer->add_option("--config", config_path, "target experiment config")
      ->required();
  transfer->add_flag("--random-ticket", random_ticket,
                     "random reinit at matched sparsity (control arm)");

  auto* metrics = app.add_subcommand("metrics", "Evaluate a prediction dump");
  metrics->add_option("--pred", pred_path, "prediction dump JSON")->required();
  metrics->add_option("--bins", bins, "ECE bin count");
  metrics->add_flag("--nll-sum", nll_as_sum, "report NLL sum instead of mean");

  auto* plot = app.add_subcommand("plot", "Render ledger CSVs as SVG charts");
  plot->add_option("--ledger", ledgers, "ledger CSV (repeatable)")->required();
  plot->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(run)) return run_command(config_path, out_dir);
    if (app.got_subcommand(transfer)) {
      return transfer_command(source_dir, config_path, random_ticket);
    }
    if (app.got_subcommand(metrics)) {
      return metrics_command(pred_path, bins, nll_as_sum);
    }
    if (app.got_subcommand(plot)) return plot_command(ledgers, out_dir);
  } catch (const lth::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const lth::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const lth::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const lth::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
