#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "lth/errors.hpp"
#include "lth/harness.hpp"
#include "test_helpers.hpp"

using namespace lth;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_blob_config(const fs::path& out) {
  ExperimentConfig cfg;
  cfg.dataset.kind = DatasetKind::Blobs;
  cfg.dataset.classes = 3;
  cfg.dataset.per_class_n = 40;
  cfg.dataset.test_per_class_n = 20;
  cfg.dataset.dim = 8;
  cfg.dataset.separation = 3.0;
  cfg.dataset.blob_seed = 3;
  cfg.network.layer_dims = {8, 12, 3};
  cfg.network.dropout_rate = 0.0;
  cfg.optimizer.kind = OptimKind::Adam;
  cfg.optimizer.lr = 5e-3;
  cfg.epochs = 3;
  cfg.batch_size = 20;
  cfg.prune.mode = PruneMode::Local;
  cfg.prune.per_iter_ratio = 0.2;
  cfg.prune.last_layer_ratio = 0.1;
  cfg.prune.iterations = 2;
  cfg.seed = 17;
  cfg.output_dir = out;
  return cfg;
}

}  // namespace

TEST_CASE("config parsing covers every section") {
  std::string text = R"(
# comment line
dataset.kind = blobs
dataset.classes = 4
dataset.per_class_n = 50
dataset.dim = 16
dataset.separation = 2.5
dataset.blob_seed = 9
dataset.half = a
dataset.split_seed = 3
network.layer_dims = 16,8,4
network.dropout_rate = 0.1
optimizer.kind = sgd
optimizer.lr = 0.05
optimizer.momentum = 0.8
optimizer.weight_decay = 0.0001
optimizer.milestones = 10:0.1,20:0.1
epochs = 7
batch_size = 25
strategy.kind = nba
strategy.gamma_n = 0.2
strategy.nba_bins = 8
prune.mode = global
prune.per_iter_ratio = 0.25
prune.protected_layers = 1
prune.iterations = 4
prune.reinit = random
eval_bins = 12
seed = 99
output_dir = /tmp/lth_cfg_run
)";
  ExperimentConfig cfg = parse_config_text(text);
  CHECK(cfg.dataset.kind == DatasetKind::Blobs);
  CHECK(cfg.dataset.classes == 4);
  CHECK(cfg.dataset.half == HalfSelect::A);
  CHECK(cfg.dataset.split_seed == 3);
  CHECK(cfg.network.layer_dims == std::vector<std::size_t>{16, 8, 4});
  CHECK(cfg.network.dropout_rate == 0.1);
  CHECK(cfg.optimizer.kind == OptimKind::Sgd);
  CHECK(cfg.optimizer.lr == 0.05);
  CHECK(cfg.optimizer.momentum == 0.8);
  REQUIRE(cfg.optimizer.milestones.size() == 2);
  CHECK(cfg.optimizer.milestones[0] == std::pair<std::size_t, double>{10, 0.1});
  CHECK(cfg.epochs == 7);
  CHECK(cfg.batch_size == 25);
  CHECK(cfg.strategy.kind == StrategyKind::Nba);
  CHECK(cfg.strategy.gamma_n == 0.2);
  CHECK(cfg.strategy.nba_bins == 8);
  CHECK(cfg.prune.mode == PruneMode::Global);
  CHECK(cfg.prune.protected_layers == std::set<std::size_t>{1});
  CHECK(cfg.prune.reinit == ReinitMode::Random);
  CHECK(cfg.eval_bins == 12);
  CHECK(cfg.seed == 99);
  CHECK(cfg.output_dir == fs::path("/tmp/lth_cfg_run"));
}

TEST_CASE("config parser rejects unknown keys and bad values") {
  CHECK_THROWS_AS(parse_config_text("nonsense.key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("epochs = banana\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("network.layer_dims = 5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_file("/nonexistent/config.cfg"), IoError);
}

TEST_CASE("csv emit and load round-trip") {
  RunLedger ledger;
  LedgerRow r0;
  r0.iteration = 0;
  r0.remaining_weights_pct = 100.0;
  r0.accuracy = 0.912345;
  r0.ece = 0.034567;
  r0.nll_mean = 0.254321;
  r0.brier = 0.141414;
  r0.strategy = "none";
  r0.reinit_mode = "rewind";
  r0.seed = 17;
  r0.wall_seconds = 1.25;
  LedgerRow r1 = r0;
  r1.iteration = 1;
  r1.remaining_weights_pct = 80.123456;
  ledger.rows = {r0, r1};

  fs::path p = fs::temp_directory_path() / "lth_test_ledger.csv";
  emit_csv(ledger, p);
  std::string text = slurp(p);

  // 2 rows -> 3 lines, LF endings, exact header.
  CHECK(text.find('\r') == std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  CHECK(text.rfind("iteration,remaining_weights_pct,accuracy,ece,nll_mean,"
                   "brier,strategy,reinit_mode,seed,wall_seconds\n", 0) == 0);
  CHECK(text.find("80.123456") != std::string::npos);

  RunLedger back = load_csv(p);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[1].remaining_weights_pct ==
        doctest::Approx(80.123456).epsilon(1e-9));
  CHECK(back.rows[0].accuracy == doctest::Approx(0.912345).epsilon(1e-9));
  CHECK(back.rows[0].strategy == "none");
  CHECK(back.rows[0].seed == 17);
  fs::remove(p);

  RunLedger empty;
  CHECK_THROWS_AS(emit_csv(empty, p), DataError);
  CHECK_THROWS_AS(load_csv("/nonexistent/ledger.csv"), IoError);
}

TEST_CASE("csv grows a source_run column for transfer rows") {
  RunLedger ledger;
  LedgerRow r;
  r.strategy = "lwcc";
  r.reinit_mode = "rewind";
  r.source_run = "runs/source";
  ledger.rows = {r};
  fs::path p = fs::temp_directory_path() / "lth_test_ledger2.csv";
  emit_csv(ledger, p);
  std::string text = slurp(p);
  CHECK(text.find(",source_run\n") != std::string::npos);
  CHECK(text.find("runs/source") != std::string::npos);
  RunLedger back = load_csv(p);
  CHECK(back.rows[0].source_run == "runs/source");
  fs::remove(p);
}

TEST_CASE("predictions json canonical text and round-trip") {
  PredictionSet one;
  one.probs = Matrix::from_data(1, 2, {0.75, 0.25});
  one.labels = {1};
  fs::path p = fs::temp_directory_path() / "lth_test_preds.json";
  emit_predictions(one, p);
  CHECK(slurp(p) ==
        "{\"num_classes\":2,\"samples\":[{\"probs\":[0.75,0.25],"
        "\"label\":1}]}");
  PredictionSet back = load_predictions(p);
  CHECK(back.probs == one.probs);
  CHECK(back.labels == one.labels);
  fs::remove(p);

  // Rows must sum to 1 on read.
  std::ofstream(p) << "{\"num_classes\":2,\"samples\":[{\"probs\":[0.5,0.3],"
                      "\"label\":0}]}";
  CHECK_THROWS_AS(load_predictions(p), DataError);
  std::ofstream(p) << "not json";
  CHECK_THROWS_AS(load_predictions(p), FormatError);
  fs::remove(p);
}

TEST_CASE("predictions round-trip preserves metrics within 1e-9") {
  PredictionSet ps;
  ps.probs = lth::test::random_probs(30, 4, 401);
  RandomStream rng(402);
  ps.labels.resize(30);
  for (auto& y : ps.labels) y = static_cast<int>(rng.uniform() * 4) % 4;
  fs::path p = fs::temp_directory_path() / "lth_test_preds2.json";
  emit_predictions(ps, p);
  PredictionSet back = load_predictions(p);
  CHECK(std::abs(ece(back, 15).ece - ece(ps, 15).ece) < 1e-9);
  CHECK(std::abs(nll_mean(back) - nll_mean(ps)) < 1e-9);
  CHECK(std::abs(brier(back) - brier(ps)) < 1e-9);
  CHECK(accuracy(back) == accuracy(ps));
  fs::remove(p);
}

TEST_CASE("run_lth produces the full artifact set and a coherent ledger") {
  fs::path out = scratch_dir("lth_test_run");
  ExperimentConfig cfg = tiny_blob_config(out);
  RunLedger ledger = run_lth(cfg);

  REQUIRE(ledger.rows.size() == 3);  // dense + 2 tickets
  CHECK(ledger.rows[0].remaining_weights_pct == doctest::Approx(100.0));
  CHECK(ledger.rows[1].remaining_weights_pct <
        ledger.rows[0].remaining_weights_pct);
  CHECK(ledger.rows[2].remaining_weights_pct <
        ledger.rows[1].remaining_weights_pct);
  CHECK(ledger.rows[0].strategy == "none");
  CHECK(ledger.rows[0].reinit_mode == "rewind");

  CHECK(fs::exists(out / "ledger.csv"));
  CHECK(fs::exists(out / "init_params.lthp"));
  for (int i = 0; i <= 2; ++i) {
    char mask_name[32], pred_name[32];
    std::snprintf(mask_name, sizeof mask_name, "mask_iter_%03d.lthm", i);
    std::snprintf(pred_name, sizeof pred_name, "preds_iter_%03d.json", i);
    CHECK(fs::exists(out / mask_name));
    CHECK(fs::exists(out / pred_name));
  }

  // Ledger metrics reproduce from the dumped predictions.
  PredictionSet preds = load_predictions(out / "preds_iter_002.json");
  CHECK(ledger.rows[2].accuracy ==
        doctest::Approx(accuracy(preds)).epsilon(1e-9));
  CHECK(ledger.rows[2].ece ==
        doctest::Approx(ece(preds, cfg.eval_bins).ece).epsilon(1e-9));
  CHECK(ledger.rows[2].nll_mean ==
        doctest::Approx(nll_mean(preds)).epsilon(1e-9));
  CHECK(ledger.rows[2].brier == doctest::Approx(brier(preds)).epsilon(1e-9));

  // Mask sparsity matches the ledger column.
  Mask m2 = load_mask(out / "mask_iter_002.lthm");
  CHECK(ledger.rows[2].remaining_weights_pct ==
        doctest::Approx(100.0 * sparsity(m2)).epsilon(1e-9));

  // Determinism: a rerun reproduces everything except wall_seconds.
  fs::path out2 = scratch_dir("lth_test_run_b");
  ExperimentConfig cfg2 = tiny_blob_config(out2);
  RunLedger again = run_lth(cfg2);
  REQUIRE(again.rows.size() == ledger.rows.size());
  for (std::size_t i = 0; i < again.rows.size(); ++i) {
    CHECK(again.rows[i].accuracy == ledger.rows[i].accuracy);
    CHECK(again.rows[i].ece == ledger.rows[i].ece);
    CHECK(again.rows[i].nll_mean == ledger.rows[i].nll_mean);
    CHECK(again.rows[i].brier == ledger.rows[i].brier);
  }
  CHECK(slurp(out / "mask_iter_002.lthm") == slurp(out2 / "mask_iter_002.lthm"));
  fs::remove_all(out);
  fs::remove_all(out2);
}

TEST_CASE("transfer of an all-ones ticket equals a native dense run") {
  fs::path src = scratch_dir("lth_test_src");
  ExperimentConfig cfg = tiny_blob_config(src);
  cfg.prune.iterations = 1;
  run_lth(cfg);

  fs::path dst = scratch_dir("lth_test_dst");
  ExperimentConfig target = tiny_blob_config(dst);
  target.prune.iterations = 1;
  target.dataset.blob_seed = 3;  // same target data
  RunLedger tl = run_transfer(src, target, false);
  REQUIRE(tl.rows.size() == 2);
  CHECK(!tl.rows[0].source_run.empty());
  CHECK(fs::exists(dst / "transfer_ledger.csv"));

  // Row 0 retrains the identity (all-ones) ticket from the source init,
  // which is exactly what the native dense run did. The native ledger is
  // read back from CSV, hence the 6-decimal tolerance.
  RunLedger native = load_csv(src / "ledger.csv");
  CHECK(tl.rows[0].accuracy ==
        doctest::Approx(native.rows[0].accuracy).epsilon(2e-6));
  CHECK(tl.rows[0].nll_mean ==
        doctest::Approx(native.rows[0].nll_mean).epsilon(2e-6));

  // Sparsities line up per iteration.
  CHECK(tl.rows[1].remaining_weights_pct ==
        doctest::Approx(native.rows[1].remaining_weights_pct).epsilon(2e-6));

  // Mismatched architecture is refused.
  ExperimentConfig bad = tiny_blob_config(dst);
  bad.network.layer_dims = {8, 9, 3};
  CHECK_THROWS_AS(run_transfer(src, bad, false), ConfigError);
  CHECK_THROWS_AS(run_transfer("/nonexistent/run", target, false), IoError);
  fs::remove_all(src);
  fs::remove_all(dst);
}

TEST_CASE("plots: one polyline per strategy, well-formed output") {
  RunLedger a;
  for (int i = 0; i < 2; ++i) {
    LedgerRow r;
    r.iteration = static_cast<std::size_t>(i);
    r.remaining_weights_pct = 100.0 - 20.0 * i;
    r.accuracy = 0.9 - 0.01 * i;
    r.ece = 0.05;
    r.nll_mean = 0.3;
    r.brier = 0.2;
    r.strategy = "none";
    r.reinit_mode = "rewind";
    a.rows.push_back(r);
  }
  RunLedger b = a;
  for (auto& r : b.rows) r.strategy = "lwcc";

  fs::path dir = scratch_dir("lth_test_plots");
  fs::path la = dir / "a.csv";
  fs::path lb = dir / "b.csv";
  emit_csv(a, la);
  emit_csv(b, lb);

  emit_plots({la}, dir);
  std::string one = slurp(dir / "accuracy.svg");
  auto count_of = [](const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (std::size_t at = text.find(needle); at != std::string::npos;
         at = text.find(needle, at + needle.size())) {
      ++n;
    }
    return n;
  };
  CHECK(count_of(one, "<polyline") == 1);

  emit_plots({la, lb}, dir);
  for (const char* name : {"accuracy.svg", "ece.svg", "nll.svg", "brier.svg"}) {
    std::string svg = slurp(dir / name);
    CHECK(count_of(svg, "<polyline") == 2);
    CHECK(svg.rfind("<?xml", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    // Tag balance as a cheap well-formedness proxy.
    CHECK(count_of(svg, "<svg") == count_of(svg, "</svg>"));
    CHECK(count_of(svg, "<text") == count_of(svg, "</text>"));
    // Legend names both strategies.
    CHECK(svg.find("none") != std::string::npos);
    CHECK(svg.find("lwcc") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("LTH_THREADS caps evaluation workers without changing results") {
  Dataset ds = synthetic_blobs(3, 60, 8, 3.0, 21);
  NetworkSpec spec{.layer_dims = {8, 10, 3}, .dropout_rate = 0.0, .seed = 2};
  ParamSet params = init_network(spec);
  Mask mask = Mask::ones_like(spec);

  setenv("LTH_THREADS", "1", 1);
  PredictionSet serial = evaluate(params, mask, ds);
  setenv("LTH_THREADS", "4", 1);
  PredictionSet parallel = evaluate(params, mask, ds);
  unsetenv("LTH_THREADS");
  CHECK(serial.probs == parallel.probs);
  CHECK(serial.labels == parallel.labels);
}
