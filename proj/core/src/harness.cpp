#include "lth/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "lth/errors.hpp"
#include "lth/train.hpp"

namespace lth {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, delim)) out.push_back(trim(item));
  return out;
}

class KeyValueConfig {
 public:
  explicit KeyValueConfig(const std::string& text) {
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": expected key = value");
      }
      values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
  }

  bool has(const std::string& key) const { return values_.contains(key); }

  std::string str(const std::string& key, const std::string& def) {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }

  double num(const std::string& key, double def) {
    std::string v = str(key, "");
    if (v.empty()) return def;
    try {
      std::size_t pos = 0;
      double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config: bad numeric value for " + key + ": " + v);
    }
  }

  std::size_t count(const std::string& key, std::size_t def) {
    double d = num(key, static_cast<double>(def));
    if (d < 0 || d != std::floor(d)) {
      throw ConfigError("config: " + key + " must be a non-negative integer");
    }
    return static_cast<std::size_t>(d);
  }

  bool flag(const std::string& key, bool def) {
    std::string v = str(key, def ? "true" : "false");
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("config: bad boolean for " + key + ": " + v);
  }

  void reject_unknown() const {
    for (const auto& [k, _] : values_) {
      if (!consumed_.contains(k)) {
        throw ConfigError("config: unknown key: " + k);
      }
    }
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

// Stream ids for deriving per-purpose random streams from the run seed.
constexpr std::uint64_t kTrainStreamBase = 0x7e41;

NetworkSpec effective_network(const ExperimentConfig& cfg) {
  NetworkSpec spec = cfg.network;
  spec.seed = cfg.seed;
  if (cfg.strategy.uses_stochastic_inference()) {
    spec.dropout_rate = cfg.strategy.dropout_rate;
  }
  return spec;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::size_t worker_count() {
  const char* env = std::getenv("LTH_THREADS");
  if (env == nullptr) return 1;
  long n = std::strtol(env, nullptr, 10);
  return n < 1 ? 1 : static_cast<std::size_t>(n);
}

void atomic_write_text(const std::filesystem::path& path,
                       const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out << content;
    if (!out) throw IoError("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void ExperimentConfig::validate() const {
  network.validate();
  strategy.validate();
  prune.validate();
  if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (eval_bins < 1) throw ConfigError("config: eval_bins must be >= 1");
  if (optimizer.lr <= 0.0) throw ConfigError("config: optimizer.lr must be > 0");
}

ExperimentConfig parse_config_text(const std::string& text) {
  KeyValueConfig kv(text);
  ExperimentConfig cfg;

  std::string dkind = kv.str("dataset.kind", "blobs");
  if (dkind == "idx") {
    cfg.dataset.kind = DatasetKind::Idx;
  } else if (dkind == "blobs") {
    cfg.dataset.kind = DatasetKind::Blobs;
  } else {
    throw ConfigError("config: dataset.kind must be idx or blobs");
  }
  cfg.dataset.train_images = kv.str("dataset.train_images", "");
  cfg.dataset.train_labels = kv.str("dataset.train_labels", "");
  cfg.dataset.test_images = kv.str("dataset.test_images", "");
  cfg.dataset.test_labels = kv.str("dataset.test_labels", "");
  cfg.dataset.classes = kv.count("dataset.classes", cfg.dataset.classes);
  cfg.dataset.per_class_n = kv.count("dataset.per_class_n", cfg.dataset.per_class_n);
  cfg.dataset.test_per_class_n =
      kv.count("dataset.test_per_class_n", cfg.dataset.test_per_class_n);
  cfg.dataset.dim = kv.count("dataset.dim", cfg.dataset.dim);
  cfg.dataset.separation = kv.num("dataset.separation", cfg.dataset.separation);
  cfg.dataset.blob_seed = kv.count("dataset.blob_seed", cfg.dataset.blob_seed);
  std::string half = kv.str("dataset.half", "none");
  if (half == "none") cfg.dataset.half = HalfSelect::None;
  else if (half == "a") cfg.dataset.half = HalfSelect::A;
  else if (half == "b") cfg.dataset.half = HalfSelect::B;
  else throw ConfigError("config: dataset.half must be none, a or b");
  cfg.dataset.split_seed = kv.count("dataset.split_seed", cfg.dataset.split_seed);

  std::string dims = kv.str("network.layer_dims", "784,300,100,10");
  cfg.network.layer_dims.clear();
  for (const std::string& tok : split(dims, ',')) {
    if (tok.empty()) continue;
    cfg.network.layer_dims.push_back(
        static_cast<std::size_t>(std::stoull(tok)));
  }
  cfg.network.dropout_rate = kv.num("network.dropout_rate", 0.0);

  std::string okind = kv.str("optimizer.kind", "adam");
  if (okind == "adam") cfg.optimizer.kind = OptimKind::Adam;
  else if (okind == "sgd") cfg.optimizer.kind = OptimKind::Sgd;
  else throw ConfigError("config: optimizer.kind must be adam or sgd");
  cfg.optimizer.lr = kv.num("optimizer.lr", 1e-4);
  cfg.optimizer.momentum = kv.num("optimizer.momentum", 0.9);
  cfg.optimizer.weight_decay = kv.num("optimizer.weight_decay", 0.0);
  std::string ms = kv.str("optimizer.milestones", "");
  for (const std::string& tok : split(ms, ',')) {
    if (tok.empty()) continue;
    auto colon = tok.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("config: milestones must be epoch:factor pairs");
    }
    cfg.optimizer.milestones.emplace_back(
        std::stoull(tok.substr(0, colon)), std::stod(tok.substr(colon + 1)));
  }

  cfg.epochs = kv.count("epochs", cfg.epochs);
  cfg.batch_size = kv.count("batch_size", cfg.batch_size);

  cfg.strategy.kind = strategy_from_string(kv.str("strategy.kind", "none"));
  cfg.strategy.stochastic_passes = kv.count("strategy.T", 5);
  cfg.strategy.dropout_rate = kv.num("strategy.dropout_rate", 0.2);
  cfg.strategy.mixup_alpha = kv.num("strategy.mixup_alpha", 0.2);
  cfg.strategy.gamma_d = kv.num("strategy.gamma_d", 0.05);
  cfg.strategy.gamma_n = kv.num("strategy.gamma_n", 0.1);
  cfg.strategy.nba_bins = kv.count("strategy.nba_bins", 10);
  cfg.strategy.nba_bandwidth = kv.num("strategy.nba_bandwidth", 0.05);
  std::string wb = kv.str("strategy.nba_weights", "");
  for (const std::string& tok : split(wb, ',')) {
    if (!tok.empty()) cfg.strategy.nba_weights.push_back(std::stod(tok));
  }
  cfg.strategy.vwcc_alpha_complement =
      kv.flag("strategy.vwcc_alpha_complement", true);

  std::string pmode = kv.str("prune.mode", "local");
  if (pmode == "local") cfg.prune.mode = PruneMode::Local;
  else if (pmode == "global") cfg.prune.mode = PruneMode::Global;
  else throw ConfigError("config: prune.mode must be local or global");
  cfg.prune.per_iter_ratio = kv.num("prune.per_iter_ratio", 0.20);
  cfg.prune.last_layer_ratio = kv.num("prune.last_layer_ratio", 0.10);
  std::string prot = kv.str("prune.protected_layers", "");
  for (const std::string& tok : split(prot, ',')) {
    if (!tok.empty()) cfg.prune.protected_layers.insert(std::stoull(tok));
  }
  cfg.prune.iterations = kv.count("prune.iterations", 1);
  std::string reinit = kv.str("prune.reinit", "rewind");
  if (reinit == "rewind") cfg.prune.reinit = ReinitMode::Rewind;
  else if (reinit == "random") cfg.prune.reinit = ReinitMode::Random;
  else throw ConfigError("config: prune.reinit must be rewind or random");

  cfg.eval_bins = kv.count("eval_bins", 15);
  cfg.seed = kv.count("seed", 1);
  cfg.output_dir = kv.str("output_dir", "lth_run");

  kv.reject_unknown();
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

TrainTestSplit load_experiment_data(const DatasetConfig& cfg) {
  TrainTestSplit data;
  if (cfg.kind == DatasetKind::Idx) {
    data.train = load_idx(cfg.train_images, cfg.train_labels);
    data.test = load_idx(cfg.test_images, cfg.test_labels);
  } else {
    data.train = synthetic_blobs(cfg.classes, cfg.per_class_n, cfg.dim,
                                 cfg.separation, cfg.blob_seed);
    data.test = synthetic_blobs(cfg.classes, cfg.test_per_class_n, cfg.dim,
                                cfg.separation, cfg.blob_seed + 1);
  }
  if (cfg.half != HalfSelect::None) {
    SplitPair pair = split_half_by_class(data.train, cfg.split_seed);
    data.train = cfg.half == HalfSelect::A ? std::move(pair.part_a)
                                           : std::move(pair.part_b);
  }
  return data;
}

void train_model(ParamSet& params, const Mask& mask, const Dataset& train,
                 const ExperimentConfig& cfg, std::uint64_t rng_stream) {
  OptimState state =
      cfg.optimizer.kind == OptimKind::Adam
          ? OptimState(make_adam(params))
          : OptimState(make_sgd(params, cfg.optimizer.momentum,
                                cfg.optimizer.weight_decay,
                                cfg.optimizer.milestones));
  RandomStream rng(cfg.seed, rng_stream);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = lr_for_epoch(cfg.optimizer.lr, cfg.optimizer.milestones, epoch);
    for (const Batch& batch : batch_iter(train, cfg.batch_size, cfg.seed, epoch)) {
      LossGrad lg = loss_and_grad(params, mask, batch, cfg.strategy, rng);
      optimizer_step(params, lg.grads, state, lr, mask);
    }
  }
}

PredictionSet evaluate(const ParamSet& params, const Mask& mask,
                       const Dataset& test) {
  PredictionSet preds;
  preds.labels = test.labels;
  preds.probs = Matrix(test.size(), params.spec().num_classes());

  std::size_t workers = std::min(worker_count(), test.size());
  auto eval_range = [&](std::size_t begin, std::size_t end) {
    Matrix chunk(end - begin, test.dim());
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < test.dim(); ++j) {
        chunk(i - begin, j) = test.features(i, j);
      }
    }
    Matrix probs = forward_probs(params, mask, chunk);
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t k = 0; k < probs.cols(); ++k) {
        preds.probs(i, k) = probs(i - begin, k);
      }
    }
  };

  if (workers <= 1) {
    eval_range(0, test.size());
  } else {
    std::vector<std::thread> threads;
    std::size_t chunk = (test.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      std::size_t begin = w * chunk;
      std::size_t end = std::min(begin + chunk, test.size());
      if (begin >= end) break;
      threads.emplace_back(eval_range, begin, end);
    }
    for (auto& t : threads) t.join();
  }
  return preds;
}

namespace {

std::string iter_name(const char* prefix, std::size_t iter, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03zu%s", prefix, iter, ext);
  return buf;
}

LedgerRow row_from_predictions(const ExperimentConfig& cfg,
                               const PredictionSet& preds, const Mask& mask,
                               std::size_t iter) {
  LedgerRow row;
  row.iteration = iter;
  row.remaining_weights_pct = 100.0 * sparsity(mask);
  row.accuracy = accuracy(preds);
  row.ece = ece(preds, cfg.eval_bins).ece;
  row.nll_mean = nll_mean(preds);
  row.brier = brier(preds);
  row.strategy = to_string(cfg.strategy.kind);
  row.reinit_mode = to_string(cfg.prune.reinit);
  row.seed = cfg.seed;
  return row;
}

}  // namespace

RunLedger run_lth(const ExperimentConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);

  TrainTestSplit data = load_experiment_data(cfg.dataset);
  NetworkSpec spec = effective_network(cfg);
  if (data.train.dim() != spec.input_dim()) {
    throw ConfigError("run: dataset dim does not match network input dim");
  }

  ParamSet params = init_network(spec);
  save_params(params, cfg.output_dir / "init_params.lthp");
  Mask mask = Mask::ones_like(spec);

  RunLedger ledger;
  for (std::size_t iter = 0; iter <= cfg.prune.iterations; ++iter) {
    auto t0 = std::chrono::steady_clock::now();
    if (iter > 0) {
      try {
        mask = prune(params, mask, cfg.prune);
      } catch (const PruneError& e) {
        std::cerr << "[lth] warning: " << e.what()
                  << "; stopping with partial ledger\n";
        ledger.warning = true;
        break;
      }
      params = cfg.prune.reinit == ReinitMode::Rewind
                   ? rewind(params, mask)
                   : random_reinit(spec, mask, cfg.seed + 7919 * iter);
    }
    train_model(params, mask, data.train, cfg, kTrainStreamBase + iter);
    PredictionSet preds = evaluate(params, mask, data.test);
    LedgerRow row = row_from_predictions(cfg, preds, mask, iter);
    save_mask(mask, cfg.output_dir / iter_name("mask_iter", iter, ".lthm"));
    emit_predictions(preds,
                     cfg.output_dir / iter_name("preds_iter", iter, ".json"));
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    ledger.rows.push_back(std::move(row));
  }

  emit_csv(ledger, cfg.output_dir / "ledger.csv");
  return ledger;
}

RunLedger run_transfer(const std::filesystem::path& source_dir,
                       const ExperimentConfig& cfg, bool random_ticket) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);

  ParamSet source = load_params(source_dir / "init_params.lthp");
  NetworkSpec spec = effective_network(cfg);
  if (source.spec().layer_dims != spec.layer_dims) {
    throw ConfigError("transfer: source/target architecture mismatch");
  }
  TrainTestSplit data = load_experiment_data(cfg.dataset);

  RunLedger ledger;
  for (std::size_t iter = 0;; ++iter) {
    std::filesystem::path mask_path =
        source_dir / iter_name("mask_iter", iter, ".lthm");
    if (!std::filesystem::exists(mask_path)) {
      if (iter == 0) {
        throw ConfigError("transfer: no mask files under " +
                          source_dir.string());
      }
      break;
    }
    auto t0 = std::chrono::steady_clock::now();
    Mask mask = load_mask(mask_path);
    if (!mask.shape_matches(spec)) {
      throw ConfigError("transfer: mask shape does not match architecture");
    }

    ParamSet ticket = random_ticket
                          ? random_reinit(spec, mask, cfg.seed + 7919 * iter)
                          : ParamSet(spec, source.init_snapshot(),
                                     source.init_snapshot());
    if (!random_ticket) ticket = rewind(ticket, mask);

    train_model(ticket, mask, data.train, cfg, kTrainStreamBase + iter);
    PredictionSet preds = evaluate(ticket, mask, data.test);
    LedgerRow row = row_from_predictions(cfg, preds, mask, iter);
    row.source_run = source_dir.string();
    if (random_ticket) row.reinit_mode = "random";
    save_mask(mask, cfg.output_dir / iter_name("mask_iter", iter, ".lthm"));
    emit_predictions(preds,
                     cfg.output_dir / iter_name("preds_iter", iter, ".json"));
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    ledger.rows.push_back(std::move(row));
  }

  emit_csv(ledger, cfg.output_dir / "transfer_ledger.csv");
  return ledger;
}

void emit_csv(const RunLedger& ledger, const std::filesystem::path& path) {
  if (ledger.rows.empty()) throw DataError("emit_csv: empty ledger");
  bool with_source = std::any_of(
      ledger.rows.begin(), ledger.rows.end(),
      [](const LedgerRow& r) { return !r.source_run.empty(); });

  std::string out =
      "iteration,remaining_weights_pct,accuracy,ece,nll_mean,brier,strategy,"
      "reinit_mode,seed,wall_seconds";
  if (with_source) out += ",source_run";
  out += "\n";
  for (const LedgerRow& r : ledger.rows) {
    out += std::to_string(r.iteration) + ",";
    out += format_double(r.remaining_weights_pct) + ",";
    out += format_double(r.accuracy) + ",";
    out += format_double(r.ece) + ",";
    out += format_double(r.nll_mean) + ",";
    out += format_double(r.brier) + ",";
    out += r.strategy + ",";
    out += r.reinit_mode + ",";
    out += std::to_string(r.seed) + ",";
    out += format_double(r.wall_seconds);
    if (with_source) out += "," + r.source_run;
    out += "\n";
  }
  atomic_write_text(path, out);
}

RunLedger load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ledger: " + path.string());
  std::string header;
  if (!std::getline(in, header)) {
    throw FormatError("empty ledger file: " + path.string());
  }
  auto cols = split(header, ',');
  if (cols.size() < 10 || cols[0] != "iteration") {
    throw FormatError("bad ledger header: " + path.string());
  }
  bool with_source = cols.size() > 10 && cols[10] == "source_run";

  RunLedger ledger;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto f = split(line, ',');
    if (f.size() < 10) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 10+ fields");
    }
    LedgerRow r;
    try {
      r.iteration = std::stoull(f[0]);
      r.remaining_weights_pct = std::stod(f[1]);
      r.accuracy = std::stod(f[2]);
      r.ece = std::stod(f[3]);
      r.nll_mean = std::stod(f[4]);
      r.brier = std::stod(f[5]);
      r.strategy = f[6];
      r.reinit_mode = f[7];
      r.seed = std::stoull(f[8]);
      r.wall_seconds = std::stod(f[9]);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": bad field value");
    }
    if (with_source && f.size() > 10) r.source_run = f[10];
    ledger.rows.push_back(std::move(r));
  }
  if (ledger.rows.empty()) throw DataError("ledger has no rows: " + path.string());
  return ledger;
}

void emit_predictions(const PredictionSet& preds,
                      const std::filesystem::path& path) {
  preds.validate();
  nlohmann::ordered_json doc;
  doc["num_classes"] = preds.num_classes();
  nlohmann::ordered_json samples = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    nlohmann::ordered_json s;
    s["probs"] = std::vector<double>(preds.probs.row(i).begin(),
                                     preds.probs.row(i).end());
    s["label"] = preds.labels[i];
    samples.push_back(std::move(s));
  }
  doc["samples"] = std::move(samples);
  atomic_write_text(path, doc.dump());
}

PredictionSet load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions: " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("bad prediction JSON in " + path.string() + ": " +
                      e.what());
  }
  if (!doc.contains("num_classes") || !doc.contains("samples")) {
    throw FormatError("prediction dump missing num_classes/samples: " +
                      path.string());
  }
  std::size_t k = doc["num_classes"].get<std::size_t>();
  const auto& samples = doc["samples"];
  if (!samples.is_array() || samples.empty()) {
    throw FormatError("prediction dump has no samples: " + path.string());
  }
  PredictionSet preds;
  preds.probs = Matrix(samples.size(), k);
  preds.labels.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!s.contains("probs") || !s.contains("label") ||
        s["probs"].size() != k) {
      throw FormatError("prediction dump: malformed sample " +
                        std::to_string(i) + " in " + path.string());
    }
    for (std::size_t c = 0; c < k; ++c) {
      preds.probs(i, c) = s["probs"][c].get<double>();
    }
    preds.labels[i] = s["label"].get<int>();
  }
  preds.validate();  // row sums checked on read
  return preds;
}

}  // namespace lth
