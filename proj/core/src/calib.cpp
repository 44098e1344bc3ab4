#include "lth/calib.hpp"

#include <algorithm>
#include <cmath>

#include "lth/errors.hpp"

namespace lth {

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::None: return "none";
    case StrategyKind::Vwcc: return "vwcc";
    case StrategyKind::Mixup: return "mixup";
    case StrategyKind::Mda: return "mda";
    case StrategyKind::Lwcc: return "lwcc";
    case StrategyKind::LwccSi: return "lwcc_si";
    case StrategyKind::Nba: return "nba";
  }
  return "none";
}

StrategyKind strategy_from_string(const std::string& name) {
  if (name == "none") return StrategyKind::None;
  if (name == "vwcc") return StrategyKind::Vwcc;
  if (name == "mixup") return StrategyKind::Mixup;
  if (name == "mda") return StrategyKind::Mda;
  if (name == "lwcc") return StrategyKind::Lwcc;
  if (name == "lwcc_si") return StrategyKind::LwccSi;
  if (name == "nba") return StrategyKind::Nba;
  throw ConfigError("unknown strategy: " + name);
}

void StrategySpec::validate() const {
  if (stochastic_passes < 1) throw ConfigError("strategy: T must be >= 1");
  if (mixup_alpha <= 0.0) throw ConfigError("strategy: mixup_alpha must be > 0");
  if (nba_bins < 2) throw ConfigError("strategy: nba_bins must be >= 2");
  if (nba_bandwidth <= 0.0) throw ConfigError("strategy: nba_bandwidth must be > 0");
  if (gamma_d < 0.0 || gamma_n < 0.0) {
    throw ConfigError("strategy: gamma weights must be >= 0");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("strategy: dropout_rate must be in [0, 1)");
  }
  if (!nba_weights.empty()) {
    if (nba_weights.size() != nba_bins) {
      throw ConfigError("strategy: nba_weights length must equal nba_bins");
    }
    for (double w : nba_weights) {
      if (w <= 0.0) throw ConfigError("strategy: nba_weights must be > 0");
    }
  }
}

std::vector<double> StrategySpec::effective_nba_weights() const {
  if (!nba_weights.empty()) return nba_weights;
  std::vector<double> w(nba_bins);
  double b_count = static_cast<double>(nba_bins);
  for (std::size_t b = 1; b <= nba_bins; ++b) {
    w[b - 1] = 1.0 + std::abs(2.0 * static_cast<double>(b) - b_count - 1.0) /
                         (b_count - 1.0);
  }
  return w;
}

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

double cross_entropy(const Matrix& probs, const std::vector<int>& labels) {
  if (probs.rows() != labels.size()) {
    throw DimensionError("cross_entropy: label count mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= probs.cols()) {
      throw DataError("cross_entropy: label out of range");
    }
    total += -std::log(std::max(probs(i, static_cast<std::size_t>(y)), kLogFloor));
  }
  return total / static_cast<double>(probs.rows());
}

double cross_entropy(const Matrix& probs, const Matrix& soft_targets) {
  if (!probs.same_shape(soft_targets)) {
    throw DimensionError("cross_entropy: target shape mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      double t = soft_targets(i, k);
      if (t == 0.0) continue;  // keeps hard/soft paths bit-identical
      total += -t * std::log(std::max(probs(i, k), kLogFloor));
    }
  }
  return total / static_cast<double>(probs.rows());
}

double kl_uniform(std::span<const double> p) {
  double inv_k = 1.0 / static_cast<double>(p.size());
  double total = 0.0;
  for (double v : p) {
    total += inv_k * std::log(inv_k / std::max(v, kLogFloor));
  }
  return total;
}

double bhattacharyya(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("bhattacharyya: size mismatch");
  double bc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    bc += std::sqrt(p[k] * q[k]);
  }
  return std::clamp(bc, 0.0, 1.0);
}

double vwcc_alpha(const Matrix& preds, bool complement) {
  const std::size_t t_passes = preds.rows();
  const std::size_t k = preds.cols();
  std::vector<double> mean(k, 0.0);
  for (std::size_t t = 0; t < t_passes; ++t) {
    for (std::size_t j = 0; j < k; ++j) mean[j] += preds(t, j);
  }
  for (double& v : mean) v /= static_cast<double>(t_passes);
  double mean_bc = 0.0;
  for (std::size_t t = 0; t < t_passes; ++t) {
    mean_bc += bhattacharyya(preds.row(t), mean);
  }
  mean_bc /= static_cast<double>(t_passes);
  double alpha = complement ? 1.0 - mean_bc : mean_bc;
  return std::clamp(alpha, 0.0, 1.0);
}

namespace {

Matrix mean_over_passes(const std::vector<Matrix>& stoch_preds) {
  const Matrix& first = stoch_preds.front();
  Matrix mean(first.rows(), first.cols());
  for (const Matrix& m : stoch_preds) {
    for (std::size_t i = 0; i < m.size(); ++i) mean[i] += m[i];
  }
  double inv_t = 1.0 / static_cast<double>(stoch_preds.size());
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] *= inv_t;
  return mean;
}

}  // namespace

double vwcc_loss(const std::vector<Matrix>& stoch_preds,
                 const std::vector<int>& labels, const StrategySpec& spec) {
  if (stoch_preds.empty()) throw ConfigError("vwcc_loss: no passes");
  Matrix mean = mean_over_passes(stoch_preds);
  const std::size_t n = mean.rows();
  const std::size_t t_passes = stoch_preds.size();
  double total = 0.0;
  Matrix sample_preds(t_passes, mean.cols());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < t_passes; ++t) {
      for (std::size_t k = 0; k < mean.cols(); ++k) {
        sample_preds(t, k) = stoch_preds[t](i, k);
      }
    }
    double alpha = spec.zero_calibration
                       ? 0.0
                       : vwcc_alpha(sample_preds, spec.vwcc_alpha_complement);
    int y = labels[i];
    double ce = -std::log(
        std::max(mean(i, static_cast<std::size_t>(y)), kLogFloor));
    if (alpha == 0.0) {
      total += ce;
    } else {
      total += (1.0 - alpha) * ce + alpha * kl_uniform(mean.row(i));
    }
  }
  return total / static_cast<double>(n);
}

Batch mixup_batch(const Batch& batch, double mixup_alpha, RandomStream& rng,
                  bool force_lambda_one) {
  const std::size_t n = batch.labels.size();
  if (n < 2) throw DataError("mixup: batch size must be >= 2");
  const std::size_t d = batch.inputs.cols();
  const std::size_t k = batch.num_classes;

  std::vector<std::size_t> partner = rng.permutation(n);
  Batch out;
  out.num_classes = k;
  out.labels = batch.labels;
  out.inputs = Matrix(n, d);
  Matrix soft(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    double lam = force_lambda_one ? 1.0 : rng.beta(mixup_alpha, mixup_alpha);
    std::size_t j = partner[i];
    for (std::size_t c = 0; c < d; ++c) {
      out.inputs(i, c) = lam * batch.inputs(i, c) + (1.0 - lam) * batch.inputs(j, c);
    }
    soft(i, static_cast<std::size_t>(batch.labels[i])) += lam;
    soft(i, static_cast<std::size_t>(batch.labels[j])) += 1.0 - lam;
  }
  out.soft_labels = std::move(soft);
  return out;
}

double mda_penalty(const Matrix& batch_probs, std::span<const double> prior,
                   double gamma_d) {
  if (gamma_d == 0.0) return 0.0;
  const std::size_t n = batch_probs.rows();
  const std::size_t k = batch_probs.cols();
  if (prior.size() != k) throw DimensionError("mda: prior size mismatch");
  double penalty = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double h_bar = 0.0;
    for (std::size_t i = 0; i < n; ++i) h_bar += batch_probs(i, c);
    h_bar /= static_cast<double>(n);
    if (prior[c] > 0.0) {
      penalty += prior[c] * std::log(prior[c] / std::max(h_bar, kLogFloor));
    }
  }
  return gamma_d * penalty;
}

double lwcc_beta(std::span<const double> prob_row, int label) {
  std::size_t pred = argmax_row(prob_row);
  if (pred != static_cast<std::size_t>(label)) return 1.0;  // wrong: x^0
  return 1.0 - prob_row[pred];
}

double lwcc_loss(const Matrix& probs, const std::vector<int>& labels,
                 bool zero_beta) {
  const std::size_t n = probs.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    int y = labels[i];
    double ce = -std::log(
        std::max(probs(i, static_cast<std::size_t>(y)), kLogFloor));
    double beta = zero_beta ? 0.0 : lwcc_beta(probs.row(i), y);
    total += beta == 0.0 ? ce : ce + beta * kl_uniform(probs.row(i));
  }
  return total / static_cast<double>(n);
}

double lwcc_si_loss(const std::vector<Matrix>& stoch_preds,
                    const std::vector<int>& labels, bool zero_beta) {
  if (stoch_preds.empty()) throw ConfigError("lwcc_si: no passes");
  if (stoch_preds.size() == 1) {
    return lwcc_loss(stoch_preds.front(), labels, zero_beta);
  }
  return lwcc_loss(mean_over_passes(stoch_preds), labels, zero_beta);
}

std::vector<double> soft_histogram(const std::vector<double>& confidences,
                                   std::size_t bins, double bandwidth) {
  if (bins < 2) throw ConfigError("soft_histogram: bins must be >= 2");
  if (bandwidth <= 0.0) throw ConfigError("soft_histogram: bandwidth must be > 0");
  auto sigmoid = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };
  std::vector<double> counts(bins, 0.0);
  double width = 1.0 / static_cast<double>(bins);
  // Outer edges saturate so every sample contributes exactly 1 in total.
  for (double c : confidences) {
    for (std::size_t b = 0; b < bins; ++b) {
      double lo = static_cast<double>(b) * width;
      double hi = static_cast<double>(b + 1) * width;
      double lo_term = b == 0 ? 1.0 : sigmoid((c - lo) / bandwidth);
      double hi_term = b + 1 == bins ? 0.0 : sigmoid((c - hi) / bandwidth);
      counts[b] += lo_term - hi_term;
    }
  }
  return counts;
}

double nba_penalty(const Matrix& probs, const StrategySpec& spec) {
  if (spec.gamma_n == 0.0 || spec.zero_calibration) return 0.0;
  const std::size_t n = probs.rows();
  std::vector<double> conf(n);
  for (std::size_t i = 0; i < n; ++i) {
    conf[i] = probs(i, argmax_row(probs.row(i)));
  }
  std::vector<double> counts =
      soft_histogram(conf, spec.nba_bins, spec.nba_bandwidth);
  std::vector<double> weights = spec.effective_nba_weights();
  double inv_b = 1.0 / static_cast<double>(spec.nba_bins);
  double penalty = 0.0;
  for (std::size_t b = 0; b < spec.nba_bins; ++b) {
    double x = counts[b] / static_cast<double>(n) - inv_b;
    penalty += weights[b] * std::sqrt(x * x + 1e-12);  // smoothed |x|
  }
  return spec.gamma_n * penalty;
}

}  // namespace lth
