#include "lth/metrics.hpp"

#include <cmath>

#include "lth/calib.hpp"
#include "lth/errors.hpp"

namespace lth {

void PredictionSet::validate() const {
  if (probs.rows() != labels.size()) {
    throw DataError("predictions: label count mismatch");
  }
  if (probs.rows() == 0) throw DataError("predictions: empty");
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      double p = probs(i, k);
      if (!(p >= 0.0 && p <= 1.0)) {
        throw DataError("predictions: probability outside [0,1]");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw DataError("predictions: row does not sum to 1");
    }
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= probs.cols()) {
      throw DataError("predictions: label out of range");
    }
  }
}

EceResult ece(const PredictionSet& preds, std::size_t bins) {
  if (bins < 1) throw ConfigError("ece: bins must be >= 1");
  const std::size_t n = preds.size();
  if (n == 0) throw DataError("ece: empty prediction set");

  std::vector<std::size_t> count(bins, 0);
  std::vector<double> acc_sum(bins, 0.0), conf_sum(bins, 0.0);
  double b_count = static_cast<double>(bins);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t pred = argmax_row(preds.probs.row(i));
    double conf = preds.probs(i, pred);
    // Edge values go to the higher bin; 1.0 to the last.
    std::size_t b = static_cast<std::size_t>(std::floor(conf * b_count));
    if (b >= bins) b = bins - 1;
    count[b] += 1;
    conf_sum[b] += conf;
    acc_sum[b] += pred == static_cast<std::size_t>(preds.labels[i]) ? 1.0 : 0.0;
  }

  EceResult result;
  result.report.bins.resize(bins);
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    auto& bin = result.report.bins[b];
    bin.count = count[b];
    bin.lo = static_cast<double>(b) / b_count;
    bin.hi = static_cast<double>(b + 1) / b_count;
    if (count[b] > 0) {
      bin.acc = acc_sum[b] / static_cast<double>(count[b]);
      bin.conf = conf_sum[b] / static_cast<double>(count[b]);
      total += static_cast<double>(count[b]) / static_cast<double>(n) *
               std::abs(bin.acc - bin.conf);
    }
  }
  result.ece = total;
  return result;
}

double nll_sum(const PredictionSet& preds) {
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    total += -std::log(std::max(
        preds.probs(i, static_cast<std::size_t>(preds.labels[i])), kLogFloor));
  }
  return total;
}

double nll_mean(const PredictionSet& preds) {
  if (preds.size() == 0) throw DataError("nll: empty prediction set");
  return nll_sum(preds) / static_cast<double>(preds.size());
}

double brier(const PredictionSet& preds) {
  if (preds.size() == 0) throw DataError("brier: empty prediction set");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t k = 0; k < preds.probs.cols(); ++k) {
      double target = static_cast<std::size_t>(preds.labels[i]) == k ? 1.0 : 0.0;
      double diff = preds.probs(i, k) - target;
      total += diff * diff;
    }
  }
  return total / static_cast<double>(preds.size());
}

double accuracy(const PredictionSet& preds) {
  if (preds.size() == 0) throw DataError("accuracy: empty prediction set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (argmax_row(preds.probs.row(i)) ==
        static_cast<std::size_t>(preds.labels[i])) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

}  // namespace lth
