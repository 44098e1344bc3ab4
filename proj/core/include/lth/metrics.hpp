#pragma once

#include <cstddef>
#include <vector>

#include "lth/matrix.hpp"

namespace lth {

struct PredictionSet {
  Matrix probs;             // N x K
  std::vector<int> labels;  // N, in [0, K)

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return probs.cols(); }
  // Throws DataError when rows do not sum to 1 within 1e-9, entries fall
  // outside [0,1], or labels are out of range.
  void validate() const;
};

struct BinReport {
  struct Bin {
    std::size_t count = 0;
    double acc = 0.0;
    double conf = 0.0;
    double lo = 0.0;
    double hi = 0.0;
  };
  std::vector<Bin> bins;
};

struct EceResult {
  double ece = 0.0;
  BinReport report;
};

// Equal-width confidence bins; a value exactly on an edge goes to the
// higher bin, 1.0 to the last.
EceResult ece(const PredictionSet& preds, std::size_t bins = 15);

double nll_sum(const PredictionSet& preds);
double nll_mean(const PredictionSet& preds);
double brier(const PredictionSet& preds);
double accuracy(const PredictionSet& preds);

}  // namespace lth
