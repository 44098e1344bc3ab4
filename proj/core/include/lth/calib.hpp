#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lth/matrix.hpp"
#include "lth/rng.hpp"

namespace lth {

// Floor applied inside every logarithm.
inline constexpr double kLogFloor = 1e-12;

enum class StrategyKind { None, Vwcc, Mixup, Mda, Lwcc, LwccSi, Nba };

std::string to_string(StrategyKind kind);
StrategyKind strategy_from_string(const std::string& name);

struct StrategySpec {
  StrategyKind kind = StrategyKind::None;
  std::size_t stochastic_passes = 5;  // T
  double dropout_rate = 0.2;          // for stochastic inference strategies
  double mixup_alpha = 0.2;
  double gamma_d = 0.05;              // MDA weight
  double gamma_n = 0.1;               // NBA weight
  std::size_t nba_bins = 10;
  double nba_bandwidth = 0.05;
  std::vector<double> nba_weights;    // empty => V-shaped default
  // High pass agreement => low alpha. Off flips the orientation.
  bool vwcc_alpha_complement = true;
  // Forces alpha_i = 0, beta_i = 0, lambda = 1, gamma_d = gamma_n = 0,
  // reducing every strategy to plain cross-entropy.
  bool zero_calibration = false;

  void validate() const;
  bool uses_stochastic_inference() const {
    return kind == StrategyKind::Vwcc || kind == StrategyKind::LwccSi;
  }
  // w_b = 1 + |2b - B - 1|/(B - 1), b = 1..B.
  std::vector<double> effective_nba_weights() const;
};

struct Batch {
  Matrix inputs;               // N x d
  std::vector<int> labels;     // N, in [0, K)
  std::size_t num_classes = 0;
  std::optional<Matrix> soft_labels;  // N x K, rows sum to 1
};

double cross_entropy(const Matrix& probs, const std::vector<int>& labels);
double cross_entropy(const Matrix& probs, const Matrix& soft_targets);

// D_KL(U || p) = sum_k (1/K) log((1/K)/max(p_k, floor))
double kl_uniform(std::span<const double> p);

// Bhattacharyya coefficient, clamped to [0, 1].
double bhattacharyya(std::span<const double> p, std::span<const double> q);

// preds: T x K rows for one sample. alpha = 1 - mean_t BC(pred_t, mean).
double vwcc_alpha(const Matrix& preds, bool complement = true);

// stoch_preds: T matrices of N x K.
double vwcc_loss(const std::vector<Matrix>& stoch_preds,
                 const std::vector<int>& labels, const StrategySpec& spec);

// One seeded within-batch permutation, one lambda ~ Beta(alpha, alpha)
// per pair. force_lambda_one substitutes lambda = 1 (reduction mode).
Batch mixup_batch(const Batch& batch, double mixup_alpha, RandomStream& rng,
                  bool force_lambda_one = false);

double mda_penalty(const Matrix& batch_probs, std::span<const double> prior,
                   double gamma_d);

double lwcc_beta(std::span<const double> prob_row, int label);
double lwcc_loss(const Matrix& probs, const std::vector<int>& labels,
                 bool zero_beta = false);
double lwcc_si_loss(const std::vector<Matrix>& stoch_preds,
                    const std::vector<int>& labels, bool zero_beta = false);

// Differentiable bin counts via logistic kernel differences.
std::vector<double> soft_histogram(const std::vector<double>& confidences,
                                   std::size_t bins, double bandwidth);

double nba_penalty(const Matrix& probs, const StrategySpec& spec);

// Row argmax with ties toward the smaller index.
std::size_t argmax_row(std::span<const double> row);

}  // namespace lth
