#pragma once

#include <cstdint>
#include <vector>

#include "lth/matrix.hpp"
#include "lth/rng.hpp"

namespace lth {

struct NetworkSpec {
  std::vector<std::size_t> layer_dims;  // e.g. {784, 300, 100, 10}
  double dropout_rate = 0.0;            // hidden layers only
  std::uint64_t seed = 0;

  std::size_t num_weight_layers() const { return layer_dims.size() - 1; }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t num_classes() const { return layer_dims.back(); }

  // Throws ConfigError on fewer than 2 dims, zero-sized layers, K < 2,
  // or dropout_rate outside [0, 1).
  void validate() const;
};

struct LayerParams {
  Matrix weights;               // out x in
  std::vector<double> biases;   // out

  bool operator==(const LayerParams&) const = default;
};

// Per-weight-layer binary masks over weights. Biases are never masked.
struct Mask {
  std::vector<Matrix> layers;  // entries in {0, 1}

  static Mask ones_like(const NetworkSpec& spec);
  bool shape_matches(const NetworkSpec& spec) const;
  std::size_t total_weights() const;
  std::size_t surviving_weights() const;
};

// Trainable parameters plus the immutable initialization snapshot
// captured at creation time.
class ParamSet {
 public:
  ParamSet(NetworkSpec spec, std::vector<LayerParams> layers);
  ParamSet(NetworkSpec spec, std::vector<LayerParams> layers,
           std::vector<LayerParams> snapshot);

  const NetworkSpec& spec() const { return spec_; }
  std::vector<LayerParams>& layers() { return layers_; }
  const std::vector<LayerParams>& layers() const { return layers_; }
  const std::vector<LayerParams>& init_snapshot() const { return snapshot_; }

 private:
  NetworkSpec spec_;
  std::vector<LayerParams> layers_;
  std::vector<LayerParams> snapshot_;
};

struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre_acts;       // per weight layer, N x out
  std::vector<Matrix> post_acts;      // hidden: relu(+dropout); last: softmax
  std::vector<Matrix> dropout_masks;  // per hidden layer, 0 or 1/(1-rate)
  bool dropout_used = false;
};

struct ForwardResult {
  Matrix probs;  // N x K, rows sum to 1
  ForwardTrace trace;
};

// Weights drawn uniform on +-sqrt(6/(fan_in+fan_out)), biases zero.
// Deterministic per spec.seed.
ParamSet init_network(const NetworkSpec& spec);

// Forward pass with effective weights = weights (.) mask. Dropout, when
// on, is inverted dropout over hidden activations driven by rng.
ForwardResult forward(const ParamSet& params, const Mask& mask,
                      const Matrix& x, bool dropout_on, RandomStream& rng);

// Deterministic convenience wrapper (dropout off).
Matrix forward_probs(const ParamSet& params, const Mask& mask,
                     const Matrix& x);

// T independent dropout realizations.
std::vector<Matrix> stochastic_forward(const ParamSet& params,
                                       const Mask& mask, const Matrix& x,
                                       std::size_t t_passes,
                                       RandomStream& rng);

}  // namespace lth
