#include "lth/network.hpp"

#include <cmath>
#include <iostream>
#include <utility>

#include "lth/errors.hpp"

namespace lth {

void NetworkSpec::validate() const {
  if (layer_dims.size() < 2) {
    throw ConfigError("network: need at least 2 layer dims");
  }
  for (std::size_t d : layer_dims) {
    if (d < 1) throw ConfigError("network: all layer dims must be >= 1");
  }
  if (layer_dims.back() < 2) {
    throw ConfigError("network: output dim K must be >= 2");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("network: dropout_rate must be in [0, 1)");
  }
}

Mask Mask::ones_like(const NetworkSpec& spec) {
  Mask m;
  for (std::size_t l = 0; l + 1 < spec.layer_dims.size(); ++l) {
    m.layers.emplace_back(spec.layer_dims[l + 1], spec.layer_dims[l], 1.0);
  }
  return m;
}

bool Mask::shape_matches(const NetworkSpec& spec) const {
  if (layers.size() != spec.num_weight_layers()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].rows() != spec.layer_dims[l + 1] ||
        layers[l].cols() != spec.layer_dims[l]) {
      return false;
    }
  }
  return true;
}

std::size_t Mask::total_weights() const {
  std::size_t n = 0;
  for (const auto& m : layers) n += m.size();
  return n;
}

std::size_t Mask::surviving_weights() const {
  std::size_t n = 0;
  for (const auto& m : layers) {
    for (std::size_t i = 0; i < m.size(); ++i) n += (m[i] != 0.0);
  }
  return n;
}

ParamSet::ParamSet(NetworkSpec spec, std::vector<LayerParams> layers)
    : spec_(std::move(spec)), layers_(std::move(layers)), snapshot_(layers_) {}

ParamSet::ParamSet(NetworkSpec spec, std::vector<LayerParams> layers,
                   std::vector<LayerParams> snapshot)
    : spec_(std::move(spec)),
      layers_(std::move(layers)),
      snapshot_(std::move(snapshot)) {}

ParamSet init_network(const NetworkSpec& spec) {
  spec.validate();
  RandomStream rng(spec.seed, /*stream_id=*/0);
  std::vector<LayerParams> layers;
  for (std::size_t l = 0; l + 1 < spec.layer_dims.size(); ++l) {
    std::size_t fan_in = spec.layer_dims[l];
    std::size_t fan_out = spec.layer_dims[l + 1];
    double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    LayerParams p;
    p.weights = Matrix(fan_out, fan_in);
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
      p.weights[i] = rng.uniform(-lim, lim);
    }
    p.biases.assign(fan_out, 0.0);
    layers.push_back(std::move(p));
  }
  return ParamSet(spec, std::move(layers));
}

namespace {

void softmax_rows(Matrix& z) {
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
}

}  // namespace

ForwardResult forward(const ParamSet& params, const Mask& mask,
                      const Matrix& x, bool dropout_on, RandomStream& rng) {
  const NetworkSpec& spec = params.spec();
  if (x.cols() != spec.input_dim()) {
    throw DimensionError("forward: input dim mismatch");
  }
  if (!mask.shape_matches(spec)) {
    throw DimensionError("forward: mask shape mismatch");
  }
  if (!x.all_finite()) throw NumericError("forward: non-finite input");

  const std::size_t num_layers = spec.num_weight_layers();
  double rate = spec.dropout_rate;
  bool apply_dropout = dropout_on && rate > 0.0;

  ForwardTrace trace;
  trace.input = x;
  trace.dropout_used = apply_dropout;

  Matrix h = x;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const LayerParams& lp = params.layers()[l];
    Matrix w_eff = lp.weights;
    const Matrix& m = mask.layers[l];
    for (std::size_t i = 0; i < w_eff.size(); ++i) w_eff[i] *= m[i];

    Matrix z = matmul_nt(h, w_eff);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += lp.biases[j];
    }
    trace.pre_acts.push_back(z);

    if (l + 1 == num_layers) {
      softmax_rows(z);
      h = z;
    } else {
      for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = z[i] > 0.0 ? z[i] : 0.0;
      }
      if (apply_dropout) {
        Matrix dmask(z.rows(), z.cols());
        double keep_scale = 1.0 / (1.0 - rate);
        for (std::size_t i = 0; i < dmask.size(); ++i) {
          dmask[i] = rng.bernoulli(rate) ? 0.0 : keep_scale;
          z[i] *= dmask[i];
        }
        trace.dropout_masks.push_back(std::move(dmask));
      }
      h = z;
    }
    trace.post_acts.push_back(h);
  }

  if (!h.all_finite()) throw NumericError("forward: non-finite output");
  return ForwardResult{h, std::move(trace)};
}

Matrix forward_probs(const ParamSet& params, const Mask& mask,
                     const Matrix& x) {
  RandomStream dummy(0);
  return forward(params, mask, x, /*dropout_on=*/false, dummy).probs;
}

std::vector<Matrix> stochastic_forward(const ParamSet& params,
                                       const Mask& mask, const Matrix& x,
                                       std::size_t t_passes,
                                       RandomStream& rng) {
  if (t_passes == 0) {
    throw ConfigError("stochastic_forward: T must be >= 1");
  }
  if (params.spec().dropout_rate == 0.0) {
    std::cerr << "[lth] warning: stochastic_forward with dropout_rate 0; "
                 "all passes are identical\n";
  }
  std::vector<Matrix> out;
  out.reserve(t_passes);
  for (std::size_t t = 0; t < t_passes; ++t) {
    out.push_back(forward(params, mask, x, /*dropout_on=*/true, rng).probs);
  }
  return out;
}

}  // namespace lth
