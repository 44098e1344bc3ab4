#include "lth/optimizer.hpp"

#include <cmath>

#include "lth/errors.hpp"

namespace lth {

namespace {

std::vector<LayerParams> zeros_like(const ParamSet& params) {
  std::vector<LayerParams> out;
  for (const LayerParams& lp : params.layers()) {
    LayerParams z;
    z.weights = Matrix(lp.weights.rows(), lp.weights.cols());
    z.biases.assign(lp.biases.size(), 0.0);
    out.push_back(std::move(z));
  }
  return out;
}

void check_shapes(const ParamSet& params, const std::vector<LayerParams>& grads,
                  const Mask& mask) {
  if (grads.size() != params.layers().size() ||
      !mask.shape_matches(params.spec())) {
    throw DimensionError("optimizer_step: shape mismatch");
  }
  for (std::size_t l = 0; l < grads.size(); ++l) {
    if (!grads[l].weights.same_shape(params.layers()[l].weights) ||
        grads[l].biases.size() != params.layers()[l].biases.size()) {
      throw DimensionError("optimizer_step: gradient shape mismatch");
    }
  }
}

}  // namespace

AdamState make_adam(const ParamSet& params) {
  AdamState s;
  s.m = zeros_like(params);
  s.v = zeros_like(params);
  return s;
}

SgdState make_sgd(const ParamSet& params, double momentum, double weight_decay,
                  std::vector<std::pair<std::size_t, double>> milestones) {
  SgdState s;
  s.momentum_buf = zeros_like(params);
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  s.milestones = std::move(milestones);
  return s;
}

double lr_for_epoch(double base_lr,
                    const std::vector<std::pair<std::size_t, double>>& milestones,
                    std::size_t epoch) {
  double lr = base_lr;
  for (const auto& [at, factor] : milestones) {
    if (epoch >= at) lr *= factor;
  }
  return lr;
}

void optimizer_step(ParamSet& params, const std::vector<LayerParams>& grads,
                    OptimState& state, double lr, const Mask& mask) {
  if (lr <= 0.0) throw ConfigError("optimizer_step: lr must be > 0");
  check_shapes(params, grads, mask);

  if (auto* adam = std::get_if<AdamState>(&state)) {
    adam->step += 1;
    double bc1 = 1.0 - std::pow(adam->beta1, static_cast<double>(adam->step));
    double bc2 = 1.0 - std::pow(adam->beta2, static_cast<double>(adam->step));
    for (std::size_t l = 0; l < grads.size(); ++l) {
      auto update = [&](double& p, double& m, double& v, double g) {
        m = adam->beta1 * m + (1.0 - adam->beta1) * g;
        v = adam->beta2 * v + (1.0 - adam->beta2) * g * g;
        double m_hat = m / bc1;
        double v_hat = v / bc2;
        p -= lr * m_hat / (std::sqrt(v_hat) + adam->eps);
      };
      Matrix& w = params.layers()[l].weights;
      Matrix& mw = adam->m[l].weights;
      Matrix& vw = adam->v[l].weights;
      for (std::size_t i = 0; i < w.size(); ++i) {
        update(w[i], mw[i], vw[i], grads[l].weights[i]);
      }
      auto& b = params.layers()[l].biases;
      for (std::size_t i = 0; i < b.size(); ++i) {
        update(b[i], adam->m[l].biases[i], adam->v[l].biases[i],
               grads[l].biases[i]);
      }
    }
  } else {
    auto& sgd = std::get<SgdState>(state);
    for (std::size_t l = 0; l < grads.size(); ++l) {
      auto update = [&](double& p, double& buf, double g) {
        g += sgd.weight_decay * p;
        buf = sgd.momentum * buf + g;
        p -= lr * buf;
      };
      Matrix& w = params.layers()[l].weights;
      Matrix& buf = sgd.momentum_buf[l].weights;
      for (std::size_t i = 0; i < w.size(); ++i) {
        update(w[i], buf[i], grads[l].weights[i]);
      }
      auto& b = params.layers()[l].biases;
      for (std::size_t i = 0; i < b.size(); ++i) {
        update(b[i], sgd.momentum_buf[l].biases[i], grads[l].biases[i]);
      }
    }
  }

  // Re-apply the mask: pruned coordinates stay exactly 0.
  for (std::size_t l = 0; l < mask.layers.size(); ++l) {
    Matrix& w = params.layers()[l].weights;
    const Matrix& m = mask.layers[l];
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (m[i] == 0.0) w[i] = 0.0;
    }
  }
}

}  // namespace lth
