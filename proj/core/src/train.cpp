#include "lth/train.hpp"

#include <cmath>

#include "lth/errors.hpp"

namespace lth {

std::vector<LayerParams> zero_grads(const ParamSet& params) {
  std::vector<LayerParams> grads;
  for (const LayerParams& lp : params.layers()) {
    LayerParams g;
    g.weights = Matrix(lp.weights.rows(), lp.weights.cols());
    g.biases.assign(lp.biases.size(), 0.0);
    grads.push_back(std::move(g));
  }
  return grads;
}

void backward_from_probs(const ParamSet& params, const Mask& mask,
                         const ForwardTrace& trace, const Matrix& dloss_dprobs,
                         std::vector<LayerParams>& grads) {
  const std::size_t num_layers = params.spec().num_weight_layers();
  const Matrix& probs = trace.post_acts.back();
  if (!probs.same_shape(dloss_dprobs)) {
    throw DimensionError("backward: dloss shape mismatch");
  }

  // Softmax Jacobian: dL/dz_k = p_k (g_k - sum_j p_j g_j).
  Matrix dz(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      dot += probs(i, k) * dloss_dprobs(i, k);
    }
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      dz(i, k) = probs(i, k) * (dloss_dprobs(i, k) - dot);
    }
  }

  for (std::size_t l = num_layers; l-- > 0;) {
    const Matrix& h_prev = l == 0 ? trace.input : trace.post_acts[l - 1];
    Matrix dw = matmul_tn(dz, h_prev);  // out x in
    LayerParams& g = grads[l];
    for (std::size_t i = 0; i < dw.size(); ++i) g.weights[i] += dw[i];
    for (std::size_t i = 0; i < dz.rows(); ++i) {
      for (std::size_t j = 0; j < dz.cols(); ++j) g.biases[j] += dz(i, j);
    }
    if (l == 0) break;

    Matrix w_eff = params.layers()[l].weights;
    const Matrix& m = mask.layers[l];
    for (std::size_t i = 0; i < w_eff.size(); ++i) w_eff[i] *= m[i];
    Matrix dh = matmul(dz, w_eff);  // N x in

    if (trace.dropout_used) {
      const Matrix& dmask = trace.dropout_masks[l - 1];
      for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= dmask[i];
    }
    const Matrix& pre = trace.pre_acts[l - 1];
    for (std::size_t i = 0; i < dh.size(); ++i) {
      if (pre[i] <= 0.0) dh[i] = 0.0;
    }
    dz = std::move(dh);
  }
}

namespace {

// d/dp of -log(max(p, floor)): zero below the floor.
inline double dlog_floor(double p) {
  return p > kLogFloor ? -1.0 / p : 0.0;
}

void add_hard_ce_grad(const Matrix& probs, const std::vector<int>& labels,
                      double scale, Matrix& g) {
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::size_t y = static_cast<std::size_t>(labels[i]);
    g(i, y) += scale * dlog_floor(probs(i, y));
  }
}

void add_kl_uniform_grad(const Matrix& probs,
                         const std::vector<double>& sample_weight,
                         double scale, Matrix& g) {
  double inv_k = 1.0 / static_cast<double>(probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double w = sample_weight[i];
    if (w == 0.0) continue;
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      g(i, k) += scale * w * inv_k * dlog_floor(probs(i, k));
    }
  }
}

struct StochasticEval {
  std::vector<ForwardResult> passes;
  Matrix mean;  // N x K
};

StochasticEval run_passes(const ParamSet& params, const Mask& mask,
                          const Matrix& x, std::size_t t_passes,
                          RandomStream& rng) {
  StochasticEval ev;
  ev.passes.reserve(t_passes);
  for (std::size_t t = 0; t < t_passes; ++t) {
    ev.passes.push_back(forward(params, mask, x, /*dropout_on=*/true, rng));
  }
  if (t_passes == 1) {
    ev.mean = ev.passes.front().probs;
  } else {
    ev.mean = Matrix(ev.passes.front().probs.rows(),
                     ev.passes.front().probs.cols());
    for (const auto& fr : ev.passes) {
      for (std::size_t i = 0; i < ev.mean.size(); ++i) ev.mean[i] += fr.probs[i];
    }
    double inv_t = 1.0 / static_cast<double>(t_passes);
    for (std::size_t i = 0; i < ev.mean.size(); ++i) ev.mean[i] *= inv_t;
  }
  return ev;
}

void backward_through_passes(const ParamSet& params, const Mask& mask,
                             const StochasticEval& ev, const Matrix& dmean,
                             std::vector<LayerParams>& grads) {
  if (ev.passes.size() == 1) {
    backward_from_probs(params, mask, ev.passes.front().trace, dmean, grads);
    return;
  }
  Matrix dpass = dmean;
  double inv_t = 1.0 / static_cast<double>(ev.passes.size());
  for (std::size_t i = 0; i < dpass.size(); ++i) dpass[i] *= inv_t;
  for (const auto& fr : ev.passes) {
    backward_from_probs(params, mask, fr.trace, dpass, grads);
  }
}

}  // namespace

LossGrad loss_and_grad(const ParamSet& params, const Mask& mask,
                       const Batch& batch, const StrategySpec& strategy,
                       RandomStream& rng) {
  if (batch.labels.empty()) throw DataError("loss_and_grad: empty batch");
  strategy.validate();
  const std::size_t n = batch.labels.size();
  const std::size_t k = params.spec().num_classes();
  const double inv_n = 1.0 / static_cast<double>(n);

  LossGrad out;
  out.grads = zero_grads(params);

  switch (strategy.kind) {
    case StrategyKind::None: {
      ForwardResult fr =
          forward(params, mask, batch.inputs, /*dropout_on=*/false, rng);
      out.loss = cross_entropy(fr.probs, batch.labels);
      Matrix g(n, k);
      add_hard_ce_grad(fr.probs, batch.labels, inv_n, g);
      backward_from_probs(params, mask, fr.trace, g, out.grads);
      break;
    }

    case StrategyKind::Mixup: {
      Batch mixed = mixup_batch(batch, strategy.mixup_alpha, rng,
                                strategy.zero_calibration);
      ForwardResult fr =
          forward(params, mask, mixed.inputs, /*dropout_on=*/false, rng);
      const Matrix& soft = *mixed.soft_labels;
      out.loss = cross_entropy(fr.probs, soft);
      Matrix g(n, k);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < k; ++c) {
          double t = soft(i, c);
          if (t != 0.0) g(i, c) += inv_n * t * dlog_floor(fr.probs(i, c));
        }
      }
      backward_from_probs(params, mask, fr.trace, g, out.grads);
      break;
    }

    case StrategyKind::Mda: {
      ForwardResult fr =
          forward(params, mask, batch.inputs, /*dropout_on=*/false, rng);
      std::vector<double> prior(k, 1.0 / static_cast<double>(k));
      double gamma = strategy.zero_calibration ? 0.0 : strategy.gamma_d;
      out.loss = cross_entropy(fr.probs, batch.labels) +
                 mda_penalty(fr.probs, prior, gamma);
      Matrix g(n, k);
      add_hard_ce_grad(fr.probs, batch.labels, inv_n, g);
      if (gamma > 0.0) {
        for (std::size_t c = 0; c < k; ++c) {
          double h_bar = 0.0;
          for (std::size_t i = 0; i < n; ++i) h_bar += fr.probs(i, c);
          h_bar *= inv_n;
          if (h_bar > kLogFloor) {
            double d = -gamma * prior[c] / h_bar * inv_n;
            for (std::size_t i = 0; i < n; ++i) g(i, c) += d;
          }
        }
      }
      backward_from_probs(params, mask, fr.trace, g, out.grads);
      break;
    }

    case StrategyKind::Lwcc: {
      ForwardResult fr =
          forward(params, mask, batch.inputs, /*dropout_on=*/false, rng);
      out.loss =
          lwcc_loss(fr.probs, batch.labels, strategy.zero_calibration);
      Matrix g(n, k);
      add_hard_ce_grad(fr.probs, batch.labels, inv_n, g);
      if (!strategy.zero_calibration) {
        std::vector<double> betas(n);
        for (std::size_t i = 0; i < n; ++i) {
          betas[i] = lwcc_beta(fr.probs.row(i), batch.labels[i]);
        }
        add_kl_uniform_grad(fr.probs, betas, inv_n, g);
      }
      backward_from_probs(params, mask, fr.trace, g, out.grads);
      break;
    }

    case StrategyKind::Vwcc: {
      StochasticEval ev = run_passes(params, mask, batch.inputs,
                                     strategy.stochastic_passes, rng);
      std::vector<Matrix> probs_only;
      probs_only.reserve(ev.passes.size());
      for (const auto& fr : ev.passes) probs_only.push_back(fr.probs);
      out.loss = vwcc_loss(probs_only, batch.labels, strategy);

      std::vector<double> alphas(n, 0.0);
      if (!strategy.zero_calibration) {
        Matrix sample_preds(ev.passes.size(), k);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t t = 0; t < ev.passes.size(); ++t) {
            for (std::size_t c = 0; c < k; ++c) {
              sample_preds(t, c) = ev.passes[t].probs(i, c);
            }
          }
          alphas[i] = vwcc_alpha(sample_preds, strategy.vwcc_alpha_complement);
        }
      }
      Matrix g(n, k);
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t y = static_cast<std::size_t>(batch.labels[i]);
        g(i, y) += inv_n * (1.0 - alphas[i]) * dlog_floor(ev.mean(i, y));
      }
      add_kl_uniform_grad(ev.mean, alphas, inv_n, g);
      backward_through_passes(params, mask, ev, g, out.grads);
      break;
    }

    case StrategyKind::LwccSi: {
      StochasticEval ev = run_passes(params, mask, batch.inputs,
                                     strategy.stochastic_passes, rng);
      out.loss = lwcc_loss(ev.mean, batch.labels, strategy.zero_calibration);
      Matrix g(n, k);
      add_hard_ce_grad(ev.mean, batch.labels, inv_n, g);
      if (!strategy.zero_calibration) {
        std::vector<double> betas(n);
        for (std::size_t i = 0; i < n; ++i) {
          betas[i] = lwcc_beta(ev.mean.row(i), batch.labels[i]);
        }
        add_kl_uniform_grad(ev.mean, betas, inv_n, g);
      }
      backward_through_passes(params, mask, ev, g, out.grads);
      break;
    }

    case StrategyKind::Nba: {
      ForwardResult fr =
          forward(params, mask, batch.inputs, /*dropout_on=*/false, rng);
      double gamma = strategy.zero_calibration ? 0.0 : strategy.gamma_n;
      out.loss = cross_entropy(fr.probs, batch.labels) +
                 nba_penalty(fr.probs, strategy);
      Matrix g(n, k);
      add_hard_ce_grad(fr.probs, batch.labels, inv_n, g);
      if (gamma > 0.0) {
        std::vector<double> conf(n);
        std::vector<std::size_t> conf_idx(n);
        for (std::size_t i = 0; i < n; ++i) {
          conf_idx[i] = argmax_row(fr.probs.row(i));
          conf[i] = fr.probs(i, conf_idx[i]);
        }
        std::vector<double> counts =
            soft_histogram(conf, strategy.nba_bins, strategy.nba_bandwidth);
        std::vector<double> weights = strategy.effective_nba_weights();
        double inv_b = 1.0 / static_cast<double>(strategy.nba_bins);
        std::vector<double> outer(strategy.nba_bins);
        for (std::size_t b = 0; b < strategy.nba_bins; ++b) {
          double x = counts[b] * inv_n - inv_b;
          outer[b] = weights[b] * x / std::sqrt(x * x + 1e-12);
        }
        double h = strategy.nba_bandwidth;
        double width = inv_b;
        auto sig_deriv = [](double t) {
          double s = 1.0 / (1.0 + std::exp(-t));
          return s * (1.0 - s);
        };
        for (std::size_t i = 0; i < n; ++i) {
          double dci = 0.0;
          for (std::size_t b = 0; b < strategy.nba_bins; ++b) {
            double lo = static_cast<double>(b) * width;
            double hi = lo + width;
            // Saturated outer edges are constants: no derivative term.
            double dlo = b == 0 ? 0.0 : sig_deriv((conf[i] - lo) / h) / h;
            double dhi = b + 1 == strategy.nba_bins
                             ? 0.0
                             : sig_deriv((conf[i] - hi) / h) / h;
            dci += outer[b] * (dlo - dhi);
          }
          g(i, conf_idx[i]) += gamma * inv_n * dci;
        }
      }
      backward_from_probs(params, mask, fr.trace, g, out.grads);
      break;
    }
  }

  if (std::isnan(out.loss)) {
    throw NumericError("loss_and_grad: loss is NaN");
  }

  // Masking contract: gradients vanish at pruned coordinates.
  for (std::size_t l = 0; l < out.grads.size(); ++l) {
    Matrix& gw = out.grads[l].weights;
    const Matrix& m = mask.layers[l];
    for (std::size_t i = 0; i < gw.size(); ++i) gw[i] *= m[i];
  }
  return out;
}

}  // namespace lth
