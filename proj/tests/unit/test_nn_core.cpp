#include <cmath>

#include "doctest.h"
#include "lth/errors.hpp"
#include "lth/metrics.hpp"
#include "lth/optimizer.hpp"
#include "lth/train.hpp"
#include "test_helpers.hpp"

using namespace lth;

namespace {

NetworkSpec tiny_spec(std::uint64_t seed, double dropout = 0.0) {
  return {.layer_dims = {6, 5, 4, 3}, .dropout_rate = dropout, .seed = seed};
}

// Straight-line forward at extended precision, independent of Matrix and
// the production forward path.
std::vector<long double> oracle_forward_row(const ParamSet& params,
                                            const Mask& mask,
                                            std::span<const double> x) {
  std::vector<long double> h(x.begin(), x.end());
  const std::size_t num_layers = params.spec().num_weight_layers();
  for (std::size_t l = 0; l < num_layers; ++l) {
    const LayerParams& lp = params.layers()[l];
    std::vector<long double> z(lp.biases.size());
    for (std::size_t o = 0; o < z.size(); ++o) {
      long double acc = lp.biases[o];
      for (std::size_t i = 0; i < h.size(); ++i) {
        acc += static_cast<long double>(lp.weights(o, i)) *
               static_cast<long double>(mask.layers[l](o, i)) * h[i];
      }
      z[o] = acc;
    }
    if (l + 1 == num_layers) {
      long double mx = z[0];
      for (long double v : z) mx = std::max(mx, v);
      long double sum = 0.0L;
      for (long double& v : z) {
        v = std::exp(v - mx);
        sum += v;
      }
      for (long double& v : z) v /= sum;
    } else {
      for (long double& v : z) v = v > 0.0L ? v : 0.0L;
    }
    h = std::move(z);
  }
  return h;
}

// Mean prediction over the strategy's stochastic passes, replaying the
// exact rng stream loss_and_grad consumes.
Matrix mean_passes(const ParamSet& params, const Mask& mask, const Matrix& x,
                   const StrategySpec& strategy, std::uint64_t seed) {
  RandomStream rng(seed, 77);
  auto passes =
      stochastic_forward(params, mask, x, strategy.stochastic_passes, rng);
  Matrix mean = passes.front();
  for (std::size_t t = 1; t < passes.size(); ++t) {
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += passes[t][i];
  }
  for (std::size_t i = 0; i < mean.size(); ++i) {
    mean[i] /= static_cast<double>(passes.size());
  }
  return mean;
}

// Loss with the per-sample weighting coefficients held fixed at the
// unperturbed parameters; alpha/beta are constants w.r.t. gradients, so
// the finite-difference oracle must freeze them too. For the other
// strategies the coefficients vector is empty and the library loss (with
// replayed rng) is differentiated directly.
double frozen_loss(const ParamSet& params, const Mask& mask,
                   const Batch& batch, const StrategySpec& strategy,
                   std::uint64_t seed, const std::vector<double>& coeffs) {
  switch (strategy.kind) {
    case StrategyKind::Lwcc: {
      Matrix p = forward_probs(params, mask, batch.inputs);
      double total = 0.0;
      for (std::size_t i = 0; i < p.rows(); ++i) {
        total += -std::log(std::max(p(i, batch.labels[i]), kLogFloor)) +
                 coeffs[i] * kl_uniform(p.row(i));
      }
      return total / static_cast<double>(p.rows());
    }
    case StrategyKind::LwccSi: {
      Matrix p = mean_passes(params, mask, batch.inputs, strategy, seed);
      double total = 0.0;
      for (std::size_t i = 0; i < p.rows(); ++i) {
        total += -std::log(std::max(p(i, batch.labels[i]), kLogFloor)) +
                 coeffs[i] * kl_uniform(p.row(i));
      }
      return total / static_cast<double>(p.rows());
    }
    case StrategyKind::Vwcc: {
      Matrix p = mean_passes(params, mask, batch.inputs, strategy, seed);
      double total = 0.0;
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double ce = -std::log(std::max(p(i, batch.labels[i]), kLogFloor));
        total += (1.0 - coeffs[i]) * ce + coeffs[i] * kl_uniform(p.row(i));
      }
      return total / static_cast<double>(p.rows());
    }
    default: {
      RandomStream rng(seed, 77);
      return loss_and_grad(params, mask, batch, strategy, rng).loss;
    }
  }
}

std::vector<double> base_coeffs(const ParamSet& params, const Mask& mask,
                                const Batch& batch,
                                const StrategySpec& strategy,
                                std::uint64_t seed) {
  std::vector<double> coeffs;
  if (strategy.kind == StrategyKind::Lwcc) {
    Matrix p = forward_probs(params, mask, batch.inputs);
    for (std::size_t i = 0; i < p.rows(); ++i) {
      coeffs.push_back(lwcc_beta(p.row(i), batch.labels[i]));
    }
  } else if (strategy.kind == StrategyKind::LwccSi) {
    Matrix p = mean_passes(params, mask, batch.inputs, strategy, seed);
    for (std::size_t i = 0; i < p.rows(); ++i) {
      coeffs.push_back(lwcc_beta(p.row(i), batch.labels[i]));
    }
  } else if (strategy.kind == StrategyKind::Vwcc) {
    RandomStream rng(seed, 77);
    auto passes = stochastic_forward(params, mask, batch.inputs,
                                     strategy.stochastic_passes, rng);
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      Matrix per_sample(passes.size(), passes[0].cols());
      for (std::size_t t = 0; t < passes.size(); ++t) {
        for (std::size_t c = 0; c < passes[0].cols(); ++c) {
          per_sample(t, c) = passes[t](i, c);
        }
      }
      coeffs.push_back(
          vwcc_alpha(per_sample, strategy.vwcc_alpha_complement));
    }
  }
  return coeffs;
}

// Central finite differences over every parameter coordinate.
void check_gradients(const StrategySpec& strategy, std::uint64_t seed,
                     double dropout) {
  NetworkSpec spec = tiny_spec(seed, dropout);
  ParamSet params = init_network(spec);
  Mask mask = test::random_mask(spec, 0.85, seed + 1);
  Batch batch = test::random_batch(6, 6, 3, seed + 2);

  RandomStream rng(seed, 77);
  LossGrad lg = loss_and_grad(params, mask, batch, strategy, rng);
  std::vector<double> coeffs =
      base_coeffs(params, mask, batch, strategy, seed);

  // The frozen loss at the base point must agree with the library loss.
  double base = frozen_loss(params, mask, batch, strategy, seed, coeffs);
  CHECK(base == doctest::Approx(lg.loss).epsilon(1e-12));

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t l = 0; l < params.layers().size(); ++l) {
    auto check_coord = [&](double& coord, double analytic) {
      double saved = coord;
      coord = saved + h;
      double up = frozen_loss(params, mask, batch, strategy, seed, coeffs);
      coord = saved - h;
      double down = frozen_loss(params, mask, batch, strategy, seed, coeffs);
      coord = saved;
      double fd = (up - down) / (2.0 * h);
      double rel = std::abs(analytic - fd) /
                   std::max({std::abs(analytic), std::abs(fd), 1e-5});
      worst = std::max(worst, rel);
    };
    Matrix& w = params.layers()[l].weights;
    for (std::size_t i = 0; i < w.size(); ++i) {
      check_coord(w[i], lg.grads[l].weights[i]);
    }
    auto& b = params.layers()[l].biases;
    for (std::size_t i = 0; i < b.size(); ++i) {
      check_coord(b[i], lg.grads[l].biases[i]);
    }
  }
  CAPTURE(to_string(strategy.kind));
  CHECK(worst < 1e-4);
}

}  // namespace

TEST_CASE("init_network is deterministic and snapshot equals params") {
  NetworkSpec spec{.layer_dims = {4, 3, 2}, .dropout_rate = 0.0, .seed = 7};
  ParamSet a = init_network(spec);
  ParamSet b = init_network(spec);
  CHECK(a.layers() == b.layers());
  CHECK(a.layers() == a.init_snapshot());
}

TEST_CASE("init_network lenet shapes") {
  NetworkSpec spec{.layer_dims = {784, 300, 100, 10}, .dropout_rate = 0.0,
                   .seed = 1};
  ParamSet p = init_network(spec);
  REQUIRE(p.layers().size() == 3);
  CHECK(p.layers()[0].weights.rows() == 300);
  CHECK(p.layers()[0].weights.cols() == 784);
  CHECK(p.layers()[1].weights.rows() == 100);
  CHECK(p.layers()[1].weights.cols() == 300);
  CHECK(p.layers()[2].weights.rows() == 10);
  CHECK(p.layers()[2].weights.cols() == 100);
}

TEST_CASE("init_network rejects invalid specs") {
  CHECK_THROWS_AS(init_network({.layer_dims = {5}, .dropout_rate = 0.0,
                                .seed = 0}),
                  ConfigError);
  CHECK_THROWS_AS(init_network({.layer_dims = {5, 1}, .dropout_rate = 0.0,
                                .seed = 0}),
                  ConfigError);
  CHECK_THROWS_AS(init_network({.layer_dims = {5, 3}, .dropout_rate = 1.0,
                                .seed = 0}),
                  ConfigError);
}

TEST_CASE("forward with zero params is uniform") {
  NetworkSpec spec = tiny_spec(3);
  ParamSet params = init_network(spec);
  for (auto& lp : params.layers()) {
    for (std::size_t i = 0; i < lp.weights.size(); ++i) lp.weights[i] = 0.0;
    for (auto& b : lp.biases) b = 0.0;
  }
  Mask mask = Mask::ones_like(spec);
  Matrix x(2, 6, 0.5);
  Matrix probs = forward_probs(params, mask, x);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    CHECK(probs[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("forward deterministic with dropout off, rows sum to 1") {
  NetworkSpec spec = tiny_spec(11, 0.3);
  ParamSet params = init_network(spec);
  Mask mask = Mask::ones_like(spec);
  Batch batch = test::random_batch(5, 6, 3, 4);
  Matrix p1 = forward_probs(params, mask, batch.inputs);
  Matrix p2 = forward_probs(params, mask, batch.inputs);
  CHECK(p1 == p2);
  for (std::size_t i = 0; i < p1.rows(); ++i) {
    double sum = 0.0;
    for (double v : p1.row(i)) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("forward matches extended-precision straight-line oracle") {
  NetworkSpec spec{.layer_dims = {5, 4, 3}, .dropout_rate = 0.0, .seed = 21};
  ParamSet params = init_network(spec);
  Mask mask = test::random_mask(spec, 0.8, 5);
  Batch batch = test::random_batch(1, 5, 3, 6);
  Matrix probs = forward_probs(params, mask, batch.inputs);
  auto expected = oracle_forward_row(params, mask, batch.inputs.row(0));
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(std::abs(probs(0, k) - static_cast<double>(expected[k])) < 1e-12);
  }
}

TEST_CASE("mask absorption: forward(p, mask) == forward(p (.) mask, ones)") {
  NetworkSpec spec = tiny_spec(17);
  ParamSet params = init_network(spec);
  Mask mask = test::random_mask(spec, 0.6, 18);
  ParamSet absorbed = params;
  for (std::size_t l = 0; l < absorbed.layers().size(); ++l) {
    Matrix& w = absorbed.layers()[l].weights;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] *= mask.layers[l][i];
  }
  Batch batch = test::random_batch(4, 6, 3, 19);
  CHECK(forward_probs(params, mask, batch.inputs) ==
        forward_probs(absorbed, Mask::ones_like(spec), batch.inputs));
}

TEST_CASE("forward error paths") {
  NetworkSpec spec = tiny_spec(1);
  ParamSet params = init_network(spec);
  Mask mask = Mask::ones_like(spec);
  RandomStream rng(0);
  Matrix wrong(2, 5, 0.1);
  CHECK_THROWS_AS(forward(params, mask, wrong, false, rng), DimensionError);
  Matrix bad(1, 6, 0.1);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(forward(params, mask, bad, false, rng), NumericError);
  Mask short_mask = mask;
  short_mask.layers.pop_back();
  Matrix ok(1, 6, 0.1);
  CHECK_THROWS_AS(forward(params, short_mask, ok, false, rng), DimensionError);
}

TEST_CASE("stochastic_forward basics") {
  NetworkSpec spec = tiny_spec(23, 0.0);
  ParamSet params = init_network(spec);
  Mask mask = Mask::ones_like(spec);
  Batch batch = test::random_batch(3, 6, 3, 24);

  RandomStream rng(9);
  auto passes = stochastic_forward(params, mask, batch.inputs, 4, rng);
  REQUIRE(passes.size() == 4);
  for (const auto& p : passes) CHECK(p == passes[0]);  // rate 0

  NetworkSpec dspec = tiny_spec(23, 0.4);
  ParamSet dparams = init_network(dspec);
  RandomStream r1(9), r2(9);
  auto one = stochastic_forward(dparams, mask, batch.inputs, 1, r1);
  auto direct = forward(dparams, mask, batch.inputs, true, r2).probs;
  CHECK(one[0] == direct);

  RandomStream r3(9);
  CHECK_THROWS_AS(stochastic_forward(dparams, mask, batch.inputs, 0, r3),
                  ConfigError);
}

TEST_CASE("stochastic passes average to deterministic activations") {
  NetworkSpec spec{.layer_dims = {4, 8, 3}, .dropout_rate = 0.3, .seed = 31};
  ParamSet params = init_network(spec);
  Mask mask = Mask::ones_like(spec);
  Matrix x(1, 4);
  for (std::size_t j = 0; j < 4; ++j) x(0, j) = 0.2 + 0.1 * (double)j;

  RandomStream det_rng(0);
  auto det = forward(params, mask, x, false, det_rng);
  const Matrix& target = det.trace.post_acts[0];  // hidden activations

  const std::size_t t_passes = 1000;
  RandomStream rng(5);
  Matrix sum(1, 8);
  Matrix sum_sq(1, 8);
  for (std::size_t t = 0; t < t_passes; ++t) {
    auto fr = forward(params, mask, x, true, rng);
    const Matrix& h = fr.trace.post_acts[0];
    for (std::size_t j = 0; j < 8; ++j) {
      sum(0, j) += h(0, j);
      sum_sq(0, j) += h(0, j) * h(0, j);
    }
  }
  for (std::size_t j = 0; j < 8; ++j) {
    double mean = sum(0, j) / t_passes;
    double var = sum_sq(0, j) / t_passes - mean * mean;
    double se = std::sqrt(std::max(var, 0.0) / t_passes);
    CHECK(std::abs(mean - target(0, j)) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("gradients match finite differences for every strategy") {
  // Seeds sit at generic (kink-free) points of the relu network, so the
  // central-difference stencil stays on one smooth piece.
  StrategySpec s;
  s.kind = StrategyKind::None;
  check_gradients(s, 102, 0.0);
  s.kind = StrategyKind::Mixup;
  check_gradients(s, 102, 0.0);
  s.kind = StrategyKind::Mda;
  s.gamma_d = 0.2;
  check_gradients(s, 102, 0.0);
  s.kind = StrategyKind::Lwcc;
  check_gradients(s, 102, 0.0);
  s.kind = StrategyKind::Nba;
  s.gamma_n = 0.3;
  s.nba_bins = 5;
  check_gradients(s, 102, 0.0);
  s.kind = StrategyKind::Vwcc;
  s.stochastic_passes = 3;
  check_gradients(s, 107, 0.25);
  s.kind = StrategyKind::LwccSi;
  check_gradients(s, 107, 0.25);
}

TEST_CASE("masked gradient coordinates are exactly zero") {
  NetworkSpec spec = tiny_spec(41);
  ParamSet params = init_network(spec);
  Mask mask = test::random_mask(spec, 0.5, 42);
  Batch batch = test::random_batch(4, 6, 3, 43);
  StrategySpec strategy;
  RandomStream rng(44);
  LossGrad lg = loss_and_grad(params, mask, batch, strategy, rng);
  for (std::size_t l = 0; l < lg.grads.size(); ++l) {
    for (std::size_t i = 0; i < lg.grads[l].weights.size(); ++i) {
      if (mask.layers[l][i] == 0.0) {
        CHECK(lg.grads[l].weights[i] == 0.0);
      }
    }
  }
  CHECK_THROWS_AS(
      loss_and_grad(params, mask,
                    Batch{Matrix(0, 6), {}, 3, std::nullopt}, strategy, rng),
      DataError);
}

TEST_CASE("sgd with zero gradients is a fixed point") {
  NetworkSpec spec = tiny_spec(51);
  ParamSet params = init_network(spec);
  auto before = params.layers();
  Mask mask = Mask::ones_like(spec);
  OptimState state = make_sgd(params, 0.9, 0.0);
  optimizer_step(params, zero_grads(params), state, 0.1, mask);
  CHECK(params.layers() == before);
}

TEST_CASE("adam first step magnitude is ~lr") {
  NetworkSpec spec = tiny_spec(52);
  ParamSet params = init_network(spec);
  double w0 = params.layers()[0].weights[0];
  Mask mask = Mask::ones_like(spec);
  OptimState state = make_adam(params);
  auto grads = zero_grads(params);
  double g = 0.37;
  grads[0].weights[0] = g;
  double lr = 1e-3;
  optimizer_step(params, grads, state, lr, mask);
  double update = std::abs(params.layers()[0].weights[0] - w0);
  double expected = lr * std::abs(g) / (std::abs(g) + 1e-8);
  CHECK(update == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("optimizer re-applies mask and rejects bad lr") {
  NetworkSpec spec = tiny_spec(53);
  ParamSet params = init_network(spec);
  Mask mask = Mask::ones_like(spec);
  mask.layers[0][0] = 0.0;
  params.layers()[0].weights[0] = 0.0;
  OptimState state = make_adam(params);
  auto grads = zero_grads(params);
  grads[0].weights[0] = 5.0;  // nonzero incoming gradient at masked coord
  optimizer_step(params, grads, state, 0.01, mask);
  CHECK(params.layers()[0].weights[0] == 0.0);
  CHECK_THROWS_AS(optimizer_step(params, grads, state, 0.0, mask), ConfigError);
}

TEST_CASE("milestone schedule multiplies lr") {
  std::vector<std::pair<std::size_t, double>> ms{{80, 0.1}, {120, 0.1}};
  CHECK(lr_for_epoch(0.01, ms, 0) == doctest::Approx(0.01));
  CHECK(lr_for_epoch(0.01, ms, 79) == doctest::Approx(0.01));
  CHECK(lr_for_epoch(0.01, ms, 80) == doctest::Approx(0.001));
  CHECK(lr_for_epoch(0.01, ms, 130) == doctest::Approx(0.0001));
}

TEST_CASE("training never mutates the init snapshot and is deterministic") {
  NetworkSpec spec = tiny_spec(61);
  auto run_steps = [&](int steps) {
    ParamSet params = init_network(spec);
    Mask mask = Mask::ones_like(spec);
    OptimState state = make_adam(params);
    StrategySpec strategy;
    RandomStream rng(62);
    Batch batch = test::random_batch(8, 6, 3, 63);
    for (int s = 0; s < steps; ++s) {
      LossGrad lg = loss_and_grad(params, mask, batch, strategy, rng);
      optimizer_step(params, lg.grads, state, 1e-2, mask);
    }
    return params;
  };
  ParamSet reference = init_network(spec);
  ParamSet a = run_steps(10);
  ParamSet b = run_steps(10);
  CHECK(a.layers() == b.layers());  // bit-identical trajectory
  CHECK(a.init_snapshot() == reference.layers());
  CHECK(!(a.layers() == reference.layers()));
}
