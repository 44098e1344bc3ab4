#pragma once

#include <cstdint>
#include <utility>
#include <variant>
#include <vector>

#include "lth/network.hpp"

namespace lth {

struct AdamState {
  std::vector<LayerParams> m;
  std::vector<LayerParams> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct SgdState {
  std::vector<LayerParams> momentum_buf;
  double momentum = 0.9;
  double weight_decay = 0.0;
  // (epoch, factor) pairs; lr is multiplied by factor from that epoch on.
  std::vector<std::pair<std::size_t, double>> milestones;
};

using OptimState = std::variant<AdamState, SgdState>;

AdamState make_adam(const ParamSet& params);
SgdState make_sgd(const ParamSet& params, double momentum,
                  double weight_decay,
                  std::vector<std::pair<std::size_t, double>> milestones = {});

// In-place update. Masked-out weight coordinates are exactly 0 afterwards.
void optimizer_step(ParamSet& params, const std::vector<LayerParams>& grads,
                    OptimState& state, double lr, const Mask& mask);

double lr_for_epoch(double base_lr,
                    const std::vector<std::pair<std::size_t, double>>& milestones,
                    std::size_t epoch);

}  // namespace lth
