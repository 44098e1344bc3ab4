#pragma once

#include "lth/calib.hpp"
#include "lth/network.hpp"

namespace lth {

struct LossGrad {
  double loss = 0.0;
  std::vector<LayerParams> grads;  // shaped like ParamSet layers
};

// Loss value and reverse-mode gradients for the active strategy on one
// batch. Weighting coefficients alpha_i / beta_i are constants w.r.t.
// the gradients; gradient entries at masked-out weights are zero.
LossGrad loss_and_grad(const ParamSet& params, const Mask& mask,
                       const Batch& batch, const StrategySpec& strategy,
                       RandomStream& rng);

// Backprop dL/dprobs through softmax and the dense/relu/dropout stack of
// one recorded forward pass, accumulating into grads.
void backward_from_probs(const ParamSet& params, const Mask& mask,
                         const ForwardTrace& trace, const Matrix& dloss_dprobs,
                         std::vector<LayerParams>& grads);

std::vector<LayerParams> zero_grads(const ParamSet& params);

}  // namespace lth
