#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rswin/tensor.hpp"

namespace rswin {

// Adam moments, one pair per parameter in ModelParams::named_parameters()
// order. Empty until the first step.
struct OptimState {
  std::vector<Array> m;
  std::vector<Array> v;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class WeightDecayMode { decoupled, l2 };

// One bias-corrected Adam update from the gradients currently held by
// `params`. Decoupled mode applies p -= lr * wd * p separately from the
// moment update; l2 mode folds wd * p into the gradient.
void adam_step(std::span<Tensor> params, OptimState& state, double lr, double weight_decay,
               WeightDecayMode mode = WeightDecayMode::decoupled);

}  // namespace rswin
