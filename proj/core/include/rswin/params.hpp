#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rswin/ops.hpp"
#include "rswin/tensor.hpp"

namespace rswin {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Affine parameters of one layer norm over the last axis.
struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  static LayerNormParams init(std::size_t dim);
  Tensor apply(const Tensor& x, double eps = 1e-5) const {
    return layer_norm(x, gamma, beta, eps);
  }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

}  // namespace rswin
