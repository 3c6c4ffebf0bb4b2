#include "rswin/params.hpp"

namespace rswin {

LayerNormParams LayerNormParams::init(std::size_t dim) {
  return {Tensor::parameter(Array::ones({dim})), Tensor::parameter(Array::zeros({dim}))};
}

void LayerNormParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

}  // namespace rswin
