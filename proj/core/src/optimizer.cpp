#include "rswin/optimizer.hpp"

#include <cmath>

#include "rswin/errors.hpp"

namespace rswin {

void adam_step(std::span<Tensor> params, OptimState& state, double lr, double weight_decay,
               WeightDecayMode mode) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Array::zeros(p.shape()));
      state.v.push_back(Array::zeros(p.shape()));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                     " moments for " + std::to_string(params.size()) + " parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Array& m = state.m[i];
    Array& v = state.v[i];
    if (m.shape() != p.shape() || v.shape() != p.shape()) {
      throw ShapeError("adam_step: moment shape " + shape_str(m.shape()) +
                       " does not match parameter " + shape_str(p.shape()));
    }
    const Array grad = p.grad();
    auto& w = p.mutable_value();
    for (std::size_t j = 0; j < w.size(); ++j) {
      double g = grad[j];
      if (mode == WeightDecayMode::l2) g += weight_decay * w[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      if (mode == WeightDecayMode::decoupled && weight_decay != 0.0) {
        w[j] -= lr * weight_decay * w[j];
      }
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

}  // namespace rswin
