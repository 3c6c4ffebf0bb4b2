#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "rswin/tensor.hpp"

namespace rswin {

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Shape broadcast_shapes(const Shape& a, const Shape& b);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

// a[..., m, k] x b[..., k, n] with broadcastable leading dims. A rank-1 b is
// not accepted; rank >= 2 on both sides.
Tensor matmul(const Tensor& a, const Tensor& b);
// x[..., in] * w[in, out] (+ bias[out]).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor());

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over one axis; the axis is removed from the shape.
Tensor mean_axis(const Tensor& x, int axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);

// out.flat[i] = x.flat[index[i]]. Every layout shuffle (patchify, window
// partition, cyclic shift, permute) lowers onto this; backward scatters.
using IndexMap = std::shared_ptr<const std::vector<std::size_t>>;
Tensor gather(const Tensor& x, Shape out_shape, IndexMap index);

Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);

Tensor softmax(const Tensor& x, int axis = -1);
// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gamma + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& x);
// x[B,H,W,C] convolved per channel with kernel[k,k,C], stride 1, zero "same"
// padding; k must be odd.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel);
// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

}  // namespace rswin
