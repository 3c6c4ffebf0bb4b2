#include "rswin/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "rswin/errors.hpp"

namespace rswin {

namespace {

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Strides of `in` aligned to the trailing dims of `out`, zero where `in` is
// broadcast.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> s(out.size(), 0);
  const auto in_strides = strides_of(in);
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    s[off + i] = in[i] == 1 ? 0 : in_strides[i];
  }
  return s;
}

// Calls f(out_index, a_index, b_index) for every element of the broadcast
// result.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const std::size_t n = shape_numel(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t nb = shape_numel(b);
  if (a == out && b.size() <= out.size() &&
      std::equal(b.begin(), b.end(), out.end() - static_cast<std::ptrdiff_t>(b.size()))) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i % nb);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t rank = out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul, div };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  Array out(out_shape);
  const auto& av = a.value();
  const auto& bv = b.value();
  for_each_broadcast(out_shape, av.shape(), bv.shape(),
                     [&](std::size_t i, std::size_t ia, std::size_t ib) {
                       switch (kind) {
                         case BinaryKind::add: out[i] = av[ia] + bv[ib]; break;
                         case BinaryKind::sub: out[i] = av[ia] - bv[ib]; break;
                         case BinaryKind::mul: out[i] = av[ia] * bv[ib]; break;
                         case BinaryKind::div: out[i] = av[ia] / bv[ib]; break;
                       }
                     });
  return record(
      std::move(out), {a, b},
      [a, b, kind, out_shape](const Array& g, std::span<Array* const> grads) {
        const auto& av = a.value();
        const auto& bv = b.value();
        Array* ga = grads[0];
        Array* gb = grads[1];
        for_each_broadcast(out_shape, av.shape(), bv.shape(),
                           [&](std::size_t i, std::size_t ia, std::size_t ib) {
                             const double gi = g[i];
                             switch (kind) {
                               case BinaryKind::add:
                                 if (ga) (*ga)[ia] += gi;
                                 if (gb) (*gb)[ib] += gi;
                                 break;
                               case BinaryKind::sub:
                                 if (ga) (*ga)[ia] += gi;
                                 if (gb) (*gb)[ib] -= gi;
                                 break;
                               case BinaryKind::mul:
                                 if (ga) (*ga)[ia] += gi * bv[ib];
                                 if (gb) (*gb)[ib] += gi * av[ia];
                                 break;
                               case BinaryKind::div:
                                 if (ga) (*ga)[ia] += gi / bv[ib];
                                 if (gb) (*gb)[ib] -= gi * av[ia] / (bv[ib] * bv[ib]);
                                 break;
                             }
                           });
      },
      name);
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
void gemm_nt(const double* G, const double* B, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* g = G + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* b = B + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += g[j] * b[j];
      C[i * k + p] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
void gemm_tn(const double* A, const double* G, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* g = G + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      double* c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * g[j];
    }
  }
}

// outer x axis x inner factorization around one axis.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::div, "div"); }

Tensor scale(const Tensor& x, double factor) {
  Array out = x.value();
  for (auto& v : out.vec()) v *= factor;
  return record(
      std::move(out), {x},
      [factor](const Array& g, std::span<Array* const> grads) {
        auto& gx = *grads[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
      },
      "scale");
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shapes(x.shape(), shape) != shape) {
    throw ShapeError("cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Array out(shape);
  const auto& xv = x.value();
  for_each_broadcast(shape, shape, xv.shape(),
                     [&](std::size_t i, std::size_t, std::size_t ix) { out[i] = xv[ix]; });
  const Shape in_shape = x.shape();
  return record(
      std::move(out), {x},
      [shape, in_shape](const Array& g, std::span<Array* const> grads) {
        auto& gx = *grads[0];
        for_each_broadcast(shape, shape, in_shape,
                           [&](std::size_t i, std::size_t, std::size_t ix) { gx[ix] += g[i]; });
      },
      "broadcast_to");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(as) + " and " +
                     shape_str(bs));
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t k2 = bs[bs.size() - 2];
  const std::size_t n = bs.back();
  if (k != k2) {
    throw ShapeError("matmul inner dimension mismatch: " + shape_str(as) + " x " +
                     shape_str(bs));
  }
  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  Shape batch;
  try {
    batch = broadcast_shapes(a_batch, b_batch);
  } catch (const ShapeError&) {
    throw ShapeError("matmul batch dims not broadcastable: " + shape_str(as) + " x " +
                     shape_str(bs));
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  // Pairs of (a block, b block) per output block.
  const std::size_t nbatch = shape_numel(batch);
  auto pairs = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>(nbatch);
  for_each_broadcast(batch, a_batch, b_batch,
                     [&](std::size_t i, std::size_t ia, std::size_t ib) { (*pairs)[i] = {ia, ib}; });

  Array out(out_shape);
  const double* A = a.value().data().data();
  const double* B = b.value().data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < nbatch; ++i) {
    const auto [ia, ib] = (*pairs)[i];
    gemm_nn(A + ia * m * k, B + ib * k * n, C + i * m * n, m, k, n);
  }
  return record(
      std::move(out), {a, b},
      [a, b, pairs, m, k, n](const Array& g, std::span<Array* const> grads) {
        const double* A = a.value().data().data();
        const double* B = b.value().data().data();
        const double* G = g.data().data();
        for (std::size_t i = 0; i < pairs->size(); ++i) {
          const auto [ia, ib] = (*pairs)[i];
          if (grads[0]) {
            gemm_nt(G + i * m * n, B + ib * k * n, grads[0]->data().data() + ia * m * k, m, k, n);
          }
          if (grads[1]) {
            gemm_tn(A + ia * m * k, G + i * m * n, grads[1]->data().data() + ib * k * n, m, k, n);
          }
        }
      },
      "matmul");
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.dim(-1) != weight.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  // Flatten leading dims so the weight is applied in one product.
  const std::size_t in = weight.dim(0);
  const std::size_t rows = x.numel() / in;
  Tensor y = matmul(reshape(x, {rows, in}), weight);
  if (bias.defined()) y = add(y, bias);
  Shape out_shape = x.shape();
  out_shape.back() = weight.dim(1);
  return reshape(y, std::move(out_shape));
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return record(
      Array::scalar(s), {x},
      [](const Array& g, std::span<Array* const> grads) {
        const double gv = g[0];
        for (auto& v : grads[0]->vec()) v += gv;
      },
      "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_axis(const Tensor& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  Array out(out_shape);
  const auto& xv = x.value();
  const double inv = 1.0 / static_cast<double>(s.len);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.len; ++l) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        out[o * s.inner + i] += xv[(o * s.len + l) * s.inner + i];
      }
    }
  }
  for (auto& v : out.vec()) v *= inv;
  return record(
      std::move(out), {x},
      [s, inv](const Array& g, std::span<Array* const> grads) {
        auto& gx = *grads[0];
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t l = 0; l < s.len; ++l) {
            for (std::size_t i = 0; i < s.inner; ++i) {
              gx[(o * s.len + l) * s.inner + i] += g[o * s.inner + i] * inv;
            }
          }
        }
      },
      "mean_axis");
}

Tensor reshape(const Tensor& x, Shape shape) {
  Array out = x.value().reshaped(std::move(shape));
  return record(
      std::move(out), {x},
      [](const Array& g, std::span<Array* const> grads) {
        auto& gx = *grads[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      "reshape");
}

Tensor gather(const Tensor& x, Shape out_shape, IndexMap index) {
  if (shape_numel(out_shape) != index->size()) {
    throw ShapeError("gather: index length " + std::to_string(index->size()) +
                     " does not match output shape " + shape_str(out_shape));
  }
  const auto& xv = x.value();
  Array out(std::move(out_shape));
  for (std::size_t i = 0; i < index->size(); ++i) out[i] = xv[(*index)[i]];
  return record(
      std::move(out), {x},
      [index](const Array& g, std::span<Array* const> grads) {
        auto& gx = *grads[0];
        for (std::size_t i = 0; i < index->size(); ++i) gx[(*index)[i]] += g[i];
      },
      "gather");
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  if (axes.size() != in.size()) {
    throw ShapeError("permute: " + std::to_string(axes.size()) + " axes for shape " +
                     shape_str(in));
  }
  std::vector<bool> seen(in.size(), false);
  Shape out_shape(in.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= in.size() || seen[axes[i]]) {
      throw ShapeError("permute: invalid axis list for shape " + shape_str(in));
    }
    seen[axes[i]] = true;
    out_shape[i] = in[axes[i]];
  }
  const auto in_strides = strides_of(in);
  std::vector<std::size_t> src_strides(in.size());
  for (std::size_t i = 0; i < axes.size(); ++i) src_strides[i] = in_strides[axes[i]];

  auto index = std::make_shared<std::vector<std::size_t>>(shape_numel(out_shape));
  std::vector<std::size_t> idx(out_shape.size(), 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < index->size(); ++i) {
    (*index)[i] = src;
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      ++idx[d];
      src += src_strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return gather(x, std::move(out_shape), std::move(index));
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2");
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != b.rank()) {
    throw ShapeError("concat rank mismatch: " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t ax = norm_axis(axis, a.rank());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != ax && a.shape()[i] != b.shape()[i]) {
      throw ShapeError("concat shape mismatch: " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
    }
  }
  const AxisSplit sa = split_axis(a.shape(), ax);
  const AxisSplit sb = split_axis(b.shape(), ax);
  const std::size_t la = sa.len * sa.inner;
  const std::size_t lb = sb.len * sb.inner;
  Shape out_shape = a.shape();
  out_shape[ax] += b.shape()[ax];
  Array out(out_shape);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t o = 0; o < sa.outer; ++o) {
    std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(o * la), la,
                out.data().begin() + static_cast<std::ptrdiff_t>(o * (la + lb)));
    std::copy_n(bv.data().begin() + static_cast<std::ptrdiff_t>(o * lb), lb,
                out.data().begin() + static_cast<std::ptrdiff_t>(o * (la + lb) + la));
  }
  const std::size_t outer = sa.outer;
  return record(
      std::move(out), {a, b},
      [outer, la, lb](const Array& g, std::span<Array* const> grads) {
        for (std::size_t o = 0; o < outer; ++o) {
          if (grads[0]) {
            for (std::size_t i = 0; i < la; ++i) (*grads[0])[o * la + i] += g[o * (la + lb) + i];
          }
          if (grads[1]) {
            for (std::size_t i = 0; i < lb; ++i) {
              (*grads[1])[o * lb + i] += g[o * (la + lb) + la + i];
            }
          }
        }
      },
      "concat");
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(axis, x.rank());
  if (start + length > x.shape()[ax]) {
    throw ShapeError("slice [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of range for axis of size " +
                     std::to_string(x.shape()[ax]));
  }
  const AxisSplit s = split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  Array out(out_shape);
  const auto& xv = x.value();
  const std::size_t chunk = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < chunk; ++i) {
      out[o * chunk + i] = xv[(o * s.len + start) * s.inner + i];
    }
  }
  return record(
      std::move(out), {x},
      [s, start, chunk](const Array& g, std::span<Array* const> grads) {
        auto& gx = *grads[0];
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < chunk; ++i) {
            gx[(o * s.len + start) * s.inner + i] += g[o * chunk + i];
          }
        }
      },
      "slice");
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), ax);
  const auto& xv = x.value();
  Array out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, xv[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const double e = std::exp(xv[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= z;
    }
  }
  auto y = std::make_shared<Array>(out);
  return record(
      std::move(out), {x},
      [s, y](const Array& g, std::span<Array* const> grads) {
        auto& gx = *grads[0];
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.len * s.inner + i;
            double dot = 0.0;
            for (std::size_t l = 0; l < s.len; ++l) {
              dot += g[base + l * s.inner] * (*y)[base + l * s.inner];
            }
            for (std::size_t l = 0; l < s.len; ++l) {
              const std::size_t j = base + l * s.inner;
              gx[j] += (*y)[j] * (g[j] - dot);
            }
          }
        }
      },
      "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match last dim of " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  auto xhat = std::make_shared<Array>(x.shape());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  Array out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return record(
      std::move(out), {x, gamma, beta},
      [gamma, xhat, rstd, rows, d](const Array& g, std::span<Array* const> grads) {
        const auto& gv = gamma.value();
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dxhat = 0.0;
          double mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t i = r * d + j;
            dxhat[j] = g[i] * gv[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * (*xhat)[i];
            if (grads[1]) (*grads[1])[j] += g[i] * (*xhat)[i];
            if (grads[2]) (*grads[2])[j] += g[i];
          }
          if (!grads[0]) continue;
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_xhat /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t i = r * d + j;
            (*grads[0])[i] += (*rstd)[r] * (dxhat[j] - mean_dxhat - (*xhat)[i] * mean_dxhat_xhat);
          }
        }
      },
      "layer_norm");
}

Tensor gelu(const Tensor& x) {
  const auto& xv = x.value();
  Array out(x.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
  }
  return record(
      std::move(out), {x},
      [x](const Array& g, std::span<Array* const> grads) {
        const auto& xv = x.value();
        auto& gx = *grads[0];
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < xv.size(); ++i) {
          const double v = xv[i];
          const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
          const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
          gx[i] += g[i] * (cdf + v * pdf);
        }
      },
      "gelu");
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 4 || kernel.rank() != 3) {
    throw ShapeError("depthwise_conv2d expects x[B,H,W,C] and kernel[k,k,C], got " +
                     shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  }
  const std::size_t B = x.dim(0);
  const std::size_t H = x.dim(1);
  const std::size_t W = x.dim(2);
  const std::size_t C = x.dim(3);
  const std::size_t k = kernel.dim(0);
  if (kernel.dim(1) != k || k % 2 == 0) {
    throw ShapeError("depthwise_conv2d kernel must be odd and square, got " +
                     shape_str(kernel.shape()));
  }
  if (kernel.dim(2) != C) {
    throw ShapeError("depthwise_conv2d channel mismatch: input " + shape_str(x.shape()) +
                     ", kernel " + shape_str(kernel.shape()));
  }
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  const auto Hs = static_cast<std::ptrdiff_t>(H);
  const auto Ws = static_cast<std::ptrdiff_t>(W);

  // Visits every (output, input, kernel) triple that lies inside the image.
  auto visit = [=](auto&& f) {
    for (std::size_t b = 0; b < B; ++b) {
      for (std::ptrdiff_t y = 0; y < Hs; ++y) {
        for (std::ptrdiff_t xx = 0; xx < Ws; ++xx) {
          const std::size_t o = ((b * H + static_cast<std::size_t>(y)) * W +
                                 static_cast<std::size_t>(xx)) * C;
          for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
            const std::ptrdiff_t iy = y + dy;
            if (iy < 0 || iy >= Hs) continue;
            for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
              const std::ptrdiff_t ix = xx + dx;
              if (ix < 0 || ix >= Ws) continue;
              const std::size_t in = ((b * H + static_cast<std::size_t>(iy)) * W +
                                      static_cast<std::size_t>(ix)) * C;
              const std::size_t kk =
                  (static_cast<std::size_t>(dy + r) * k + static_cast<std::size_t>(dx + r)) * C;
              f(o, in, kk);
            }
          }
        }
      }
    }
  };

  Array out(x.shape());
  const auto& xv = x.value();
  const auto& kv = kernel.value();
  visit([&](std::size_t o, std::size_t in, std::size_t kk) {
    for (std::size_t c = 0; c < C; ++c) out[o + c] += xv[in + c] * kv[kk + c];
  });
  return record(
      std::move(out), {x, kernel},
      [x, kernel, visit, C](const Array& g, std::span<Array* const> grads) {
        const auto& xv = x.value();
        const auto& kv = kernel.value();
        visit([&](std::size_t o, std::size_t in, std::size_t kk) {
          for (std::size_t c = 0; c < C; ++c) {
            if (grads[0]) (*grads[0])[in + c] += g[o + c] * kv[kk + c];
            if (grads[1]) (*grads[1])[kk + c] += g[o + c] * xv[in + c];
          }
        });
      },
      "depthwise_conv2d");
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout probability must be in [0, 1)");
  if (p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Array mask(x.shape());
  for (auto& m : mask.vec()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < p ? 0.0 : keep_scale;
  }
  return mul(x, Tensor(std::move(mask)));
}

}  // namespace rswin
