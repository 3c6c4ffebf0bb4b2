#include "rswin/window_attention.hpp"

#include <cmath>
#include <memory>

#include "rswin/errors.hpp"
#include "rswin/ops.hpp"

namespace rswin {

AttentionParams AttentionParams::init(std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("embed dim " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.w_q = Tensor::parameter(glorot_uniform({dim, dim}, dim, dim, rng));
  p.w_k = Tensor::parameter(glorot_uniform({dim, dim}, dim, dim, rng));
  p.w_v = Tensor::parameter(glorot_uniform({dim, dim}, dim, dim, rng));
  p.w_o = Tensor::parameter(glorot_uniform({dim, dim}, dim, dim, rng));
  p.num_heads = heads;
  return p;
}

void AttentionParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".w_q", w_q});
  out.push_back({prefix + ".w_k", w_k});
  out.push_back({prefix + ".w_v", w_v});
  out.push_back({prefix + ".w_o", w_o});
}

void WindowSpec::validate() const {
  if (window == 0 || grid_h == 0 || grid_w == 0) {
    throw ConfigError("window size and grid must be positive");
  }
  if (grid_h % window != 0 || grid_w % window != 0) {
    throw ConfigError("token grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                      " is not divisible by window size " + std::to_string(window));
  }
  if (shift != 0 && shift != window / 2) {
    throw ConfigError("window shift must be 0 or " + std::to_string(window / 2) + ", got " +
                      std::to_string(shift));
  }
}

namespace {

void check_grid_tokens(const Tensor& tokens, std::size_t grid_h, std::size_t grid_w,
                       const char* who) {
  if (tokens.rank() != 3 || tokens.dim(1) != grid_h * grid_w) {
    throw ShapeError(std::string(who) + ": tokens " + shape_str(tokens.shape()) +
                     " do not form a " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                     " grid");
  }
}

// Source token (in the grid) of each position of each window.
std::vector<std::size_t> window_token_order(const WindowSpec& spec) {
  const std::size_t M = spec.window;
  const std::size_t nwx = spec.grid_w / M;
  std::vector<std::size_t> order;
  order.reserve(spec.grid_h * spec.grid_w);
  for (std::size_t w = 0; w < spec.num_windows(); ++w) {
    const std::size_t wy = w / nwx;
    const std::size_t wx = w % nwx;
    for (std::size_t iy = 0; iy < M; ++iy) {
      for (std::size_t ix = 0; ix < M; ++ix) {
        order.push_back((wy * M + iy) * spec.grid_w + wx * M + ix);
      }
    }
  }
  return order;
}

// Expands a token-level permutation to element offsets of [B, N, d].
IndexMap expand_token_map(const std::vector<std::size_t>& token_src, std::size_t batch,
                          std::size_t dim) {
  const std::size_t n = token_src.size();
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(batch * n * dim);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t base = (b * n + token_src[t]) * dim;
      for (std::size_t c = 0; c < dim; ++c) idx->push_back(base + c);
    }
  }
  return idx;
}

Tensor roll_grid(const Tensor& tokens, std::size_t grid_h, std::size_t grid_w,
                 std::size_t dy, std::size_t dx) {
  std::vector<std::size_t> src(grid_h * grid_w);
  for (std::size_t i = 0; i < grid_h; ++i) {
    for (std::size_t j = 0; j < grid_w; ++j) {
      src[i * grid_w + j] = ((i + dy) % grid_h) * grid_w + (j + dx) % grid_w;
    }
  }
  return gather(tokens, tokens.shape(), expand_token_map(src, tokens.dim(0), tokens.dim(2)));
}

}  // namespace

Tensor window_partition(const Tensor& tokens, const WindowSpec& spec) {
  spec.validate();
  check_grid_tokens(tokens, spec.grid_h, spec.grid_w, "window_partition");
  const std::size_t B = tokens.dim(0);
  const std::size_t d = tokens.dim(2);
  return gather(tokens, {B * spec.num_windows(), spec.tokens_per_window(), d},
                expand_token_map(window_token_order(spec), B, d));
}

Tensor window_reverse(const Tensor& windows, const WindowSpec& spec) {
  spec.validate();
  const std::size_t nw = spec.num_windows();
  if (windows.rank() != 3 || windows.dim(0) % nw != 0 ||
      windows.dim(1) != spec.tokens_per_window()) {
    throw ShapeError("window_reverse: windows " + shape_str(windows.shape()) +
                     " do not match window spec");
  }
  const std::size_t B = windows.dim(0) / nw;
  const std::size_t d = windows.dim(2);
  const auto order = window_token_order(spec);
  std::vector<std::size_t> inverse(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inverse[order[i]] = i;
  return gather(windows, {B, spec.grid_h * spec.grid_w, d}, expand_token_map(inverse, B, d));
}

Tensor cyclic_shift(const Tensor& tokens, std::size_t grid_h, std::size_t grid_w,
                    std::size_t shift) {
  check_grid_tokens(tokens, grid_h, grid_w, "cyclic_shift");
  if (shift == 0) return tokens;
  return roll_grid(tokens, grid_h, grid_w, shift % grid_h, shift % grid_w);
}

Tensor cyclic_unshift(const Tensor& tokens, std::size_t grid_h, std::size_t grid_w,
                      std::size_t shift) {
  check_grid_tokens(tokens, grid_h, grid_w, "cyclic_unshift");
  if (shift == 0) return tokens;
  return roll_grid(tokens, grid_h, grid_w, grid_h - shift % grid_h, grid_w - shift % grid_w);
}

Array shifted_attention_mask(const WindowSpec& spec) {
  spec.validate();
  if (spec.shift == 0) {
    throw ContractError("shifted_attention_mask called with shift 0");
  }
  const std::size_t M = spec.window;
  const std::size_t s = spec.shift;
  // Region ids on the shifted grid: bands [0, G-M), [G-M, G-s), [G-s, G).
  auto band = [M, s](std::size_t i, std::size_t g) -> std::size_t {
    if (i < g - M) return 0;
    if (i < g - s) return 1;
    return 2;
  };
  const auto order = window_token_order(spec);
  const std::size_t T = spec.tokens_per_window();
  const std::size_t nw = spec.num_windows();
  std::vector<std::size_t> region(order.size());
  for (std::size_t p = 0; p < order.size(); ++p) {
    const std::size_t i = order[p] / spec.grid_w;
    const std::size_t j = order[p] % spec.grid_w;
    region[p] = band(i, spec.grid_h) * 3 + band(j, spec.grid_w);
  }
  Array mask({nw, T, T});
  for (std::size_t w = 0; w < nw; ++w) {
    for (std::size_t a = 0; a < T; ++a) {
      for (std::size_t b = 0; b < T; ++b) {
        mask[(w * T + a) * T + b] = region[w * T + a] == region[w * T + b] ? 0.0 : kMaskedScore;
      }
    }
  }
  return mask;
}

Tensor multi_head_attention(const Tensor& z, const AttentionParams& params, const Array* mask,
                            AttentionTrace* trace) {
  if (z.rank() != 3) {
    throw ShapeError("multi_head_attention expects [X, T, d], got " + shape_str(z.shape()));
  }
  const std::size_t X = z.dim(0);
  const std::size_t T = z.dim(1);
  const std::size_t d = z.dim(2);
  const std::size_t h = params.num_heads;
  if (h == 0 || d % h != 0) {
    throw ShapeError("model dim " + std::to_string(d) + " is not divisible by " +
                     std::to_string(h) + " heads");
  }
  if (params.dim() != d) {
    throw ShapeError("attention weights " + shape_str(params.w_q.shape()) +
                     " do not match token dim " + std::to_string(d));
  }
  const std::size_t dk = d / h;

  auto split_heads = [&](const Tensor& t) { return reshape(t, {X, T, h, dk}); };
  Tensor q = permute(split_heads(linear(z, params.w_q)), {0, 2, 1, 3});  // [X,h,T,dk]
  Tensor kt = permute(split_heads(linear(z, params.w_k)), {0, 2, 3, 1});  // [X,h,dk,T]
  Tensor v = permute(split_heads(linear(z, params.w_v)), {0, 2, 1, 3});  // [X,h,T,dk]

  Tensor scores = scale(matmul(q, kt), 1.0 / std::sqrt(static_cast<double>(dk)));
  if (mask != nullptr) {
    const std::size_t nw = mask->dim(0);
    if (mask->shape() != Shape{nw, T, T} || X % nw != 0) {
      throw ShapeError("attention mask " + shape_str(mask->shape()) +
                       " does not fit scores " + shape_str(scores.shape()));
    }
    Tensor m(mask->reshaped({nw, 1, T, T}));
    scores = reshape(add(reshape(scores, {X / nw, nw, h, T, T}), m), {X, h, T, T});
  }
  Tensor weights = softmax(scores, -1);
  if (trace != nullptr) trace->weights.push_back(weights.value());

  Tensor heads = permute(matmul(weights, v), {0, 2, 1, 3});  // [X,T,h,dk]
  return linear(reshape(heads, {X, T, d}), params.w_o);
}

TokenSequence attention_sublayer(const TokenSequence& z, const AttentionParams& params,
                                 const LayerNormParams& norm, const WindowSpec& spec,
                                 AttentionTrace* trace) {
  spec.validate();
  if (spec.grid_h != z.grid_h || spec.grid_w != z.grid_w) {
    throw ShapeError("window spec grid does not match token grid");
  }
  Tensor x = norm.apply(z.tokens);
  Tensor attended;
  if (z.has_cls) {
    // A class token has no grid position, so only full-grid unshifted
    // attention is defined.
    if (!spec.covers_grid() || spec.shift != 0) {
      throw ConfigError("class token requires a window covering the whole grid and no shift");
    }
    attended = multi_head_attention(x, params, nullptr, trace);
  } else {
    if (spec.shift > 0) x = cyclic_shift(x, spec.grid_h, spec.grid_w, spec.shift);
    Tensor windows = window_partition(x, spec);
    Array mask;
    if (spec.shift > 0) mask = shifted_attention_mask(spec);
    Tensor out = multi_head_attention(windows, params, spec.shift > 0 ? &mask : nullptr, trace);
    attended = window_reverse(out, spec);
    if (spec.shift > 0) attended = cyclic_unshift(attended, spec.grid_h, spec.grid_w, spec.shift);
  }
  return {add(z.tokens, attended), z.grid_h, z.grid_w, z.has_cls};
}

}  // namespace rswin
