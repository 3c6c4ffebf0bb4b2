#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rswin/params.hpp"
#include "rswin/patch_embedding.hpp"
#include "rswin/random.hpp"
#include "rswin/tensor.hpp"

namespace rswin {

// Additive score applied to pairs that must not attend to each other.
inline constexpr double kMaskedScore = -1e9;

struct AttentionParams {
  Tensor w_q;  // [d, d]
  Tensor w_k;
  Tensor w_v;
  Tensor w_o;  // mixes the concatenated heads
  std::size_t num_heads = 1;

  std::size_t dim() const { return w_q.dim(0); }
  std::size_t head_dim() const { return dim() / num_heads; }

  static AttentionParams init(std::size_t dim, std::size_t heads, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// Square windows of `window` tokens per side over a grid_h x grid_w token
// grid, cyclically shifted by `shift` (0 or window/2).
struct WindowSpec {
  std::size_t window = 7;
  std::size_t shift = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;

  std::size_t tokens_per_window() const { return window * window; }
  std::size_t num_windows() const { return (grid_h / window) * (grid_w / window); }
  bool covers_grid() const { return window == grid_h && window == grid_w; }
  void validate() const;

  bool operator==(const WindowSpec&) const = default;
};

// Attention weights captured for inspection, one entry per attention call,
// each shaped [windows*batch, heads, T, T].
struct AttentionTrace {
  std::vector<Array> weights;
};

// tokens[B, grid_h*grid_w, d] -> [B*nW, M*M, d], windows in row-major order
// and row-major order inside each window.
Tensor window_partition(const Tensor& tokens, const WindowSpec& spec);
Tensor window_reverse(const Tensor& windows, const WindowSpec& spec);

// Rolls the token grid of tokens[B, grid_h*grid_w, d] by (-shift, -shift);
// unshift rolls by (+shift, +shift).
Tensor cyclic_shift(const Tensor& tokens, std::size_t grid_h, std::size_t grid_w,
                    std::size_t shift);
Tensor cyclic_unshift(const Tensor& tokens, std::size_t grid_h, std::size_t grid_w,
                      std::size_t shift);

// [nW, M*M, M*M]: 0 where two positions of a shifted window come from the
// same pre-shift region, kMaskedScore otherwise. Requires spec.shift > 0.
Array shifted_attention_mask(const WindowSpec& spec);

// Scaled dot-product attention per head on z[X, T, d]. The optional mask
// [nW, T, T] is added to the scores of window x % nW.
Tensor multi_head_attention(const Tensor& z, const AttentionParams& params,
                            const Array* mask = nullptr, AttentionTrace* trace = nullptr);

// Z + MHA(LN(Z)) with shift -> partition -> masked attention -> reverse ->
// unshift around the attention call.
TokenSequence attention_sublayer(const TokenSequence& z, const AttentionParams& params,
                                 const LayerNormParams& norm, const WindowSpec& spec,
                                 AttentionTrace* trace = nullptr);

}  // namespace rswin
