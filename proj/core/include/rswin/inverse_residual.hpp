#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "rswin/params.hpp"
#include "rswin/patch_embedding.hpp"
#include "rswin/random.hpp"
#include "rswin/tensor.hpp"

namespace rswin {

// Inverted residual block: pointwise expansion to ratio*d channels, k x k
// depthwise convolution over the token grid, pointwise projection back to d.
struct IRBParams {
  Tensor expand_w;   // [d, r*d]
  Tensor expand_b;   // [r*d]
  Tensor dw_kernel;  // [k, k, r*d]
  Tensor project_w;  // [r*d, d]
  Tensor project_b;  // [d]

  std::size_t dim() const { return expand_w.dim(0); }
  std::size_t hidden() const { return expand_w.dim(1); }
  std::size_t kernel() const { return dw_kernel.dim(0); }

  static IRBParams init(std::size_t dim, std::size_t ratio, std::size_t kernel, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct IRBOptions {
  // GELU after the expansion and after the depthwise conv. Off only for
  // algebraic checks.
  bool activations = true;
  // The x + ... skip inside the block itself.
  bool inner_skip = true;
};

// Two-layer GELU feed-forward network, the transformer baseline.
struct FFNParams {
  Tensor w1;  // [d, m]
  Tensor b1;  // [m]
  Tensor w2;  // [m, d]
  Tensor b2;  // [d]

  static FFNParams init(std::size_t dim, std::size_t hidden, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// Local mixing sub-layer of a block: IRB or the FFN ablation.
using LocalSublayer = std::variant<IRBParams, FFNParams>;

// GELU(x W1 + b1) W2 + b2 on x[..., d].
Tensor ffn(const Tensor& x, const FFNParams& params);

// x + Pi(DWConv(Phi(x))). The class token (if present) skips the depthwise
// conv but still goes through both pointwise maps.
TokenSequence irb(const TokenSequence& x, const IRBParams& params, IRBOptions opts = {});

// Z' + IRB(LN(Z')) or, for the FFN sub-layer, Z' + FFN(LN(Z')).
TokenSequence block_output(const TokenSequence& z_prime, const LayerNormParams& norm,
                           const LocalSublayer& sublayer, IRBOptions opts = {});

}  // namespace rswin
