#include "rswin/inverse_residual.hpp"

#include "rswin/errors.hpp"
#include "rswin/ops.hpp"

namespace rswin {

IRBParams IRBParams::init(std::size_t dim, std::size_t ratio, std::size_t kernel, Rng& rng) {
  if (ratio == 0) throw ConfigError("IRB expansion ratio must be >= 1");
  if (kernel % 2 == 0) throw ConfigError("IRB kernel size must be odd");
  const std::size_t hidden = dim * ratio;
  IRBParams p;
  p.expand_w = Tensor::parameter(glorot_uniform({dim, hidden}, dim, hidden, rng));
  p.expand_b = Tensor::parameter(Array::zeros({hidden}));
  // Depthwise fan-in/out is the k*k receptive field of one channel.
  p.dw_kernel = Tensor::parameter(
      glorot_uniform({kernel, kernel, hidden}, kernel * kernel, kernel * kernel, rng));
  p.project_w = Tensor::parameter(glorot_uniform({hidden, dim}, hidden, dim, rng));
  p.project_b = Tensor::parameter(Array::zeros({dim}));
  return p;
}

void IRBParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".expand_w", expand_w});
  out.push_back({prefix + ".expand_b", expand_b});
  out.push_back({prefix + ".dw_kernel", dw_kernel});
  out.push_back({prefix + ".project_w", project_w});
  out.push_back({prefix + ".project_b", project_b});
}

FFNParams FFNParams::init(std::size_t dim, std::size_t hidden, Rng& rng) {
  FFNParams p;
  p.w1 = Tensor::parameter(glorot_uniform({dim, hidden}, dim, hidden, rng));
  p.b1 = Tensor::parameter(Array::zeros({hidden}));
  p.w2 = Tensor::parameter(glorot_uniform({hidden, dim}, hidden, dim, rng));
  p.b2 = Tensor::parameter(Array::zeros({dim}));
  return p;
}

void FFNParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".w1", w1});
  out.push_back({prefix + ".b1", b1});
  out.push_back({prefix + ".w2", w2});
  out.push_back({prefix + ".b2", b2});
}

Tensor ffn(const Tensor& x, const FFNParams& params) {
  if (x.dim(-1) != params.w1.dim(0) || params.w2.dim(1) != params.w1.dim(0)) {
    throw ShapeError("ffn: input " + shape_str(x.shape()) + " incompatible with W1 " +
                     shape_str(params.w1.shape()) + " / W2 " + shape_str(params.w2.shape()));
  }
  return linear(gelu(linear(x, params.w1, params.b1)), params.w2, params.b2);
}

TokenSequence irb(const TokenSequence& x, const IRBParams& params, IRBOptions opts) {
  const std::size_t B = x.batch();
  const std::size_t d = x.dim();
  const std::size_t n_grid = x.grid_h * x.grid_w;
  if (d != params.dim()) {
    throw ShapeError("irb: token dim " + std::to_string(d) + " does not match weights " +
                     shape_str(params.expand_w.shape()));
  }
  if (n_grid == 0 || x.length() != n_grid + (x.has_cls ? 1 : 0)) {
    throw ShapeError("irb: " + std::to_string(x.length()) +
                     " tokens do not match the recorded grid " + std::to_string(x.grid_h) +
                     "x" + std::to_string(x.grid_w));
  }
  const std::size_t hidden = params.hidden();
  auto act = [&](const Tensor& t) { return opts.activations ? gelu(t) : t; };

  Tensor expanded = act(linear(x.tokens, params.expand_w, params.expand_b));
  Tensor grid_part = x.has_cls ? slice(expanded, 1, 1, n_grid) : expanded;
  Tensor conv = depthwise_conv2d(reshape(grid_part, {B, x.grid_h, x.grid_w, hidden}),
                                 params.dw_kernel);
  Tensor mixed = act(reshape(conv, {B, n_grid, hidden}));
  if (x.has_cls) mixed = concat(slice(expanded, 1, 0, 1), mixed, 1);

  Tensor projected = linear(mixed, params.project_w, params.project_b);
  Tensor out = opts.inner_skip ? add(x.tokens, projected) : projected;
  return {out, x.grid_h, x.grid_w, x.has_cls};
}

TokenSequence block_output(const TokenSequence& z_prime, const LayerNormParams& norm,
                           const LocalSublayer& sublayer, IRBOptions opts) {
  TokenSequence normed{norm.apply(z_prime.tokens), z_prime.grid_h, z_prime.grid_w,
                       z_prime.has_cls};
  Tensor local;
  if (const auto* p = std::get_if<IRBParams>(&sublayer)) {
    local = irb(normed, *p, opts).tokens;
  } else {
    local = ffn(normed.tokens, std::get<FFNParams>(sublayer));
  }
  return {add(z_prime.tokens, local), z_prime.grid_h, z_prime.grid_w, z_prime.has_cls};
}

}  // namespace rswin
