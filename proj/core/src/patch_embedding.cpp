#include "rswin/patch_embedding.hpp"

#include <memory>

#include "rswin/errors.hpp"
#include "rswin/ops.hpp"

namespace rswin {

std::string to_string(ClsMode mode) {
  return mode == ClsMode::pool ? "pool" : "global_token";
}

ClsMode parse_cls_mode(const std::string& s) {
  if (s == "pool") return ClsMode::pool;
  if (s == "global_token") return ClsMode::global_token;
  throw ConfigError("unknown cls_mode '" + s + "' (expected pool or global_token)");
}

void PatchConfig::validate() const {
  if (image_h == 0 || image_w == 0 || channels == 0 || patch_size == 0 || embed_dim == 0) {
    throw ConfigError("patch config dimensions must be positive");
  }
  if (image_h % patch_size != 0 || image_w % patch_size != 0) {
    throw ConfigError("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                      " is not divisible by patch size " + std::to_string(patch_size));
  }
}

EmbeddingParams EmbeddingParams::init(const PatchConfig& cfg, Rng& rng) {
  EmbeddingParams p;
  p.projection = Tensor::parameter(
      glorot_uniform({cfg.patch_dim(), cfg.embed_dim}, cfg.patch_dim(), cfg.embed_dim, rng));
  p.positional =
      Tensor::parameter(truncated_normal({cfg.sequence_length(), cfg.embed_dim}, 0.02, rng));
  if (cfg.cls_mode == ClsMode::global_token) {
    p.class_token = Tensor::parameter(truncated_normal({cfg.embed_dim}, 0.02, rng));
  }
  return p;
}

void EmbeddingParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".projection", projection});
  out.push_back({prefix + ".positional", positional});
  if (class_token.defined()) out.push_back({prefix + ".class_token", class_token});
}

namespace {

// Flat source offsets (in the image) for every element of the patch tensor.
std::vector<std::size_t> patch_offsets(std::size_t B, std::size_t H, std::size_t W,
                                       std::size_t C, std::size_t P) {
  const std::size_t gh = H / P;
  const std::size_t gw = W / P;
  std::vector<std::size_t> idx;
  idx.reserve(B * H * W * C);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t py = 0; py < gh; ++py) {
      for (std::size_t px = 0; px < gw; ++px) {
        for (std::size_t iy = 0; iy < P; ++iy) {
          for (std::size_t ix = 0; ix < P; ++ix) {
            const std::size_t row = py * P + iy;
            const std::size_t col = px * P + ix;
            for (std::size_t c = 0; c < C; ++c) idx.push_back(((b * H + row) * W + col) * C + c);
          }
        }
      }
    }
  }
  return idx;
}

}  // namespace

Tensor patchify(const Tensor& images, std::size_t patch_size) {
  if (images.rank() != 4) {
    throw ShapeError("patchify expects [B,H,W,C], got " + shape_str(images.shape()));
  }
  const std::size_t B = images.dim(0);
  const std::size_t H = images.dim(1);
  const std::size_t W = images.dim(2);
  const std::size_t C = images.dim(3);
  if (patch_size == 0 || H % patch_size != 0 || W % patch_size != 0) {
    throw ConfigError("image " + std::to_string(H) + "x" + std::to_string(W) +
                      " is not divisible by patch size " + std::to_string(patch_size));
  }
  const std::size_t n = (H / patch_size) * (W / patch_size);
  auto idx = std::make_shared<std::vector<std::size_t>>(patch_offsets(B, H, W, C, patch_size));
  return gather(images, {B, n, patch_size * patch_size * C}, std::move(idx));
}

Tensor unpatchify(const Tensor& patches, std::size_t image_h, std::size_t image_w,
                  std::size_t channels, std::size_t patch_size) {
  if (patches.rank() != 3 || patch_size == 0 || image_h % patch_size != 0 ||
      image_w % patch_size != 0) {
    throw ShapeError("unpatchify: incompatible patches " + shape_str(patches.shape()));
  }
  const std::size_t B = patches.dim(0);
  if (patches.dim(1) != (image_h / patch_size) * (image_w / patch_size) ||
      patches.dim(2) != patch_size * patch_size * channels) {
    throw ShapeError("unpatchify: patches " + shape_str(patches.shape()) +
                     " do not tile the requested image");
  }
  const auto forward = patch_offsets(B, image_h, image_w, channels, patch_size);
  auto inverse = std::make_shared<std::vector<std::size_t>>(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) (*inverse)[forward[i]] = i;
  return gather(patches, {B, image_h, image_w, channels}, std::move(inverse));
}

TokenSequence embed(const Tensor& patches, const EmbeddingParams& params,
                    const PatchConfig& cfg) {
  if (patches.rank() != 3 || patches.dim(1) != cfg.num_patches() ||
      patches.dim(2) != cfg.patch_dim()) {
    throw ShapeError("embed: patches " + shape_str(patches.shape()) + " do not match config (N=" +
                     std::to_string(cfg.num_patches()) + ", D=" +
                     std::to_string(cfg.patch_dim()) + ")");
  }
  const std::size_t B = patches.dim(0);
  const std::size_t d = cfg.embed_dim;
  Tensor tokens = linear(patches, params.projection);
  const bool with_cls = cfg.cls_mode == ClsMode::global_token;
  if (with_cls) {
    if (!params.class_token.defined()) {
      throw ShapeError("embed: global_token mode requires a class token");
    }
    Tensor cls = broadcast_to(reshape(params.class_token, {1, 1, d}), {B, 1, d});
    tokens = concat(cls, tokens, 1);
  }
  if (params.positional.shape() != Shape{tokens.dim(1), d}) {
    throw ShapeError("embed: positional table " + shape_str(params.positional.shape()) +
                     " does not match sequence " + shape_str(tokens.shape()));
  }
  tokens = add(tokens, params.positional);
  return {tokens, cfg.grid_h(), cfg.grid_w(), with_cls};
}

}  // namespace rswin
