#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rswin/params.hpp"
#include "rswin/random.hpp"
#include "rswin/tensor.hpp"

namespace rswin {

// pool: no class token, the head reads the token mean.
// global_token: a learnable class token is prepended; only valid when the
// attention window spans the whole patch grid.
enum class ClsMode { pool, global_token };

std::string to_string(ClsMode mode);
ClsMode parse_cls_mode(const std::string& s);

struct PatchConfig {
  std::size_t image_h = 224;
  std::size_t image_w = 224;
  std::size_t channels = 3;
  std::size_t patch_size = 16;
  std::size_t embed_dim = 96;
  ClsMode cls_mode = ClsMode::pool;

  std::size_t grid_h() const { return image_h / patch_size; }
  std::size_t grid_w() const { return image_w / patch_size; }
  std::size_t num_patches() const { return grid_h() * grid_w(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t sequence_length() const {
    return num_patches() + (cls_mode == ClsMode::global_token ? 1 : 0);
  }
  // Throws ConfigError on a non-dividing patch size or zero dims.
  void validate() const;

  bool operator==(const PatchConfig&) const = default;
};

struct EmbeddingParams {
  Tensor projection;   // [patch_dim, embed_dim]
  Tensor positional;   // [sequence_length, embed_dim]
  Tensor class_token;  // [embed_dim], undefined in pool mode

  static EmbeddingParams init(const PatchConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// Tokens [B, T, d] plus the patch grid they came from. When has_cls is set
// the class token is row 0 and the grid covers rows 1..T-1.
struct TokenSequence {
  Tensor tokens;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  bool has_cls = false;

  std::size_t batch() const { return tokens.dim(0); }
  std::size_t length() const { return tokens.dim(1); }
  std::size_t dim() const { return tokens.dim(2); }
};

// images[B,H,W,C] -> [B, N, P*P*C]; patches in row-major grid order, each
// flattened as (row, col, channel).
Tensor patchify(const Tensor& images, std::size_t patch_size);
// Inverse of patchify.
Tensor unpatchify(const Tensor& patches, std::size_t image_h, std::size_t image_w,
                  std::size_t channels, std::size_t patch_size);

// Projects patches, prepends the class token in global_token mode and adds the
// positional table.
TokenSequence embed(const Tensor& patches, const EmbeddingParams& params,
                    const PatchConfig& cfg);

}  // namespace rswin
