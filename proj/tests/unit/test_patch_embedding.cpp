#include <gtest/gtest.h>

#include "rswin/errors.hpp"
#include "rswin/ops.hpp"
#include "rswin/patch_embedding.hpp"
#include "support.hpp"

using namespace rswin;
using testutil::random_array;

TEST(Patchify, StandardGeometry) {
  PatchConfig cfg;  // 224x224x3, P=16
  EXPECT_EQ(cfg.num_patches(), 196u);
  EXPECT_EQ(cfg.patch_dim(), 768u);
  const Tensor p = patchify(Tensor(Array({1, 224, 224, 3})), 16);
  EXPECT_EQ(p.shape(), (Shape{1, 196, 768}));
}

TEST(Patchify, SinglePatchIsFlattenedImage) {
  const Array img = random_array({2, 4, 4, 3}, 1);
  const Array p = patchify(Tensor(img), 4).value();
  EXPECT_EQ(p.shape(), (Shape{2, 1, 48}));
  EXPECT_EQ(p.vec(), img.vec());
}

TEST(Patchify, IndexingOracle) {
  const std::size_t B = 2, H = 6, W = 4, C = 3, P = 2;
  const Array img = random_array({B, H, W, C}, 2);
  const Array p = patchify(Tensor(img), P).value();
  const std::size_t gw = W / P;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t n = (y / P) * gw + x / P;
          const std::size_t k = ((y % P) * P + x % P) * C + c;
          EXPECT_EQ(p[(b * (H / P) * gw + n) * P * P * C + k], img[((b * H + y) * W + x) * C + c]);
        }
      }
    }
  }
}

TEST(Patchify, RoundTripBitExact) {
  const Array img = random_array({1, 8, 8, 3}, 3);
  EXPECT_EQ(unpatchify(patchify(Tensor(img), 2), 8, 8, 3, 2).value(), img);
  const Array rect = random_array({3, 12, 8, 3}, 4);
  EXPECT_EQ(unpatchify(patchify(Tensor(rect), 4), 12, 8, 3, 4).value(), rect);
}

TEST(Patchify, IndivisibleIsConfigError) {
  EXPECT_THROW(patchify(Tensor(Array({1, 10, 8, 3})), 4), ConfigError);
  PatchConfig cfg;
  cfg.patch_size = 15;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Patchify, TokenCountSweep) {
  for (std::size_t P : {1u, 2u, 4u, 8u}) {
    for (std::size_t h : {8u, 16u, 24u}) {
      for (std::size_t w : {8u, 16u}) {
        PatchConfig cfg{h, w, 3, P, 4, ClsMode::pool};
        cfg.validate();
        EXPECT_EQ(cfg.num_patches(), (h / P) * (w / P));
        EXPECT_EQ(patchify(Tensor(Array({1, h, w, 3})), P).dim(1), cfg.num_patches());
        cfg.cls_mode = ClsMode::global_token;
        EXPECT_EQ(cfg.sequence_length(), cfg.num_patches() + 1);
      }
    }
  }
}

namespace {

PatchConfig small_cfg(ClsMode mode, std::size_t d = 12) { return {4, 4, 3, 2, d, mode}; }

}  // namespace

TEST(Embed, ZeroParamsGiveZeros) {
  for (auto mode : {ClsMode::pool, ClsMode::global_token}) {
    const PatchConfig cfg = small_cfg(mode, 6);
    Rng rng = derive_rng(1);
    EmbeddingParams p = EmbeddingParams::init(cfg, rng);
    p.projection.mutable_value().fill(0.0);
    p.positional.mutable_value().fill(0.0);
    const Array cls = mode == ClsMode::global_token ? p.class_token.value() : Array();
    const TokenSequence z = embed(patchify(Tensor(random_array({2, 4, 4, 3}, 5)), 2), p, cfg);
    EXPECT_EQ(z.length(), cfg.sequence_length());
    EXPECT_EQ(z.has_cls, mode == ClsMode::global_token);
    EXPECT_EQ(z.grid_h, 2u);
    const Array& t = z.tokens.value();
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t n = 0; n < z.length(); ++n) {
        for (std::size_t c = 0; c < 6; ++c) {
          const double expect = (z.has_cls && n == 0) ? cls[c] : 0.0;
          EXPECT_EQ(t[(b * z.length() + n) * 6 + c], expect);
        }
      }
    }
  }
}

TEST(Embed, IdentityProjection) {
  const PatchConfig cfg = small_cfg(ClsMode::pool, 12);  // D = 12 = d
  Rng rng = derive_rng(2);
  EmbeddingParams p = EmbeddingParams::init(cfg, rng);
  Array eye({12, 12});
  for (std::size_t i = 0; i < 12; ++i) eye[i * 12 + i] = 1.0;
  p.projection.mutable_value() = eye;
  p.positional.mutable_value().fill(0.0);
  const Tensor patches = patchify(Tensor(random_array({1, 4, 4, 3}, 6)), 2);
  EXPECT_EQ(embed(patches, p, cfg).tokens.value(), patches.value());
}

TEST(Embed, ProjectionIsPatchEquivariant) {
  const PatchConfig cfg = small_cfg(ClsMode::pool, 5);
  Rng rng = derive_rng(3);
  EmbeddingParams p = EmbeddingParams::init(cfg, rng);
  p.positional.mutable_value().fill(0.0);
  Array patches = random_array({1, 4, 12}, 7);
  const Array a = embed(Tensor(patches), p, cfg).tokens.value();
  for (std::size_t k = 0; k < 12; ++k) std::swap(patches[0 * 12 + k], patches[3 * 12 + k]);
  const Array b = embed(Tensor(patches), p, cfg).tokens.value();
  for (std::size_t c = 0; c < 5; ++c) {
    EXPECT_EQ(a[0 * 5 + c], b[3 * 5 + c]);
    EXPECT_EQ(a[3 * 5 + c], b[0 * 5 + c]);
    EXPECT_EQ(a[1 * 5 + c], b[1 * 5 + c]);
  }
}

TEST(Embed, GradientCheck) {
  for (auto mode : {ClsMode::pool, ClsMode::global_token}) {
    const PatchConfig cfg = small_cfg(mode, 4);
    Rng rng = derive_rng(4);
    EmbeddingParams p = EmbeddingParams::init(cfg, rng);
    const Tensor patches = patchify(Tensor(random_array({2, 4, 4, 3}, 8)), 2);
    const Tensor w(random_array({2, cfg.sequence_length(), 4}, 9));
    std::vector<Tensor> params{p.projection, p.positional};
    if (mode == ClsMode::global_token) params.push_back(p.class_token);
    const double err = testutil::check_grads(
        [&] { return sum(gelu(embed(patches, p, cfg).tokens) * w); }, params);
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Embed, ParamShapesAndInit) {
  const PatchConfig cfg = small_cfg(ClsMode::global_token, 6);
  Rng rng = derive_rng(5);
  const EmbeddingParams p = EmbeddingParams::init(cfg, rng);
  EXPECT_EQ(p.projection.shape(), (Shape{12, 6}));
  EXPECT_EQ(p.positional.shape(), (Shape{5, 6}));
  EXPECT_EQ(p.class_token.shape(), (Shape{6}));
  EXPECT_TRUE(p.projection.requires_grad());
  EXPECT_TRUE(p.positional.requires_grad());
  for (double v : p.positional.value().data()) EXPECT_LE(std::abs(v), 0.04);
  std::vector<NamedTensor> named;
  p.collect("embed", named);
  EXPECT_EQ(named.size(), 3u);
}

TEST(Embed, ShapeMismatch) {
  const PatchConfig cfg = small_cfg(ClsMode::pool, 4);
  Rng rng = derive_rng(6);
  const EmbeddingParams p = EmbeddingParams::init(cfg, rng);
  EXPECT_THROW(embed(Tensor(Array({1, 4, 11})), p, cfg), ShapeError);
  EXPECT_THROW(embed(Tensor(Array({1, 5, 12})), p, cfg), ShapeError);
}
