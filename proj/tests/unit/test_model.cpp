#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "rswin/errors.hpp"
#include "rswin/model.hpp"
#include "rswin/ops.hpp"
#include "support.hpp"

using namespace rswin;
using testutil::random_array;

namespace {

std::size_t block_count(std::size_t d, std::size_t r, std::size_t k, bool irb) {
  const std::size_t norms = 4 * d;
  const std::size_t attn = 4 * d * d;
  const std::size_t local = irb ? d * r * d + r * d + k * k * r * d + r * d * d + d
                                : d * r * d + r * d + r * d * d + d;
  return norms + attn + local;
}

std::size_t closed_form_count(const ModelConfig& c) {
  const auto& p = c.patch;
  const std::size_t d = p.embed_dim;
  std::size_t n = p.patch_dim() * d + p.sequence_length() * d;
  if (p.cls_mode == ClsMode::global_token) n += d;
  std::size_t depth = 0;
  for (auto x : c.depths) depth += x;
  n += depth * block_count(d, c.expansion, c.kernel, c.sublayer == SublayerKind::irb);
  n += 2 * d + d * c.num_classes + c.num_classes;
  return n;
}

}  // namespace

TEST(Model, StandardConfigLogitShape) {
  const ModelConfig cfg = ModelConfig::standard();
  const ModelParams params = ModelParams::init(cfg, 0);
  NoGradGuard g;
  const ForwardOutput out = forward(Tensor(random_array({1, 224, 224, 3}, 1)), params, cfg, false);
  EXPECT_EQ(out.logits.shape(), (Shape{1, 5}));
  EXPECT_EQ(out.features.shape(), (Shape{1, 96}));
  const auto specs = block_window_specs(cfg);
  ASSERT_EQ(specs.size(), 1u);
  std::vector<std::size_t> shifts;
  for (const auto& s : specs[0]) shifts.push_back(s.shift);
  EXPECT_EQ(shifts, (std::vector<std::size_t>{0, 3, 0, 3}));
  EXPECT_EQ(specs[0][0].grid_h, 14u);
}

TEST(Model, TinyGradientCheckAllParameters) {
  const ModelConfig cfg = ModelConfig::tiny();
  const ModelParams params = ModelParams::init(cfg, 2);
  const Tensor images(random_array({2, 8, 8, 3}, 3));
  const Tensor w(random_array({2, 5}, 4));
  std::vector<Tensor> all = params.parameters();
  const double err = testutil::check_grads(
      [&] { return sum(forward(images, params, cfg, false).logits * w); }, all);
  EXPECT_LT(err, 1e-3);
}

TEST(Model, EvalModeIsDeterministic) {
  const ModelConfig cfg = ModelConfig::tiny();
  const ModelParams params = ModelParams::init(cfg, 5);
  const Tensor images(random_array({3, 8, 8, 3}, 6));
  EXPECT_EQ(forward(images, params, cfg, false).logits.value(),
            forward(images, params, cfg, false).logits.value());
}

TEST(Model, TrainModeDropoutOnlyTouchesHead) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.head_dropout = 0.5;
  const ModelParams params = ModelParams::init(cfg, 7);
  const Tensor images(random_array({4, 8, 8, 3}, 8));
  Rng rng = derive_rng(9);
  const ForwardOutput train = forward(images, params, cfg, true, &rng);
  const ForwardOutput eval = forward(images, params, cfg, false);
  EXPECT_EQ(train.features.value(), eval.features.value());
  EXPECT_NE(train.logits.value(), eval.logits.value());
  EXPECT_THROW(forward(images, params, cfg, true, nullptr), ContractError);
}

TEST(Model, ShiftAlternationAndClamp) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.depths = {5};
  auto specs = block_window_specs(cfg)[0];
  std::vector<std::size_t> shifts;
  for (const auto& s : specs) shifts.push_back(s.shift);
  EXPECT_EQ(shifts, (std::vector<std::size_t>{0, 1, 0, 1, 0}));
  // A window larger than the grid is clamped to the grid and never shifted.
  cfg.window = 7;
  specs = block_window_specs(cfg)[0];
  for (const auto& s : specs) {
    EXPECT_EQ(s.window, 4u);
    EXPECT_EQ(s.shift, 0u);
  }
}

TEST(Model, ParameterCountClosedForm) {
  ModelConfig cfg = ModelConfig::tiny();
  EXPECT_EQ(count_parameters(ModelParams::init(cfg, 1)), closed_form_count(cfg));
  cfg.depths = {0};
  EXPECT_EQ(count_parameters(ModelParams::init(cfg, 1)), closed_form_count(cfg));
  cfg = ModelConfig::standard();
  EXPECT_EQ(count_parameters(ModelParams::init(cfg, 1)), closed_form_count(cfg));
  cfg.sublayer = SublayerKind::ffn;
  EXPECT_EQ(count_parameters(ModelParams::init(cfg, 1)), closed_form_count(cfg));
  cfg.patch.cls_mode = ClsMode::global_token;
  cfg.window = 14;
  EXPECT_EQ(count_parameters(ModelParams::init(cfg, 1)), closed_form_count(cfg));
}

TEST(Model, AttentionCountQuadruplesWithDim) {
  auto attn_count = [](std::size_t d) {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.patch.embed_dim = d;
    std::size_t n = 0;
    for (const auto& nt : ModelParams::init(cfg, 1).named_parameters()) {
      if (nt.name.find(".attn.") != std::string::npos) n += nt.tensor.numel();
    }
    return n;
  };
  EXPECT_EQ(attn_count(16), 4 * attn_count(8));
  EXPECT_EQ(attn_count(8), 2u * 4u * 8u * 8u);
}

TEST(Model, CountIgnoresValues) {
  const ModelConfig cfg = ModelConfig::tiny();
  ModelParams p = ModelParams::init(cfg, 1);
  const std::size_t n = count_parameters(p);
  for (auto& t : p.parameters()) t.mutable_value().fill(3.0);
  EXPECT_EQ(count_parameters(p), n);
}

TEST(Model, EveryTensorRegisteredOnce) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.depths = {2, 2};
  cfg.heads = {2, 2};
  cfg.stage_merging = true;
  const auto named = ModelParams::init(cfg, 1).named_parameters();
  std::set<std::string> names;
  std::set<const void*> nodes;
  for (const auto& nt : named) {
    names.insert(nt.name);
    nodes.insert(nt.tensor.node().get());
    EXPECT_TRUE(nt.tensor.requires_grad()) << nt.name;
  }
  EXPECT_EQ(names.size(), named.size());
  EXPECT_EQ(nodes.size(), named.size());
  EXPECT_TRUE(names.count("stage1.merge.reduction"));
}

TEST(Model, LogitShapeSweep) {
  struct Case {
    ClsMode cls;
    SublayerKind sub;
    bool merging;
    std::size_t window;
  };
  for (const Case c : {Case{ClsMode::pool, SublayerKind::irb, false, 2},
                       Case{ClsMode::pool, SublayerKind::ffn, false, 2},
                       Case{ClsMode::pool, SublayerKind::irb, true, 2},
                       Case{ClsMode::global_token, SublayerKind::irb, false, 4},
                       Case{ClsMode::global_token, SublayerKind::ffn, false, 4}}) {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.patch.cls_mode = c.cls;
    cfg.sublayer = c.sub;
    cfg.window = c.window;
    if (c.merging) {
      cfg.stage_merging = true;
      cfg.depths = {2, 1};
      cfg.heads = {2, 2};
    }
    const ModelParams params = ModelParams::init(cfg, 3);
    for (std::size_t B : {1u, 3u}) {
      const ForwardOutput out = forward(Tensor(random_array({B, 8, 8, 3}, 10)), params, cfg, false);
      EXPECT_EQ(out.logits.shape(), (Shape{B, 5}));
      EXPECT_EQ(out.features.shape(), (Shape{B, c.merging ? 16u : 8u}));
    }
  }
}

TEST(Model, SublayerSwapKeepsActivationShapes) {
  ModelConfig a = ModelConfig::tiny();
  ModelConfig b = a;
  b.sublayer = SublayerKind::ffn;
  const ModelParams pa = ModelParams::init(a, 1);
  const ModelParams pb = ModelParams::init(b, 1);
  EXPECT_NE(count_parameters(pa), count_parameters(pb));
  ForwardTrace ta, tb;
  const Tensor x(random_array({2, 8, 8, 3}, 11));
  forward(x, pa, a, false, nullptr, &ta);
  forward(x, pb, b, false, nullptr, &tb);
  ASSERT_EQ(ta.attention.weights.size(), tb.attention.weights.size());
  for (std::size_t i = 0; i < ta.attention.weights.size(); ++i) {
    EXPECT_EQ(ta.attention.weights[i].shape(), tb.attention.weights[i].shape());
  }
  EXPECT_EQ(ta.specs, tb.specs);
}

TEST(Model, ValidationErrors) {
  ModelConfig c = ModelConfig::tiny();
  c.heads = {2, 2};
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::tiny();
  c.num_classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::tiny();
  c.heads = {3};
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::tiny();
  c.patch.cls_mode = ClsMode::global_token;  // window 2 on a 4x4 grid
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::tiny();
  c.window = 3;  // 4x4 grid not divisible
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig::tiny();
  c.kernel = 2;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, ImageShapeMismatch) {
  const ModelConfig cfg = ModelConfig::tiny();
  const ModelParams params = ModelParams::init(cfg, 1);
  EXPECT_THROW(forward(Tensor(Array({1, 16, 16, 3})), params, cfg, false), ShapeError);
}

TEST(PatchMerge, NeighbourOrderOracle) {
  const std::size_t G = 4, d = 2;
  Array x({1, G * G, d});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i % 7) - 0.5 * i;
  MergeParams mp{LayerNormParams::init(4 * d), Tensor(Array({4 * d, 2 * d}))};
  for (std::size_t i = 0; i < 2 * d; ++i) mp.reduction.mutable_value()[i * 2 * d + i] = 1.0;
  const TokenSequence out = patch_merge({Tensor(x), G, G, false}, mp);
  EXPECT_EQ(out.grid_h, 2u);
  EXPECT_EQ(out.tokens.shape(), (Shape{1, 4, 2 * d}));
  // Merged token (1, 0) gathers tokens (2,0), (3,0), (2,1), (3,1).
  const std::size_t expect_tok[4] = {2 * G + 0, 3 * G + 0, 2 * G + 1, 3 * G + 1};
  std::vector<double> cat;
  for (auto t : expect_tok) {
    for (std::size_t c = 0; c < d; ++c) cat.push_back(x[t * d + c]);
  }
  double mu = 0.0, var = 0.0;
  for (double v : cat) mu += v / cat.size();
  for (double v : cat) var += (v - mu) * (v - mu) / cat.size();
  for (std::size_t c = 0; c < 2 * d; ++c) {
    EXPECT_NEAR(out.tokens.value()[2 * 2 * d + c], (cat[c] - mu) / std::sqrt(var + 1e-5), 1e-12);
  }
}

TEST(ModelConfig, TextRoundTrip) {
  ModelConfig c = ModelConfig::tiny();
  c.sublayer = SublayerKind::ffn;
  c.depths = {2, 1};
  c.heads = {2, 4};
  c.stage_merging = true;
  c.head_dropout = 0.125;
  KeyValueDoc doc;
  c.write(doc);
  EXPECT_EQ(ModelConfig::read(KeyValueDoc::parse(doc.to_text())), c);
}
