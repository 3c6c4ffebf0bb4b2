#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rswin/config.hpp"
#include "rswin/inverse_residual.hpp"
#include "rswin/params.hpp"
#include "rswin/patch_embedding.hpp"
#include "rswin/random.hpp"
#include "rswin/window_attention.hpp"

namespace rswin {

enum class SublayerKind { irb, ffn };

std::string to_string(SublayerKind kind);
SublayerKind parse_sublayer_kind(const std::string& s);

struct ModelConfig {
  PatchConfig patch;
  std::vector<std::size_t> depths{4};
  std::vector<std::size_t> heads{3};
  std::size_t window = 7;
  // IRB expansion ratio; also the FFN hidden-width multiplier.
  std::size_t expansion = 4;
  std::size_t kernel = 3;
  std::size_t num_classes = 5;
  double head_dropout = 0.3;
  SublayerKind sublayer = SublayerKind::irb;
  // 2x2 neighbour concat + linear reduction between stages.
  bool stage_merging = false;
  bool irb_inner_skip = true;
  bool irb_activations = true;

  // 224x224 input, 16x16 patches, one stage of 4 blocks, d=96, 3 heads, M=7.
  static ModelConfig standard();
  // 8x8 input, 2x2 patches, d=8, two blocks with M=2, r=2, k=3.
  static ModelConfig tiny();

  void validate() const;
  IRBOptions irb_options() const { return {irb_activations, irb_inner_skip}; }

  static const std::vector<ConfigField<ModelConfig>>& fields();
  void write(KeyValueDoc& doc, const std::string& section = "model") const;
  static ModelConfig read(const KeyValueDoc& doc, const std::string& section = "model");

  bool operator==(const ModelConfig&) const = default;
};

// Resolved geometry of one stage.
struct StageLayout {
  std::size_t dim = 0;
  std::size_t heads = 0;
  std::size_t depth = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  // Clamped to the grid when the configured window is larger.
  std::size_t window = 0;
};

std::vector<StageLayout> stage_layouts(const ModelConfig& cfg);
// Window spec for every block of every stage; block i of a stage is shifted
// by window/2 iff i is odd (and the window does not already cover the grid).
std::vector<std::vector<WindowSpec>> block_window_specs(const ModelConfig& cfg);

struct BlockParams {
  LayerNormParams attn_norm;
  AttentionParams attention;
  LayerNormParams local_norm;
  LocalSublayer local;

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct MergeParams {
  LayerNormParams norm;  // over 4*d
  Tensor reduction;      // [4*d, 2*d]
};

struct ModelParams {
  EmbeddingParams embedding;
  std::vector<std::vector<BlockParams>> stages;
  std::vector<MergeParams> merges;
  LayerNormParams final_norm;
  Tensor head_w;  // [d_final, num_classes]
  Tensor head_b;  // [num_classes]

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  // Stable order; every tensor appears exactly once.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::vector<Array> snapshot() const;
  void restore(const std::vector<Array>& values);
  void zero_grad();
};

// One RSwinV2 block: attention sub-layer then the local (IRB/FFN) sub-layer.
TokenSequence apply_block(const TokenSequence& z, const BlockParams& block,
                          const WindowSpec& spec, IRBOptions opts = {},
                          AttentionTrace* trace = nullptr);

// tokens[B, H*W, d] -> LN -> linear: [B, (H/2)*(W/2), 2d].
TokenSequence patch_merge(const TokenSequence& x, const MergeParams& params);

struct ForwardOutput {
  Tensor logits;    // [B, num_classes]
  Tensor features;  // pooled, pre-dropout [B, d_final]
};

struct ForwardTrace {
  AttentionTrace attention;
  std::vector<WindowSpec> specs;
};

// Dropout is applied only when train_mode is set (dropout_rng required then).
ForwardOutput forward(const Tensor& images, const ModelParams& params, const ModelConfig& cfg,
                      bool train_mode, Rng* dropout_rng = nullptr, ForwardTrace* trace = nullptr);

std::size_t count_parameters(const ModelParams& params);

}  // namespace rswin
