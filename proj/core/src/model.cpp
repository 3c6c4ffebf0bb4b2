#include "rswin/model.hpp"

#include <memory>
#include <set>

#include "rswin/errors.hpp"
#include "rswin/ops.hpp"

namespace rswin {

std::string to_string(SublayerKind kind) { return kind == SublayerKind::irb ? "irb" : "ffn"; }

SublayerKind parse_sublayer_kind(const std::string& s) {
  if (s == "irb") return SublayerKind::irb;
  if (s == "ffn") return SublayerKind::ffn;
  throw ConfigError("unknown sublayer '" + s + "' (expected irb or ffn)");
}

ModelConfig ModelConfig::standard() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.patch.image_h = 8;
  c.patch.image_w = 8;
  c.patch.patch_size = 2;
  c.patch.embed_dim = 8;
  c.depths = {2};
  c.heads = {2};
  c.window = 2;
  c.expansion = 2;
  c.kernel = 3;
  c.num_classes = 5;
  return c;
}

const std::vector<ConfigField<ModelConfig>>& ModelConfig::fields() {
  using C = ModelConfig;
  static const std::vector<ConfigField<C>> f = {
      size_field<C>("image_h", [](auto& c) -> auto& { return c.patch.image_h; }),
      size_field<C>("image_w", [](auto& c) -> auto& { return c.patch.image_w; }),
      size_field<C>("channels", [](auto& c) -> auto& { return c.patch.channels; }),
      size_field<C>("patch_size", [](auto& c) -> auto& { return c.patch.patch_size; }),
      size_field<C>("embed_dim", [](auto& c) -> auto& { return c.patch.embed_dim; }),
      {"cls_mode", [](const C& c) { return to_string(c.patch.cls_mode); },
       [](C& c, const std::string& v) { c.patch.cls_mode = parse_cls_mode(v); }},
      size_list_field<C>("depths", [](auto& c) -> auto& { return c.depths; }),
      size_list_field<C>("heads", [](auto& c) -> auto& { return c.heads; }),
      size_field<C>("window", [](auto& c) -> auto& { return c.window; }),
      size_field<C>("expansion", [](auto& c) -> auto& { return c.expansion; }),
      size_field<C>("kernel", [](auto& c) -> auto& { return c.kernel; }),
      size_field<C>("num_classes", [](auto& c) -> auto& { return c.num_classes; }),
      double_field<C>("head_dropout", [](auto& c) -> auto& { return c.head_dropout; }),
      {"sublayer", [](const C& c) { return to_string(c.sublayer); },
       [](C& c, const std::string& v) { c.sublayer = parse_sublayer_kind(v); }},
      bool_field<C>("stage_merging", [](auto& c) -> auto& { return c.stage_merging; }),
      bool_field<C>("irb_inner_skip", [](auto& c) -> auto& { return c.irb_inner_skip; }),
      bool_field<C>("irb_activations", [](auto& c) -> auto& { return c.irb_activations; }),
  };
  return f;
}

void ModelConfig::write(KeyValueDoc& doc, const std::string& section) const {
  write_fields(*this, fields(), section, doc);
}

ModelConfig ModelConfig::read(const KeyValueDoc& doc, const std::string& section) {
  ModelConfig c;
  read_fields(c, fields(), section, doc);
  return c;
}

std::vector<StageLayout> stage_layouts(const ModelConfig& cfg) {
  std::vector<StageLayout> out;
  std::size_t dim = cfg.patch.embed_dim;
  std::size_t gh = cfg.patch.grid_h();
  std::size_t gw = cfg.patch.grid_w();
  for (std::size_t s = 0; s < cfg.depths.size(); ++s) {
    if (s > 0 && cfg.stage_merging) {
      if (gh % 2 != 0 || gw % 2 != 0) {
        throw ConfigError("stage " + std::to_string(s) + ": token grid " + std::to_string(gh) +
                          "x" + std::to_string(gw) + " cannot be merged 2x2");
      }
      gh /= 2;
      gw /= 2;
      dim *= 2;
    }
    std::size_t window = cfg.window;
    if (window > gh || window > gw) {
      if (gh != gw) {
        throw ConfigError("window " + std::to_string(window) + " exceeds non-square grid " +
                          std::to_string(gh) + "x" + std::to_string(gw));
      }
      window = gh;
    }
    out.push_back({dim, cfg.heads[s], cfg.depths[s], gh, gw, window});
  }
  return out;
}

std::vector<std::vector<WindowSpec>> block_window_specs(const ModelConfig& cfg) {
  std::vector<std::vector<WindowSpec>> specs;
  for (const auto& st : stage_layouts(cfg)) {
    std::vector<WindowSpec> stage;
    const bool full = st.window == st.grid_h && st.window == st.grid_w;
    for (std::size_t i = 0; i < st.depth; ++i) {
      const std::size_t shift = (i % 2 == 1 && !full) ? st.window / 2 : 0;
      stage.push_back({st.window, shift, st.grid_h, st.grid_w});
    }
    specs.push_back(std::move(stage));
  }
  return specs;
}

void ModelConfig::validate() const {
  patch.validate();
  if (depths.empty()) throw ConfigError("depths must list at least one stage");
  if (depths.size() != heads.size()) {
    throw ConfigError("depths and heads must have the same length");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (!(head_dropout >= 0.0 && head_dropout < 1.0)) {
    throw ConfigError("head_dropout must be in [0, 1)");
  }
  if (window == 0) throw ConfigError("window must be positive");
  if (expansion == 0) throw ConfigError("expansion must be >= 1");
  if (kernel % 2 == 0) throw ConfigError("kernel must be odd");
  if (patch.cls_mode == ClsMode::global_token && stage_merging) {
    throw ConfigError("global_token mode cannot be combined with stage merging");
  }
  const auto layouts = stage_layouts(*this);
  for (const auto& st : layouts) {
    if (st.heads == 0 || st.dim % st.heads != 0) {
      throw ConfigError("stage dim " + std::to_string(st.dim) + " is not divisible by " +
                        std::to_string(st.heads) + " heads");
    }
    if (patch.cls_mode == ClsMode::global_token &&
        (st.window != st.grid_h || st.window != st.grid_w)) {
      throw ConfigError("global_token mode requires the window to cover the whole " +
                        std::to_string(st.grid_h) + "x" + std::to_string(st.grid_w) + " grid");
    }
  }
  for (const auto& stage : block_window_specs(*this)) {
    for (const auto& spec : stage) spec.validate();
  }
}

void BlockParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  attn_norm.collect(prefix + ".attn_norm", out);
  attention.collect(prefix + ".attn", out);
  local_norm.collect(prefix + ".local_norm", out);
  if (const auto* p = std::get_if<IRBParams>(&local)) {
    p->collect(prefix + ".irb", out);
  } else {
    std::get<FFNParams>(local).collect(prefix + ".ffn", out);
  }
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = derive_rng(seed, {0x1417});
  ModelParams p;
  p.embedding = EmbeddingParams::init(cfg.patch, rng);
  const auto layouts = stage_layouts(cfg);
  for (std::size_t s = 0; s < layouts.size(); ++s) {
    const auto& st = layouts[s];
    if (s > 0 && cfg.stage_merging) {
      const std::size_t in = layouts[s - 1].dim * 4;
      p.merges.push_back({LayerNormParams::init(in),
                          Tensor::parameter(glorot_uniform({in, st.dim}, in, st.dim, rng))});
    }
    std::vector<BlockParams> blocks;
    for (std::size_t i = 0; i < st.depth; ++i) {
      BlockParams b;
      b.attn_norm = LayerNormParams::init(st.dim);
      b.attention = AttentionParams::init(st.dim, st.heads, rng);
      b.local_norm = LayerNormParams::init(st.dim);
      if (cfg.sublayer == SublayerKind::irb) {
        b.local = IRBParams::init(st.dim, cfg.expansion, cfg.kernel, rng);
      } else {
        b.local = FFNParams::init(st.dim, st.dim * cfg.expansion, rng);
      }
      blocks.push_back(std::move(b));
    }
    p.stages.push_back(std::move(blocks));
  }
  const std::size_t d_final = layouts.back().dim;
  p.final_norm = LayerNormParams::init(d_final);
  p.head_w = Tensor::parameter(
      glorot_uniform({d_final, cfg.num_classes}, d_final, cfg.num_classes, rng));
  p.head_b = Tensor::parameter(Array::zeros({cfg.num_classes}));
  return p;
}

std::vector<NamedTensor> ModelParams::named_parameters() const {
  std::vector<NamedTensor> out;
  embedding.collect("embed", out);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::string stage = "stage" + std::to_string(s);
    if (s > 0 && s - 1 < merges.size()) {
      merges[s - 1].norm.collect(stage + ".merge.norm", out);
      out.push_back({stage + ".merge.reduction", merges[s - 1].reduction});
    }
    for (std::size_t i = 0; i < stages[s].size(); ++i) {
      stages[s][i].collect(stage + ".block" + std::to_string(i), out);
    }
  }
  final_norm.collect("final_norm", out);
  out.push_back({"head.w", head_w});
  out.push_back({"head.b", head_b});
  return out;
}

std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out;
  for (auto& nt : named_parameters()) out.push_back(nt.tensor);
  return out;
}

std::vector<Array> ModelParams::snapshot() const {
  std::vector<Array> out;
  for (const auto& nt : named_parameters()) out.push_back(nt.tensor.value());
  return out;
}

void ModelParams::restore(const std::vector<Array>& values) {
  auto named = named_parameters();
  if (named.size() != values.size()) {
    throw ShapeError("restore: " + std::to_string(values.size()) + " arrays for " +
                     std::to_string(named.size()) + " parameters");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (named[i].tensor.shape() != values[i].shape()) {
      throw ShapeError("restore: " + named[i].name + " expects " +
                       shape_str(named[i].tensor.shape()) + ", got " +
                       shape_str(values[i].shape()));
    }
    named[i].tensor.mutable_value() = values[i];
  }
}

void ModelParams::zero_grad() {
  for (auto& nt : named_parameters()) nt.tensor.zero_grad();
}

TokenSequence apply_block(const TokenSequence& z, const BlockParams& block,
                          const WindowSpec& spec, IRBOptions opts, AttentionTrace* trace) {
  TokenSequence attended = attention_sublayer(z, block.attention, block.attn_norm, spec, trace);
  return block_output(attended, block.local_norm, block.local, opts);
}

TokenSequence patch_merge(const TokenSequence& x, const MergeParams& params) {
  if (x.has_cls) throw ConfigError("patch merging is undefined with a class token");
  const std::size_t B = x.batch();
  const std::size_t d = x.dim();
  const std::size_t gh = x.grid_h;
  const std::size_t gw = x.grid_w;
  if (gh % 2 != 0 || gw % 2 != 0 || x.length() != gh * gw) {
    throw ShapeError("patch_merge: grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                     " cannot be merged 2x2");
  }
  const std::size_t oh = gh / 2;
  const std::size_t ow = gw / 2;
  // Channel groups: (2i,2j), (2i+1,2j), (2i,2j+1), (2i+1,2j+1).
  constexpr std::size_t dy[4] = {0, 1, 0, 1};
  constexpr std::size_t dx[4] = {0, 0, 1, 1};
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(B * oh * ow * 4 * d);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        for (std::size_t g = 0; g < 4; ++g) {
          const std::size_t tok = (2 * i + dy[g]) * gw + 2 * j + dx[g];
          for (std::size_t c = 0; c < d; ++c) idx->push_back((b * gh * gw + tok) * d + c);
        }
      }
    }
  }
  Tensor merged = gather(x.tokens, {B, oh * ow, 4 * d}, std::move(idx));
  Tensor reduced = linear(params.norm.apply(merged), params.reduction);
  return {reduced, oh, ow, false};
}

ForwardOutput forward(const Tensor& images, const ModelParams& params, const ModelConfig& cfg,
                      bool train_mode, Rng* dropout_rng, ForwardTrace* trace) {
  const auto& pc = cfg.patch;
  if (images.rank() != 4 || images.dim(1) != pc.image_h || images.dim(2) != pc.image_w ||
      images.dim(3) != pc.channels) {
    throw ShapeError("forward: images " + shape_str(images.shape()) + " do not match config " +
                     std::to_string(pc.image_h) + "x" + std::to_string(pc.image_w) + "x" +
                     std::to_string(pc.channels));
  }
  const auto specs = block_window_specs(cfg);
  if (specs.size() != params.stages.size()) {
    throw ShapeError("forward: parameter stages do not match config");
  }
  const std::size_t B = images.dim(0);
  TokenSequence z = embed(patchify(images, pc.patch_size), params.embedding, pc);
  for (std::size_t s = 0; s < specs.size(); ++s) {
    if (s > 0 && cfg.stage_merging) z = patch_merge(z, params.merges.at(s - 1));
    if (specs[s].size() != params.stages[s].size()) {
      throw ShapeError("forward: stage " + std::to_string(s) + " block count mismatch");
    }
    for (std::size_t i = 0; i < specs[s].size(); ++i) {
      if (trace) trace->specs.push_back(specs[s][i]);
      z = apply_block(z, params.stages[s][i], specs[s][i], cfg.irb_options(),
                      trace ? &trace->attention : nullptr);
    }
  }
  Tensor x = params.final_norm.apply(z.tokens);
  Tensor features = z.has_cls ? reshape(slice(x, 1, 0, 1), {B, z.dim()}) : mean_axis(x, 1);
  Tensor head_in = features;
  if (train_mode && cfg.head_dropout > 0.0) {
    if (dropout_rng == nullptr) throw ContractError("train-mode forward needs a dropout rng");
    head_in = dropout(features, cfg.head_dropout, *dropout_rng);
  }
  return {linear(head_in, params.head_w, params.head_b), features};
}

std::size_t count_parameters(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& nt : params.named_parameters()) n += nt.tensor.numel();
  return n;
}

}  // namespace rswin
