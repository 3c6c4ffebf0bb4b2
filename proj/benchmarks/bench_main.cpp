#include <benchmark/benchmark.h>

#include "rswin/model.hpp"
#include "rswin/ops.hpp"
#include "rswin/random.hpp"
#include "rswin/training.hpp"
#include "rswin/window_attention.hpp"

using namespace rswin;

namespace {

Array normal_array(Shape shape, std::uint64_t seed) {
  Rng rng = derive_rng(seed);
  Array a(std::move(shape));
  for (auto& v : a.data()) v = standard_normal(rng);
  return a;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a(normal_array({n, n}, 1));
  const Tensor b(normal_array({n, n}, 2));
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).value().data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

// window = 7 on a 14x14 grid, with and without shift
static void BM_AttentionSublayer(benchmark::State& state) {
  const std::size_t G = 14, d = 32;
  const std::size_t shift = static_cast<std::size_t>(state.range(0));
  Rng rng = derive_rng(3);
  const AttentionParams att = AttentionParams::init(d, 2, rng);
  const LayerNormParams ln = LayerNormParams::init(d);
  const TokenSequence z{Tensor(normal_array({1, G * G, d}, 4)), G, G, false};
  const WindowSpec spec{7, shift, G, G};
  NoGradGuard no_grad;
  for (auto _ : state) {
    benchmark::DoNotOptimize(attention_sublayer(z, att, ln, spec).tokens.value().data().data());
  }
}
BENCHMARK(BM_AttentionSublayer)->Arg(0)->Arg(3);

static void BM_TinyForwardBackward(benchmark::State& state) {
  const ModelConfig cfg = ModelConfig::tiny();
  ModelParams params = ModelParams::init(cfg, 5);
  const auto B = static_cast<std::size_t>(state.range(0));
  const Tensor images(normal_array({B, cfg.patch.image_h, cfg.patch.image_w, 3}, 6));
  std::vector<std::size_t> labels(B);
  for (std::size_t i = 0; i < B; ++i) labels[i] = i % cfg.num_classes;
  for (auto _ : state) {
    params.zero_grad();
    const Tensor loss = cross_entropy(forward(images, params, cfg, false).logits, labels);
    loss.backward();
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_TinyForwardBackward)->Arg(1)->Arg(8);

BENCHMARK_MAIN();
