#include "rswin/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>

#include "rswin/analysis.hpp"
#include "rswin/checkpoint.hpp"
#include "rswin/metrics.hpp"
#include "rswin/model.hpp"
#include "rswin/ops.hpp"
#include "rswin/random.hpp"
#include "rswin/training.hpp"

namespace rswin {

GradCheckResult gradient_check(const std::function<Tensor()>& loss,
                               const std::vector<NamedTensor>& params, double h, double floor) {
  for (const auto& p : params) p.tensor.node()->grad = Array();
  loss().backward();
  GradCheckResult r;
  for (const auto& p : params) {
    const Array analytic = p.tensor.grad();
    Tensor t = p.tensor;
    auto& values = t.mutable_value();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      double plus = 0.0;
      double minus = 0.0;
      {
        NoGradGuard no_grad;
        values[i] = orig + h;
        plus = loss().item();
        values[i] = orig - h;
        minus = loss().item();
        values[i] = orig;
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[i];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (err > r.max_rel_error || r.checked == 0) {
        if (err >= r.max_rel_error) {
          r.max_rel_error = err;
          r.worst = p.name + "[" + std::to_string(i) + "]";
        }
      }
      ++r.checked;
    }
  }
  return r;
}

namespace {

Array random_array(Shape shape, Rng& rng, double scale = 1.0) {
  Array a(std::move(shape));
  for (auto& x : a.data()) x = scale * standard_normal(rng);
  return a;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

CheckOutcome check_model_gradients() {
  const ModelConfig cfg = ModelConfig::tiny();
  const ModelParams params = ModelParams::init(cfg, 11);
  Rng rng = derive_rng(5);
  const Tensor images(random_array({2, 8, 8, 3}, rng));
  const std::vector<std::size_t> labels{1, 3};
  const auto named = params.named_parameters();
  const auto r = gradient_check(
      [&] { return cross_entropy(forward(images, params, cfg, false).logits, labels); }, named);
  return {r.max_rel_error < 1e-3,
          "max rel err " + num(r.max_rel_error) + " at " + r.worst + " over " +
              std::to_string(r.checked) + " entries"};
}

// Straight-line reference: LN, per-head softmax(QK^T / sqrt(dk)) V over the
// whole sequence, output projection, residual.
Array reference_global_attention(const Array& z, const AttentionParams& p,
                                 const LayerNormParams& norm) {
  const std::size_t B = z.dim(0);
  const std::size_t N = z.dim(1);
  const std::size_t d = z.dim(2);
  const std::size_t h = p.num_heads;
  const std::size_t dk = d / h;
  const Array x = norm.apply(Tensor(z)).value();
  const auto& wq = p.w_q.value();
  const auto& wk = p.w_k.value();
  const auto& wv = p.w_v.value();
  const auto& wo = p.w_o.value();
  Array out = z;
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> q(N * d, 0.0), k(N * d, 0.0), v(N * d, 0.0), cat(N * d, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < d; ++i) {
          const double xi = x[(b * N + n) * d + i];
          q[n * d + j] += xi * wq[i * d + j];
          k[n * d + j] += xi * wk[i * d + j];
          v[n * d + j] += xi * wv[i * d + j];
        }
      }
    }
    for (std::size_t hh = 0; hh < h; ++hh) {
      for (std::size_t n = 0; n < N; ++n) {
        std::vector<double> s(N);
        double mx = -1e300;
        for (std::size_t m = 0; m < N; ++m) {
          double dot = 0.0;
          for (std::size_t c = 0; c < dk; ++c) dot += q[n * d + hh * dk + c] * k[m * d + hh * dk + c];
          s[m] = dot / std::sqrt(static_cast<double>(dk));
          mx = std::max(mx, s[m]);
        }
        double sum = 0.0;
        for (auto& e : s) sum += (e = std::exp(e - mx));
        for (std::size_t m = 0; m < N; ++m) {
          for (std::size_t c = 0; c < dk; ++c) {
            cat[n * d + hh * dk + c] += s[m] / sum * v[m * d + hh * dk + c];
          }
        }
      }
    }
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += cat[n * d + i] * wo[i * d + j];
        out[(b * N + n) * d + j] += acc;
      }
    }
  }
  return out;
}

CheckOutcome check_windowed_global() {
  Rng rng = derive_rng(21);
  const std::size_t G = 4;
  const std::size_t d = 8;
  const AttentionParams p = AttentionParams::init(d, 2, rng);
  LayerNormParams norm = LayerNormParams::init(d);
  norm.gamma = Tensor(random_array({d}, rng));
  norm.beta = Tensor(random_array({d}, rng));
  const Array z = random_array({2, G * G, d}, rng);
  const WindowSpec spec{G, 0, G, G};
  const Array got = attention_sublayer({Tensor(z), G, G, false}, p, norm, spec).tokens.value();
  const Array want = reference_global_attention(z, p, norm);
  double diff = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) diff = std::max(diff, std::abs(got[i] - want[i]));
  return {diff <= 1e-12, "max abs diff " + num(diff)};
}

CheckOutcome check_irb_identity() {
  Rng rng = derive_rng(31);
  IRBParams p = IRBParams::init(8, 2, 3, rng);
  p.project_w.mutable_value().fill(0.0);
  p.project_b.mutable_value().fill(0.0);
  const Array x = random_array({2, 16, 8}, rng);
  const Array y = irb({Tensor(x), 4, 4, false}, p).tokens.value();
  return {y == x, y == x ? "bit-exact" : "output differs from input"};
}

CheckOutcome check_round_trips() {
  Rng rng = derive_rng(41);
  const Array img = random_array({2, 8, 8, 3}, rng);
  const bool patches =
      unpatchify(patchify(Tensor(img), 2), 8, 8, 3, 2).value() == img;
  const Array tok = random_array({2, 16, 5}, rng);
  const WindowSpec spec{2, 1, 4, 4};
  const bool windows = window_reverse(window_partition(Tensor(tok), spec), spec).value() == tok;
  const bool shift = cyclic_unshift(cyclic_shift(Tensor(tok), 4, 4, 1), 4, 4, 1).value() == tok;

  Checkpoint ck;
  ck.config = ModelConfig::tiny();
  ck.params = ModelParams::init(ck.config, 3);
  ck.class_names = {"a", "b", "c", "d", "e"};
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  bool ckpt = back.config == ck.config && back.class_names == ck.class_names;
  const auto s0 = ck.params.snapshot();
  const auto s1 = back.params.snapshot();
  ckpt = ckpt && s0 == s1;
  std::string detail;
  if (!patches) detail += "patchify ";
  if (!windows) detail += "window ";
  if (!shift) detail += "shift ";
  if (!ckpt) detail += "checkpoint ";
  return {detail.empty(), detail.empty() ? "bit-exact" : "mismatch: " + detail};
}

CheckOutcome check_metrics() {
  const double f1 = f1_score(0.9604, 0.9621);
  if (std::abs(f1 - 0.9613) > 1e-4) return {false, "F1 " + num(f1)};
  Rng rng = derive_rng(51);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 49);
    ScoredPredictions s;
    s.probabilities = Array({n, 2});
    s.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = static_cast<double>(uniform_index(rng, 5)) / 4.0;  // ties on purpose
      s.probabilities[i * 2] = 1.0 - p;
      s.probabilities[i * 2 + 1] = p;
      s.labels[i] = uniform_index(rng, 2);
    }
    s.labels[0] = 0;
    s.labels[1] = 1;
    double num_pairs = 0.0;
    double wins = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (s.labels[i] != 1 || s.labels[j] != 0) continue;
        num_pairs += 1.0;
        const double a = s.score(i, 1);
        const double b = s.score(j, 1);
        wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
      }
    }
    worst = std::max(worst, std::abs(roc_auc(s, 1).value - wins / num_pairs));
  }
  const ConfusionMatrix cm(2, {3, 1, 2, 4});
  const auto m0 = per_class_prf(cm, 0);
  const bool hand = accuracy(cm) == 70.0 && m0.precision == 0.6 && m0.sensitivity == 0.75;
  return {worst <= 1e-12 && hand, "F1 " + num(f1) + ", ROC max diff " + num(worst)};
}

CheckOutcome check_schedule() {
  const TrainConfig cfg;
  const bool ok = lr_schedule(0, cfg) == 1e-3 && lr_schedule(19, cfg) == 1e-3 &&
                  lr_schedule(20, cfg) == 8.5e-4 && lr_schedule(40, cfg) == 7.225e-4;
  return {ok, "lr(0,20,40) = " + num(lr_schedule(0, cfg)) + ", " + num(lr_schedule(20, cfg)) +
                  ", " + num(lr_schedule(40, cfg))};
}

// Attention sub-layers only: the depthwise conv in the IRB also crosses
// window borders, which would hide a broken shift.
double cross_window_gradient(std::size_t second_shift) {
  Rng rng = derive_rng(61);
  const std::size_t G = 4;
  const std::size_t d = 8;
  const AttentionParams p0 = AttentionParams::init(d, 2, rng);
  const AttentionParams p1 = AttentionParams::init(d, 2, rng);
  const LayerNormParams norm = LayerNormParams::init(d);
  Tensor x = Tensor::parameter(random_array({1, G * G, d}, rng));
  TokenSequence z{x, G, G, false};
  z = attention_sublayer(z, p0, norm, {2, 0, G, G});
  z = attention_sublayer(z, p1, norm, {2, second_shift, G, G});
  // Output token (1, 1) lives in window (0, 0); input token (2, 2) lives in
  // window (1, 1). The shifted partition puts both in one window.
  sum(slice(z.tokens, 1, 1 * G + 1, 1)).backward();
  const Array g = x.grad();
  double far = 0.0;
  const std::size_t t = 2 * G + 2;
  for (std::size_t c = 0; c < d; ++c) far = std::max(far, std::abs(g[t * d + c]));
  return far;
}

CheckOutcome check_shift_connectivity() {
  const double shifted = cross_window_gradient(1);
  const double unshifted = cross_window_gradient(0);
  return {shifted > 0.0 && unshifted == 0.0,
          "cross-window grad " + num(shifted) + " shifted, " + num(unshifted) + " unshifted"};
}

CheckOutcome check_overfit_and_determinism() {
  const ModelConfig cfg = ModelConfig::tiny();
  const MemorySource src = make_color_dataset(5, 10, 8, 8, 71);
  const Normalization norm = compute_channel_stats(src);
  TrainConfig tc;
  tc.epochs = 50;
  tc.max_steps = 200;
  tc.seed = 72;
  auto run = [&](ModelParams& p) { return train(p, cfg, tc, src, nullptr, norm); };
  ModelParams a = ModelParams::init(cfg, 73);
  ModelParams b = ModelParams::init(cfg, 73);
  const TrainResult ra = run(a);
  const TrainResult rb = run(b);
  const double acc = accuracy(evaluate(a, cfg, src, norm).cm);
  const bool same = ra.history == rb.history && a.snapshot() == b.snapshot();
  return {acc >= 99.0 && same, "train acc " + num(acc) + "% after " + std::to_string(ra.steps) +
                                   " steps, reruns " + (same ? "identical" : "differ")};
}

CheckOutcome check_pca() {
  // Points on the line t * (1, 2, 2) / 3: one component along it, zero
  // variance elsewhere.
  Array f({5, 3});
  for (std::size_t i = 0; i < 5; ++i) {
    const double t = static_cast<double>(i) - 2.0;
    f[i * 3] = t / 3.0;
    f[i * 3 + 1] = 2.0 * t / 3.0;
    f[i * 3 + 2] = 2.0 * t / 3.0;
  }
  const PCAResult r = pca_fit_project(f, 2);
  // Sample variance of t in {-2..2} is 2.5.
  const bool ok = r.rank == 1 && r.components.dim(0) == 1 &&
                  std::abs(r.explained_variance[0] - 2.5) < 1e-10 &&
                  std::abs(r.components[1] - 2.0 / 3.0) < 1e-10 && !r.warning.empty();
  return {ok, "variance " + num(r.explained_variance.empty() ? 0.0 : r.explained_variance[0])};
}

}  // namespace

std::vector<SelfTestCheck> builtin_checks() {
  return {
      {"model gradients vs finite differences", check_model_gradients},
      {"windowed attention == global attention", check_windowed_global},
      {"IRB with zero projection is identity", check_irb_identity},
      {"layout and checkpoint round-trips", check_round_trips},
      {"metric oracles", check_metrics},
      {"learning-rate schedule", check_schedule},
      {"shifted windows connect windows", check_shift_connectivity},
      {"overfit and determinism", check_overfit_and_determinism},
      {"PCA rank-1 geometry", check_pca},
  };
}

std::vector<SelfTestResult> run_selftest(const std::vector<SelfTestCheck>& checks) {
  std::vector<SelfTestResult> out;
  for (const auto& c : checks) {
    SelfTestResult r;
    r.name = c.name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const CheckOutcome o = c.run();
      r.passed = o.passed;
      r.detail = o.detail;
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_selftest_table(const std::vector<SelfTestResult>& results) {
  std::size_t width = 4;
  for (const auto& r : results) width = std::max(width, r.name.size());
  std::string out;
  std::size_t passed = 0;
  for (const auto& r : results) {
    char line[64];
    std::snprintf(line, sizeof line, "  %7.2fs  ", r.seconds);
    std::string name = r.name;
    name.resize(width, ' ');
    out += std::string(r.passed ? "PASS  " : "FAIL  ") + name + line + r.detail + "\n";
    passed += r.passed ? 1 : 0;
  }
  out += std::to_string(passed) + "/" + std::to_string(results.size()) + " checks passed\n";
  return out;
}

bool all_passed(const std::vector<SelfTestResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

}  // namespace rswin
