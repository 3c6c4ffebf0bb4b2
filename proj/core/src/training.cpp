#include "rswin/training.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>

#include <json.hpp>

#include "rswin/errors.hpp"

namespace rswin {

void TrainConfig::validate(std::size_t num_classes) const {
  if (!(lr0 > 0.0)) throw ConfigError("train.lr0 must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw ConfigError("train.decay_factor must lie in (0, 1]");
  }
  if (decay_interval == 0) throw ConfigError("train.decay_interval must be positive");
  if (batch == 0) throw ConfigError("train.batch must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be non-negative");
  if (!class_weights.empty()) {
    if (class_weights.size() != num_classes) {
      throw ConfigError("train.class_weights has " + std::to_string(class_weights.size()) +
                        " entries for " + std::to_string(num_classes) + " classes");
    }
    for (double w : class_weights) {
      if (!(w > 0.0)) throw ConfigError("train.class_weights must be positive");
    }
  }
}

const std::vector<ConfigField<TrainConfig>>& TrainConfig::fields() {
  using T = TrainConfig;
  static const std::vector<ConfigField<T>> f = {
      double_field<T>("lr0", [](auto& c) -> auto& { return c.lr0; }),
      double_field<T>("weight_decay", [](auto& c) -> auto& { return c.weight_decay; }),
      double_field<T>("decay_factor", [](auto& c) -> auto& { return c.decay_factor; }),
      size_field<T>("decay_interval", [](auto& c) -> auto& { return c.decay_interval; }),
      size_field<T>("epochs", [](auto& c) -> auto& { return c.epochs; }),
      size_field<T>("batch", [](auto& c) -> auto& { return c.batch; }),
      bool_field<T>("decoupled_weight_decay",
                    [](auto& c) -> auto& { return c.decoupled_weight_decay; }),
      double_field<T>("grad_clip", [](auto& c) -> auto& { return c.grad_clip; }),
      double_list_field<T>("class_weights", [](auto& c) -> auto& { return c.class_weights; }),
      size_field<T>("max_steps", [](auto& c) -> auto& { return c.max_steps; }),
      bool_field<T>("shuffle", [](auto& c) -> auto& { return c.shuffle; }),
  };
  return f;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels,
                     const std::vector<double>& class_weights) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = logits.dim(0);
  const std::size_t C = logits.dim(1);
  if (B == 0) throw ShapeError("cross_entropy on an empty batch");
  if (!class_weights.empty() && class_weights.size() != C) {
    throw ShapeError("cross_entropy: class weight count differs from class count");
  }
  for (auto l : labels) {
    if (l >= C) {
      throw ContractError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                          std::to_string(C) + ")");
    }
  }
  const auto& z = logits.value();
  Array prob({B, C});
  std::vector<double> w(B, 1.0);
  double loss = 0.0;
  double wsum = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = z.data().data() + b * C;
    double mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(row[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < C; ++c) prob[b * C + c] = std::exp(row[c] - lse);
    if (!class_weights.empty()) w[b] = class_weights[labels[b]];
    loss += w[b] * (lse - row[labels[b]]);
    wsum += w[b];
  }
  return record(
      Array::scalar(loss / wsum), {logits},
      [prob, w, wsum, labels, B, C](const Array& g, std::span<Array* const> gi) {
        if (!gi[0]) return;
        const double scale = g.item() / wsum;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t c = 0; c < C; ++c) {
            const double onehot = c == labels[b] ? 1.0 : 0.0;
            (*gi[0])[b * C + c] += scale * w[b] * (prob[b * C + c] - onehot);
          }
        }
      },
      "cross_entropy");
}

double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  const double raw =
      cfg.lr0 * std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_interval));
  if (raw == 0.0 || !std::isfinite(raw)) return raw;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", raw);
  return std::strtod(buf, nullptr);
}

EvalResult evaluate(const ModelParams& params, const ModelConfig& cfg, const ImageSource& source,
                    const Normalization& norm, std::size_t batch,
                    const std::vector<std::string>& class_names) {
  if (source.size() == 0) throw DataError("cannot evaluate an empty split");
  NoGradGuard no_grad;
  const std::size_t C = cfg.num_classes;
  EvalResult r;
  std::vector<double> probs;
  std::vector<double> feats;
  std::size_t feat_dim = 0;
  double loss_sum = 0.0;
  BatchIterator it(source, batch, 0, 0, false, norm);
  Batch b;
  while (it.next(b)) {
    const ForwardOutput out = forward(b.images, params, cfg, false);
    loss_sum += cross_entropy(out.logits, b.labels).item() * static_cast<double>(b.labels.size());
    const auto& z = out.logits.value();
    for (std::size_t i = 0; i < b.labels.size(); ++i) {
      const double* row = z.data().data() + i * C;
      double mx = row[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += std::exp(row[c] - mx);
      for (std::size_t c = 0; c < C; ++c) probs.push_back(std::exp(row[c] - mx) / s);
    }
    feat_dim = out.features.dim(-1);
    const auto& f = out.features.value().vec();
    feats.insert(feats.end(), f.begin(), f.end());
    r.scores.labels.insert(r.scores.labels.end(), b.labels.begin(), b.labels.end());
  }
  const std::size_t N = r.scores.labels.size();
  r.scores.probabilities = Array({N, C}, std::move(probs));
  r.features = Array({N, feat_dim}, std::move(feats));
  r.predictions = r.scores.argmax();
  r.cm = ConfusionMatrix::from_predictions(r.scores.labels, r.predictions, C,
                                           class_names.size() == C ? class_names
                                                                   : std::vector<std::string>{});
  r.mean_loss = loss_sum / static_cast<double>(N);
  return r;
}

std::string to_json_line(const EpochRecord& rec) {
  nlohmann::ordered_json j;
  j["epoch"] = rec.epoch;
  j["lr"] = rec.lr;
  j["train_loss"] = rec.train_loss;
  j["val_acc"] = rec.val_acc ? nlohmann::ordered_json(*rec.val_acc) : nullptr;
  j["val_f1"] = rec.val_f1 ? nlohmann::ordered_json(*rec.val_f1) : nullptr;
  return j.dump();
}

EpochRecord parse_json_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch").get<std::size_t>();
    r.lr = j.at("lr").get<double>();
    r.train_loss = j.at("train_loss").get<double>();
    if (!j.at("val_acc").is_null()) r.val_acc = j.at("val_acc").get<double>();
    if (!j.at("val_f1").is_null()) r.val_f1 = j.at("val_f1").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed history record: ") + e.what());
  }
}

double global_grad_norm(const std::vector<Tensor>& params) {
  double s = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.node()->grad.data()) s += g * g;
  }
  return std::sqrt(s);
}

TrainResult train(ModelParams& params, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const ImageSource& train_source, const ImageSource* val,
                  const Normalization& norm, const AugmentPolicy* augment,
                  const TrainCallbacks& callbacks) {
  model_cfg.validate();
  cfg.validate(model_cfg.num_classes);
  if (cfg.epochs > 0 && train_source.size() == 0) throw DataError("training split is empty");
  if (val != nullptr && val->size() == 0) val = nullptr;

  TrainResult result;
  std::vector<Tensor> tensors = params.parameters();
  const auto mode = cfg.decoupled_weight_decay ? WeightDecayMode::decoupled : WeightDecayMode::l2;
  bool have_best = false;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
    const double lr = lr_schedule(epoch, cfg);
    BatchIterator it(train_source, cfg.batch, cfg.seed, epoch, cfg.shuffle, norm, augment);
    Batch batch;
    double loss_sum = 0.0;
    std::size_t seen = 0;
    while (it.next(batch)) {
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
      params.zero_grad();
      Rng dropout_rng = derive_rng(cfg.seed, {0xD0, result.steps});
      const ForwardOutput out = forward(batch.images, params, model_cfg, true, &dropout_rng);
      const Tensor loss = cross_entropy(out.logits, batch.labels, cfg.class_weights);
      loss.backward();
      const double value = loss.item();
      const double gnorm = global_grad_norm(tensors);
      if (!std::isfinite(value) || !std::isfinite(gnorm)) {
        char msg[256];
        std::snprintf(msg, sizeof msg,
                      "non-finite training state at step %zu (epoch %zu): loss=%g lr=%g "
                      "grad-norm=%g",
                      result.steps, epoch, value, lr, gnorm);
        throw NumericError(msg);
      }
      if (cfg.grad_clip > 0.0 && gnorm > cfg.grad_clip) {
        const double s = cfg.grad_clip / gnorm;
        for (auto& p : tensors) {
          if (!p.has_grad()) continue;
          for (double& g : p.node()->grad.data()) g *= s;
        }
      }
      adam_step(tensors, result.optim, lr, cfg.weight_decay, mode);
      ++result.steps;
      loss_sum += value * static_cast<double>(batch.labels.size());
      seen += batch.labels.size();
      if (callbacks.on_step) callbacks.on_step(result.steps, value);
    }
    if (seen == 0) break;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    bool is_best = false;
    if (val != nullptr) {
      const EvalResult ev = evaluate(params, model_cfg, *val, norm, cfg.batch);
      rec.val_acc = accuracy(ev.cm);
      rec.val_f1 = macro_metrics(ev.cm).f1;
      is_best = !have_best || *rec.val_f1 > result.best_val_f1;
    } else {
      is_best = true;
    }
    if (is_best) {
      have_best = true;
      result.best_epoch = epoch;
      result.best_val_f1 = rec.val_f1.value_or(0.0);
      result.best_params = params.snapshot();
    }
    result.history.push_back(rec);
    if (callbacks.on_epoch) callbacks.on_epoch(rec, params, result, is_best);
  }
  params.zero_grad();
  return result;
}

}  // namespace rswin
