#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rswin/checkpoint.hpp"
#include "rswin/config.hpp"
#include "rswin/data_pipeline.hpp"
#include "rswin/metrics.hpp"
#include "rswin/model.hpp"
#include "rswin/optimizer.hpp"

namespace rswin {

struct TrainConfig {
  double lr0 = 1e-3;
  double weight_decay = 0.04;
  double decay_factor = 0.85;
  std::size_t decay_interval = 20;  // epochs
  std::size_t epochs = 100;
  std::size_t batch = 16;
  std::uint64_t seed = 0;  // set from [run] seed by the CLI
  bool decoupled_weight_decay = true;
  double grad_clip = 0.0;             // global-norm clip, 0 = off
  std::vector<double> class_weights;  // empty = unweighted
  std::size_t max_steps = 0;          // 0 = no cap
  bool shuffle = true;

  void validate(std::size_t num_classes) const;
  static const std::vector<ConfigField<TrainConfig>>& fields();
  bool operator==(const TrainConfig&) const = default;
};

// Mean over the batch of -log softmax(logits)[label]; with class weights,
// the weighted mean sum(w_y * nll) / sum(w_y).
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels,
                     const std::vector<double>& class_weights = {});

// lr0 * decay_factor^floor(epoch / decay_interval), rounded to 12 significant
// digits so decimal settings give decimal rates.
double lr_schedule(std::size_t epoch, const TrainConfig& cfg);

struct EvalResult {
  ScoredPredictions scores;
  std::vector<std::size_t> predictions;
  Array features;  // [N, d_final]
  ConfusionMatrix cm;
  double mean_loss = 0.0;
};

EvalResult evaluate(const ModelParams& params, const ModelConfig& cfg, const ImageSource& source,
                    const Normalization& norm, std::size_t batch = 16,
                    const std::vector<std::string>& class_names = {});

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_acc;  // percent
  std::optional<double> val_f1;   // macro

  bool operator==(const EpochRecord&) const = default;
};

std::string to_json_line(const EpochRecord& record);
EpochRecord parse_json_line(const std::string& line);

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t steps = 0;
  // Best by validation macro F1, earlier epoch on ties; the last epoch when
  // there is no validation split. Empty when no epoch ran.
  std::vector<Array> best_params;
  std::size_t best_epoch = 0;
  double best_val_f1 = 0.0;
  OptimState optim;
};

struct TrainCallbacks {
  // After every epoch; `is_best` marks a new best model.
  std::function<void(const EpochRecord&, const ModelParams&, const TrainResult&, bool is_best)>
      on_epoch;
  std::function<void(std::size_t step, double loss)> on_step;
};

// Trains `params` in place. `val` may be null. Throws NumericError when the
// loss or a gradient stops being finite.
TrainResult train(ModelParams& params, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const ImageSource& train_source, const ImageSource* val,
                  const Normalization& norm, const AugmentPolicy* augment = nullptr,
                  const TrainCallbacks& callbacks = {});

double global_grad_norm(const std::vector<Tensor>& params);

}  // namespace rswin
