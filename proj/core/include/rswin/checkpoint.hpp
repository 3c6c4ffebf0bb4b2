#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rswin/model.hpp"
#include "rswin/optimizer.hpp"

namespace rswin {

// Per-channel standardization applied to [0,1] pixels.
struct Normalization {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.5, 0.5, 0.5};

  bool operator==(const Normalization&) const = default;
};

struct TrainState {
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  double best_val_f1 = 0.0;
  OptimState optim;

  bool operator==(const TrainState& o) const {
    return epoch == o.epoch && seed == o.seed && best_epoch == o.best_epoch &&
           best_val_f1 == o.best_val_f1 && optim.m == o.optim.m && optim.v == o.optim.v &&
           optim.step == o.optim.step && optim.beta1 == o.optim.beta1 &&
           optim.beta2 == o.optim.beta2 && optim.eps == o.optim.eps;
  }
};

struct Checkpoint {
  ModelConfig config;
  Normalization normalization;
  std::vector<std::string> class_names;
  ModelParams params;
  TrainState state;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian):
//   "RSWCKPT\0" | u32 version | u64 n + n bytes of canonical key-value
//   header | u64 tensor count | per tensor: u32 name length, name, u8 dtype
//   (1 = float64), u32 rank, u64 dims[rank], raw data | u64 FNV-1a of all
//   preceding bytes.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Also rejects a checkpoint whose embedded model config differs from
// `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace rswin
