#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rswin/config.hpp"
#include "rswin/data_pipeline.hpp"
#include "rswin/image.hpp"
#include "rswin/model.hpp"
#include "rswin/training.hpp"

namespace rswin::cli {

struct DataConfig {
  std::string root;
  std::string manifest;  // optional split manifest to import
  double test_fraction = 0.2;
  double val_fraction = 0.2;
  // "dataset": mean/std from the training split; "fixed": 0.5/0.5.
  std::string normalize = "dataset";

  static const std::vector<ConfigField<DataConfig>>& fields();
};

struct RunSection {
  std::string name = "default";
  std::string dir = "runs";
  std::uint64_t seed = 0;

  static const std::vector<ConfigField<RunSection>>& fields();
};

// Everything a command needs, merged from the sections [model], [train],
// [augment], [data] and [run].
struct RunConfig {
  ModelConfig model = ModelConfig::standard();
  TrainConfig train;
  AugmentPolicy augment;
  DataConfig data;
  RunSection run;

  static RunConfig from_doc(const KeyValueDoc& doc);
  static RunConfig load(const std::filesystem::path& path);

  // `key` is either "section.key" or a bare key that exists in exactly one
  // section.
  void apply_override(const std::string& key, const std::string& value);
  void validate() const;
  KeyValueDoc to_doc() const;

  SplitPolicy split_policy() const { return {data.test_fraction, data.val_fraction}; }
  std::filesystem::path run_dir() const { return std::filesystem::path(run.dir) / run.name; }
};

// "--key value" / "--key=value" pairs left over after flag parsing.
std::vector<std::pair<std::string, std::string>> parse_overrides(
    const std::vector<std::string>& args);

}  // namespace rswin::cli
