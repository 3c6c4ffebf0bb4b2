#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace rswin::cli {

enum ExitCode : int {
  kOk = 0,
  kChecksFailed = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericError = 4,
  kInternalError = 5,
};

int exit_code_for(const std::exception& e);

struct TrainOptions {
  std::filesystem::path config;
  std::string run_name;  // overrides run.name when set
  std::vector<std::pair<std::string, std::string>> overrides;
};

// Options shared by eval and analyze. Data root and manifest default to the
// ones recorded in the checkpoint's run directory.
struct DataOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data_root;
  std::filesystem::path manifest;
  std::string split = "test";
  std::filesystem::path out_dir;
};

struct SynthOptions {
  std::filesystem::path out;
  std::size_t classes = 5;
  std::size_t per_class = 10;
  std::size_t size = 8;
  std::uint64_t seed = 0;
};

// Each command throws on failure; run_cli maps exceptions to exit codes.
int cmd_train(const TrainOptions& opts, std::ostream& out);
int cmd_eval(const DataOptions& opts, std::ostream& out);
int cmd_infer(const std::filesystem::path& checkpoint, const std::vector<std::string>& images,
              std::ostream& out, std::ostream& err);
int cmd_analyze(const DataOptions& opts, std::ostream& out);
int cmd_selftest(std::ostream& out);
int cmd_synth(const SynthOptions& opts, std::ostream& out);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rswin::cli
