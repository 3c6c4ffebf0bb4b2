#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "rswin/checkpoint.hpp"
#include "rswin/errors.hpp"
#include "rswin/training.hpp"
#include "rswin_cli/commands.hpp"
#include "rswin_cli/run_config.hpp"
#include "support.hpp"

using namespace rswin;
using namespace rswin::cli;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "rswin");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) ++n;
  return n;
}

// A synthetic dataset plus a tiny-model config writing runs under the temp dir.
class CliFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_EQ(run({"synth", "--out", (dir / "data").string(), "--classes", "5", "--per-class", "10",
                   "--size", "8", "--seed", "3"})
                  .code,
              0);
    std::ofstream(dir / "tiny.cfg") << "[model]\n"
                                       "image_h = 8\nimage_w = 8\npatch_size = 2\nembed_dim = 8\n"
                                       "depths = 2\nheads = 2\nwindow = 2\nexpansion = 2\n"
                                       "kernel = 3\nnum_classes = 5\n"
                                       "[train]\nepochs = 4\nbatch = 16\n"
                                       "[augment]\nenabled = false\n"
                                       "[data]\nroot = "
                                    << (dir / "data").string() << "\n[run]\ndir = "
                                    << (dir / "runs").string() << "\nname = t\nseed = 1\n";
  }

  testutil::TempDir dir{"cli"};
};

}  // namespace

TEST(RunConfigTest, OverridesAndUnknownKeys) {
  RunConfig rc;
  rc.apply_override("train.lr0", "0.002");
  EXPECT_EQ(rc.train.lr0, 0.002);
  rc.apply_override("epochs", "7");
  EXPECT_EQ(rc.train.epochs, 7u);
  rc.apply_override("seed", "42");
  EXPECT_EQ(rc.run.seed, 42u);
  EXPECT_THROW(rc.apply_override("train.nope", "1"), ConfigError);
  EXPECT_THROW(rc.apply_override("nope", "1"), ConfigError);
  EXPECT_THROW(rc.apply_override("lr0", "nan"), ConfigError);
  const auto kv = parse_overrides({"--lr0", "0.1", "--epochs=3"});
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv[1], std::make_pair(std::string("epochs"), std::string("3")));
  EXPECT_THROW(parse_overrides({"--lr0"}), ConfigError);
}

TEST(RunConfigTest, ResolvedRoundTrip) {
  RunConfig rc;
  rc.apply_override("model.embed_dim", "48");
  rc.apply_override("data.root", "x/y");
  const RunConfig back = RunConfig::from_doc(KeyValueDoc::parse(rc.to_doc().to_text()));
  EXPECT_EQ(back.to_doc().to_text(), rc.to_doc().to_text());
  EXPECT_THROW(RunConfig::from_doc(KeyValueDoc::parse("[bogus]\na = 1\n")), ConfigError);
}

TEST_F(CliFixture, TrainWritesRunDirectory) {
  const Outcome o = run({"train", "--config", (dir / "tiny.cfg").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  const fs::path rd = dir / "runs/t";
  for (const char* f : {"config.resolved", "split_manifest.tsv", "history.jsonl",
                        "checkpoints/best.ckpt", "checkpoints/last.ckpt", "metrics/metrics.csv",
                        "metrics/confusion.csv", "metrics/report.txt"}) {
    EXPECT_TRUE(fs::exists(rd / f)) << f;
  }
  EXPECT_EQ(line_count(rd / "history.jsonl"), 4u);
  EXPECT_EQ(line_count(rd / "split_manifest.tsv"), 50u);
  const Checkpoint ck = load_checkpoint(rd / "checkpoints/last.ckpt");
  EXPECT_EQ(ck.class_names.size(), 5u);
  EXPECT_EQ(ck.state.epoch, 4u);  // completed epochs
  // Artifacts stay inside the run directory.
  std::size_t top = 0;
  for (const auto& e : fs::directory_iterator(dir.path())) {
    (void)e;
    ++top;
  }
  EXPECT_EQ(top, 3u);  // data, tiny.cfg, runs
}

TEST_F(CliFixture, RerunIsByteIdentical) {
  ASSERT_EQ(run({"train", "--config", (dir / "tiny.cfg").string(), "--run-name", "a"}).code, 0);
  ASSERT_EQ(run({"train", "--config", (dir / "tiny.cfg").string(), "--run-name", "b"}).code, 0);
  for (const char* f : {"history.jsonl", "checkpoints/best.ckpt", "checkpoints/last.ckpt",
                        "metrics/metrics.csv", "split_manifest.tsv"}) {
    EXPECT_EQ(slurp(dir / "runs/a" / f), slurp(dir / "runs/b" / f)) << f;
  }
  const Outcome c = run({"train", "--config", (dir / "tiny.cfg").string(), "--run-name", "c",
                         "--seed", "2"});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(slurp(dir / "runs/a/history.jsonl"), slurp(dir / "runs/c/history.jsonl"));
}

TEST_F(CliFixture, ZeroEpochsGivesEmptyHistoryAndInitCheckpoint) {
  ASSERT_EQ(run({"train", "--config", (dir / "tiny.cfg").string(), "--epochs", "0"}).code, 0);
  EXPECT_EQ(line_count(dir / "runs/t/history.jsonl"), 0u);
  const Checkpoint ck = load_checkpoint(dir / "runs/t/checkpoints/best.ckpt");
  ModelConfig m = ck.config;
  EXPECT_EQ(ck.params.snapshot(), ModelParams::init(m, 1).snapshot());
}

TEST_F(CliFixture, EvalInferAnalyze) {
  ASSERT_EQ(run({"train", "--config", (dir / "tiny.cfg").string(), "--epochs", "150", "--lr0",
                 "0.003"})
                .code,
            0);
  const fs::path ck = dir / "runs/t/checkpoints/last.ckpt";
  const Outcome ev = run({"eval", "--checkpoint", ck.string(), "--split", "train", "--out",
                          (dir / "runs/t/eval_train").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  // Train-split accuracy from the confusion matrix.
  std::ifstream cm(dir / "runs/t/eval_train/confusion.csv");
  std::string line;
  std::getline(cm, line);
  std::size_t diag = 0, total = 0, row = 0;
  while (std::getline(cm, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    for (std::size_t col = 0; std::getline(ss, cell, ','); ++col) {
      const std::size_t v = std::stoul(cell);
      total += v;
      if (col == row) diag += v;
    }
    ++row;
  }
  EXPECT_EQ(total, 32u);
  EXPECT_GE(100.0 * static_cast<double>(diag) / static_cast<double>(total), 99.0);

  std::vector<std::string> imgs;
  for (const auto& e : fs::recursive_directory_iterator(dir / "data")) {
    if (e.is_regular_file() && imgs.size() < 3) imgs.push_back(e.path().string());
  }
  imgs.push_back((dir / "missing.png").string());
  std::vector<std::string> args{"infer", "--checkpoint", ck.string()};
  args.insert(args.end(), imgs.begin(), imgs.end());
  const Outcome inf = run(args);
  EXPECT_EQ(inf.code, 0);
  std::stringstream ss(inf.out);
  std::vector<std::string> lines;
  for (std::string l; std::getline(ss, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_NE(lines[3].find("\tERROR\t"), std::string::npos);
  EXPECT_EQ(lines[0].find("ERROR"), std::string::npos);
  EXPECT_EQ(run({"infer", "--checkpoint", ck.string(), (dir / "missing.png").string()}).code,
            kDataError);

  const Outcome an = run({"analyze", "--checkpoint", ck.string()});
  ASSERT_EQ(an.code, 0) << an.err;
  EXPECT_EQ(line_count(dir / "runs/t/analysis/projection.csv"), 11u);
  EXPECT_TRUE(fs::exists(dir / "runs/t/analysis/summary.txt"));
}

TEST_F(CliFixture, ExitCodes) {
  const std::string cfg = (dir / "tiny.cfg").string();
  EXPECT_EQ(run({"train", "--config", (dir / "nope.cfg").string()}).code, kConfigError);
  EXPECT_EQ(run({"train", "--config", cfg, "--windw", "3"}).code, kConfigError);
  EXPECT_EQ(run({"train", "--config", cfg, "--lr0", "nan"}).code, kConfigError);
  EXPECT_EQ(run({"train", "--config", cfg, "--window", "3"}).code, kConfigError);
  const Outcome missing = run({"train", "--config", cfg, "--data.root",
                               (dir / "nowhere").string(), "--run-name", "m"});
  EXPECT_EQ(missing.code, kConfigError);
  EXPECT_FALSE(fs::exists(dir / "runs/m"));
  const Outcome nan = run({"train", "--config", cfg, "--lr0", "1e250", "--run-name", "n"});
  EXPECT_EQ(nan.code, kNumericError) << nan.out << nan.err;
  EXPECT_NE(nan.err.find("step"), std::string::npos);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_EQ(run({"eval", "--checkpoint", (dir / "junk.ckpt").string(), "--data-root",
                 (dir / "data").string(), "--out", (dir / "o").string()})
                .code,
            kDataError);
  EXPECT_EQ(run({"frobnicate"}).code, kConfigError);
  EXPECT_EQ(run({}).code, kConfigError);
}

TEST(ExitCodeMapping, Categories) {
  EXPECT_EQ(exit_code_for(ConfigError("x")), kConfigError);
  EXPECT_EQ(exit_code_for(DataError("x")), kDataError);
  EXPECT_EQ(exit_code_for(NumericError("x")), kNumericError);
  EXPECT_EQ(exit_code_for(CheckpointIntegrityError("x")), kDataError);
  EXPECT_EQ(exit_code_for(CheckpointIncompatibleError("x")), kConfigError);
  EXPECT_EQ(exit_code_for(std::runtime_error("x")), kInternalError);
}
