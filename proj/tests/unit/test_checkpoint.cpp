#include <gtest/gtest.h>

#include <fstream>

#include "rswin/checkpoint.hpp"
#include "rswin/errors.hpp"
#include "support.hpp"

using namespace rswin;

namespace {

Checkpoint sample_checkpoint(const ModelConfig& cfg, bool with_moments) {
  Checkpoint c;
  c.config = cfg;
  c.params = ModelParams::init(cfg, 17);
  c.normalization.mean = {0.1, 0.2, 0.30000000000000004};
  c.normalization.std = {0.25, 1.0 / 3.0, 0.7};
  c.class_names = {"chickenpox", "cowpox", "healthy", "measles", "monkeypox"};
  c.state.epoch = 12;
  c.state.seed = 0xFFFFFFFFFFFFull;
  c.state.best_epoch = 9;
  c.state.best_val_f1 = 0.8123456789012345;
  if (with_moments) {
    c.state.optim.step = 40;
    for (const auto& t : c.params.parameters()) {
      c.state.optim.m.push_back(testutil::random_array(t.shape(), 1, 1e-3));
      c.state.optim.v.push_back(testutil::random_array(t.shape(), 2, 1e-6));
    }
  }
  return c;
}

void expect_same(const Checkpoint& a, const Checkpoint& b) {
  EXPECT_EQ(a.config, b.config);
  EXPECT_EQ(a.normalization, b.normalization);
  EXPECT_EQ(a.class_names, b.class_names);
  EXPECT_TRUE(a.state == b.state);
  EXPECT_EQ(a.params.snapshot(), b.params.snapshot());
  const auto na = a.params.named_parameters();
  const auto nb = b.params.named_parameters();
  ASSERT_EQ(na.size(), nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) EXPECT_EQ(na[i].name, nb[i].name);
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  for (bool moments : {false, true}) {
    const Checkpoint c = sample_checkpoint(ModelConfig::tiny(), moments);
    const auto bytes = encode_checkpoint(c);
    const Checkpoint back = decode_checkpoint(bytes);
    expect_same(c, back);
    EXPECT_EQ(encode_checkpoint(back), bytes);
  }
}

TEST(Checkpoint, RoundTripThroughFileAndForward) {
  testutil::TempDir dir("ckpt");
  ModelConfig cfg = ModelConfig::tiny();
  cfg.sublayer = SublayerKind::ffn;
  const Checkpoint c = sample_checkpoint(cfg, true);
  save_checkpoint(c, dir / "sub/x.ckpt");
  const Checkpoint back = load_checkpoint(dir / "sub/x.ckpt", cfg);
  expect_same(c, back);
  const Tensor x(testutil::random_array({2, 8, 8, 3}, 5));
  EXPECT_EQ(forward(x, c.params, cfg, false).logits.value(),
            forward(x, back.params, cfg, false).logits.value());
}

TEST(Checkpoint, BadMagic) {
  auto bytes = encode_checkpoint(sample_checkpoint(ModelConfig::tiny(), false));
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointFormatError);
  EXPECT_THROW(decode_checkpoint({}), CheckpointTruncatedError);
  const std::string text = "hello world, not a checkpoint";
  EXPECT_THROW(decode_checkpoint(std::vector<std::uint8_t>(text.begin(), text.end())),
               CheckpointFormatError);
}

TEST(Checkpoint, UnsupportedVersion) {
  auto bytes = encode_checkpoint(sample_checkpoint(ModelConfig::tiny(), false));
  bytes[8] = 99;
  try {
    decode_checkpoint(bytes);
    FAIL() << "expected a version error";
  } catch (const CheckpointVersionError& e) {
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
  }
}

TEST(Checkpoint, TruncatedAnywhere) {
  const auto bytes = encode_checkpoint(sample_checkpoint(ModelConfig::tiny(), false));
  for (std::size_t len : {std::size_t{10}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<long>(len));
    EXPECT_THROW(decode_checkpoint(cut), CheckpointTruncatedError) << len;
  }
}

TEST(Checkpoint, FlippedByteFailsIntegrity) {
  const auto bytes = encode_checkpoint(sample_checkpoint(ModelConfig::tiny(), false));
  // A byte deep inside the last tensor's data.
  auto bad = bytes;
  bad[bytes.size() - 20] ^= 0x40;
  EXPECT_THROW(decode_checkpoint(bad), CheckpointIntegrityError);
  bad = bytes;
  bad.back() ^= 0x01;
  EXPECT_THROW(decode_checkpoint(bad), CheckpointIntegrityError);
}

TEST(Checkpoint, TrailingBytes) {
  auto bytes = encode_checkpoint(sample_checkpoint(ModelConfig::tiny(), false));
  bytes.push_back(0);
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}

TEST(Checkpoint, ArchitectureMismatchIsIncompatible) {
  testutil::TempDir dir("ckpt");
  ModelConfig ffn = ModelConfig::tiny();
  ffn.sublayer = SublayerKind::ffn;
  save_checkpoint(sample_checkpoint(ffn, false), dir / "ffn.ckpt");
  EXPECT_THROW(load_checkpoint(dir / "ffn.ckpt", ModelConfig::tiny()),
               CheckpointIncompatibleError);

  // Header says FFN, tensors are IRB.
  Checkpoint lying = sample_checkpoint(ModelConfig::tiny(), false);
  lying.config = ffn;
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(lying)), CheckpointIncompatibleError);
}

TEST(Checkpoint, MissingFile) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), CheckpointError);
}
