#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "rswin/checkpoint.hpp"
#include "rswin/image.hpp"
#include "rswin/random.hpp"
#include "rswin/tensor.hpp"

namespace rswin {

enum class Split { train, val, test };

std::string to_string(Split split);
Split parse_split(const std::string& s);

// test_fraction of every class is held out; val_fraction of the remainder
// becomes validation.
struct SplitPolicy {
  double test_fraction = 0.2;
  double val_fraction = 0.2;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

// Stratified allocation: global targets round(f * n), distributed over
// classes by largest remainder so each class is within one sample of the
// global fraction.
std::vector<SplitCounts> allocate_splits(const std::vector<std::size_t>& class_counts,
                                         const SplitPolicy& policy = {});

struct Sample {
  std::string relative_path;  // relative to the dataset root, '/'-separated
  std::size_t class_id = 0;
  Split split = Split::train;
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<std::string> class_names;  // lexicographic
  std::vector<Sample> samples;
  std::uint64_t seed = 0;
  std::size_t skipped = 0;  // files with an image extension that failed the header check

  std::vector<std::size_t> indices(Split split) const;
  std::size_t count(Split split) const { return indices(split).size(); }
};

// Scans root/<ClassName>/*.{png,jpg,jpeg,bmp}. Throws DataError when fewer
// than two classes exist or a class directory holds no usable image.
DatasetIndex index_dataset(const std::filesystem::path& root, std::uint64_t seed,
                           const SplitPolicy& policy = {});

// Line format: relative_path<TAB>class<TAB>split.
void write_manifest(const DatasetIndex& index, const std::filesystem::path& path);
// Class ids follow `class_names` when given, otherwise the sorted names in
// the manifest.
DatasetIndex read_manifest(const std::filesystem::path& path, const std::filesystem::path& root,
                           const std::vector<std::string>& class_names = {});

// Random-access image provider; load() returns [h, w, 3] in [0, 1].
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t label(std::size_t i) const = 0;
  virtual Array load(std::size_t i) const = 0;
  virtual std::string name(std::size_t i) const = 0;
};

class FolderSource : public ImageSource {
 public:
  // Samples of `split`, resized to height x width on load.
  FolderSource(const DatasetIndex& index, Split split, std::size_t height, std::size_t width);

  std::size_t size() const override { return samples_.size(); }
  std::size_t label(std::size_t i) const override { return samples_.at(i).class_id; }
  Array load(std::size_t i) const override;
  std::string name(std::size_t i) const override { return samples_.at(i).relative_path; }

 private:
  std::filesystem::path root_;
  std::vector<Sample> samples_;
  std::size_t height_;
  std::size_t width_;
};

class MemorySource : public ImageSource {
 public:
  MemorySource(std::vector<Array> images, std::vector<std::size_t> labels);

  std::size_t size() const override { return images_.size(); }
  std::size_t label(std::size_t i) const override { return labels_.at(i); }
  Array load(std::size_t i) const override { return images_.at(i); }
  std::string name(std::size_t i) const override { return "mem:" + std::to_string(i); }

 private:
  std::vector<Array> images_;
  std::vector<std::size_t> labels_;
};

// Per-channel mean/std over every pixel of the source.
Normalization compute_channel_stats(const ImageSource& source);

// Visit order for one epoch: a permutation keyed by (seed, epoch), or the
// identity when shuffle is off.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch,
                                     bool shuffle);

struct Batch {
  Tensor images;  // [B, H, W, 3], standardized
  std::vector<std::size_t> labels;
  std::vector<std::size_t> indices;  // positions in the source
};

// Yields consecutive batches of one epoch; the last batch keeps the
// remainder. Augmentation (when a policy is given) draws from a stream keyed
// by (seed, epoch, sample index), so batch content depends only on those.
class BatchIterator {
 public:
  BatchIterator(const ImageSource& source, std::size_t batch_size, std::uint64_t seed,
                std::size_t epoch, bool shuffle, Normalization norm,
                const AugmentPolicy* augment = nullptr);

  std::size_t num_batches() const;
  bool next(Batch& out);

 private:
  const ImageSource& source_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_;
  Normalization norm_;
  const AugmentPolicy* augment_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Solid-colour images, one hue per class, with small per-image brightness
// variation.
MemorySource make_color_dataset(std::size_t num_classes, std::size_t per_class,
                                std::size_t height, std::size_t width, std::uint64_t seed);
// Writes the same data as PNGs under root/class_<k>/img_<i>.png.
void write_color_dataset(const std::filesystem::path& root, std::size_t num_classes,
                         std::size_t per_class, std::size_t height, std::size_t width,
                         std::uint64_t seed);

}  // namespace rswin
