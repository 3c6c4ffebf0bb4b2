#include "rswin/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "rswin/errors.hpp"

namespace fs = std::filesystem;

namespace rswin {

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

namespace {

std::size_t round_count(double x) { return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9)); }

// Hamilton apportionment of `target` over classes with exact shares `share`,
// capped by `cap`.
std::vector<std::size_t> apportion(const std::vector<double>& share,
                                   const std::vector<std::size_t>& cap, std::size_t target) {
  std::vector<std::size_t> out(share.size());
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < share.size(); ++c) {
    out[c] = std::min(static_cast<std::size_t>(std::floor(share[c] + 1e-9)), cap[c]);
    assigned += out[c];
  }
  std::vector<std::size_t> order(share.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return share[a] - std::floor(share[a] + 1e-9) > share[b] - std::floor(share[b] + 1e-9) + 1e-12;
  });
  for (std::size_t i = 0; assigned < target && i < order.size() * 2; ++i) {
    const std::size_t c = order[i % order.size()];
    if (out[c] < cap[c]) {
      ++out[c];
      ++assigned;
    }
  }
  return out;
}

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

// Cheap readability check: the file opens and starts with a known signature.
bool looks_decodable(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return false;
  unsigned char head[8] = {};
  in.read(reinterpret_cast<char*>(head), sizeof head);
  const auto n = in.gcount();
  if (n >= 8 && head[0] == 0x89 && head[1] == 'P' && head[2] == 'N' && head[3] == 'G') return true;
  if (n >= 3 && head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF) return true;
  if (n >= 2 && head[0] == 'B' && head[1] == 'M') return true;
  return false;
}

void assign_splits(DatasetIndex& index, const SplitPolicy& policy) {
  const std::size_t C = index.class_names.size();
  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < index.samples.size(); ++i) {
    by_class[index.samples[i].class_id].push_back(i);
  }
  std::vector<std::size_t> counts(C);
  for (std::size_t c = 0; c < C; ++c) counts[c] = by_class[c].size();
  const auto alloc = allocate_splits(counts, policy);
  for (std::size_t c = 0; c < C; ++c) {
    auto members = by_class[c];
    Rng rng = derive_rng(index.seed, {0x5B11, c});
    shuffle(members, rng);
    for (std::size_t k = 0; k < members.size(); ++k) {
      Split s = Split::train;
      if (k < alloc[c].test) {
        s = Split::test;
      } else if (k < alloc[c].test + alloc[c].val) {
        s = Split::val;
      }
      index.samples[members[k]].split = s;
    }
  }
}

}  // namespace

std::vector<SplitCounts> allocate_splits(const std::vector<std::size_t>& class_counts,
                                         const SplitPolicy& policy) {
  if (!(policy.test_fraction >= 0.0 && policy.test_fraction < 1.0 &&
        policy.val_fraction >= 0.0 && policy.val_fraction < 1.0)) {
    throw ConfigError("split fractions must be in [0, 1)");
  }
  const std::size_t total = std::accumulate(class_counts.begin(), class_counts.end(), std::size_t{0});
  const std::size_t C = class_counts.size();

  std::vector<double> test_share(C);
  for (std::size_t c = 0; c < C; ++c) {
    test_share[c] = policy.test_fraction * static_cast<double>(class_counts[c]);
  }
  const auto test = apportion(test_share, class_counts,
                              round_count(policy.test_fraction * static_cast<double>(total)));

  std::vector<std::size_t> rest(C);
  std::vector<double> val_share(C);
  for (std::size_t c = 0; c < C; ++c) {
    rest[c] = class_counts[c] - test[c];
    val_share[c] = policy.val_fraction * static_cast<double>(rest[c]);
  }
  const std::size_t rest_total = std::accumulate(rest.begin(), rest.end(), std::size_t{0});
  const auto val =
      apportion(val_share, rest, round_count(policy.val_fraction * static_cast<double>(rest_total)));

  std::vector<SplitCounts> out(C);
  for (std::size_t c = 0; c < C; ++c) out[c] = {rest[c] - val[c], val[c], test[c]};
  return out;
}

std::vector<std::size_t> DatasetIndex::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

DatasetIndex index_dataset(const fs::path& root, std::uint64_t seed, const SplitPolicy& policy) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  DatasetIndex index;
  index.root = root;
  index.seed = seed;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) index.class_names.push_back(entry.path().filename().string());
  }
  std::sort(index.class_names.begin(), index.class_names.end());
  if (index.class_names.size() < 2) {
    throw DataError("dataset root " + root.string() + " needs at least two class directories");
  }
  for (std::size_t c = 0; c < index.class_names.size(); ++c) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(root / index.class_names[c])) {
      if (!entry.is_regular_file() || !has_image_extension(entry.path())) continue;
      if (!looks_decodable(entry.path())) {
        ++index.skipped;
        continue;
      }
      files.push_back(entry.path().filename().string());
    }
    if (files.empty()) {
      throw DataError("class directory " + (root / index.class_names[c]).string() +
                      " holds no usable images");
    }
    std::sort(files.begin(), files.end());
    for (auto& f : files) index.samples.push_back({index.class_names[c] + "/" + f, c, Split::train});
  }
  assign_splits(index, policy);
  return index;
}

void write_manifest(const DatasetIndex& index, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& s : index.samples) {
    out << s.relative_path << '\t' << index.class_names.at(s.class_id) << '\t'
        << to_string(s.split) << '\n';
  }
}

DatasetIndex read_manifest(const fs::path& path, const fs::path& root,
                           const std::vector<std::string>& class_names) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest " + path.string());
  struct Row {
    std::string rel, cls, split;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    Row r;
    if (!std::getline(ss, r.rel, '\t') || !std::getline(ss, r.cls, '\t') ||
        !std::getline(ss, r.split, '\t') || r.rel.empty() || r.cls.empty()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected relative_path<TAB>class<TAB>split");
    }
    rows.push_back(std::move(r));
  }
  DatasetIndex index;
  index.root = root;
  if (class_names.empty()) {
    std::set<std::string> names;
    for (const auto& r : rows) names.insert(r.cls);
    index.class_names.assign(names.begin(), names.end());
  } else {
    index.class_names = class_names;
  }
  std::map<std::string, std::size_t> id;
  for (std::size_t c = 0; c < index.class_names.size(); ++c) id[index.class_names[c]] = c;
  for (const auto& r : rows) {
    const auto it = id.find(r.cls);
    if (it == id.end()) throw DataError("manifest class '" + r.cls + "' is not a known class");
    index.samples.push_back({r.rel, it->second, parse_split(r.split)});
  }
  return index;
}

FolderSource::FolderSource(const DatasetIndex& index, Split split, std::size_t height,
                           std::size_t width)
    : root_(index.root), height_(height), width_(width) {
  for (auto i : index.indices(split)) samples_.push_back(index.samples[i]);
}

Array FolderSource::load(std::size_t i) const {
  return resize_bilinear(decode_image(root_ / samples_.at(i).relative_path), height_, width_);
}

MemorySource::MemorySource(std::vector<Array> images, std::vector<std::size_t> labels)
    : images_(std::move(images)), labels_(std::move(labels)) {
  if (images_.size() != labels_.size()) {
    throw ShapeError("MemorySource: " + std::to_string(images_.size()) + " images but " +
                     std::to_string(labels_.size()) + " labels");
  }
}

Normalization compute_channel_stats(const ImageSource& source) {
  if (source.size() == 0) throw DataError("cannot compute channel statistics of an empty split");
  std::array<double, 3> sum{};
  std::array<double, 3> sq{};
  double n = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Array img = source.load(i);
    for (std::size_t p = 0; p < img.size(); p += 3) {
      for (std::size_t c = 0; c < 3; ++c) {
        sum[c] += img[p + c];
        sq[c] += img[p + c] * img[p + c];
      }
      n += 1.0;
    }
  }
  Normalization norm;
  for (std::size_t c = 0; c < 3; ++c) {
    norm.mean[c] = sum[c] / n;
    const double var = std::max(0.0, sq[c] / n - norm.mean[c] * norm.mean[c]);
    norm.std[c] = std::max(std::sqrt(var), 1e-3);
  }
  return norm;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch,
                                     bool shuffle_order) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_order) {
    Rng rng = derive_rng(seed, {0xE90C, epoch});
    shuffle(order, rng);
  }
  return order;
}

BatchIterator::BatchIterator(const ImageSource& source, std::size_t batch_size,
                             std::uint64_t seed, std::size_t epoch, bool shuffle_order,
                             Normalization norm, const AugmentPolicy* augment)
    : source_(source),
      batch_size_(batch_size),
      seed_(seed),
      epoch_(epoch),
      norm_(norm),
      augment_(augment),
      order_(epoch_order(source.size(), seed, epoch, shuffle_order)) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
}

std::size_t BatchIterator::num_batches() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

bool BatchIterator::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  out.labels.clear();
  out.indices.clear();
  std::vector<double> data;
  Shape image_shape;
  for (std::size_t k = cursor_; k < end; ++k) {
    const std::size_t idx = order_[k];
    Array img = source_.load(idx);
    if (augment_ != nullptr) {
      Rng rng = derive_rng(seed_, {0xA06, epoch_, idx});
      img = augment(img, *augment_, rng);
    }
    img = standardize(img, norm_);
    if (image_shape.empty()) {
      image_shape = img.shape();
    } else if (img.shape() != image_shape) {
      throw DataError("image " + source_.name(idx) + " has shape " + shape_str(img.shape()) +
                      ", batch expects " + shape_str(image_shape));
    }
    data.insert(data.end(), img.data().begin(), img.data().end());
    out.labels.push_back(source_.label(idx));
    out.indices.push_back(idx);
  }
  Shape shape{end - cursor_};
  shape.insert(shape.end(), image_shape.begin(), image_shape.end());
  out.images = Tensor(Array(std::move(shape), std::move(data)));
  cursor_ = end;
  return true;
}

namespace {

std::array<double, 3> class_color(std::size_t k, std::size_t num_classes) {
  // Evenly spaced hues at full saturation.
  const double h = 6.0 * static_cast<double>(k) / static_cast<double>(num_classes);
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  switch (static_cast<int>(h)) {
    case 0: return {1.0, x, 0.0};
    case 1: return {x, 1.0, 0.0};
    case 2: return {0.0, 1.0, x};
    case 3: return {0.0, x, 1.0};
    case 4: return {x, 0.0, 1.0};
    default: return {1.0, 0.0, x};
  }
}

}  // namespace

MemorySource make_color_dataset(std::size_t num_classes, std::size_t per_class, std::size_t height,
                                std::size_t width, std::uint64_t seed) {
  std::vector<Array> images;
  std::vector<std::size_t> labels;
  Rng rng = derive_rng(seed, {0xC010});
  for (std::size_t k = 0; k < num_classes; ++k) {
    const auto color = class_color(k, num_classes);
    for (std::size_t i = 0; i < per_class; ++i) {
      const double level = uniform(rng, 0.85, 1.0);
      Array img({height, width, 3});
      for (std::size_t p = 0; p < height * width; ++p) {
        for (std::size_t c = 0; c < 3; ++c) img[p * 3 + c] = color[c] * level;
      }
      images.push_back(std::move(img));
      labels.push_back(k);
    }
  }
  return MemorySource(std::move(images), std::move(labels));
}

void write_color_dataset(const fs::path& root, std::size_t num_classes, std::size_t per_class,
                         std::size_t height, std::size_t width, std::uint64_t seed) {
  const MemorySource src = make_color_dataset(num_classes, per_class, height, width, seed);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t k = src.label(i);
    char name[32];
    std::snprintf(name, sizeof name, "img_%03zu.png", i % per_class);
    write_png(root / ("class_" + std::to_string(k)) / name, src.load(i));
  }
}

}  // namespace rswin
