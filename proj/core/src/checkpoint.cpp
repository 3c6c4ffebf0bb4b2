#include "rswin/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "rswin/errors.hpp"

namespace rswin {

namespace {

constexpr char kMagic[8] = {'R', 'S', 'W', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint8_t kDtypeF64 = 1;
const std::string kMomentM = "adam.m/";
const std::string kMomentV = "adam.v/";

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  void need(std::size_t n) const {
    if (size_ - pos_ < n) {
      throw CheckpointTruncatedError("checkpoint truncated at byte " + std::to_string(pos_) +
                                     " (needed " + std::to_string(n) + " more)");
    }
  }
  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Array& a) {
  w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.le<std::uint8_t>(kDtypeF64);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(a.rank()));
  for (auto d : a.shape()) w.le<std::uint64_t>(d);
  for (double v : a.data()) w.f64(v);
}

KeyValueDoc make_header(const Checkpoint& ckpt) {
  KeyValueDoc doc;
  ckpt.config.write(doc, "model");
  const auto& n = ckpt.normalization;
  doc.set("preprocess", "mean", format_double_list({n.mean[0], n.mean[1], n.mean[2]}));
  doc.set("preprocess", "std", format_double_list({n.std[0], n.std[1], n.std[2]}));
  doc.set("classes", "count", std::to_string(ckpt.class_names.size()));
  for (std::size_t i = 0; i < ckpt.class_names.size(); ++i) {
    doc.set("classes", "name" + std::to_string(i), ckpt.class_names[i]);
  }
  const auto& s = ckpt.state;
  doc.set("train_state", "epoch", std::to_string(s.epoch));
  doc.set("train_state", "seed", std::to_string(s.seed));
  doc.set("train_state", "best_epoch", std::to_string(s.best_epoch));
  doc.set("train_state", "best_val_f1", format_double(s.best_val_f1));
  doc.set("train_state", "adam_step", std::to_string(s.optim.step));
  doc.set("train_state", "adam_beta1", format_double(s.optim.beta1));
  doc.set("train_state", "adam_beta2", format_double(s.optim.beta2));
  doc.set("train_state", "adam_eps", format_double(s.optim.eps));
  return doc;
}

std::string require(const KeyValueDoc& doc, const std::string& section, const std::string& key) {
  auto v = doc.get(section, key);
  if (!v) throw CheckpointFormatError("checkpoint header lacks " + section + "." + key);
  return *v;
}

std::array<double, 3> triple(const std::string& key, const std::string& value) {
  const auto v = parse_double_list(key, value);
  if (v.size() != 3) throw CheckpointFormatError("checkpoint " + key + " needs 3 values");
  return {v[0], v[1], v[2]};
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le<std::uint32_t>(kCheckpointVersion);
  const std::string header = make_header(ckpt).to_text();
  w.le<std::uint64_t>(header.size());
  w.bytes(header.data(), header.size());

  const auto named = ckpt.params.named_parameters();
  const auto& optim = ckpt.state.optim;
  if (!optim.m.empty() && (optim.m.size() != named.size() || optim.v.size() != named.size())) {
    throw ShapeError("checkpoint: optimizer moments do not match the parameter list");
  }
  w.le<std::uint64_t>(named.size() * (optim.m.empty() ? 1 : 3));
  for (const auto& nt : named) write_tensor(w, nt.name, nt.tensor.value());
  for (std::size_t i = 0; i < optim.m.size(); ++i) {
    write_tensor(w, kMomentM + named[i].name, optim.m[i]);
    write_tensor(w, kMomentV + named[i].name, optim.v[i]);
  }
  auto& buf = w.buffer();
  const std::uint64_t h = fnv1a(buf.data(), buf.size());
  w.le<std::uint64_t>(h);
  return std::move(buf);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const std::size_t magic_len = std::min(bytes.size(), sizeof kMagic);
  if (std::memcmp(bytes.data(), kMagic, magic_len) != 0) {
    throw CheckpointFormatError("not a checkpoint (bad magic bytes)");
  }
  Reader r(bytes.data(), bytes.size());
  r.str(sizeof kMagic);
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint format version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = r.le<std::uint64_t>();
  const std::string header_text = r.str(static_cast<std::size_t>(header_len));

  std::map<std::string, Array> tensors;
  std::vector<std::string> order;
  const auto count = r.le<std::uint64_t>();
  for (std::uint64_t t = 0; t < count; ++t) {
    const auto name_len = r.le<std::uint32_t>();
    std::string name = r.str(name_len);
    const auto dtype = r.le<std::uint8_t>();
    if (dtype != kDtypeF64) {
      throw CheckpointFormatError("tensor " + name + " has unsupported dtype " +
                                  std::to_string(dtype));
    }
    const auto rank = r.le<std::uint32_t>();
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(static_cast<std::size_t>(r.le<std::uint64_t>()));
      numel *= shape.back();
    }
    r.need(numel * 8);
    std::vector<double> data(numel);
    for (auto& v : data) v = r.f64();
    if (!tensors.emplace(name, Array(std::move(shape), std::move(data))).second) {
      throw CheckpointFormatError("duplicate tensor " + name);
    }
    order.push_back(std::move(name));
  }
  const std::size_t body_end = r.pos();
  const auto stored_hash = r.le<std::uint64_t>();
  if (r.pos() != bytes.size()) {
    throw CheckpointFormatError("trailing bytes after checkpoint trailer");
  }
  if (fnv1a(bytes.data(), body_end) != stored_hash) {
    throw CheckpointIntegrityError("checkpoint integrity hash mismatch");
  }

  KeyValueDoc doc;
  try {
    doc = KeyValueDoc::parse(header_text);
  } catch (const ConfigError& e) {
    throw CheckpointFormatError(std::string("checkpoint header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = ModelConfig::read(doc, "model");
    ckpt.config.validate();
  } catch (const ConfigError& e) {
    throw CheckpointIncompatibleError(std::string("checkpoint model config: ") + e.what());
  }
  ckpt.normalization.mean = triple("preprocess.mean", require(doc, "preprocess", "mean"));
  ckpt.normalization.std = triple("preprocess.std", require(doc, "preprocess", "std"));
  const std::size_t n_classes = parse_size("classes.count", require(doc, "classes", "count"));
  for (std::size_t i = 0; i < n_classes; ++i) {
    ckpt.class_names.push_back(require(doc, "classes", "name" + std::to_string(i)));
  }
  auto& s = ckpt.state;
  s.epoch = parse_size("epoch", require(doc, "train_state", "epoch"));
  s.seed = parse_size("seed", require(doc, "train_state", "seed"));
  s.best_epoch = parse_size("best_epoch", require(doc, "train_state", "best_epoch"));
  s.best_val_f1 = parse_double("best_val_f1", require(doc, "train_state", "best_val_f1"));
  s.optim.step = parse_size("adam_step", require(doc, "train_state", "adam_step"));
  s.optim.beta1 = parse_double("adam_beta1", require(doc, "train_state", "adam_beta1"));
  s.optim.beta2 = parse_double("adam_beta2", require(doc, "train_state", "adam_beta2"));
  s.optim.eps = parse_double("adam_eps", require(doc, "train_state", "adam_eps"));

  // Rebuild the parameter structure from the embedded config, then check
  // every stored tensor against it.
  ckpt.params = ModelParams::init(ckpt.config, 0);
  auto named = ckpt.params.named_parameters();
  std::set<std::string> expected;
  for (auto& nt : named) {
    expected.insert(nt.name);
    auto it = tensors.find(nt.name);
    if (it == tensors.end()) {
      throw CheckpointIncompatibleError("checkpoint lacks parameter " + nt.name +
                                        " required by its model config");
    }
    if (it->second.shape() != nt.tensor.shape()) {
      throw CheckpointIncompatibleError("parameter " + nt.name + " has shape " +
                                        shape_str(it->second.shape()) + ", config implies " +
                                        shape_str(nt.tensor.shape()));
    }
    nt.tensor.mutable_value() = it->second;
  }
  bool has_moments = false;
  for (const auto& name : order) {
    if (expected.count(name)) continue;
    if (name.rfind(kMomentM, 0) == 0 || name.rfind(kMomentV, 0) == 0) {
      has_moments = true;
      continue;
    }
    throw CheckpointIncompatibleError("checkpoint holds unexpected tensor " + name);
  }
  if (has_moments) {
    for (const auto& nt : named) {
      auto m = tensors.find(kMomentM + nt.name);
      auto v = tensors.find(kMomentV + nt.name);
      if (m == tensors.end() || v == tensors.end() || m->second.shape() != nt.tensor.shape() ||
          v->second.shape() != nt.tensor.shape()) {
        throw CheckpointIncompatibleError("optimizer moments for " + nt.name +
                                          " are missing or misshapen");
      }
      s.optim.m.push_back(m->second);
      s.optim.v.push_back(v->second);
    }
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.config == expected)) {
    KeyValueDoc a;
    KeyValueDoc b;
    ckpt.config.write(a);
    expected.write(b);
    std::string diff;
    for (const auto& [k, v] : a.section("model")) {
      const auto other = b.get("model", k);
      if (other && *other != v) diff += " " + k + "=" + v + " (expected " + *other + ")";
    }
    throw CheckpointIncompatibleError("checkpoint model config differs from requested config:" +
                                      diff);
  }
  return ckpt;
}

}  // namespace rswin
