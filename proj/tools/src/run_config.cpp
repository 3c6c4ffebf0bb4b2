#include "rswin_cli/run_config.hpp"

#include "rswin/errors.hpp"

namespace rswin::cli {

const std::vector<ConfigField<DataConfig>>& DataConfig::fields() {
  using T = DataConfig;
  static const std::vector<ConfigField<T>> f = {
      string_field<T>("root", [](auto& c) -> auto& { return c.root; }),
      string_field<T>("manifest", [](auto& c) -> auto& { return c.manifest; }),
      double_field<T>("test_fraction", [](auto& c) -> auto& { return c.test_fraction; }),
      double_field<T>("val_fraction", [](auto& c) -> auto& { return c.val_fraction; }),
      string_field<T>("normalize", [](auto& c) -> auto& { return c.normalize; }),
  };
  return f;
}

const std::vector<ConfigField<RunSection>>& RunSection::fields() {
  using T = RunSection;
  static const std::vector<ConfigField<T>> f = {
      string_field<T>("name", [](auto& c) -> auto& { return c.name; }),
      string_field<T>("dir", [](auto& c) -> auto& { return c.dir; }),
      size_field<T>("seed", [](auto& c) -> auto& { return c.seed; }),
  };
  return f;
}

namespace {

const std::vector<std::string> kSections = {"augment", "data", "model", "run", "train"};

bool set_in(RunConfig& rc, const std::string& section, const std::string& key,
            const std::string& value) {
  if (section == "model") return set_field(rc.model, ModelConfig::fields(), key, value);
  if (section == "train") return set_field(rc.train, TrainConfig::fields(), key, value);
  if (section == "augment") return set_field(rc.augment, AugmentPolicy::fields(), key, value);
  if (section == "data") return set_field(rc.data, DataConfig::fields(), key, value);
  if (section == "run") return set_field(rc.run, RunSection::fields(), key, value);
  return false;
}

template <typename T>
bool has_key(const std::vector<ConfigField<T>>& fields, const std::string& key) {
  for (const auto& f : fields) {
    if (f.key == key) return true;
  }
  return false;
}

bool section_has(const std::string& section, const std::string& key) {
  if (section == "model") return has_key(ModelConfig::fields(), key);
  if (section == "train") return has_key(TrainConfig::fields(), key);
  if (section == "augment") return has_key(AugmentPolicy::fields(), key);
  if (section == "data") return has_key(DataConfig::fields(), key);
  if (section == "run") return has_key(RunSection::fields(), key);
  return false;
}

}  // namespace

RunConfig RunConfig::from_doc(const KeyValueDoc& doc) {
  for (const auto& [name, entries] : doc.sections()) {
    bool known = false;
    for (const auto& s : kSections) known = known || s == name;
    if (!known) throw ConfigError("unknown config section [" + name + "]");
  }
  RunConfig rc;
  if (doc.has_section("model")) rc.model = ModelConfig::read(doc, "model");
  read_fields(rc.train, TrainConfig::fields(), "train", doc);
  read_fields(rc.augment, AugmentPolicy::fields(), "augment", doc);
  read_fields(rc.data, DataConfig::fields(), "data", doc);
  read_fields(rc.run, RunSection::fields(), "run", doc);
  rc.train.seed = rc.run.seed;
  return rc;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw ConfigError("config file " + path.string() + " does not exist");
  }
  return from_doc(KeyValueDoc::load(path.string()));
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  if (dot != std::string::npos) {
    const std::string section = key.substr(0, dot);
    if (!set_in(*this, section, key.substr(dot + 1), value)) {
      throw ConfigError("unknown config key " + key);
    }
  } else {
    std::vector<std::string> owners;
    for (const auto& s : kSections) {
      if (section_has(s, key)) owners.push_back(s);
    }
    if (owners.empty()) throw ConfigError("unknown config key " + key);
    if (owners.size() > 1) {
      std::string list;
      for (const auto& o : owners) list += (list.empty() ? "" : ", ") + o + "." + key;
      throw ConfigError("ambiguous key " + key + "; use one of " + list);
    }
    set_in(*this, owners[0], key, value);
  }
  train.seed = run.seed;
}

void RunConfig::validate() const {
  model.validate();
  train.validate(model.num_classes);
  augment.validate();
  if (data.root.empty()) throw ConfigError("data.root is required");
  if (data.normalize != "dataset" && data.normalize != "fixed") {
    throw ConfigError("data.normalize must be 'dataset' or 'fixed'");
  }
  if (!(data.test_fraction >= 0.0 && data.test_fraction < 1.0) ||
      !(data.val_fraction >= 0.0 && data.val_fraction < 1.0)) {
    throw ConfigError("data split fractions must lie in [0, 1)");
  }
  if (run.name.empty() || run.name.find('/') != std::string::npos || run.name == "." ||
      run.name == "..") {
    throw ConfigError("run.name must be a plain directory name");
  }
}

KeyValueDoc RunConfig::to_doc() const {
  KeyValueDoc doc;
  model.write(doc, "model");
  write_fields(train, TrainConfig::fields(), "train", doc);
  write_fields(augment, AugmentPolicy::fields(), "augment", doc);
  write_fields(data, DataConfig::fields(), "data", doc);
  write_fields(run, RunSection::fields(), "run", doc);
  return doc;
}

std::vector<std::pair<std::string, std::string>> parse_overrides(
    const std::vector<std::string>& args) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0 || a.size() == 2) {
      throw ConfigError("unexpected argument '" + a + "'; overrides look like --key value");
    }
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= args.size()) throw ConfigError("override " + a + " has no value");
      out.emplace_back(a.substr(2), args[++i]);
    }
  }
  return out;
}

}  // namespace rswin::cli
