#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rswin {

// Sectioned key-value text:
//
//   # comment
//   [model]
//   embed_dim = 96
//
// Entries keep their section; to_text() emits sections and keys sorted, so
// the text form is canonical.
class KeyValueDoc {
 public:
  static KeyValueDoc parse(std::string_view text);
  static KeyValueDoc load(const std::string& path);

  void set(const std::string& section, const std::string& key, std::string value);
  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  bool has_section(const std::string& section) const { return sections_.count(section) > 0; }
  const std::map<std::string, std::string>& section(const std::string& name) const;
  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return sections_;
  }

  std::string to_text() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

// Typed value parsing; every failure is a ConfigError naming the key.
std::size_t parse_size(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value);
std::vector<double> parse_double_list(const std::string& key, const std::string& value);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
std::string format_size_list(const std::vector<std::size_t>& v);
std::string format_double_list(const std::vector<double>& v);

// Binds one key of a section to a member of a config struct.
template <typename T>
struct ConfigField {
  std::string key;
  std::function<std::string(const T&)> get;
  std::function<void(T&, const std::string&)> set;
};

// Field builders. `access` is a generic lambda returning a reference to the
// member, e.g. [](auto& c) -> auto& { return c.patch.embed_dim; }.
template <typename T, typename Access>
ConfigField<T> size_field(std::string key, Access access) {
  return {key, [access](const T& o) { return std::to_string(access(o)); },
          [access, key](T& o, const std::string& v) { access(o) = parse_size(key, v); }};
}

template <typename T, typename Access>
ConfigField<T> double_field(std::string key, Access access) {
  return {key, [access](const T& o) { return format_double(access(o)); },
          [access, key](T& o, const std::string& v) { access(o) = parse_double(key, v); }};
}

template <typename T, typename Access>
ConfigField<T> bool_field(std::string key, Access access) {
  return {key, [access](const T& o) { return std::string(access(o) ? "true" : "false"); },
          [access, key](T& o, const std::string& v) { access(o) = parse_bool(key, v); }};
}

template <typename T, typename Access>
ConfigField<T> string_field(std::string key, Access access) {
  return {key, [access](const T& o) { return std::string(access(o)); },
          [access](T& o, const std::string& v) { access(o) = v; }};
}

template <typename T, typename Access>
ConfigField<T> size_list_field(std::string key, Access access) {
  return {key, [access](const T& o) { return format_size_list(access(o)); },
          [access, key](T& o, const std::string& v) { access(o) = parse_size_list(key, v); }};
}

template <typename T, typename Access>
ConfigField<T> double_list_field(std::string key, Access access) {
  return {key, [access](const T& o) { return format_double_list(access(o)); },
          [access, key](T& o, const std::string& v) { access(o) = parse_double_list(key, v); }};
}

template <typename T>
void write_fields(const T& obj, const std::vector<ConfigField<T>>& fields,
                  const std::string& section, KeyValueDoc& doc) {
  for (const auto& f : fields) doc.set(section, f.key, f.get(obj));
}

// Applies every key of `section`; keys without a binding are rejected.
template <typename T>
void read_fields(T& obj, const std::vector<ConfigField<T>>& fields, const std::string& section,
                 const KeyValueDoc& doc);

// Returns true when `key` is bound (and sets it).
template <typename T>
bool set_field(T& obj, const std::vector<ConfigField<T>>& fields, const std::string& key,
               const std::string& value) {
  for (const auto& f : fields) {
    if (f.key == key) {
      f.set(obj, value);
      return true;
    }
  }
  return false;
}

[[noreturn]] void throw_unknown_key(const std::string& section, const std::string& key);

template <typename T>
void read_fields(T& obj, const std::vector<ConfigField<T>>& fields, const std::string& section,
                 const KeyValueDoc& doc) {
  if (!doc.has_section(section)) return;
  for (const auto& [key, value] : doc.section(section)) {
    if (!set_field(obj, fields, key, value)) throw_unknown_key(section, key);
  }
}

}  // namespace rswin
