#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "seqforge/core/error.hpp"

namespace seqforge {

/// A config value: scalar (int, float, bool, string), list, or
/// insertion-ordered map.
class ConfigNode {
 public:
  using List = std::vector<ConfigNode>;
  using Map = std::vector<std::pair<std::string, ConfigNode>>;
  enum class Kind { integer, floating, boolean, string, list, map };

  ConfigNode() : value_(Map{}) {}
  ConfigNode(std::int64_t v) : value_(v) {}
  ConfigNode(int v) : value_(std::int64_t{v}) {}
  ConfigNode(double v) : value_(v) {}
  ConfigNode(bool v) : value_(v) {}
  ConfigNode(std::string v) : value_(std::move(v)) {}
  ConfigNode(const char* v) : value_(std::string(v)) {}
  ConfigNode(List v) : value_(std::move(v)) {}

  static ConfigNode map() { return ConfigNode(); }
  static ConfigNode list() { return ConfigNode(List{}); }
  static ConfigNode map(std::initializer_list<std::pair<std::string, ConfigNode>> entries) {
    ConfigNode n;
    for (const auto& [k, v] : entries) n.set(k, v);
    return n;
  }

  Kind kind() const { return static_cast<Kind>(value_.index()); }
  bool is_int() const { return kind() == Kind::integer; }
  bool is_float() const { return kind() == Kind::floating; }
  bool is_number() const { return is_int() || is_float(); }
  bool is_bool() const { return kind() == Kind::boolean; }
  bool is_string() const { return kind() == Kind::string; }
  bool is_list() const { return kind() == Kind::list; }
  bool is_map() const { return kind() == Kind::map; }
  bool is_scalar() const { return !is_list() && !is_map(); }

  static const char* kind_name(Kind k) {
    switch (k) {
      case Kind::integer: return "int";
      case Kind::floating: return "float";
      case Kind::boolean: return "bool";
      case Kind::string: return "string";
      case Kind::list: return "list";
      case Kind::map: return "map";
    }
    return "?";
  }
  const char* kind_name() const { return kind_name(kind()); }

  std::int64_t as_int() const {
    if (!is_int()) throw ConfigError(std::string("expected int, got ") + kind_name());
    return std::get<std::int64_t>(value_);
  }
  /// Ints promote.
  double as_float() const {
    if (is_int()) return static_cast<double>(std::get<std::int64_t>(value_));
    if (!is_float()) throw ConfigError(std::string("expected float, got ") + kind_name());
    return std::get<double>(value_);
  }
  bool as_bool() const {
    if (!is_bool()) throw ConfigError(std::string("expected bool, got ") + kind_name());
    return std::get<bool>(value_);
  }
  const std::string& as_string() const {
    if (!is_string()) throw ConfigError(std::string("expected string, got ") + kind_name());
    return std::get<std::string>(value_);
  }
  const List& items() const {
    if (!is_list()) throw ConfigError(std::string("expected list, got ") + kind_name());
    return std::get<List>(value_);
  }
  List& items() {
    if (!is_list()) throw ConfigError(std::string("expected list, got ") + kind_name());
    return std::get<List>(value_);
  }
  const Map& entries() const {
    if (!is_map()) throw ConfigError(std::string("expected map, got ") + kind_name());
    return std::get<Map>(value_);
  }
  Map& entries() {
    if (!is_map()) throw ConfigError(std::string("expected map, got ") + kind_name());
    return std::get<Map>(value_);
  }

  std::size_t size() const { return is_list() ? items().size() : entries().size(); }

  const ConfigNode* find(std::string_view key) const {
    for (const auto& [k, v] : entries())
      if (k == key) return &v;
    return nullptr;
  }
  ConfigNode* find(std::string_view key) {
    for (auto& [k, v] : entries())
      if (k == key) return &v;
    return nullptr;
  }
  bool contains(std::string_view key) const { return find(key) != nullptr; }

  const ConfigNode& at(std::string_view key) const {
    if (const auto* v = find(key)) return *v;
    throw ConfigError("missing key '" + std::string(key) + "'");
  }
  ConfigNode& at(std::string_view key) {
    if (auto* v = find(key)) return *v;
    throw ConfigError("missing key '" + std::string(key) + "'");
  }

  /// Dotted lookup, e.g. "decoder.hparams.num_units".
  const ConfigNode& at_path(std::string_view path) const {
    const ConfigNode* node = this;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const auto key = path.substr(start, dot == std::string_view::npos ? dot : dot - start);
      node = node->is_map() ? node->find(key) : nullptr;
      if (!node) throw ConfigError("missing key '" + std::string(path) + "'");
      if (dot == std::string_view::npos) return *node;
      start = dot + 1;
    }
  }

  ConfigNode& at_path(std::string_view path) {
    return const_cast<ConfigNode&>(std::as_const(*this).at_path(path));
  }

  /// Replaces an existing key in place or appends it.
  ConfigNode& set(const std::string& key, ConfigNode value) {
    if (auto* v = find(key)) return *v = std::move(value);
    entries().emplace_back(key, std::move(value));
    return entries().back().second;
  }

  bool erase(std::string_view key) {
    auto& e = entries();
    for (auto it = e.begin(); it != e.end(); ++it)
      if (it->first == key) {
        e.erase(it);
        return true;
      }
    return false;
  }

  void push_back(ConfigNode v) { items().push_back(std::move(v)); }

  // typed accessors with a fallback when the key is absent
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const {
    const auto* v = find(key);
    return v ? v->as_int() : fallback;
  }
  double get_float(std::string_view key, double fallback) const {
    const auto* v = find(key);
    return v ? v->as_float() : fallback;
  }
  bool get_bool(std::string_view key, bool fallback) const {
    const auto* v = find(key);
    return v ? v->as_bool() : fallback;
  }
  std::string get_string(std::string_view key, const std::string& fallback) const {
    const auto* v = find(key);
    return v ? v->as_string() : fallback;
  }

  /// Strict structural equality: int 1 and float 1.0 differ, map order counts.
  bool operator==(const ConfigNode& other) const = default;

 private:
  std::variant<std::int64_t, double, bool, std::string, List, Map> value_;
};

}  // namespace seqforge
