#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "seqforge/core/error.hpp"

namespace seqforge {

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

/// Name -> entry map with exact-match lookup. Unknown names produce an error
/// listing registered names within edit distance 2.
template <typename Entry>
class Registry {
 public:
  explicit Registry(std::string what = "type") : what_(std::move(what)) {}

  void add(const std::string& name, Entry entry) {
    if (name.empty()) throw ConfigError(what_ + " name must not be empty");
    if (contains(name)) throw ConfigError(what_ + " '" + name + "' is already registered");
    entries_.emplace_back(name, std::move(entry));
  }

  bool contains(std::string_view name) const { return find(name) != nullptr; }

  const Entry* find(std::string_view name) const {
    for (const auto& [n, e] : entries_)
      if (n == name) return &e;
    return nullptr;
  }

  const Entry& resolve(std::string_view name) const {
    if (const auto* e = find(name)) return *e;
    std::string msg = "unknown " + what_ + " '" + std::string(name) + "'";
    const auto near = suggestions(name);
    if (!near.empty()) {
      msg += " (did you mean ";
      for (std::size_t i = 0; i < near.size(); ++i) msg += (i ? ", '" : "'") + near[i] + "'";
      msg += "?)";
    }
    throw ConfigError(msg);
  }

  /// Registered names within edit distance 2, nearest first.
  std::vector<std::string> suggestions(std::string_view name) const {
    std::vector<std::pair<std::size_t, std::string>> scored;
    for (const auto& [n, e] : entries_) {
      const auto d = edit_distance(name, n);
      if (d <= 2) scored.emplace_back(d, n);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::string> out;
    for (auto& [d, n] : scored) out.push_back(std::move(n));
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [n, e] : entries_) out.push_back(n);
    return out;
  }

 private:
  std::string what_;
  std::vector<std::pair<std::string, Entry>> entries_;
};

}  // namespace seqforge
