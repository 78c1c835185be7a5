#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqforge/core/random.hpp"
#include "seqforge/tensor/ops.hpp"

namespace seqforge {

struct Init {
  enum class Kind { zeros, constant, uniform, xavier, range };
  Kind kind = Kind::zeros;
  float value = 0;  // constant value or uniform half-width
  std::size_t begin = 0, end = 0;

  static Init zeros() { return {Kind::zeros, 0}; }
  static Init constant(float v) { return {Kind::constant, v}; }
  static Init uniform(float scale) { return {Kind::uniform, scale}; }
  static Init xavier() { return {Kind::xavier, 0}; }
  /// Zeros except `value` on flat positions [begin, end).
  static Init range(float v, std::size_t begin, std::size_t end) { return {Kind::range, v, begin, end}; }
};

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Initial values for a parameter. Drawn in single precision from a stream
/// keyed by (seed, name), so creation order does not matter and a double
/// model built from the same seed starts from the same values.
inline std::vector<float> initial_values(std::uint64_t seed, const std::string& name,
                                         const Shape& shape, Init init) {
  std::vector<float> v(numel(shape), 0.0f);
  switch (init.kind) {
    case Init::Kind::zeros: break;
    case Init::Kind::constant: std::fill(v.begin(), v.end(), init.value); break;
    case Init::Kind::range:
      for (std::size_t i = init.begin; i < std::min(init.end, v.size()); ++i) v[i] = init.value;
      break;
    case Init::Kind::uniform:
    case Init::Kind::xavier: {
      float limit = init.value;
      if (init.kind == Init::Kind::xavier) {
        const double fan_in = shape.size() >= 2 ? static_cast<double>(shape[shape.size() - 2]) : 1.0;
        const double fan_out = shape.empty() ? 1.0 : static_cast<double>(shape.back());
        limit = static_cast<float>(std::sqrt(6.0 / (fan_in + fan_out)));
      }
      Rng rng(derive_seed(seed, fnv1a(name)));
      for (auto& x : v) x = static_cast<float>(rng.uniform(-limit, limit));
      break;
    }
  }
  return v;
}

/// Named, insertion-ordered parameters of one model. Parameters are created
/// lazily on first request; later requests return the same leaf.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
  };

  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  const Tensor<T>& get(const std::string& name, const Shape& shape, Init init) {
    if (auto it = index_.find(name); it != index_.end()) {
      const Tensor<T>& t = entries_[it->second].value;
      if (t.shape() != shape)
        throw DimensionError("parameter '" + name + "' has shape " + shape_str(t.shape()) +
                             ", requested " + shape_str(shape));
      return t;
    }
    std::vector<T> values;
    if (auto p = pending_.find(name); p != pending_.end()) {
      if (p->second.first != shape)
        throw DimensionError("checkpoint parameter '" + name + "' has shape " +
                             shape_str(p->second.first) + ", model expects " + shape_str(shape));
      values = std::move(p->second.second);
      pending_.erase(p);
    } else {
      const auto init_values = initial_values(seed_, name, shape, init);
      values.assign(init_values.begin(), init_values.end());
    }
    index_.emplace(name, entries_.size());
    entries_.push_back({name, Tensor<T>::variable(shape, std::move(values))});
    return entries_.back().value;
  }

  const Tensor<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].value;
  }

  const Tensor<T>& at(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw ContractError("unknown parameter '" + name + "'");
  }

  /// Replaces the value of an existing parameter (a fresh leaf).
  void assign(const std::string& name, const Shape& shape, std::vector<T> values) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    auto& slot = entries_[it->second].value;
    if (slot.shape() != shape)
      throw DimensionError("parameter '" + name + "' has shape " + shape_str(slot.shape()) +
                           ", got " + shape_str(shape));
    slot = Tensor<T>::variable(shape, std::move(values));
  }

  /// Values applied when the named parameter is first created.
  void set_pending(const std::string& name, Shape shape, std::vector<T> values) {
    if (find(name)) {
      assign(name, shape, std::move(values));
      return;
    }
    pending_[name] = {std::move(shape), std::move(values)};
  }

  std::vector<std::string> pending_names() const {
    std::vector<std::string> out;
    for (const auto& [n, v] : pending_) out.push_back(n);
    return out;
  }

  /// Copies every parameter of `other` (converting precision), creating
  /// missing ones.
  template <typename U>
  void copy_from(const ParameterStore<U>& other) {
    for (const auto& e : other.entries()) {
      std::vector<T> v(e.value.data().begin(), e.value.data().end());
      if (find(e.name)) assign(e.name, e.value.shape(), std::move(v));
      else {
        index_.emplace(e.name, entries_.size());
        entries_.push_back({e.name, Tensor<T>::variable(e.value.shape(), std::move(v))});
      }
    }
  }

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::uint64_t seed() const { return seed_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

 private:
  std::uint64_t seed_;
  std::deque<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::map<std::string, std::pair<Shape, std::vector<T>>> pending_;
};

/// Handle a module uses to create its parameters under a name prefix.
template <typename T>
class ParamScope {
 public:
  ParamScope() = default;
  ParamScope(ParameterStore<T>* store, std::string prefix) : store_(store), prefix_(std::move(prefix)) {}

  const Tensor<T>& operator()(const std::string& name, const Shape& shape, Init init) const {
    if (!store_) throw ContractError("module has no parameter store");
    return store_->get(prefix_ + "/" + name, shape, init);
  }

  ParamScope child(const std::string& name) const { return ParamScope(store_, prefix_ + "/" + name); }
  const std::string& prefix() const { return prefix_; }
  ParameterStore<T>* store() const { return store_; }

 private:
  ParameterStore<T>* store_ = nullptr;
  std::string prefix_;
};

/// y = x W (+ b); W: [in x out], Xavier-initialized.
template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(ParamScope<T> scope, std::size_t in, std::size_t out, bool bias = true)
      : scope_(std::move(scope)), in_(in), out_(out), bias_(bias) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.rank() < 1 || x.shape().back() != in_)
      throw DimensionError(scope_.prefix() + ": expected input width " + std::to_string(in_) +
                           ", got shape " + shape_str(x.shape()));
    Tensor<T> y = matmul(x, scope_("w", {in_, out_}, Init::xavier()));
    if (bias_) y = add(y, scope_("b", {out_}, Init::zeros()));
    return y;
  }

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  ParamScope<T> scope_;
  std::size_t in_ = 0, out_ = 0;
  bool bias_ = true;
};

}  // namespace seqforge
