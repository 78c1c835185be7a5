#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "seqforge/core/error.hpp"

namespace seqforge {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
class Tape;

/// Dense row-major tensor. The element buffer is shared and never mutated
/// after construction, so copies are cheap and recorded backward closures
/// may hold on to it safely.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  /// Scalar zero.
  Tensor() : shape_{}, data_(std::make_shared<const std::vector<T>>(1, T(0))) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<const std::vector<T>>(std::move(data))) {
    if (numel(shape_) != data_->size())
      throw DimensionError("tensor: shape " + shape_str(shape_) + " holds " +
                           std::to_string(numel(shape_)) + " elements, got " +
                           std::to_string(data_->size()));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T value) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }
  static Tensor scalar(T value) { return Tensor(Shape{}, {value}); }

  /// A leaf that gradients flow to.
  static Tensor variable(Shape shape, std::vector<T> data) {
    Tensor t(std::move(shape), std::move(data));
    t.requires_grad_ = true;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_->size(); }

  std::span<const T> data() const { return *data_; }
  const std::vector<T>& vec() const { return *data_; }
  T operator[](std::size_t i) const { return (*data_)[i]; }
  T item() const {
    if (size() != 1)
      throw ContractError("item() on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on) {
    requires_grad_ = on;
    return *this;
  }

  /// Identity of the underlying buffer; stable for the lifetime of the data.
  const void* storage_key() const { return data_.get(); }

  /// Same values, no graph attachment, no gradient.
  Tensor detached() const {
    Tensor t = *this;
    t.tape_id_ = 0;
    t.requires_grad_ = false;
    return t;
  }

  /// Same buffer under a different shape; carries no graph attachment.
  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size())
      throw DimensionError("reshape: cannot view " + shape_str(shape_) + " as " +
                           shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_->begin(), data_->end()));
  }

 private:
  friend class Tape<T>;

  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  std::uint64_t tape_id_ = 0;
  std::size_t node_ = 0;
  bool requires_grad_ = false;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Gradients produced by one backward pass, keyed by leaf buffer.
template <typename T>
class Gradients {
 public:
  /// nullptr when `leaf` was not reached from the root.
  const std::vector<T>* find(const Tensor<T>& leaf) const {
    auto it = by_key_.find(leaf.storage_key());
    return it == by_key_.end() ? nullptr : &it->second;
  }

  /// Gradient with the leaf's shape; zeros when unreached.
  Tensor<T> of(const Tensor<T>& leaf) const {
    if (const auto* g = find(leaf)) return Tensor<T>(leaf.shape(), *g);
    return Tensor<T>::zeros(leaf.shape());
  }

  std::size_t size() const { return by_key_.size(); }

 private:
  friend class Tape<T>;
  std::unordered_map<const void*, std::vector<T>> by_key_;
};

/// Append-only record of differentiable operations (define-by-run). A tape
/// is confined to the thread that activated it.
template <typename T>
class Tape {
 public:
  /// Receives the output gradient and one accumulation buffer per input
  /// (nullptr for inputs that need no gradient).
  using BackwardFn = std::function<void(std::span<const T>, std::span<T* const>)>;

  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape* tape) : previous_(current()) { current() = tape; }
    ~Scope() { current() = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  /// Makes this the recording tape until the returned scope ends.
  [[nodiscard]] Scope activate() { return Scope(this); }

  /// Suspends recording on this thread until the returned scope ends.
  [[nodiscard]] static Scope pause() { return Scope(nullptr); }

  static Tape* active() { return current(); }

  std::size_t size() const { return nodes_.size(); }

  bool tracks(const Tensor<T>& t) const {
    return t.tape_id_ == id_ || t.requires_grad_;
  }

  /// Records an op result. Untracked inputs are treated as constants.
  Tensor<T> record(Tensor<T> out, std::initializer_list<const Tensor<T>*> inputs,
                   BackwardFn backward) {
    return record(std::move(out), std::span<const Tensor<T>* const>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  Tensor<T> record(Tensor<T> out, std::span<const Tensor<T>* const> inputs,
                   BackwardFn backward) {
    Node node;
    node.numel = out.size();
    node.inputs.reserve(inputs.size());
    for (const Tensor<T>* in : inputs) node.inputs.push_back(node_of(*in));
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    out.tape_id_ = id_;
    out.node_ = nodes_.size() - 1;
    out.requires_grad_ = false;
    return out;
  }

  /// Reverse-mode sweep from a scalar root. Does not consume the tape;
  /// repeated calls give identical results.
  Gradients<T> backward(const Tensor<T>& root) const {
    if (root.size() != 1)
      throw ContractError("backward: root must be a scalar, got shape " +
                          shape_str(root.shape()));
    Gradients<T> result;
    if (root.tape_id_ != id_) return result;

    std::vector<std::vector<T>> grads(nodes_.size());
    grads[root.node_].assign(1, T(1));
    std::vector<T*> buffers;
    for (std::size_t id = root.node_ + 1; id-- > 0;) {
      if (grads[id].empty()) continue;
      const Node& node = nodes_[id];
      if (!node.backward) continue;  // leaf
      buffers.clear();
      for (auto in : node.inputs) {
        if (in < 0) {
          buffers.push_back(nullptr);
          continue;
        }
        auto& g = grads[static_cast<std::size_t>(in)];
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(in)].numel, T(0));
        buffers.push_back(g.data());
      }
      node.backward(grads[id], buffers);
      grads[id].clear();
      grads[id].shrink_to_fit();
    }
    for (const auto& [key, id] : leaves_) {
      if (!grads[id].empty()) result.by_key_.emplace(key, std::move(grads[id]));
    }
    return result;
  }

 private:
  struct Node {
    std::vector<std::ptrdiff_t> inputs;  // -1: constant
    std::size_t numel = 0;
    BackwardFn backward;                 // empty for leaves
    std::shared_ptr<const std::vector<T>> pinned;  // leaf buffer, kept alive so keys stay unique
  };

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  static Tape*& current() {
    thread_local Tape* tape = nullptr;
    return tape;
  }

  std::ptrdiff_t node_of(const Tensor<T>& t) {
    if (t.tape_id_ == id_) return static_cast<std::ptrdiff_t>(t.node_);
    if (!t.requires_grad_) return -1;
    auto [it, inserted] = leaves_.try_emplace(t.storage_key(), nodes_.size());
    if (inserted) {
      Node leaf;
      leaf.numel = t.size();
      leaf.pinned = t.data_;
      nodes_.push_back(std::move(leaf));
    }
    return static_cast<std::ptrdiff_t>(it->second);
  }

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::unordered_map<const void*, std::size_t> leaves_;
};

}  // namespace seqforge
