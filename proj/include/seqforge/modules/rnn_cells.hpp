#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "seqforge/config/config_node.hpp"
#include "seqforge/modules/parameters.hpp"

namespace seqforge {

/// Recurrent state as a list of [batch x dim] tensors.
template <typename T>
using CellState = std::vector<Tensor<T>>;

template <typename T>
class RNNCell {
 public:
  virtual ~RNNCell() = default;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual std::vector<std::size_t> state_dims() const = 0;
  /// (output, next state) for one time step; x: [batch x input_dim].
  virtual std::pair<Tensor<T>, CellState<T>> step(const Tensor<T>& x, const CellState<T>& state) = 0;

  CellState<T> zero_state(std::size_t batch) const {
    CellState<T> s;
    for (auto d : state_dims()) s.push_back(Tensor<T>::zeros({batch, d}));
    return s;
  }

 protected:
  void check_input(const Tensor<T>& x, const CellState<T>& state, const std::string& who) const {
    if (x.rank() != 2 || x.dim(1) != input_dim())
      throw DimensionError(who + ": expected input [batch, " + std::to_string(input_dim()) +
                           "], got " + shape_str(x.shape()));
    const auto dims = state_dims();
    if (state.size() != dims.size())
      throw DimensionError(who + ": expected " + std::to_string(dims.size()) + " state tensors, got " +
                           std::to_string(state.size()));
    for (std::size_t i = 0; i < dims.size(); ++i)
      if (state[i].shape() != Shape{x.dim(0), dims[i]})
        throw DimensionError(who + ": state " + std::to_string(i) + " has shape " +
                             shape_str(state[i].shape()) + ", expected " +
                             shape_str(Shape{x.dim(0), dims[i]}));
  }
};

/// One LSTM step. Gate layout along the last axis: input, forget, cell, output.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_step(const Tensor<T>& x, const Tensor<T>& h, const Tensor<T>& c,
                                          const Tensor<T>& w_ih, const Tensor<T>& w_hh,
                                          const Tensor<T>& bias) {
  const std::size_t n = h.dim(1);
  const Tensor<T> gates = add(add(matmul(x, w_ih), matmul(h, w_hh)), bias);
  const Tensor<T> i = sigmoid(slice(gates, 1, 0, n));
  const Tensor<T> f = sigmoid(slice(gates, 1, n, 2 * n));
  const Tensor<T> g = tanh(slice(gates, 1, 2 * n, 3 * n));
  const Tensor<T> o = sigmoid(slice(gates, 1, 3 * n, 4 * n));
  Tensor<T> c_next = add(mul(f, c), mul(i, g));
  Tensor<T> h_next = mul(o, tanh(c_next));
  return {std::move(h_next), std::move(c_next)};
}

/// One GRU step. Gate layout: reset, update, candidate.
template <typename T>
Tensor<T> gru_step(const Tensor<T>& x, const Tensor<T>& h, const Tensor<T>& w_ih,
                   const Tensor<T>& w_hh, const Tensor<T>& b_ih, const Tensor<T>& b_hh) {
  const std::size_t n = h.dim(1);
  const Tensor<T> xi = add(matmul(x, w_ih), b_ih);
  const Tensor<T> hh = add(matmul(h, w_hh), b_hh);
  const Tensor<T> r = sigmoid(add(slice(xi, 1, 0, n), slice(hh, 1, 0, n)));
  const Tensor<T> z = sigmoid(add(slice(xi, 1, n, 2 * n), slice(hh, 1, n, 2 * n)));
  const Tensor<T> cand = tanh(add(slice(xi, 1, 2 * n, 3 * n), mul(r, slice(hh, 1, 2 * n, 3 * n))));
  // (1 - z) * cand + z * h
  return add(cand, mul(z, sub(h, cand)));
}

namespace detail {
inline std::string layer_prefix(std::size_t layers, std::size_t l) {
  return layers == 1 ? std::string() : "l" + std::to_string(l) + "/";
}
}  // namespace detail

/// Stacked LSTM. State: h_0, c_0, h_1, c_1, ...
template <typename T>
class LSTMCell : public RNNCell<T> {
 public:
  static ConfigNode default_hparams() {
    return ConfigNode::map({{"num_units", 32}, {"num_layers", 1}, {"forget_bias", 1.0}});
  }

  LSTMCell(const ConfigNode& hp, std::size_t input_dim, ParamScope<T> scope)
      : scope_(std::move(scope)),
        input_dim_(input_dim),
        units_(static_cast<std::size_t>(hp.at("num_units").as_int())),
        layers_(static_cast<std::size_t>(hp.at("num_layers").as_int())),
        forget_bias_(static_cast<float>(hp.at("forget_bias").as_float())) {
    if (units_ == 0 || layers_ == 0) throw ConfigError("LSTMCell: num_units and num_layers must be >= 1");
  }

  std::size_t input_dim() const override { return input_dim_; }
  std::size_t output_dim() const override { return units_; }
  std::vector<std::size_t> state_dims() const override { return std::vector<std::size_t>(2 * layers_, units_); }

  std::pair<Tensor<T>, CellState<T>> step(const Tensor<T>& x, const CellState<T>& state) override {
    this->check_input(x, state, scope_.prefix());
    CellState<T> next;
    Tensor<T> input = x;
    for (std::size_t l = 0; l < layers_; ++l) {
      const auto p = detail::layer_prefix(layers_, l);
      const std::size_t in = l == 0 ? input_dim_ : units_;
      const auto& w_ih = scope_(p + "w_ih", {in, 4 * units_}, Init::uniform(0.08f));
      const auto& w_hh = scope_(p + "w_hh", {units_, 4 * units_}, Init::uniform(0.08f));
      const auto& b = bias_param(p);
      auto [h, c] = lstm_step(input, state[2 * l], state[2 * l + 1], w_ih, w_hh, b);
      input = h;
      next.push_back(std::move(h));
      next.push_back(std::move(c));
    }
    return {input, std::move(next)};
  }

 private:
  const Tensor<T>& bias_param(const std::string& p) {
    return scope_(p + "bias", {4 * units_}, Init::range(forget_bias_, units_, 2 * units_));
  }

  ParamScope<T> scope_;
  std::size_t input_dim_, units_, layers_;
  float forget_bias_;
};

/// Stacked GRU. State: h_0, h_1, ...
template <typename T>
class GRUCell : public RNNCell<T> {
 public:
  static ConfigNode default_hparams() { return ConfigNode::map({{"num_units", 32}, {"num_layers", 1}}); }

  GRUCell(const ConfigNode& hp, std::size_t input_dim, ParamScope<T> scope)
      : scope_(std::move(scope)),
        input_dim_(input_dim),
        units_(static_cast<std::size_t>(hp.at("num_units").as_int())),
        layers_(static_cast<std::size_t>(hp.at("num_layers").as_int())) {
    if (units_ == 0 || layers_ == 0) throw ConfigError("GRUCell: num_units and num_layers must be >= 1");
  }

  std::size_t input_dim() const override { return input_dim_; }
  std::size_t output_dim() const override { return units_; }
  std::vector<std::size_t> state_dims() const override { return std::vector<std::size_t>(layers_, units_); }

  std::pair<Tensor<T>, CellState<T>> step(const Tensor<T>& x, const CellState<T>& state) override {
    this->check_input(x, state, scope_.prefix());
    CellState<T> next;
    Tensor<T> input = x;
    for (std::size_t l = 0; l < layers_; ++l) {
      const auto p = detail::layer_prefix(layers_, l);
      const std::size_t in = l == 0 ? input_dim_ : units_;
      Tensor<T> h = gru_step(input, state[l], scope_(p + "w_ih", {in, 3 * units_}, Init::uniform(0.08f)),
                             scope_(p + "w_hh", {units_, 3 * units_}, Init::uniform(0.08f)),
                             scope_(p + "b_ih", {3 * units_}, Init::zeros()),
                             scope_(p + "b_hh", {3 * units_}, Init::zeros()));
      input = h;
      next.push_back(std::move(h));
    }
    return {input, std::move(next)};
  }

 private:
  ParamScope<T> scope_;
  std::size_t input_dim_, units_, layers_;
};

}  // namespace seqforge
