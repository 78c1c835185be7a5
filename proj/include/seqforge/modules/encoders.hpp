#pragma once

#include <memory>
#include <vector>

#include "seqforge/modules/rnn_cells.hpp"

namespace seqforge {

template <typename T>
struct EncoderOutput {
  Tensor<T> outputs;  // [batch x time x dim], zero past each length
  CellState<T> final_state;
  std::vector<std::size_t> lengths;
};

/// Result of running a cell over a padded batch.
template <typename T>
struct Unrolled {
  Tensor<T> outputs;       // [batch x time x out]
  Tensor<T> final_output;  // [batch x out], output at each sequence's last step
  CellState<T> final_state;
};

/// [batch x time x d] -> [batch x d] at time t.
template <typename T>
Tensor<T> time_step(const Tensor<T>& x, std::size_t t) {
  return reshape(slice(x, 1, t, t + 1), {x.dim(0), x.dim(2)});
}

/// Runs `cell` over inputs [batch x time x d]. State and final output are
/// frozen once t reaches an example's length; outputs past it are zero.
template <typename T>
Unrolled<T> unroll(RNNCell<T>& cell, const Tensor<T>& inputs, const std::vector<std::size_t>& lengths) {
  if (inputs.rank() != 3 || inputs.dim(0) != lengths.size())
    throw DimensionError("unroll: inputs " + shape_str(inputs.shape()) + " with " +
                         std::to_string(lengths.size()) + " lengths");
  const std::size_t batch = inputs.dim(0), steps = inputs.dim(1);
  for (auto len : lengths)
    if (len > steps) throw ContractError("unroll: length " + std::to_string(len) + " exceeds time extent");
  CellState<T> state = cell.zero_state(batch);
  const Tensor<T> zero_out = Tensor<T>::zeros({batch, cell.output_dim()});
  Tensor<T> last = zero_out;
  std::vector<Tensor<T>> outs;
  std::vector<std::uint8_t> keep(batch);
  for (std::size_t t = 0; t < steps; ++t) {
    bool all = true;
    for (std::size_t b = 0; b < batch; ++b) {
      keep[b] = t < lengths[b];
      all = all && keep[b];
    }
    auto [y, next] = cell.step(time_step(inputs, t), state);
    if (all) {
      state = std::move(next);
      last = y;
      outs.push_back(std::move(y));
      continue;
    }
    for (std::size_t i = 0; i < state.size(); ++i) state[i] = where_rows<T>(keep, next[i], state[i]);
    last = where_rows<T>(keep, y, last);
    outs.push_back(where_rows<T>(keep, y, zero_out));
  }
  Tensor<T> outputs = steps ? stack(outs, 1) : Tensor<T>::zeros({batch, 0, cell.output_dim()});
  return {std::move(outputs), std::move(last), std::move(state)};
}

/// Reverses each example's first `length` time steps; padding stays put.
template <typename T>
Tensor<T> reverse_within_lengths(const Tensor<T>& x, const std::vector<std::size_t>& lengths) {
  const std::size_t batch = x.dim(0), steps = x.dim(1), d = x.dim(2);
  std::vector<std::size_t> rows(batch * steps);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < steps; ++t)
      rows[b * steps + t] = b * steps + (t < lengths[b] ? lengths[b] - 1 - t : t);
  return reshape(select_rows(reshape(x, {batch * steps, d}), rows), {batch, steps, d});
}

template <typename T>
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual std::vector<std::size_t> state_dims() const = 0;
  virtual EncoderOutput<T> encode(const Tensor<T>& inputs, const std::vector<std::size_t>& lengths) = 0;
};

inline ConfigNode rnn_encoder_defaults(const ConfigNode& cell_defaults) {
  return ConfigNode::map({{"cell", ConfigNode::map({{"type", "LSTMCell"}, {"hparams", cell_defaults}})}});
}

template <typename T>
class UnidirectionalRNNEncoder : public Encoder<T> {
 public:
  explicit UnidirectionalRNNEncoder(std::unique_ptr<RNNCell<T>> cell) : cell_(std::move(cell)) {}

  std::size_t input_dim() const override { return cell_->input_dim(); }
  std::size_t output_dim() const override { return cell_->output_dim(); }
  std::vector<std::size_t> state_dims() const override { return cell_->state_dims(); }

  EncoderOutput<T> encode(const Tensor<T>& inputs, const std::vector<std::size_t>& lengths) override {
    auto run = unroll(*cell_, inputs, lengths);
    return {std::move(run.outputs), std::move(run.final_state), lengths};
  }

 private:
  std::unique_ptr<RNNCell<T>> cell_;
};

/// Forward and backward cells; outputs and final states are concatenated
/// along the feature axis (forward first).
template <typename T>
class BidirectionalRNNEncoder : public Encoder<T> {
 public:
  BidirectionalRNNEncoder(std::unique_ptr<RNNCell<T>> fw, std::unique_ptr<RNNCell<T>> bw)
      : fw_(std::move(fw)), bw_(std::move(bw)) {
    if (fw_->state_dims().size() != bw_->state_dims().size())
      throw AssemblyError("BidirectionalRNNEncoder: forward and backward cells have different state layouts");
  }

  std::size_t input_dim() const override { return fw_->input_dim(); }
  std::size_t output_dim() const override { return fw_->output_dim() + bw_->output_dim(); }
  std::vector<std::size_t> state_dims() const override {
    auto f = fw_->state_dims();
    const auto b = bw_->state_dims();
    for (std::size_t i = 0; i < f.size(); ++i) f[i] += b[i];
    return f;
  }

  EncoderOutput<T> encode(const Tensor<T>& inputs, const std::vector<std::size_t>& lengths) override {
    auto f = unroll(*fw_, inputs, lengths);
    auto b = unroll(*bw_, reverse_within_lengths(inputs, lengths), lengths);
    EncoderOutput<T> out;
    out.outputs = concat<T>({f.outputs, reverse_within_lengths(b.outputs, lengths)}, 2);
    for (std::size_t i = 0; i < f.final_state.size(); ++i)
      out.final_state.push_back(concat<T>({f.final_state[i], b.final_state[i]}, 1));
    out.lengths = lengths;
    return out;
  }

 private:
  std::unique_ptr<RNNCell<T>> fw_, bw_;
};

}  // namespace seqforge
