#pragma once

#include <memory>

#include "seqforge/modules/attention.hpp"
#include "seqforge/modules/decoder.hpp"

namespace seqforge {

/// RNN decoder with optional Luong attention (input feeding: the previous
/// attentional vector is concatenated to the next input).
template <typename T>
class BasicRNNDecoder : public Decoder<T> {
 public:
  static ConfigNode default_hparams(const ConfigNode& cell_defaults) {
    return ConfigNode::map({
        {"cell", ConfigNode::map({{"type", "LSTMCell"}, {"hparams", cell_defaults}})},
        {"attention", ConfigNode::map({{"type", "none"}, {"hparams", ConfigNode::map()}})},
    });
  }

  /// With attention the cell must have been built for input width
  /// embed_dim + memory_dim.
  BasicRNNDecoder(WordEmbedder<T>* embedder, std::unique_ptr<RNNCell<T>> cell,
                  std::unique_ptr<LuongAttention<T>> attention, std::size_t memory_dim, ParamScope<T> scope)
      : Decoder<T>(embedder, embedder->vocab_size()),
        cell_(std::move(cell)),
        attention_(std::move(attention)),
        memory_dim_(attention_ ? memory_dim : 0) {
    const std::size_t expected_in = embedder->dim() + memory_dim_;
    if (cell_->input_dim() != expected_in)
      throw AssemblyError(scope.prefix() + ": cell input width " + std::to_string(cell_->input_dim()) +
                          " != embedding dim " + std::to_string(embedder->dim()) +
                          (attention_ ? " + memory dim " + std::to_string(memory_dim_) : std::string()));
    if (attention_ && cell_->output_dim() != memory_dim_)
      throw AssemblyError(scope.prefix() + ": attention query width " + std::to_string(cell_->output_dim()) +
                          " (decoder cell num_units) != memory width " + std::to_string(memory_dim_) +
                          " (encoder output dim)");
    const std::size_t top = attention_ ? memory_dim_ : cell_->output_dim();
    if (attention_) attn_out_ = Dense<T>(scope.child("attention_out"), memory_dim_ + cell_->output_dim(), memory_dim_, false);
    output_ = Dense<T>(scope.child("output"), top, this->vocab_size());
  }

  std::vector<std::size_t> cell_state_dims() const override { return cell_->state_dims(); }
  bool requires_memory() const override { return attention_ != nullptr; }
  RNNCell<T>& cell() { return *cell_; }

  DecoderState<T> initial_state(std::size_t batch, const CellState<T>* cell_state) const override {
    DecoderState<T> s;
    if (cell_state) {
      const auto dims = cell_->state_dims();
      if (cell_state->size() != dims.size())
        throw DimensionError("decoder: expected " + std::to_string(dims.size()) + " state tensors, got " +
                             std::to_string(cell_state->size()));
      for (std::size_t i = 0; i < dims.size(); ++i)
        if ((*cell_state)[i].shape() != Shape{batch, dims[i]})
          throw DimensionError("decoder: initial state " + std::to_string(i) + " has shape " +
                               shape_str((*cell_state)[i].shape()) + ", expected " +
                               shape_str(Shape{batch, dims[i]}));
      s = *cell_state;
    } else {
      s = cell_->zero_state(batch);
    }
    if (attention_) s.push_back(Tensor<T>::zeros({batch, memory_dim_}));
    return s;
  }

  std::pair<Tensor<T>, DecoderState<T>> step(const Tensor<T>& input, const DecoderState<T>& state,
                                             const Memory<T>* memory) override {
    if (!attention_) {
      auto [h, next] = cell_->step(input, state);
      return {output_(h), std::move(next)};
    }
    if (!memory) throw ContractError("decoder: attention requires memory");
    CellState<T> cs(state.begin(), state.end() - 1);
    auto [h, next] = cell_->step(concat<T>({input, state.back()}, 1), cs);
    const auto att = (*attention_)(h, memory->values, memory->lengths);
    Tensor<T> a = tanh(attn_out_(concat<T>({att.context, h}, 1)));
    next.push_back(a);
    return {output_(a), std::move(next)};
  }

 private:
  std::unique_ptr<RNNCell<T>> cell_;
  std::unique_ptr<LuongAttention<T>> attention_;
  std::size_t memory_dim_;
  Dense<T> attn_out_, output_;
};

}  // namespace seqforge
