#pragma once

#include <cmath>
#include <limits>
#include <type_traits>
#include <vector>

#include "seqforge/modules/decoder.hpp"

namespace seqforge {

/// [batch x time x d] -> [batch x heads x time x d/heads]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
  return permute(reshape(x, {b, t, heads, d / heads}), {0, 2, 1, 3});
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  const std::size_t b = x.dim(0), h = x.dim(1), t = x.dim(2), dh = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), {b, t, h * dh});
}

/// Scaled dot-product attention over projected q [b x tq x d], k, v
/// [b x tk x d]. `bias` is added to the scores; shape [tq x tk] or
/// [b x heads x tq x tk].
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                               const std::type_identity_t<Tensor<T>>* bias) {
  const std::size_t dh = q.dim(2) / heads;
  Tensor<T> scores = scale(matmul(split_heads(q, heads), transpose(split_heads(k, heads))),
                           static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  if (bias) scores = add(scores, *bias);
  return merge_heads(matmul(softmax(scores, -1), split_heads(v, heads)));
}

template <typename T>
Tensor<T> sinusoidal_positions(std::size_t first, std::size_t count, std::size_t dim) {
  std::vector<T> pe(count * dim);
  for (std::size_t p = 0; p < count; ++p)
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(first + p) * rate;
      pe[p * dim + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return Tensor<T>({count, dim}, std::move(pe));
}

/// Pre-LayerNorm Transformer decoder: causal self-attention, optional
/// cross-attention over memory, position-wise feed-forward. Incremental
/// decoding caches the projected keys and values of every layer in the
/// state: [k_0, v_0, k_1, v_1, ...], each [batch x t x dim].
template <typename T>
class TransformerDecoder : public Decoder<T> {
 public:
  static ConfigNode default_hparams() {
    return ConfigNode::map({{"dim", 64},
                            {"num_layers", 2},
                            {"num_heads", 4},
                            {"ffn_dim", 128},
                            {"position_embedding", "sinusoidal"},
                            {"max_positions", 256}});
  }

  TransformerDecoder(const ConfigNode& hp, WordEmbedder<T>* embedder, std::size_t memory_dim, ParamScope<T> scope)
      : Decoder<T>(embedder, embedder->vocab_size()),
        scope_(std::move(scope)),
        dim_(static_cast<std::size_t>(hp.at("dim").as_int())),
        layers_(static_cast<std::size_t>(hp.at("num_layers").as_int())),
        heads_(static_cast<std::size_t>(hp.at("num_heads").as_int())),
        ffn_(static_cast<std::size_t>(hp.at("ffn_dim").as_int())),
        max_positions_(static_cast<std::size_t>(hp.at("max_positions").as_int())),
        memory_dim_(memory_dim) {
    const auto& pos = hp.at("position_embedding").as_string();
    if (pos != "sinusoidal" && pos != "learned")
      throw ConfigError(scope_.prefix() + ": position_embedding must be sinusoidal or learned, got '" + pos + "'");
    learned_positions_ = pos == "learned";
    if (dim_ == 0 || heads_ == 0 || layers_ == 0 || ffn_ == 0)
      throw ConfigError(scope_.prefix() + ": dim, num_heads, num_layers and ffn_dim must be >= 1");
    if (dim_ % heads_ != 0)
      throw ConfigError(scope_.prefix() + ": dim " + std::to_string(dim_) + " is not divisible by num_heads " +
                        std::to_string(heads_));
    if (embedder->dim() != dim_) input_proj_ = Dense<T>(scope_.child("input_proj"), embedder->dim(), dim_, false);
    for (std::size_t l = 0; l < layers_; ++l) {
      const auto ls = scope_.child("layer" + std::to_string(l));
      Layer layer;
      layer.scope = ls;
      layer.q = Dense<T>(ls.child("self/q"), dim_, dim_);
      layer.k = Dense<T>(ls.child("self/k"), dim_, dim_);
      layer.v = Dense<T>(ls.child("self/v"), dim_, dim_);
      layer.o = Dense<T>(ls.child("self/o"), dim_, dim_);
      if (memory_dim_) {
        layer.cq = Dense<T>(ls.child("cross/q"), dim_, dim_);
        layer.ck = Dense<T>(ls.child("cross/k"), memory_dim_, dim_);
        layer.cv = Dense<T>(ls.child("cross/v"), memory_dim_, dim_);
        layer.co = Dense<T>(ls.child("cross/o"), dim_, dim_);
      }
      layer.f1 = Dense<T>(ls.child("ffn/1"), dim_, ffn_);
      layer.f2 = Dense<T>(ls.child("ffn/2"), ffn_, dim_);
      blocks_.push_back(layer);
    }
    output_ = Dense<T>(scope_.child("output"), dim_, this->vocab_size());
  }

  std::vector<std::size_t> cell_state_dims() const override { return {}; }
  bool requires_memory() const override { return memory_dim_ > 0; }
  std::size_t dim() const { return dim_; }

  DecoderState<T> initial_state(std::size_t, const CellState<T>* cell_state) const override {
    if (cell_state && !cell_state->empty())
      throw AssemblyError(scope_.prefix() + ": TransformerDecoder has no recurrent state to initialize");
    return {};
  }

  Tensor<T> teacher_forcing_logits(const Tensor<T>& inputs, const DecoderState<T>&, const Memory<T>* memory) override {
    const std::size_t steps = inputs.dim(1);
    Tensor<T> x = embed_inputs(inputs, 0);
    std::vector<T> causal(steps * steps, T(0));
    for (std::size_t i = 0; i < steps; ++i)
      for (std::size_t j = i + 1; j < steps; ++j) causal[i * steps + j] = -std::numeric_limits<T>::infinity();
    const Tensor<T> causal_bias({steps, steps}, std::move(causal));
    std::optional<Tensor<T>> cross_bias;
    if (memory_dim_) cross_bias = memory_bias(*memory, steps);
    for (auto& L : blocks_) {
      const Tensor<T> n1 = norm(L, "ln1", x);
      x = add(x, L.o(multi_head_attention(L.q(n1), L.k(n1), L.v(n1), heads_, &causal_bias)));
      x = cross(L, x, memory, cross_bias ? &*cross_bias : nullptr);
      x = add(x, L.f2(relu(L.f1(norm(L, "ln3", x)))));
    }
    return output_(final_norm(x));
  }

  std::pair<Tensor<T>, DecoderState<T>> step(const Tensor<T>& input, const DecoderState<T>& state,
                                             const Memory<T>* memory) override {
    const std::size_t batch = input.dim(0);
    const std::size_t pos = state.empty() ? 0 : state[0].dim(1);
    Tensor<T> x = embed_inputs(reshape(input, {batch, 1, input.dim(1)}), pos);
    std::optional<Tensor<T>> cross_bias;
    if (memory_dim_) cross_bias = memory_bias(*memory, 1);
    DecoderState<T> next;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      auto& L = blocks_[l];
      const Tensor<T> n1 = norm(L, "ln1", x);
      Tensor<T> k = L.k(n1), v = L.v(n1);
      if (!state.empty()) {
        k = concat<T>({state[2 * l], k}, 1);
        v = concat<T>({state[2 * l + 1], v}, 1);
      }
      x = add(x, L.o(multi_head_attention(L.q(n1), k, v, heads_, nullptr)));
      next.push_back(std::move(k));
      next.push_back(std::move(v));
      x = cross(L, x, memory, cross_bias ? &*cross_bias : nullptr);
      x = add(x, L.f2(relu(L.f1(norm(L, "ln3", x)))));
    }
    Tensor<T> logits = output_(final_norm(x));
    return {reshape(logits, {batch, this->vocab_size()}), std::move(next)};
  }

 private:
  struct Layer {
    ParamScope<T> scope;
    Dense<T> q, k, v, o, cq, ck, cv, co, f1, f2;
  };

  Tensor<T> norm(const Layer& L, const std::string& name, const Tensor<T>& x) const {
    return layer_norm(x, L.scope(name + "/gain", {dim_}, Init::constant(1.0f)),
                      L.scope(name + "/bias", {dim_}, Init::zeros()));
  }

  Tensor<T> final_norm(const Tensor<T>& x) const {
    return layer_norm(x, scope_("ln_f/gain", {dim_}, Init::constant(1.0f)), scope_("ln_f/bias", {dim_}, Init::zeros()));
  }

  Tensor<T> cross(const Layer& L, const Tensor<T>& x, const Memory<T>* memory, const Tensor<T>* bias) const {
    if (!memory_dim_) return x;
    if (!memory) throw ContractError(scope_.prefix() + ": cross-attention requires memory");
    if (memory->values.rank() != 3 || memory->values.dim(2) != memory_dim_ || memory->values.dim(0) != x.dim(0))
      throw DimensionError(scope_.prefix() + ": memory " + shape_str(memory->values.shape()) +
                           " does not match memory dim " + std::to_string(memory_dim_));
    const Tensor<T> n2 = norm(L, "ln2", x);
    return add(x, L.co(multi_head_attention(L.cq(n2), L.ck(memory->values), L.cv(memory->values), heads_, bias)));
  }

  /// [batch x heads x tq x tk] additive mask for memory padding.
  Tensor<T> memory_bias(const Memory<T>& memory, std::size_t tq) const {
    const std::size_t batch = memory.values.dim(0), tk = memory.values.dim(1);
    if (memory.lengths.size() != batch) throw DimensionError(scope_.prefix() + ": memory lengths do not match batch");
    std::vector<T> bias(batch * heads_ * tq * tk, T(0));
    for (std::size_t b = 0; b < batch; ++b) {
      if (memory.lengths[b] == 0) throw ContractError(scope_.prefix() + ": every memory position is masked");
      for (std::size_t r = 0; r < heads_ * tq; ++r)
        for (std::size_t j = memory.lengths[b]; j < tk; ++j)
          bias[(b * heads_ * tq + r) * tk + j] = -std::numeric_limits<T>::infinity();
    }
    return Tensor<T>({batch, heads_, tq, tk}, std::move(bias));
  }

  /// Embedded tokens [batch x t x e] at absolute positions first.. -> [batch x t x dim].
  Tensor<T> embed_inputs(const Tensor<T>& emb, std::size_t first) const {
    const std::size_t steps = emb.dim(1);
    Tensor<T> x = input_proj_.out() ? input_proj_(emb) : emb;
    x = scale(x, static_cast<T>(std::sqrt(static_cast<double>(dim_))));
    if (learned_positions_) {
      if (first + steps > max_positions_)
        throw ContractError(scope_.prefix() + ": position " + std::to_string(first + steps - 1) +
                            " exceeds max_positions " + std::to_string(max_positions_));
      std::vector<std::int32_t> ids(steps);
      for (std::size_t p = 0; p < steps; ++p) ids[p] = static_cast<std::int32_t>(first + p);
      const auto& table = scope_("position/table", {max_positions_, dim_}, Init::uniform(0.1f));
      return add(x, embedding_gather(table, ids, {steps}));
    }
    return add(x, sinusoidal_positions<T>(first, steps, dim_));
  }

  ParamScope<T> scope_;
  std::size_t dim_, layers_, heads_, ffn_, max_positions_, memory_dim_;
  bool learned_positions_ = false;
  Dense<T> input_proj_, output_;
  std::vector<Layer> blocks_;
};

}  // namespace seqforge
