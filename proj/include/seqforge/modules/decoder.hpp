#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "seqforge/data/dataset.hpp"
#include "seqforge/modules/embedder.hpp"
#include "seqforge/modules/rnn_cells.hpp"
#include "seqforge/modules/strategy.hpp"

namespace seqforge {

/// Encoder outputs a decoder may attend to.
template <typename T>
struct Memory {
  Tensor<T> values;  // [batch x time x dim]
  std::vector<std::size_t> lengths;
};

/// Decoder state: tensors whose axis 0 is the batch, so generic code (beam
/// search) can reorder rows.
template <typename T>
using DecoderState = std::vector<Tensor<T>>;

template <typename T>
DecoderState<T> reorder_state(const DecoderState<T>& state, std::span<const std::size_t> rows) {
  DecoderState<T> out;
  out.reserve(state.size());
  for (const auto& s : state) out.push_back(select_rows(s, rows));
  return out;
}

template <typename T>
Memory<T> reorder_memory(const Memory<T>& memory, std::span<const std::size_t> rows) {
  Memory<T> out{select_rows(memory.values, rows), {}};
  for (auto r : rows) out.lengths.push_back(memory.lengths.at(r));
  return out;
}

template <typename T>
struct DecoderOutput {
  Tensor<T> logits;                      // [batch x steps x vocab]
  std::vector<std::int32_t> sample_ids;  // [batch x steps]; PAD after an example's EOS
  std::vector<std::size_t> lengths;      // first EOS + 1, or steps
  std::size_t batch = 0, steps = 0;
  std::optional<Tensor<T>> soft_samples;  // gumbel_softmax only: [batch x steps x vocab]

  std::int32_t id(std::size_t b, std::size_t t) const { return sample_ids[b * steps + t]; }

  /// Emitted ids per example, truncated at each length.
  PaddedIds padded() const {
    PaddedIds p;
    p.batch = batch;
    p.max_len = steps;
    p.ids = sample_ids;
    p.lengths = lengths;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = lengths[b]; t < steps; ++t) p.ids[b * steps + t] = Vocabulary::kPad;
    return p;
  }
};

/// Uniform decoder interface: subclasses provide a single step (and
/// optionally a faster teacher-forcing path); decode() implements every
/// decoding strategy on top of it.
template <typename T>
class Decoder {
 public:
  Decoder(WordEmbedder<T>* embedder, std::size_t vocab_size) : embedder_(embedder), vocab_(vocab_size) {
    if (!embedder_) throw ContractError("decoder: embedder required");
  }
  virtual ~Decoder() = default;

  /// Dims of the recurrent state a connector must produce (empty if none).
  virtual std::vector<std::size_t> cell_state_dims() const = 0;
  virtual bool requires_memory() const = 0;
  /// Builds the initial state, optionally from connector output.
  virtual DecoderState<T> initial_state(std::size_t batch, const CellState<T>* cell_state = nullptr) const = 0;
  /// input: [batch x embed_dim] -> (logits [batch x vocab], next state).
  virtual std::pair<Tensor<T>, DecoderState<T>> step(const Tensor<T>& input, const DecoderState<T>& state,
                                                     const Memory<T>* memory) = 0;

  /// inputs: [batch x time x embed_dim] -> logits [batch x time x vocab].
  virtual Tensor<T> teacher_forcing_logits(const Tensor<T>& inputs, const DecoderState<T>& state,
                                           const Memory<T>* memory) {
    DecoderState<T> s = state;
    std::vector<Tensor<T>> logits;
    for (std::size_t t = 0; t < inputs.dim(1); ++t) {
      auto [l, next] = step(reshape(slice(inputs, 1, t, t + 1), {inputs.dim(0), inputs.dim(2)}), s, memory);
      logits.push_back(std::move(l));
      s = std::move(next);
    }
    return stack(logits, 1);
  }

  WordEmbedder<T>& embedder() const { return *embedder_; }
  std::size_t vocab_size() const { return vocab_; }

  DecoderOutput<T> decode(const DecodingStrategy& strategy, const DecoderState<T>& initial,
                          const Memory<T>* memory, const PaddedIds* targets, std::size_t max_len,
                          std::size_t batch = 0) {
    strategy.validate(vocab_);
    if (requires_memory() && !memory) throw ContractError("decode: this decoder requires memory");
    if (strategy.kind == DecodingStrategy::Kind::teacher_forcing) {
      if (!targets) throw ContractError("decode: teacher_forcing requires targets");
      return teacher_force(*targets, initial, memory);
    }
    if (max_len < 1) throw ContractError("decode: max_len must be >= 1");
    return free_run(strategy, initial, memory, max_len, batch);
  }

 private:
  DecoderOutput<T> teacher_force(const PaddedIds& targets, const DecoderState<T>& initial, const Memory<T>* memory) {
    const std::size_t batch = targets.batch, steps = targets.max_len;
    std::vector<std::int32_t> in(batch * steps);
    for (std::size_t b = 0; b < batch; ++b) {
      in[b * steps] = Vocabulary::kBos;
      for (std::size_t t = 1; t < steps; ++t) in[b * steps + t] = targets.at(b, t - 1);
    }
    DecoderOutput<T> out;
    out.batch = batch;
    out.steps = steps;
    out.lengths = targets.lengths;
    out.logits = teacher_forcing_logits(embedder_->embed(in, {batch, steps}), initial, memory);
    out.sample_ids.resize(batch * steps);
    const auto lv = out.logits.data();
    for (std::size_t r = 0; r < batch * steps; ++r) out.sample_ids[r] = argmax<T>(lv.subspan(r * vocab_, vocab_));
    return out;
  }

  DecoderOutput<T> free_run(const DecodingStrategy& strategy, const DecoderState<T>& initial,
                            const Memory<T>* memory, std::size_t max_len, std::size_t batch) {
    using Kind = DecodingStrategy::Kind;
    if (batch == 0 && memory) batch = memory->values.dim(0);
    if (batch == 0 && !initial.empty()) batch = initial[0].dim(0);
    if (batch == 0) throw ContractError("decode: cannot infer batch size (no state and no memory)");
    Rng rng(strategy.seed);

    std::vector<std::int32_t> ids(batch, Vocabulary::kBos);
    Tensor<T> x = embedder_->embed(ids, {batch});
    DecoderState<T> state = initial;
    std::vector<Tensor<T>> logits, softs;
    std::vector<std::vector<std::int32_t>> emitted;
    std::vector<std::size_t> lengths(batch, 0);
    std::size_t remaining = batch;

    for (std::size_t t = 0; t < max_len && remaining > 0; ++t) {
      auto [l, next] = step(x, state, memory);
      state = std::move(next);
      const auto lv = l.data();
      Tensor<T> soft;
      if (strategy.kind == Kind::gumbel_softmax) {
        soft = gumbel_softmax_sample(l, strategy.tau, gumbel_noise<T>(l.shape(), rng));
        softs.push_back(soft);
      }
      for (std::size_t b = 0; b < batch; ++b) {
        const auto row = lv.subspan(b * vocab_, vocab_);
        std::int32_t id = 0;
        switch (strategy.kind) {
          case Kind::greedy: id = argmax<T>(row); break;
          case Kind::sample: id = sample_softmax<T>(row, rng); break;
          case Kind::top_k: id = sample_top_k<T>(row, strategy.k, rng); break;
          case Kind::gumbel_softmax: id = argmax<T>(soft.data().subspan(b * vocab_, vocab_)); break;
          case Kind::teacher_forcing: break;
        }
        if (lengths[b] != 0) id = Vocabulary::kPad;  // already finished
        else if (id == Vocabulary::kEos) {
          lengths[b] = t + 1;
          --remaining;
        }
        ids[b] = id;
      }
      emitted.push_back(ids);
      logits.push_back(std::move(l));
      x = strategy.kind == Kind::gumbel_softmax ? embedder_->embed_soft(soft) : embedder_->embed(ids, {batch});
    }

    DecoderOutput<T> out;
    out.batch = batch;
    out.steps = emitted.size();
    out.logits = stack(logits, 1);
    out.sample_ids.resize(batch * out.steps);
    for (std::size_t t = 0; t < out.steps; ++t)
      for (std::size_t b = 0; b < batch; ++b) out.sample_ids[b * out.steps + t] = emitted[t][b];
    for (auto& len : lengths)
      if (len == 0) len = out.steps;
    out.lengths = std::move(lengths);
    if (!softs.empty()) out.soft_samples = stack(softs, 1);
    return out;
  }

  WordEmbedder<T>* embedder_;
  std::size_t vocab_;
};

}  // namespace seqforge
