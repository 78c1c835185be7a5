#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "seqforge/config/config_node.hpp"
#include "seqforge/tensor/ops.hpp"

namespace seqforge {

template <typename T>
struct AttentionResult {
  Tensor<T> context;    // [batch x dim]
  Tensor<T> alignment;  // [batch x time]
};

/// Additive mask [batch x time]: 0 on valid steps, -inf on padding.
template <typename T>
Tensor<T> length_mask_bias(const std::vector<std::size_t>& lengths, std::size_t steps) {
  std::vector<T> bias(lengths.size() * steps, T(0));
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    if (lengths[b] == 0) throw ContractError("attention: every memory position is masked for example " + std::to_string(b));
    if (lengths[b] > steps) throw ContractError("attention: memory length exceeds time extent");
    for (std::size_t t = lengths[b]; t < steps; ++t) bias[b * steps + t] = -std::numeric_limits<T>::infinity();
  }
  return Tensor<T>({lengths.size(), steps}, std::move(bias));
}

/// Luong dot-product attention with a masked softmax over valid steps.
template <typename T>
AttentionResult<T> luong_attention(const Tensor<T>& query, const Tensor<T>& memory,
                                   const std::vector<std::size_t>& lengths, bool scaled = false) {
  if (query.rank() != 2 || memory.rank() != 3 || query.dim(0) != memory.dim(0) ||
      query.dim(1) != memory.dim(2) || lengths.size() != memory.dim(0))
    throw DimensionError("attention: query " + shape_str(query.shape()) + " vs memory " +
                         shape_str(memory.shape()));
  const std::size_t batch = memory.dim(0), steps = memory.dim(1), d = memory.dim(2);
  Tensor<T> scores = reshape(matmul(memory, reshape(query, {batch, d, 1})), {batch, steps});
  if (scaled) scores = scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  const Tensor<T> alignment = softmax(add(scores, length_mask_bias<T>(lengths, steps)), 1);
  Tensor<T> context = reshape(matmul(reshape(alignment, {batch, 1, steps}), memory), {batch, d});
  return {std::move(context), alignment};
}

template <typename T>
class LuongAttention {
 public:
  static ConfigNode default_hparams() { return ConfigNode::map({{"scaled", false}}); }
  explicit LuongAttention(const ConfigNode& hp) : scaled_(hp.at("scaled").as_bool()) {}

  AttentionResult<T> operator()(const Tensor<T>& query, const Tensor<T>& memory,
                                const std::vector<std::size_t>& lengths) const {
    return luong_attention(query, memory, lengths, scaled_);
  }

 private:
  bool scaled_;
};

}  // namespace seqforge
