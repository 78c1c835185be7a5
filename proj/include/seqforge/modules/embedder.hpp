#pragma once

#include <span>
#include <vector>

#include "seqforge/config/config_node.hpp"
#include "seqforge/data/dataset.hpp"
#include "seqforge/modules/parameters.hpp"

namespace seqforge {

/// Token embedding table [vocab x dim].
template <typename T>
class WordEmbedder {
 public:
  static ConfigNode default_hparams() { return ConfigNode::map({{"dim", 32}}); }

  WordEmbedder(const ConfigNode& hp, std::size_t vocab_size, ParamScope<T> scope)
      : scope_(std::move(scope)), vocab_(vocab_size), dim_(static_cast<std::size_t>(hp.at("dim").as_int())) {
    if (vocab_ == 0 || dim_ == 0) throw ConfigError(scope_.prefix() + ": vocab size and dim must be >= 1");
  }

  std::size_t dim() const { return dim_; }
  std::size_t vocab_size() const { return vocab_; }

  const Tensor<T>& table() const { return scope_("table", {vocab_, dim_}, Init::uniform(0.1f)); }

  /// ids of shape `ids_shape` -> ids_shape + [dim].
  Tensor<T> embed(std::span<const std::int32_t> ids, Shape ids_shape) const {
    return embedding_gather(table(), ids, std::move(ids_shape));
  }

  Tensor<T> embed(const PaddedIds& ids) const { return embed(ids.ids, {ids.batch, ids.max_len}); }

  /// Expected embedding under per-position distributions: [..., vocab] -> [..., dim].
  Tensor<T> embed_soft(const Tensor<T>& probs) const {
    if (probs.rank() < 2 || probs.shape().back() != vocab_)
      throw DimensionError(scope_.prefix() + ": soft input " + shape_str(probs.shape()) +
                           " does not end in vocab size " + std::to_string(vocab_));
    return matmul(probs, table());
  }

 private:
  ParamScope<T> scope_;
  std::size_t vocab_, dim_;
};

}  // namespace seqforge
