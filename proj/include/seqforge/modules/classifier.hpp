#pragma once

#include <memory>

#include "seqforge/modules/embedder.hpp"
#include "seqforge/modules/encoders.hpp"

namespace seqforge {

/// Sequence classifier: embedding -> RNN -> sigmoid of a linear readout of
/// the output at each sequence's last step. Accepts hard ids or per-step
/// distributions over the vocabulary (expected embedding).
template <typename T>
class RNNClassifier {
 public:
  static ConfigNode default_hparams(const ConfigNode& cell_defaults) {
    return ConfigNode::map({{"embed_dim", 32},
                            {"cell", ConfigNode::map({{"type", "LSTMCell"}, {"hparams", cell_defaults}})}});
  }

  /// The cell must take embed_dim inputs.
  RNNClassifier(std::size_t embed_dim, std::size_t vocab, std::unique_ptr<RNNCell<T>> cell, ParamScope<T> scope)
      : embedder_(ConfigNode::map({{"dim", static_cast<std::int64_t>(embed_dim)}}), vocab, scope.child("embedder")),
        cell_(std::move(cell)),
        readout_(scope.child("readout"), cell_->output_dim(), 1) {
    if (cell_->input_dim() != embed_dim)
      throw AssemblyError(scope.prefix() + ": cell input width " + std::to_string(cell_->input_dim()) +
                          " != embed_dim " + std::to_string(embed_dim));
  }

  std::size_t vocab_size() const { return embedder_.vocab_size(); }

  /// Pre-sigmoid scores [batch].
  Tensor<T> logits(const PaddedIds& ids) { return score(embedder_.embed(ids), ids.lengths); }
  Tensor<T> logits_soft(const Tensor<T>& probs, const std::vector<std::size_t>& lengths) {
    return score(embedder_.embed_soft(probs), lengths);
  }

  /// Probability of "real" per example, [batch].
  Tensor<T> probs(const PaddedIds& ids) { return sigmoid(logits(ids)); }
  Tensor<T> probs_soft(const Tensor<T>& probs, const std::vector<std::size_t>& lengths) {
    return sigmoid(logits_soft(probs, lengths));
  }

 private:
  Tensor<T> score(const Tensor<T>& emb, const std::vector<std::size_t>& lengths) {
    for (auto len : lengths)
      if (len == 0) throw ContractError("classifier: empty sequence");
    const auto run = unroll(*cell_, emb, lengths);
    return reshape(readout_(run.final_output), {emb.dim(0)});
  }

  WordEmbedder<T> embedder_;
  std::unique_ptr<RNNCell<T>> cell_;
  Dense<T> readout_;
};

}  // namespace seqforge
