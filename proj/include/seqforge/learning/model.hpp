#pragma once

#include <optional>
#include <string>
#include <vector>

#include "seqforge/data/dataset.hpp"
#include "seqforge/modules/decoder.hpp"

namespace seqforge {

template <typename T>
struct TeacherForced {
  Tensor<T> logits;                     // [batch x steps x vocab], aligned to batch.target
  std::optional<Tensor<T>> mu, logvar;  // variational models only
};

/// What the learning layer needs from a model. Training code only talks to
/// this interface, so any assembled architecture can be trained unchanged.
template <typename T>
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;

  virtual ParameterStore<T>& parameters() = 0;
  virtual const ParameterStore<T>& parameters() const = 0;
  virtual std::size_t vocab_size() const = 0;

  /// Parameters updated by generator losses.
  virtual std::vector<std::string> generator_parameters() const = 0;
  /// Parameters updated by discriminator losses (empty without one).
  virtual std::vector<std::string> discriminator_parameters() const { return {}; }

  virtual bool variational() const { return false; }
  virtual bool conditional() const { return false; }
  virtual bool has_discriminator() const { return false; }

  /// Teacher-forced logits for batch.target. `rng` supplies the latent noise
  /// of variational models (posterior mean when null).
  virtual TeacherForced<T> teacher_force(const Batch& batch, Rng* rng) = 0;

  /// Free-running decode of batch.size() sequences (conditioned on
  /// batch.source for conditional models).
  virtual DecoderOutput<T> generate(const Batch& batch, const DecodingStrategy& strategy, std::size_t max_len) = 0;

  /// Discriminator probability of "real", [batch].
  virtual Tensor<T> discriminate(const PaddedIds&) {
    throw ContractError("model has no discriminator");
  }
  virtual Tensor<T> discriminate_soft(const Tensor<T>&, const std::vector<std::size_t>&) {
    throw ContractError("model has no discriminator");
  }
};

}  // namespace seqforge
