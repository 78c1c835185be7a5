#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "seqforge/data/dataset.hpp"
#include "seqforge/tensor/ops.hpp"

namespace seqforge {

namespace detail {
inline void check_targets(const Shape& logits, const PaddedIds& targets, const char* who) {
  if (logits.size() != 3 || logits[0] != targets.batch || logits[1] != targets.max_len)
    throw DimensionError(std::string(who) + ": logits " + shape_str(logits) + " vs targets [" +
                         std::to_string(targets.batch) + ", " + std::to_string(targets.max_len) + "]");
  for (auto len : targets.lengths)
    if (len > targets.max_len)
      throw ContractError(std::string(who) + ": length " + std::to_string(len) + " exceeds time extent " +
                          std::to_string(targets.max_len));
}

/// [batch x steps] 0/1 mask of positions below each length.
template <typename T>
Tensor<T> length_mask(const std::vector<std::size_t>& lengths, std::size_t steps) {
  std::vector<T> m(lengths.size() * steps, T(0));
  for (std::size_t b = 0; b < lengths.size(); ++b)
    for (std::size_t t = 0; t < std::min(lengths[b], steps); ++t) m[b * steps + t] = T(1);
  return Tensor<T>({lengths.size(), steps}, std::move(m));
}

/// PAD ids are replaced by 0 so pick() stays in range; they are masked anyway.
inline std::vector<std::int32_t> safe_ids(const PaddedIds& targets) {
  std::vector<std::int32_t> ids = targets.ids;
  for (std::size_t b = 0; b < targets.batch; ++b)
    for (std::size_t t = targets.lengths[b]; t < targets.max_len; ++t) ids[b * targets.max_len + t] = 0;
  return ids;
}
}  // namespace detail

/// log p(target_t) per position, [batch x steps]; zero past each length.
template <typename T>
Tensor<T> token_log_probs(const Tensor<T>& logits, const PaddedIds& targets) {
  detail::check_targets(logits.shape(), targets, "token_log_probs");
  const Tensor<T> lp = pick(log_softmax(logits, -1), detail::safe_ids(targets));
  return mul(lp, detail::length_mask<T>(targets.lengths, targets.max_len));
}

/// Per-example sum of target log-probabilities, [batch].
template <typename T>
Tensor<T> sequence_log_probs(const Tensor<T>& logits, const PaddedIds& targets) {
  return reduce_sum(token_log_probs(logits, targets), 1);
}

/// Mean over valid tokens of -log softmax(logits)[target].
template <typename T>
Tensor<T> sequence_cross_entropy(const Tensor<T>& logits, const PaddedIds& targets) {
  const Tensor<T> lp = token_log_probs(logits, targets);
  std::size_t count = 0;
  for (auto len : targets.lengths) count += len;
  if (count == 0) throw ContractError("sequence_cross_entropy: no valid tokens");
  return scale(reduce_sum(lp), static_cast<T>(-1.0 / static_cast<double>(count)));
}

/// KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims, mean over batch.
template <typename T>
Tensor<T> gaussian_kl(const Tensor<T>& mu, const Tensor<T>& logvar) {
  if (mu.shape() != logvar.shape() || mu.rank() != 2)
    throw DimensionError("gaussian_kl: mu " + shape_str(mu.shape()) + " vs logvar " + shape_str(logvar.shape()));
  const Tensor<T> terms = sub(add(square(mu), exp(logvar)), add_scalar(logvar, T(1)));
  return scale(reduce_sum(terms), static_cast<T>(0.5 / static_cast<double>(mu.dim(0))));
}

template <typename T>
struct ElboLoss {
  Tensor<T> total, kl;
};

template <typename T>
ElboLoss<T> vae_elbo_loss(const Tensor<T>& reconstruction, const Tensor<T>& mu, const Tensor<T>& logvar,
                          double kl_weight) {
  if (!(kl_weight >= 0 && kl_weight <= 1))
    throw ContractError("vae_elbo_loss: kl_weight must be in [0, 1], got " + std::to_string(kl_weight));
  Tensor<T> kl = gaussian_kl(mu, logvar);
  if (kl_weight == 0) return {reconstruction, kl};
  return {add(reconstruction, scale(kl, static_cast<T>(kl_weight))), kl};
}

/// Linear warm-up from 0 to 1 over `anneal_steps` steps (1 throughout when 0).
inline double kl_anneal_weight(std::size_t step, std::size_t anneal_steps) {
  if (anneal_steps == 0) return 1.0;
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(anneal_steps));
}

/// Exponential moving average of the batch-mean reward. The first batch
/// initializes it, so the first update is already centered.
class EmaBaseline {
 public:
  explicit EmaBaseline(double decay = 0.99) : decay_(decay) {
    if (!(decay >= 0 && decay <= 1)) throw ContractError("baseline decay must be in [0, 1]");
  }

  /// Value to subtract for this batch; then folds the batch mean in.
  double update(const std::vector<double>& rewards) {
    if (rewards.empty()) return value_;
    double mean = 0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());
    if (!initialized_) {
      value_ = mean;
      initialized_ = true;
    }
    const double used = value_;
    value_ = decay_ * value_ + (1 - decay_) * mean;
    return used;
  }

  double value() const { return value_; }
  bool initialized() const { return initialized_; }
  void reset(double value, bool initialized) {
    value_ = value;
    initialized_ = initialized;
  }

 private:
  double decay_;
  double value_ = 0;
  bool initialized_ = false;
};

/// REINFORCE: mean over batch of -(r - baseline) * sum of valid step
/// log-probabilities. Rewards are constants.
template <typename T>
Tensor<T> policy_gradient_loss(const Tensor<T>& step_log_probs, const std::vector<std::size_t>& lengths,
                               const std::vector<double>& rewards, double baseline) {
  if (step_log_probs.rank() != 2 || step_log_probs.dim(0) != rewards.size() || lengths.size() != rewards.size())
    throw DimensionError("policy_gradient_loss: log-probs " + shape_str(step_log_probs.shape()) + " for " +
                         std::to_string(rewards.size()) + " rewards");
  const std::size_t batch = rewards.size(), steps = step_log_probs.dim(1);
  std::vector<T> adv(batch * steps, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    if (!std::isfinite(rewards[b]))
      throw TrainingError("policy_gradient_loss: non-finite reward for example " + std::to_string(b));
    if (lengths[b] > steps) throw ContractError("policy_gradient_loss: length exceeds time extent");
    for (std::size_t t = 0; t < lengths[b]; ++t)
      adv[b * steps + t] = static_cast<T>(-(rewards[b] - baseline) / static_cast<double>(batch));
  }
  return reduce_sum(mul(step_log_probs, Tensor<T>({batch, steps}, std::move(adv))));
}

inline constexpr double kProbClamp = 1e-7;

/// -mean(log D(real) + log(1 - D(fake))); probabilities clamped to
/// [1e-7, 1 - 1e-7].
template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& real_probs, const Tensor<T>& fake_probs) {
  const T lo = static_cast<T>(kProbClamp), hi = static_cast<T>(1 - kProbClamp);
  const Tensor<T> real = reduce_mean(log(clamp(real_probs, lo, hi)));
  const Tensor<T> fake = reduce_mean(log(clamp(add_scalar(neg(fake_probs), T(1)), lo, hi)));
  return neg(add(real, fake));
}

/// -mean(log D(fake)).
template <typename T>
Tensor<T> generator_loss(const Tensor<T>& fake_probs) {
  return neg(reduce_mean(log(clamp(fake_probs, static_cast<T>(kProbClamp), static_cast<T>(1 - kProbClamp)))));
}

template <typename T>
struct AdversarialLosses {
  Tensor<T> d_loss, g_loss;
};

template <typename T>
AdversarialLosses<T> adversarial_losses(const Tensor<T>& real_probs, const Tensor<T>& fake_probs) {
  return {discriminator_loss(real_probs, fake_probs), generator_loss(fake_probs)};
}

/// Fraction of examples a discriminator classifies correctly at 0.5.
template <typename T>
double discriminator_accuracy(std::span<const T> real_probs, std::span<const T> fake_probs) {
  std::size_t ok = 0;
  for (T p : real_probs) ok += p > T(0.5);
  for (T p : fake_probs) ok += p < T(0.5);
  const std::size_t n = real_probs.size() + fake_probs.size();
  return n ? static_cast<double>(ok) / static_cast<double>(n) : 0.0;
}

}  // namespace seqforge
