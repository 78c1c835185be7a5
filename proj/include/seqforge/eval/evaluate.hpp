#pragma once

#include <numeric>

#include "seqforge/eval/metrics.hpp"
#include "seqforge/learning/losses.hpp"
#include "seqforge/learning/trainer.hpp"
#include "seqforge/models/templates.hpp"

namespace seqforge {

namespace detail {
template <typename F>
void for_each_batch(const SequenceDataset& ds, std::size_t batch_size, F&& f) {
  if (ds.size() == 0) throw ContractError("evaluation: empty dataset");
  if (batch_size == 0) throw ContractError("evaluation: batch_size must be >= 1");
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t at = 0; at < idx.size(); at += batch_size) {
    const auto end = std::min(idx.size(), at + batch_size);
    f(make_batch(ds, std::span<const std::size_t>(idx.data() + at, end - at)));
  }
}
}  // namespace detail

/// exp(total teacher-forced NLL / valid tokens), EOS counted. Variational
/// models are scored at the posterior mean.
template <typename T>
MetricReport perplexity(SequenceModel<T>& model, const SequenceDataset& ds, std::size_t batch_size = 64) {
  auto pause = Tape<T>::pause();
  double nll = 0;
  std::size_t tokens = 0;
  detail::for_each_batch(ds, batch_size, [&](const Batch& b) {
    const auto tf = model.teacher_force(b, nullptr);
    const auto lp = sequence_log_probs(tf.logits, b.target);
    for (std::size_t i = 0; i < b.size(); ++i) {
      nll -= static_cast<double>(lp[i]);
      tokens += b.target.lengths[i];
    }
  });
  return perplexity_from_nll(nll, tokens);
}

/// Free-running decode of every example with `strategy`; outputs are
/// truncated at EOS (exclusive).
template <typename T>
std::vector<std::vector<std::int32_t>> generate_all(SequenceModel<T>& model, const SequenceDataset& ds,
                                                    const DecodingStrategy& strategy, std::size_t max_len,
                                                    std::size_t batch_size = 64) {
  auto pause = Tape<T>::pause();
  std::vector<std::vector<std::int32_t>> out;
  std::size_t batch_index = 0;
  detail::for_each_batch(ds, batch_size, [&](const Batch& b) {
    DecodingStrategy s = strategy;
    s.seed = derive_seed(strategy.seed, batch_index++);
    const auto r = model.generate(b, s, max_len);
    const auto ids = r.padded();
    for (std::size_t i = 0; i < b.size(); ++i) out.push_back(strip_eos(ids.row(i)));
  });
  return out;
}

/// Greedy free-run token accuracy against the targets (EOS included, so an
/// early or missing stop counts as an error).
template <typename T>
MetricReport token_accuracy(SequenceModel<T>& model, const SequenceDataset& ds, std::size_t max_len,
                            std::size_t batch_size = 64) {
  auto pause = Tape<T>::pause();
  TokenAccuracy acc;
  detail::for_each_batch(ds, batch_size, [&](const Batch& b) {
    const auto r = model.generate(b, DecodingStrategy::greedy(), max_len);
    const auto ids = r.padded();
    for (std::size_t i = 0; i < b.size(); ++i) acc.add(ids.row(i).first(ids.lengths[i]), ds.targets[b.indices[i]]);
  });
  return acc.report();
}

template <typename T>
MetricReport corpus_bleu(SequenceModel<T>& model, const SequenceDataset& ds, const DecodingStrategy& strategy,
                         std::size_t max_len, std::size_t max_order = 4) {
  const auto hyps = generate_all(model, ds, strategy, max_len);
  std::vector<std::vector<std::int32_t>> refs;
  for (const auto& t : ds.targets) refs.push_back(strip_eos(t));
  return {"bleu", bleu(hyps, refs, {max_order, false}), hyps.size()};
}

/// Accuracy of the model's discriminator on held-out real sequences vs an
/// equal number of fresh samples drawn with `strategy`.
template <typename T>
MetricReport heldout_discriminator_accuracy(SequenceModel<T>& model, const SequenceDataset& real,
                                            const DecodingStrategy& strategy, std::size_t max_len,
                                            std::size_t batch_size = 64) {
  if (!model.has_discriminator()) throw ContractError("discriminator accuracy: model has no discriminator");
  auto pause = Tape<T>::pause();
  std::vector<T> real_p, fake_p;
  std::size_t batch_index = 0;
  detail::for_each_batch(real, batch_size, [&](const Batch& b) {
    DecodingStrategy s = strategy;
    s.seed = derive_seed(strategy.seed, batch_index++);
    const auto fake = model.generate(b, s, max_len).padded();
    const auto pr = model.discriminate(b.target), pf = model.discriminate(fake);
    real_p.insert(real_p.end(), pr.data().begin(), pr.data().end());
    fake_p.insert(fake_p.end(), pf.data().begin(), pf.data().end());
  });
  return {"d_accuracy", discriminator_accuracy<T>(real_p, fake_p), real_p.size() + fake_p.size()};
}

/// Checkpoint selection metric: perplexity for LM-family templates, greedy
/// token accuracy for seq2seq.
template <typename T>
ValidationMetric<T> selection_metric(const std::string& template_name, std::size_t max_len) {
  if (is_lm_family(template_name))
    return {"perplexity", false, [](SequenceModel<T>& m, const SequenceDataset& ds) { return perplexity(m, ds); }};
  return {"token_accuracy", true,
          [max_len](SequenceModel<T>& m, const SequenceDataset& ds) { return token_accuracy(m, ds, max_len); }};
}

}  // namespace seqforge
