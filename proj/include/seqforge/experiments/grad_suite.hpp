#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "seqforge/learning/losses.hpp"
#include "seqforge/models/templates.hpp"
#include "seqforge/tensor/grad_check.hpp"

namespace seqforge {

struct GradSuiteResult {
  std::string loss;
  GradCheckReport report;
};

struct GradSuiteOptions {
  double eps = 1e-6;
  std::size_t max_entries_per_slot = 6;
  std::uint64_t seed = 0;
};

namespace detail {
inline std::vector<GradCheckSlot<double>> slots_for(AssembledModel<double>& m, const std::vector<std::string>& names) {
  std::vector<GradCheckSlot<double>> out;
  for (auto& e : m.parameters().entries())
    if (std::find(names.begin(), names.end(), e.name) != names.end()) out.push_back({e.name, &e.value});
  return out;
}
}  // namespace detail

/// Finite-difference checks of every loss the template trains with, on a
/// 64-bit copy of the model. Stochastic draws (latent noise, Gumbel noise,
/// sampled sequences) are frozen so each loss is a deterministic function
/// of the parameters.
inline std::vector<GradSuiteResult> run_grad_suite(const ConfigNode& model_cfg, VocabSizes vocab,
                                                   std::uint64_t model_seed, const Batch& batch,
                                                   const GradSuiteOptions& opt = {},
                                                   const ModuleRegistry<double>& reg = builtin_registry<double>()) {
  auto inst = instantiate_template<double>(model_cfg, vocab, model_seed, reg);
  auto& m = *inst.model;
  const GradCheckOptions gc{opt.eps, opt.max_entries_per_slot, opt.seed};
  const auto gen = detail::slots_for(m, m.generator_parameters());
  std::vector<GradSuiteResult> out;

  if (m.variational()) {
    out.push_back({"vae_elbo", gradient_check<double>(
                                   [&] {
                                     Rng rng(derive_seed(opt.seed, 1));
                                     const auto tf = m.teacher_force(batch, &rng);
                                     const auto ce = sequence_cross_entropy(tf.logits, batch.target);
                                     return vae_elbo_loss(ce, *tf.mu, *tf.logvar, 1.0).total;
                                   },
                                   gen, gc)});
  } else {
    out.push_back({"mle", gradient_check<double>(
                              [&] { return sequence_cross_entropy(m.teacher_force(batch, nullptr).logits, batch.target); },
                              gen, gc)});
  }

  if (m.has_discriminator()) {
    const auto disc = detail::slots_for(m, m.discriminator_parameters());
    const std::size_t max_len = batch.target.max_len + 2;
    // Frozen hard samples with constant rewards for the policy-gradient path.
    const auto sample = DecodingStrategy::sample(derive_seed(opt.seed, 2));
    PaddedIds fake;
    std::vector<double> rewards;
    {
      auto pause = Tape<double>::pause();
      fake = m.generate(batch, sample, max_len).padded();
      const auto p = m.discriminate(fake);
      for (std::size_t b = 0; b < fake.batch; ++b) rewards.push_back(p[b]);
    }
    Batch fake_batch;
    fake_batch.target = fake;
    fake_batch.indices = batch.indices;
    double mean = 0;
    for (double r : rewards) mean += r / static_cast<double>(rewards.size());

    out.push_back({"discriminator", gradient_check<double>(
                                        [&] { return discriminator_loss(m.discriminate(batch.target), m.discriminate(fake)); },
                                        disc, gc)});
    out.push_back({"generator_policy_gradient",
                   gradient_check<double>(
                       [&] {
                         const auto tf = m.teacher_force(fake_batch, nullptr);
                         return policy_gradient_loss(token_log_probs(tf.logits, fake), fake.lengths, rewards, mean - 0.1);
                       },
                       gen, gc)});
    const auto gumbel = DecodingStrategy::gumbel_softmax(1.0, derive_seed(opt.seed, 3));
    out.push_back({"generator_gumbel", gradient_check<double>(
                                           [&] {
                                             const auto g = m.generate(batch, gumbel, max_len);
                                             return generator_loss(m.discriminate_soft(*g.soft_samples, g.lengths));
                                           },
                                           gen, gc)});
    out.push_back({"discriminator_soft", gradient_check<double>(
                                             [&] {
                                               DecoderOutput<double> g;
                                               {
                                                 auto pause = Tape<double>::pause();
                                                 g = m.generate(batch, gumbel, max_len);
                                               }
                                               return discriminator_loss(m.discriminate(batch.target),
                                                                         m.discriminate_soft(g.soft_samples->detached(), g.lengths));
                                             },
                                             disc, gc)});
  }
  return out;
}

/// The first two examples of `ds`, each cut to 6 tokens plus EOS: enough
/// to exercise padding while keeping finite differences cheap.
inline Batch grad_suite_batch(const SequenceDataset& ds) {
  if (ds.size() == 0) throw ContractError("grad suite: empty dataset");
  const auto cut = [](TokenIds ids) {
    if (ids.size() > 7) {
      ids.resize(6);
      ids.push_back(Vocabulary::kEos);
    }
    return ids;
  };
  SequenceDataset small;
  for (std::size_t i = 0; i < std::min<std::size_t>(2, ds.size()); ++i) {
    small.targets.push_back(cut(ds.targets[i]));
    if (ds.paired()) small.sources.push_back(cut(ds.sources[i]));
  }
  const std::vector<std::size_t> idx{0, 1};
  return make_batch(small, std::span<const std::size_t>(idx.data(), small.size()));
}

inline double max_relative_error(const std::vector<GradSuiteResult>& results) {
  double worst = 0;
  for (const auto& r : results) worst = std::max(worst, r.report.max_relative_error);
  return worst;
}

}  // namespace seqforge
