#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "seqforge/data/dataset.hpp"

namespace seqforge {

struct MetricReport {
  std::string name;
  double value = 0;
  std::size_t count = 0;  // tokens or sequences the value aggregates
};

namespace detail {
using Ngram = std::vector<std::int32_t>;

inline std::map<Ngram, std::size_t> ngram_counts(std::span<const std::int32_t> seq, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[Ngram(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}
}  // namespace detail

struct BleuOptions {
  std::size_t max_order = 4;
  /// Adds 1 to every clipped count and total (for sentence-level rewards).
  bool smooth = false;
};

/// Corpus BLEU over tokenized sequences: geometric mean of clipped n-gram
/// precisions times exp(min(0, 1 - ref_len / hyp_len)).
inline double bleu(const std::vector<std::vector<std::int32_t>>& hypotheses,
                   const std::vector<std::vector<std::int32_t>>& references, BleuOptions opt = {}) {
  if (hypotheses.empty()) throw ContractError("bleu: empty hypothesis list");
  if (hypotheses.size() != references.size())
    throw ContractError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                        std::to_string(references.size()) + " references");
  if (opt.max_order == 0) throw ContractError("bleu: max_order must be >= 1");
  std::vector<double> matched(opt.max_order, 0.0), total(opt.max_order, 0.0);
  double hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += static_cast<double>(hypotheses[i].size());
    ref_len += static_cast<double>(references[i].size());
    for (std::size_t n = 1; n <= opt.max_order; ++n) {
      const auto h = detail::ngram_counts(hypotheses[i], n);
      const auto r = detail::ngram_counts(references[i], n);
      for (const auto& [gram, c] : h) {
        total[n - 1] += static_cast<double>(c);
        if (auto it = r.find(gram); it != r.end()) matched[n - 1] += static_cast<double>(std::min(c, it->second));
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_p = 0;
  for (std::size_t n = 0; n < opt.max_order; ++n) {
    const double m = matched[n] + (opt.smooth ? 1.0 : 0.0), t = total[n] + (opt.smooth ? 1.0 : 0.0);
    if (m == 0 || t == 0) return 0.0;
    log_p += std::log(m / t);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - ref_len / hyp_len));
  return bp * std::exp(log_p / static_cast<double>(opt.max_order));
}

inline double sentence_bleu(const std::vector<std::int32_t>& hypothesis, const std::vector<std::int32_t>& reference,
                            std::size_t max_order = 4) {
  return bleu({hypothesis}, {reference}, {max_order, true});
}

/// Drops the trailing EOS (and anything after it) for metric purposes.
inline std::vector<std::int32_t> strip_eos(std::span<const std::int32_t> ids) {
  std::vector<std::int32_t> out;
  for (auto id : ids) {
    if (id == Vocabulary::kEos || id == Vocabulary::kPad) break;
    out.push_back(id);
  }
  return out;
}

/// exp(total NLL / tokens).
inline MetricReport perplexity_from_nll(double total_nll, std::size_t tokens) {
  if (tokens == 0) throw ContractError("perplexity: no tokens");
  return {"perplexity", std::exp(total_nll / static_cast<double>(tokens)), tokens};
}

/// Fraction of reference positions (EOS included) where the hypothesis
/// holds the same id; missing positions count as errors.
struct TokenAccuracy {
  std::size_t correct = 0, total = 0;

  void add(std::span<const std::int32_t> hypothesis, std::span<const std::int32_t> reference) {
    for (std::size_t t = 0; t < reference.size(); ++t) {
      ++total;
      correct += t < hypothesis.size() && hypothesis[t] == reference[t];
    }
  }
  MetricReport report() const {
    if (total == 0) throw ContractError("token_accuracy: no tokens");
    return {"token_accuracy", static_cast<double>(correct) / static_cast<double>(total), total};
  }
};

/// Add-one smoothed unigram model fitted on `train` targets, evaluated on
/// `test` targets (EOS counted). PAD and BOS are never predicted, so the
/// support is vocab_size - 2 symbols.
inline MetricReport unigram_perplexity(const SequenceDataset& train, const SequenceDataset& test,
                                       std::size_t vocab_size) {
  if (vocab_size <= 2) throw ContractError("unigram_perplexity: vocabulary too small");
  std::vector<double> counts(vocab_size, 1.0);
  counts[static_cast<std::size_t>(Vocabulary::kPad)] = 0;
  counts[static_cast<std::size_t>(Vocabulary::kBos)] = 0;
  double total = static_cast<double>(vocab_size - 2);
  for (const auto& seq : train.targets)
    for (auto id : seq) {
      counts.at(static_cast<std::size_t>(id)) += 1;
      total += 1;
    }
  double nll = 0;
  std::size_t tokens = 0;
  for (const auto& seq : test.targets)
    for (auto id : seq) {
      const double p = counts.at(static_cast<std::size_t>(id)) / total;
      if (p <= 0) throw ContractError("unigram_perplexity: test token with zero probability");
      nll -= std::log(p);
      ++tokens;
    }
  auto r = perplexity_from_nll(nll, tokens);
  r.name = "unigram_perplexity";
  return r;
}

}  // namespace seqforge
