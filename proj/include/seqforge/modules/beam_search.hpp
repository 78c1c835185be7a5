#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>
#include <vector>

#include "seqforge/modules/decoder.hpp"

namespace seqforge {

struct Hypothesis {
  std::vector<std::int32_t> ids;  // ends with EOS unless cut at max_len
  double log_prob = 0;
  double score = 0;  // log_prob / length penalty
};

/// GNMT length penalty ((5 + len) / 6)^alpha.
inline double length_penalty(std::size_t length, double alpha) {
  return alpha == 0 ? 1.0 : std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

/// Beam search for one example. Partial hypotheses are ranked by summed
/// log-probability; a hypothesis that emits EOS leaves the beam. Returns up
/// to beam_width finished hypotheses sorted by score (best first).
template <typename T>
std::vector<Hypothesis> beam_search_one(Decoder<T>& decoder, const DecoderState<T>& initial, const std::type_identity_t<Memory<T>>* memory,
                                        std::size_t beam_width, std::size_t max_len, double alpha = 0) {
  if (beam_width < 1) throw ContractError("beam_search: beam_width must be >= 1");
  if (max_len < 1) throw ContractError("beam_search: max_len must be >= 1");
  const std::size_t vocab = decoder.vocab_size();

  struct Live {
    std::vector<std::int32_t> ids;
    double log_prob;
  };
  std::vector<Live> live{{{}, 0.0}};
  DecoderState<T> state = initial;
  std::vector<Hypothesis> finished;

  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    const std::size_t n = live.size();
    std::vector<std::int32_t> last(n);
    for (std::size_t i = 0; i < n; ++i) last[i] = t == 0 ? Vocabulary::kBos : live[i].ids.back();
    std::optional<Memory<T>> mem;
    if (memory) {
      std::vector<std::size_t> rows(n, 0);
      mem = reorder_memory(*memory, rows);
    }
    auto [logits, next] = decoder.step(decoder.embedder().embed(last, {n}), state, mem ? &*mem : nullptr);
    const auto lv = logits.data();

    struct Cand {
      double log_prob;
      std::size_t parent;
      std::int32_t token;
    };
    std::vector<Cand> cands;
    cands.reserve(n * vocab);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = lv.subspan(i * vocab, vocab);
      double mx = -std::numeric_limits<double>::infinity();
      for (T v : row) mx = std::max(mx, static_cast<double>(v));
      double total = 0;
      for (T v : row) total += std::exp(static_cast<double>(v) - mx);
      const double lse = mx + std::log(total);
      for (std::size_t v = 0; v < vocab; ++v)
        cands.push_back({live[i].log_prob + static_cast<double>(row[v]) - lse, i, static_cast<std::int32_t>(v)});
    }
    const std::size_t keep = std::min(beam_width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Cand& a, const Cand& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Live> next_live;
    std::vector<std::size_t> parents;
    for (std::size_t c = 0; c < keep; ++c) {
      auto ids = live[cands[c].parent].ids;
      ids.push_back(cands[c].token);
      if (cands[c].token == Vocabulary::kEos || t + 1 == max_len) {
        const double score = cands[c].log_prob / length_penalty(ids.size(), alpha);
        finished.push_back({std::move(ids), cands[c].log_prob, score});
      } else {
        next_live.push_back({std::move(ids), cands[c].log_prob});
        parents.push_back(cands[c].parent);
      }
    }
    live = std::move(next_live);
    if (!live.empty()) state = reorder_state(next, parents);
  }
  std::stable_sort(finished.begin(), finished.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  if (finished.size() > beam_width) finished.resize(beam_width);
  return finished;
}

/// Beam search over a batch; returns the hypotheses of every example.
template <typename T>
std::vector<std::vector<Hypothesis>> beam_search(Decoder<T>& decoder, const DecoderState<T>& initial,
                                                 const std::type_identity_t<Memory<T>>* memory, std::size_t batch, std::size_t beam_width,
                                                 std::size_t max_len, double alpha = 0) {
  std::vector<std::vector<Hypothesis>> out;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::vector<std::size_t> row{b};
    const DecoderState<T> s = reorder_state(initial, row);
    std::optional<Memory<T>> m;
    if (memory) m = reorder_memory(*memory, row);
    out.push_back(beam_search_one(decoder, s, m ? &*m : nullptr, beam_width, max_len, alpha));
  }
  return out;
}

}  // namespace seqforge
