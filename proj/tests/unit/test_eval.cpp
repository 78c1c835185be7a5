#include <gtest/gtest.h>

#include <cmath>

#include "seqforge/config/parser.hpp"
#include "seqforge/eval/evaluate.hpp"
#include "seqforge/experiments/copy_task.hpp"

using namespace seqforge;

namespace {

using Seq = std::vector<std::int32_t>;

// Straightforward BLEU: n-grams as vectors, counted with linear scans.
double bleu_oracle(const std::vector<Seq>& hyps, const std::vector<Seq>& refs, std::size_t order) {
  std::vector<double> match(order, 0), total(order, 0);
  double hl = 0, rl = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    hl += hyps[i].size();
    rl += refs[i].size();
    for (std::size_t n = 1; n <= order; ++n) {
      const auto grams = [n](const Seq& s) {
        std::vector<Seq> g;
        for (std::size_t k = 0; k + n <= s.size(); ++k) g.emplace_back(s.begin() + k, s.begin() + k + n);
        return g;
      };
      const auto hg = grams(hyps[i]), rg = grams(refs[i]);
      std::vector<bool> seen(hg.size(), false);
      for (std::size_t a = 0; a < hg.size(); ++a) {
        total[n - 1] += 1;
        if (seen[a]) continue;
        double ch = 0, cr = 0;
        for (std::size_t b = a; b < hg.size(); ++b)
          if (hg[b] == hg[a]) {
            ch += 1;
            seen[b] = true;
          }
        for (const auto& r : rg) cr += r == hg[a];
        match[n - 1] += std::min(ch, cr);
      }
    }
  }
  if (hl == 0) return 0;
  double s = 0;
  for (std::size_t n = 0; n < order; ++n) {
    if (match[n] == 0) return 0;
    s += std::log(match[n] / total[n]);
  }
  const double bp = hl < rl ? std::exp(1 - rl / hl) : 1.0;
  return bp * std::exp(s / order);
}

/// Model whose next-token distribution is a fixed function of position.
class FixedModel : public SequenceModel<double> {
 public:
  using Fn = std::function<double(std::size_t b, std::size_t t, std::size_t v, const Batch&)>;
  FixedModel(std::size_t vocab, Fn fn) : vocab_(vocab), fn_(std::move(fn)) {}

  ParameterStore<double>& parameters() override { return store_; }
  const ParameterStore<double>& parameters() const override { return store_; }
  std::size_t vocab_size() const override { return vocab_; }
  std::vector<std::string> generator_parameters() const override { return {}; }

  TeacherForced<double> teacher_force(const Batch& batch, Rng*) override {
    const auto B = batch.size(), T = batch.target.max_len;
    std::vector<double> v(B * T * vocab_);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < vocab_; ++k) v[(b * T + t) * vocab_ + k] = fn_(batch.indices[b], t, k, batch);
    return {Tensor<double>({B, T, vocab_}, v), std::nullopt, std::nullopt};
  }
  DecoderOutput<double> generate(const Batch&, const DecodingStrategy&, std::size_t) override {
    throw ContractError("FixedModel: generate unsupported");
  }

 private:
  std::size_t vocab_;
  Fn fn_;
  ParameterStore<double> store_{0};
};

SequenceDataset random_dataset(Rng& rng, std::size_t n, std::size_t vocab, std::size_t max_len) {
  SequenceDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    TokenIds s;
    const auto len = 1 + rng.below(max_len);
    for (std::size_t t = 0; t < len; ++t) s.push_back(static_cast<std::int32_t>(Vocabulary::kReserved + rng.below(vocab - 4)));
    s.push_back(Vocabulary::kEos);
    ds.targets.push_back(s);
  }
  return ds;
}

}  // namespace

TEST(Bleu, IdenticalIsOne) {
  const std::vector<Seq> h{{5, 6, 7, 8, 9}, {4, 5, 6, 7}};
  EXPECT_DOUBLE_EQ(bleu(h, h), 1.0);
}

TEST(Bleu, RepeatedUnigramClipped) {
  // "the the the the" vs "the cat": clipped unigram precision 1/4.
  EXPECT_NEAR(bleu({{4, 4, 4, 4}}, {{4, 5}}, {1, false}), 0.25, 1e-12);
}

TEST(Bleu, DisjointIsZero) { EXPECT_EQ(bleu({{4, 5, 6, 7}}, {{8, 9, 10, 11}}), 0.0); }

TEST(Bleu, BrevityPenalty) {
  EXPECT_NEAR(bleu({{4, 5}}, {{4, 5, 6, 7}}, {1, false}), std::exp(-1.0), 1e-12);
}

TEST(Bleu, InvariantToCorpusOrderAndMatchesOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Seq> h, r;
    for (int i = 0; i < 6; ++i) {
      Seq a, b;
      for (std::size_t t = 0, n = 3 + rng.below(8); t < n; ++t) a.push_back(4 + static_cast<std::int32_t>(rng.below(4)));
      for (std::size_t t = 0, n = 3 + rng.below(8); t < n; ++t) b.push_back(4 + static_cast<std::int32_t>(rng.below(4)));
      h.push_back(a);
      r.push_back(b);
    }
    const double v = bleu(h, r, {2, false});
    EXPECT_NEAR(v, bleu_oracle(h, r, 2), 1e-12);
    std::vector<std::size_t> perm{5, 2, 0, 4, 1, 3};
    std::vector<Seq> h2, r2;
    for (auto i : perm) {
      h2.push_back(h[i]);
      r2.push_back(r[i]);
    }
    EXPECT_NEAR(bleu(h2, r2, {2, false}), v, 1e-12);
  }
}

TEST(Bleu, SmoothedSentenceScoreIsPositiveOnPartialMatch) {
  const double s = sentence_bleu({4, 5, 9}, {4, 5, 6, 7});
  EXPECT_GT(s, 0.0);
  EXPECT_LT(s, 1.0);
  EXPECT_DOUBLE_EQ(sentence_bleu({4, 5, 6, 7}, {4, 5, 6, 7}), 1.0);
}

TEST(Bleu, ContractErrors) {
  EXPECT_THROW(bleu({}, {}), ContractError);
  EXPECT_THROW(bleu({{4}}, {{4}, {5}}), ContractError);
}

TEST(Metrics, StripEosAndTokenAccuracy) {
  EXPECT_EQ(strip_eos(Seq{4, 5, Vocabulary::kEos, 6}), (Seq{4, 5}));
  TokenAccuracy acc;
  acc.add(Seq{4, 5}, Seq{4, 6, Vocabulary::kEos});
  EXPECT_EQ(acc.correct, 1u);
  EXPECT_EQ(acc.total, 3u);
  EXPECT_THROW(TokenAccuracy{}.report(), ContractError);
}

TEST(Perplexity, UniformModelGivesVocabularySize) {
  Rng rng(1);
  const auto ds = random_dataset(rng, 17, 10, 6);
  FixedModel m(10, [](auto, auto, auto, const Batch&) { return 0.0; });
  EXPECT_NEAR(perplexity(m, ds).value, 10.0, 1e-9);
}

TEST(Perplexity, CertainModelGivesOne) {
  Rng rng(2);
  const auto ds = random_dataset(rng, 9, 10, 5);
  FixedModel m(10, [&](std::size_t b, std::size_t t, std::size_t v, const Batch&) {
    const auto& s = ds.targets[b];
    return t < s.size() && static_cast<std::size_t>(s[t]) == v ? 60.0 : -60.0;
  });
  EXPECT_NEAR(perplexity(m, ds).value, 1.0, 1e-9);
}

TEST(Perplexity, MatchesDirectSummationAndIgnoresBatching) {
  Rng rng(3);
  const auto ds = random_dataset(rng, 23, 9, 7);
  const auto logit = [](std::size_t b, std::size_t t, std::size_t v) { return std::sin(0.7 * b + 1.3 * t + 2.1 * v); };
  FixedModel m(9, [&](std::size_t b, std::size_t t, std::size_t v, const Batch&) { return logit(b, t, v); });
  double nll = 0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < ds.size(); ++b)
    for (std::size_t t = 0; t < ds.targets[b].size(); ++t) {
      double z = 0;
      for (std::size_t v = 0; v < 9; ++v) z += std::exp(logit(b, t, v));
      nll -= logit(b, t, static_cast<std::size_t>(ds.targets[b][t])) - std::log(z);
      ++n;
    }
  const double expected = std::exp(nll / n);
  for (std::size_t bs : {1, 4, 7, 64}) EXPECT_NEAR(perplexity(m, ds, bs).value, expected, 1e-9 * expected) << bs;
}

TEST(Perplexity, EmptyDatasetRejected) {
  FixedModel m(6, [](auto, auto, auto, const Batch&) { return 0.0; });
  EXPECT_THROW(perplexity(m, SequenceDataset{}), ContractError);
}

TEST(UnigramPerplexity, HandExample) {
  // Vocab 6 (support: UNK, EOS, 4, 5 -> after removing PAD/BOS, 4 symbols).
  SequenceDataset train, test;
  train.targets = {{4, 4, Vocabulary::kEos}};
  test.targets = {{4, Vocabulary::kEos}};
  // counts: pad 0, bos 0, eos 2, unk 1, 4 -> 3, 5 -> 1; total 7
  const double expected = std::exp(-(std::log(3.0 / 7) + std::log(2.0 / 7)) / 2);
  EXPECT_NEAR(unigram_perplexity(train, test, 6).value, expected, 1e-12);
}

TEST(DiscriminatorAccuracy, HeldOutOnUntrainedModelNearChance) {
  const Vocabulary vocab(copy_task_symbols(8), parse_tokenizer("whitespace"));
  SequenceDataset ds;
  for (const auto& l : runs_corpus_lines(CopyTaskSpec{}, 40, 1)) ds.targets.push_back(vocab.encode(l));
  auto inst = instantiate_template<float>(parse_config("template: seqgan_lm\nhidden_size: 16\n"), {0, 12}, 5);
  const auto r = heldout_discriminator_accuracy(*inst.model, ds, DecodingStrategy::sample(3), 10);
  EXPECT_EQ(r.count, 80u);
  EXPECT_GE(r.value, 0.0);
  EXPECT_LE(r.value, 1.0);
  auto lm = instantiate_template<float>(parse_config("template: lm\nhidden_size: 16\n"), {0, 12}, 5);
  EXPECT_THROW(heldout_discriminator_accuracy(*lm.model, ds, DecodingStrategy::sample(3), 10), ContractError);
}
