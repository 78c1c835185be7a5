#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>

#include "seqforge/config/parser.hpp"
#include "seqforge/modules/beam_search.hpp"
#include "seqforge/modules/registry.hpp"
#include "seqforge/modules/rnn_decoder.hpp"
#include "seqforge/modules/transformer_decoder.hpp"
#include "seqforge/tensor/grad_check.hpp"

using namespace seqforge;

namespace {

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape shape, double lo = -1, double hi = 1) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(v));
}

std::vector<double> softmax_ref(std::span<const float> row) {
  double mx = -1e300;
  for (float v : row) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(row.size());
  double z = 0;
  for (std::size_t i = 0; i < row.size(); ++i) z += p[i] = std::exp(row[i] - mx);
  for (auto& x : p) x /= z;
  return p;
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

PaddedIds make_ids(const std::vector<std::vector<std::int32_t>>& rows) {
  std::size_t len = 0;
  for (const auto& r : rows) len = std::max(len, r.size());
  PaddedIds p;
  p.batch = rows.size();
  p.max_len = len;
  p.ids.assign(p.batch * len, Vocabulary::kPad);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    for (std::size_t t = 0; t < rows[b].size(); ++t) p.ids[b * len + t] = rows[b][t];
    p.lengths.push_back(rows[b].size());
  }
  return p;
}

ConfigNode lstm_hp(std::int64_t units, std::int64_t layers = 1) {
  auto hp = LSTMCell<float>::default_hparams();
  hp.set("num_units", units);
  hp.set("num_layers", layers);
  return hp;
}

ConfigNode dim_hp(std::int64_t d) { return ConfigNode::map({{"dim", d}}); }

/// Embedder + decoder over a small vocabulary, optionally attending to a
/// fixed random memory.
struct DecoderRig {
  ParameterStore<float> store;
  ModuleRegistry<float> reg = builtin_registry<float>();
  std::unique_ptr<WordEmbedder<float>> emb;
  std::unique_ptr<Decoder<float>> dec;
  std::optional<Memory<float>> memory;

  DecoderRig(const std::string& kind, bool with_memory, std::size_t vocab, std::uint64_t seed = 7)
      : store(seed) {
    emb = std::make_unique<WordEmbedder<float>>(dim_hp(8), vocab, ParamScope<float>(&store, "emb"));
    const std::size_t mem_dim = with_memory ? 12 : 0;
    ConfigNode block;
    if (kind == "rnn") {
      auto hp = BasicRNNDecoder<float>::default_hparams(lstm_hp(with_memory ? 12 : 16));
      if (with_memory) hp.set("attention", reg.typed_block("LuongAttention"));
      block = ConfigNode::map({{"type", "BasicRNNDecoder"}, {"hparams", hp}});
    } else {
      block = ConfigNode::map({{"type", "TransformerDecoder"},
                               {"hparams", ConfigNode::map({{"dim", 16}, {"num_heads", 2}, {"num_layers", 2},
                                                            {"ffn_dim", 24}})}});
    }
    dec = reg.make_decoder(block, emb.get(), mem_dim, ParamScope<float>(&store, "dec"));
    if (with_memory) {
      Rng rng(seed + 1);
      memory = Memory<float>{random_tensor<float>(rng, {3, 5, mem_dim}), {5, 2, 4}};
    }
  }

  const Memory<float>* mem() const { return memory ? &*memory : nullptr; }
  DecoderState<float> init(std::size_t batch) const { return dec->initial_state(batch); }
};

/// Always prefers token 5, whatever it is fed.
class FixedDecoder : public Decoder<float> {
 public:
  FixedDecoder(WordEmbedder<float>* e) : Decoder<float>(e, e->vocab_size()) {}
  std::vector<std::size_t> cell_state_dims() const override { return {}; }
  bool requires_memory() const override { return false; }
  DecoderState<float> initial_state(std::size_t, const CellState<float>*) const override { return {}; }
  std::pair<Tensor<float>, DecoderState<float>> step(const Tensor<float>& input, const DecoderState<float>& s,
                                                     const Memory<float>*) override {
    std::vector<float> l(input.dim(0) * vocab_size(), 0.0f);
    for (std::size_t b = 0; b < input.dim(0); ++b) l[b * vocab_size() + 5] = 3.0f;
    return {Tensorf({input.dim(0), vocab_size()}, l), s};
  }
};

}  // namespace

// ---------------------------------------------------------------- embedder

TEST(Embedder, IdentityTableGivesBasisVectors) {
  ParameterStore<float> store;
  std::vector<float> eye(36, 0.0f);
  for (int i = 0; i < 6; ++i) eye[i * 6 + i] = 1.0f;
  store.set_pending("emb/table", {6, 6}, eye);
  WordEmbedder<float> emb(dim_hp(6), 6, {&store, "emb"});
  const std::vector<std::int32_t> ids{4, 2};
  const auto y = emb.embed(ids, {1, 2});
  ASSERT_EQ(y.shape(), (Shape{1, 2, 6}));
  for (int t = 0; t < 2; ++t)
    for (int j = 0; j < 6; ++j) EXPECT_EQ(y[t * 6 + j], j == ids[t] ? 1.0f : 0.0f);
}

TEST(Embedder, ZeroPadRowGivesZeroVector) {
  ParameterStore<float> store(3);
  WordEmbedder<float> emb(dim_hp(4), 7, {&store, "emb"});
  auto table = emb.table().vec();
  std::fill(table.begin(), table.begin() + 4, 0.0f);
  store.assign("emb/table", {7, 4}, table);
  const std::vector<std::int32_t> ids{Vocabulary::kPad};
  const auto y = emb.embed(ids, {1});
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Embedder, OutOfRangeIdIsContractError) {
  ParameterStore<float> store;
  WordEmbedder<float> emb(dim_hp(4), 7, {&store, "emb"});
  const std::vector<std::int32_t> ids{7};
  EXPECT_THROW(emb.embed(ids, {1}), ContractError);
}

TEST(Embedder, TableGradientMatchesFiniteDifferences) {
  ParameterStore<double> store(5);
  WordEmbedder<double> emb(dim_hp(3), 6, {&store, "emb"});
  Rng rng(2);
  const auto w = random_tensor<double>(rng, {2, 3, 3});
  const std::vector<std::int32_t> ids{4, 4, 1, 5, 0, 4};
  emb.table();
  auto report = gradient_check<double>(
      [&] { return reduce_sum(mul(emb.embed(ids, {2, 3}), w)); }, {{"table", &store.entries()[0].value}},
      {.eps = 1e-6});
  EXPECT_LT(report.max_relative_error, 1e-7);
  EXPECT_EQ(report.entries_checked, 18u);
}

// ------------------------------------------------------------------- cells

TEST(LSTM, ZeroWeightsZeroCellGivesZero) {
  const auto x = Tensorf::full({2, 3}, 0.7f);
  const auto z = [](Shape s) { return Tensorf::zeros(std::move(s)); };
  auto [h, c] = lstm_step(x, z({2, 4}), z({2, 4}), z({3, 16}), z({4, 16}), z({16}));
  for (float v : c.data()) EXPECT_EQ(v, 0.0f);
  for (float v : h.data()) EXPECT_EQ(v, 0.0f);
}

TEST(LSTM, ZeroWeightsUnitCellClosedForm) {
  const auto z = [](Shape s) { return Tensorf::zeros(std::move(s)); };
  auto [h, c] = lstm_step(Tensorf::full({1, 3}, -2.0f), z({1, 4}), Tensorf::full({1, 4}, 1.0f), z({3, 16}),
                          z({4, 16}), z({16}));
  for (float v : c.data()) EXPECT_FLOAT_EQ(v, 0.5f);
  for (float v : h.data()) EXPECT_FLOAT_EQ(v, static_cast<float>(0.5 * std::tanh(0.5)));
}

TEST(LSTM, ForgetBiasInitializedToOne) {
  ParameterStore<float> store;
  LSTMCell<float> cell(lstm_hp(3), 2, {&store, "cell"});
  cell.step(Tensorf::zeros({1, 2}), cell.zero_state(1));
  const auto b = store.at("cell/bias").vec();
  ASSERT_EQ(b.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(b[i], (i >= 3 && i < 6) ? 1.0f : 0.0f) << i;
}

TEST(LSTM, MatchesScalarReference) {
  ParameterStore<double> store(17);
  auto hp = lstm_hp(3);
  hp.set("forget_bias", 0.3);
  LSTMCell<double> cell(hp, 2, {&store, "cell"});
  Rng rng(4);
  const auto x = random_tensor<double>(rng, {2, 2});
  const auto h0 = random_tensor<double>(rng, {2, 3});
  const auto c0 = random_tensor<double>(rng, {2, 3});
  auto [out, next] = cell.step(x, {h0, c0});
  const auto wi = store.at("cell/w_ih").vec(), wh = store.at("cell/w_hh").vec(), bias = store.at("cell/bias").vec();
  // Independent per-unit loop.
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 3; ++j) {
      double pre[4];
      for (std::size_t g = 0; g < 4; ++g) {
        const std::size_t col = g * 3 + j;
        double s = bias[col];
        for (std::size_t k = 0; k < 2; ++k) s += x[b * 2 + k] * wi[k * 12 + col];
        for (std::size_t k = 0; k < 3; ++k) s += h0[b * 3 + k] * wh[k * 12 + col];
        pre[g] = s;
      }
      const double c = sigmoid_ref(pre[1]) * c0[b * 3 + j] + sigmoid_ref(pre[0]) * std::tanh(pre[2]);
      const double h = sigmoid_ref(pre[3]) * std::tanh(c);
      EXPECT_NEAR(next[1][b * 3 + j], c, 1e-12);
      EXPECT_NEAR(next[0][b * 3 + j], h, 1e-12);
      EXPECT_NEAR(out[b * 3 + j], h, 1e-12);
    }
}

TEST(GRU, MatchesScalarReference) {
  ParameterStore<double> store(23);
  GRUCell<double> cell(GRUCell<double>::default_hparams(), 2, {&store, "gru"});
  Rng rng(8);
  const auto x = random_tensor<double>(rng, {3, 2});
  const auto h0 = random_tensor<double>(rng, {3, 32});
  cell.step(x, {h0});
  // Non-zero biases so every term is exercised.
  store.assign("gru/b_ih", {96}, random_tensor<double>(rng, {96}).vec());
  store.assign("gru/b_hh", {96}, random_tensor<double>(rng, {96}).vec());
  auto [out, next] = cell.step(x, {h0});
  const auto wi = store.at("gru/w_ih").vec(), wh = store.at("gru/w_hh").vec();
  const auto bi = store.at("gru/b_ih").vec(), bh = store.at("gru/b_hh").vec();
  const std::size_t n = 32;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t j = 0; j < n; ++j) {
      double xi[3], hh[3];
      for (std::size_t g = 0; g < 3; ++g) {
        const std::size_t col = g * n + j;
        xi[g] = bi[col];
        hh[g] = bh[col];
        for (std::size_t k = 0; k < 2; ++k) xi[g] += x[b * 2 + k] * wi[k * 3 * n + col];
        for (std::size_t k = 0; k < n; ++k) hh[g] += h0[b * n + k] * wh[k * 3 * n + col];
      }
      const double r = sigmoid_ref(xi[0] + hh[0]), z = sigmoid_ref(xi[1] + hh[1]);
      const double cand = std::tanh(xi[2] + r * hh[2]);
      EXPECT_NEAR(next[0][b * n + j], (1 - z) * cand + z * h0[b * n + j], 1e-12);
    }
  EXPECT_EQ(out.vec(), next[0].vec());
}

TEST(Cells, DimensionMismatchThrows) {
  ParameterStore<float> store;
  LSTMCell<float> cell(lstm_hp(4), 3, {&store, "c"});
  EXPECT_THROW(cell.step(Tensorf::zeros({2, 5}), cell.zero_state(2)), DimensionError);
  EXPECT_THROW(cell.step(Tensorf::zeros({2, 3}), cell.zero_state(3)), DimensionError);
}

TEST(Cells, StackedLayersHaveDistinctParameters) {
  ParameterStore<float> store;
  LSTMCell<float> cell(lstm_hp(4, 2), 3, {&store, "c"});
  auto [y, s] = cell.step(Tensorf::full({1, 3}, 0.2f), cell.zero_state(1));
  EXPECT_EQ(s.size(), 4u);
  EXPECT_TRUE(store.find("c/l0/w_ih"));
  EXPECT_EQ(store.at("c/l1/w_ih").shape(), (Shape{4, 16}));
  EXPECT_EQ(y.vec(), s[2].vec());
}

// ---------------------------------------------------------------- encoders

TEST(Encoder, ZeroWeightCellGivesZeroOutputs) {
  ParameterStore<float> store;
  store.set_pending("enc/cell/w_ih", {3, 16}, std::vector<float>(48, 0.0f));
  store.set_pending("enc/cell/w_hh", {4, 16}, std::vector<float>(64, 0.0f));
  store.set_pending("enc/cell/bias", {16}, std::vector<float>(16, 0.0f));
  UnidirectionalRNNEncoder<float> enc(std::make_unique<LSTMCell<float>>(lstm_hp(4), 3, ParamScope<float>{&store, "enc/cell"}));
  Rng rng(1);
  const auto out = enc.encode(random_tensor<float>(rng, {2, 5, 3}), {5, 3});
  ASSERT_EQ(out.outputs.shape(), (Shape{2, 5, 4}));
  for (float v : out.outputs.data()) EXPECT_EQ(v, 0.0f);
  for (const auto& s : out.final_state)
    for (float v : s.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Encoder, LengthOneFinalStateIsSingleStep) {
  ParameterStore<float> store(9);
  auto cell = std::make_unique<GRUCell<float>>(GRUCell<float>::default_hparams(), 3, ParamScope<float>{&store, "e"});
  auto* raw = cell.get();
  UnidirectionalRNNEncoder<float> enc(std::move(cell));
  Rng rng(2);
  const auto x = random_tensor<float>(rng, {4, 1, 3});
  const auto out = enc.encode(x, {1, 1, 1, 1});
  auto [y, s] = raw->step(reshape(x, {4, 3}), raw->zero_state(4));
  EXPECT_EQ(out.final_state[0].vec(), s[0].vec());
  EXPECT_EQ(out.outputs.shape(), (Shape{4, 1, 32}));
}

TEST(Encoder, PaddingDoesNotChangeFinalState) {
  for (const bool bidir : {false, true}) {
    ParameterStore<float> store(11);
    auto reg = builtin_registry<float>();
    auto cell = ConfigNode::map({{"type", "LSTMCell"}, {"hparams", lstm_hp(6)}});
    const auto block = ConfigNode::map({{"type", bidir ? "BidirectionalRNNEncoder" : "UnidirectionalRNNEncoder"},
                                        {"hparams", ConfigNode::map({{"cell", cell}})}});
    auto enc = reg.make_encoder(block, 3, {&store, "encoder"});
    Rng rng(3);
    const auto seq = random_tensor<float>(rng, {1, 3, 3});
    const auto alone = enc->encode(seq, {3});
    // Same sequence next to a longer one, with garbage in the padding.
    auto padded = concat<float>({seq, random_tensor<float>(rng, {1, 3, 3}, 5, 9)}, 1);
    auto batch = concat<float>({random_tensor<float>(rng, {1, 6, 3}), padded}, 0);
    const auto both = enc->encode(batch, {6, 3});
    ASSERT_EQ(both.outputs.shape(), (Shape{2, 6, bidir ? 12u : 6u}));
    for (std::size_t i = 0; i < alone.final_state.size(); ++i) {
      const auto row = slice(both.final_state[i], 0, 1, 2).vec();
      const auto ref = alone.final_state[i].vec();
      ASSERT_EQ(row.size(), ref.size());
      for (std::size_t j = 0; j < ref.size(); ++j) EXPECT_NEAR(row[j], ref[j], 1e-6) << bidir;
    }
    const auto w = enc->output_dim();
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t j = 0; j < w; ++j) {
        const float got = both.outputs[(6 + t) * w + j];
        if (t < 3) EXPECT_NEAR(got, alone.outputs[t * w + j], 1e-6);
        else EXPECT_EQ(got, 0.0f);
      }
  }
}

TEST(Encoder, BidirectionalBackwardReadsReversedSequence) {
  ParameterStore<float> store(13);
  auto reg = builtin_registry<float>();
  auto block = reg.typed_block("BidirectionalRNNEncoder");
  auto enc = reg.make_encoder(block, 2, {&store, "encoder"});
  Rng rng(5);
  const auto x = random_tensor<float>(rng, {1, 4, 2});
  const auto out = enc->encode(x, {4});
  // Backward half of the output at t=0 equals a forward run of the bw cell
  // on the reversed sequence, at its last step.
  LSTMCell<float> bw(LSTMCell<float>::default_hparams(), 2, {&store, "encoder/bw"});
  const auto rev = unroll<float>(bw, reverse_within_lengths(x, {4}), {4});
  for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(out.outputs[32 + j], rev.final_output[j], 1e-6);
}

// --------------------------------------------------------------- attention

TEST(Attention, EqualRowsGiveUniformAlignment) {
  const Tensorf memory({1, 4, 2}, {1, 2, 1, 2, 1, 2, 9, 9});
  const auto r = luong_attention(Tensorf({1, 2}, {0.3f, -1.0f}), memory, {3});
  for (int t = 0; t < 3; ++t) EXPECT_NEAR(r.alignment[t], 1.0 / 3, 1e-6);
  EXPECT_EQ(r.alignment[3], 0.0f);
  EXPECT_NEAR(r.context[0], 1.0f, 1e-6);
  EXPECT_NEAR(r.context[1], 2.0f, 1e-6);
}

TEST(Attention, OrthonormalRowsPeakAtQueryRow) {
  const Tensorf memory({1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  for (int j = 0; j < 3; ++j) {
    std::vector<float> q(3, 0.0f);
    q[j] = 4.0f;
    const auto r = luong_attention(Tensorf({1, 3}, q), memory, {3});
    EXPECT_EQ(argmax<float>(r.alignment.data()), j);
  }
}

TEST(Attention, AlignmentSumsToOneAndIgnoresPad) {
  Rng rng(3);
  const auto memory = random_tensor<float>(rng, {3, 5, 4});
  const std::vector<std::size_t> lengths{5, 2, 4};
  const auto r = luong_attention(random_tensor<float>(rng, {3, 4}), memory, lengths, true);
  for (std::size_t b = 0; b < 3; ++b) {
    double sum = 0;
    for (std::size_t t = 0; t < 5; ++t) {
      const float a = r.alignment[b * 5 + t];
      sum += a;
      if (t >= lengths[b]) EXPECT_EQ(a, 0.0f);
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Attention, AllMaskedIsContractError) {
  EXPECT_THROW(luong_attention(Tensorf::zeros({1, 2}), Tensorf::zeros({1, 3, 2}), {0}), ContractError);
}

TEST(Attention, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  auto q = random_tensor<double>(rng, {2, 3}).set_requires_grad(true);
  auto m = random_tensor<double>(rng, {2, 4, 3}).set_requires_grad(true);
  const auto w = random_tensor<double>(rng, {2, 3});
  auto report = gradient_check<double>(
      [&] { return reduce_sum(mul(luong_attention(q, m, {4, 2}).context, w)); }, {{"q", &q}, {"m", &m}},
      {.eps = 1e-6});
  EXPECT_LT(report.max_relative_error, 1e-7);
}

// ---------------------------------------------------------------- decoding

TEST(Decode, GreedyFollowsTopToken) {
  ParameterStore<float> store;
  WordEmbedder<float> emb(dim_hp(4), 8, {&store, "emb"});
  FixedDecoder dec(&emb);
  const auto out = dec.decode(DecodingStrategy::greedy(), {}, nullptr, nullptr, 6, 3);
  EXPECT_EQ(out.steps, 6u);
  for (auto id : out.sample_ids) EXPECT_EQ(id, 5);
  for (auto len : out.lengths) EXPECT_EQ(len, 6u);
}

TEST(Decode, ContractErrors) {
  DecoderRig rig("rnn", true, 9);
  EXPECT_THROW(rig.dec->decode(DecodingStrategy::teacher_forcing(), rig.init(3), rig.mem(), nullptr, 4),
               ContractError);
  EXPECT_THROW(rig.dec->decode(DecodingStrategy::greedy(), rig.init(3), nullptr, nullptr, 4), ContractError);
  EXPECT_THROW(rig.dec->decode(DecodingStrategy::greedy(), rig.init(3), rig.mem(), nullptr, 0), ContractError);
  EXPECT_THROW(rig.dec->decode(DecodingStrategy::top_k(10, 1), rig.init(3), rig.mem(), nullptr, 4), ContractError);
  EXPECT_THROW(rig.dec->decode(DecodingStrategy::gumbel_softmax(0.0, 1), rig.init(3), rig.mem(), nullptr, 4),
               ContractError);
}

// Every decoder kind under every strategy satisfies the output contract.
TEST(Decode, InterfaceUniformity) {
  const std::size_t vocab = 9, batch = 3;
  const auto targets = make_ids({{4, 5, 2}, {6, 2}, {7, 8, 4, 2}});
  for (const std::string kind : {"rnn", "transformer"})
    for (const bool with_memory : {false, true}) {
      DecoderRig rig(kind, with_memory, vocab);
      for (const auto& strat :
           {DecodingStrategy::teacher_forcing(), DecodingStrategy::greedy(), DecodingStrategy::sample(3),
            DecodingStrategy::top_k(3, 4), DecodingStrategy::gumbel_softmax(0.5, 5)}) {
        SCOPED_TRACE(kind + (with_memory ? "+memory " : " ") + strat.name());
        const auto out = rig.dec->decode(strat, rig.init(batch), rig.mem(), &targets, 7, batch);
        ASSERT_EQ(out.batch, batch);
        ASSERT_EQ(out.logits.shape(), (Shape{batch, out.steps, vocab}));
        ASSERT_EQ(out.sample_ids.size(), batch * out.steps);
        if (strat.kind == DecodingStrategy::Kind::teacher_forcing) {
          EXPECT_EQ(out.steps, targets.max_len);
          EXPECT_EQ(out.lengths, targets.lengths);
        } else {
          EXPECT_LE(out.steps, 7u);
        }
        EXPECT_EQ(out.soft_samples.has_value(), strat.kind == DecodingStrategy::Kind::gumbel_softmax);
        for (std::size_t b = 0; b < batch; ++b) {
          EXPECT_GE(out.lengths[b], 1u);
          EXPECT_LE(out.lengths[b], out.steps);
          for (std::size_t t = 0; t < out.steps; ++t) {
            const auto row = out.logits.data().subspan((b * out.steps + t) * vocab, vocab);
            const auto id = out.id(b, t);
            if (strat.kind == DecodingStrategy::Kind::teacher_forcing) {
              EXPECT_EQ(id, argmax<float>(row));
              continue;
            }
            if (t >= out.lengths[b]) {
              EXPECT_EQ(id, Vocabulary::kPad);
              continue;
            }
            if (t + 1 < out.lengths[b]) EXPECT_NE(id, Vocabulary::kEos);
            if (out.lengths[b] < out.steps && t + 1 == out.lengths[b]) EXPECT_EQ(id, Vocabulary::kEos);
            if (strat.kind == DecodingStrategy::Kind::greedy) EXPECT_EQ(id, argmax<float>(row));
            if (strat.kind == DecodingStrategy::Kind::top_k) {
              int above = 0;
              for (float v : row) above += v > row[static_cast<std::size_t>(id)];
              EXPECT_LT(above, 3);
            }
          }
        }
      }
    }
}

TEST(Decode, TeacherForcingMatchesIncrementalSteps) {
  for (const std::string kind : {"rnn", "transformer"})
    for (const bool with_memory : {false, true}) {
      SCOPED_TRACE(kind);
      DecoderRig rig(kind, with_memory, 9);
      const auto free = rig.dec->decode(DecodingStrategy::greedy(), rig.init(3), rig.mem(), nullptr, 6, 3);
      const auto gold = free.padded();
      const auto tf = rig.dec->decode(DecodingStrategy::teacher_forcing(), rig.init(3), rig.mem(), &gold, 0);
      ASSERT_EQ(tf.steps, free.steps);
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t t = 0; t < free.lengths[b]; ++t)
          for (std::size_t v = 0; v < 9; ++v) {
            const std::size_t i = (b * free.steps + t) * 9 + v;
            EXPECT_NEAR(tf.logits[i], free.logits[i], 1e-4);
          }
    }
}

TEST(Decode, SampleIsReproducibleAndMatchesSoftmax) {
  DecoderRig rig("rnn", false, 6);
  rig.store.set_pending("dec/output/b", {6}, {2.0f, -1.0f, 0.5f, 1.5f, 0.0f, -2.0f});
  const std::size_t n = 100000;
  const auto a = rig.dec->decode(DecodingStrategy::sample(42), rig.init(n), nullptr, nullptr, 1);
  const auto b = rig.dec->decode(DecodingStrategy::sample(42), rig.init(n), nullptr, nullptr, 1);
  EXPECT_EQ(a.sample_ids, b.sample_ids);
  const auto c = rig.dec->decode(DecodingStrategy::sample(43), rig.init(n), nullptr, nullptr, 1);
  EXPECT_NE(a.sample_ids, c.sample_ids);

  const auto p = softmax_ref(a.logits.data().subspan(0, 6));
  std::vector<double> freq(6, 0.0);
  for (auto id : a.sample_ids) freq[static_cast<std::size_t>(id)] += 1.0 / n;
  double l1 = 0;
  for (std::size_t v = 0; v < 6; ++v) l1 += std::abs(freq[v] - p[v]);
  EXPECT_LT(l1, 0.02);
}

TEST(Decode, TopKNeverLeavesTopK) {
  DecoderRig rig("rnn", false, 6);
  rig.store.set_pending("dec/output/b", {6}, {2.0f, -1.0f, 0.5f, 1.5f, 0.0f, -2.0f});
  const auto out = rig.dec->decode(DecodingStrategy::top_k(2, 1), rig.init(5000), nullptr, nullptr, 1);
  std::map<int, int> seen;
  for (auto id : out.sample_ids) ++seen[id];
  EXPECT_EQ(seen.size(), 2u);
  EXPECT_TRUE(seen.count(0) && seen.count(3));
}

TEST(Decode, LowTemperatureGumbelIsHardArgmax) {
  for (const std::string kind : {"rnn", "transformer"}) {
    DecoderRig rig(kind, false, 9);
    const std::uint64_t seed = 77;
    const std::size_t batch = 5;
    const auto out = rig.dec->decode(DecodingStrategy::gumbel_softmax(0.01, seed), rig.init(batch), nullptr,
                                     nullptr, 6, batch);
    Rng rng(seed);
    for (std::size_t t = 0; t < out.steps; ++t) {
      const auto noise = gumbel_noise<float>({batch, 9}, rng);
      for (std::size_t b = 0; b < batch; ++b) {
        if (t >= out.lengths[b]) continue;
        std::vector<float> perturbed(9);
        for (std::size_t v = 0; v < 9; ++v) perturbed[v] = out.logits[(b * out.steps + t) * 9 + v] + noise[b * 9 + v];
        EXPECT_EQ(out.id(b, t), argmax<float>(perturbed)) << kind << " b=" << b << " t=" << t;
      }
    }
  }
}

TEST(Decode, GumbelFeedsSoftSampleThroughEmbedding) {
  DecoderRig rig("rnn", false, 9);
  Tape<float> tape;
  auto scope = tape.activate();
  const auto out = rig.dec->decode(DecodingStrategy::gumbel_softmax(1.0, 3), rig.init(2), nullptr, nullptr, 3, 2);
  ASSERT_TRUE(out.soft_samples);
  // A gradient reaches the embedding table only through the soft feedback
  // (step 0 feeds the hard BOS row).
  Rng rng(4);
  const auto w = random_tensor<float>(rng, {2, 1, 9});
  const auto g = tape.backward(reduce_sum(mul(slice(*out.soft_samples, 1, 1, 2), w))).of(rig.emb->table()).vec();
  double mass = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (i / 8 != static_cast<std::size_t>(Vocabulary::kBos)) mass += std::abs(g[i]);
  EXPECT_GT(mass, 0.0);
}

TEST(Decode, GreedyIsDeterministic) {
  DecoderRig rig("transformer", true, 9);
  const auto a = rig.dec->decode(DecodingStrategy::greedy(), {}, rig.mem(), nullptr, 6);
  const auto b = rig.dec->decode(DecodingStrategy::greedy(), {}, rig.mem(), nullptr, 6);
  EXPECT_EQ(a.sample_ids, b.sample_ids);
  EXPECT_EQ(a.logits.vec(), b.logits.vec());
}

// ------------------------------------------------------------------ gumbel

TEST(Gumbel, SymmetricLogitsGiveHalf) {
  for (double tau : {0.1, 1.0, 7.0}) {
    const auto y = gumbel_softmax_sample(Tensorf::zeros({2}), tau, Tensorf::zeros({2}));
    EXPECT_FLOAT_EQ(y[0], 0.5f);
    EXPECT_FLOAT_EQ(y[1], 0.5f);
  }
}

TEST(Gumbel, LowTemperatureIsOneHot) {
  const Tensord logits({4}, {1.0, 3.0, 2.0, -1.0});
  const Tensord noise({4}, {0.1, -0.2, 0.3, 2.5});
  const auto y = gumbel_softmax_sample(logits, 0.01, noise);
  const auto hard = argmax<double>(add(logits, noise).data());
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], i == static_cast<std::size_t>(hard) ? 1.0 : 0.0, 1e-3);
}

TEST(Gumbel, NonPositiveTauIsContractError) {
  EXPECT_THROW(gumbel_softmax_sample(Tensorf::zeros({2}), 0.0, Tensorf::zeros({2})), ContractError);
  EXPECT_THROW(gumbel_softmax_sample(Tensorf::zeros({2}), -1.0, Tensorf::zeros({2})), ContractError);
}

TEST(Gumbel, ArgmaxOfNoisyLogitsIsCategorical) {
  const std::vector<float> logits{0.5f, -1.0f, 1.2f, 0.0f, 2.0f};
  const std::size_t n = 100000, v = logits.size();
  Rng rng(12);
  const auto noise = gumbel_noise<float>({n, v}, rng);
  std::vector<float> tiled(n * v);
  for (std::size_t i = 0; i < n * v; ++i) tiled[i] = logits[i % v];
  const auto y = gumbel_softmax_sample(Tensorf({n, v}, tiled), 0.5, noise);
  std::vector<double> freq(v, 0.0);
  for (std::size_t r = 0; r < n; ++r) freq[static_cast<std::size_t>(argmax<float>(y.data().subspan(r * v, v)))] += 1.0 / n;
  const auto p = softmax_ref(logits);
  double l1 = 0;
  for (std::size_t i = 0; i < v; ++i) l1 += std::abs(freq[i] - p[i]);
  EXPECT_LT(l1, 0.02);
}

TEST(Gumbel, DifferentiableInLogits) {
  Rng rng(3);
  auto logits = random_tensor<double>(rng, {2, 4}).set_requires_grad(true);
  const auto noise = gumbel_noise<double>({2, 4}, rng);
  const auto w = random_tensor<double>(rng, {2, 4});
  auto report = gradient_check<double>([&] { return reduce_sum(mul(gumbel_softmax_sample(logits, 0.7, noise), w)); },
                                       {{"logits", &logits}}, {.eps = 1e-6});
  EXPECT_LT(report.max_relative_error, 1e-7);
}

// ------------------------------------------------------------- beam search

namespace {

struct Scored {
  std::vector<std::int32_t> ids;
  double log_prob;
};

// Every complete sequence up to max_len, scored by stepping the decoder one
// token at a time.
void enumerate(Decoder<float>& dec, const DecoderState<float>& state, const Memory<float>* mem,
               std::vector<std::int32_t>& prefix, double lp, std::size_t max_len, std::vector<Scored>& out) {
  const std::int32_t last = prefix.empty() ? Vocabulary::kBos : prefix.back();
  const std::vector<std::int32_t> in{last};
  auto [logits, next] = dec.step(dec.embedder().embed(in, {1}), state, mem);
  std::vector<double> row(logits.data().begin(), logits.data().end());
  double mx = *std::max_element(row.begin(), row.end()), z = 0;
  for (double v : row) z += std::exp(v - mx);
  for (std::size_t v = 0; v < row.size(); ++v) {
    prefix.push_back(static_cast<std::int32_t>(v));
    const double l = lp + row[v] - mx - std::log(z);
    if (v == static_cast<std::size_t>(Vocabulary::kEos) || prefix.size() == max_len) out.push_back({prefix, l});
    else enumerate(dec, next, mem, prefix, l, max_len, out);
    prefix.pop_back();
  }
}

}  // namespace

TEST(Beam, WideBeamEqualsExhaustiveSearch) {
  for (const std::string kind : {"rnn", "transformer"})
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      SCOPED_TRACE(kind + " seed " + std::to_string(seed));
      DecoderRig rig(kind, false, 5, seed);
      Rng rng(seed);
      rig.store.set_pending("dec/output/b", {5}, random_tensor<float>(rng, {5}, -1.5, 1.5).vec());
      std::vector<Scored> all;
      std::vector<std::int32_t> prefix;
      enumerate(*rig.dec, rig.init(1), nullptr, prefix, 0.0, 4, all);
      ASSERT_EQ(all.size(), 1u + 4u + 16u + 64u + 256u);
      std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.log_prob > b.log_prob; });
      const auto hyps = beam_search_one(*rig.dec, rig.init(1), nullptr, 625, 4);
      ASSERT_EQ(hyps.size(), all.size());
      EXPECT_EQ(hyps[0].ids, all[0].ids);
      for (std::size_t i = 0; i < all.size(); ++i) EXPECT_NEAR(hyps[i].log_prob, all[i].log_prob, 1e-4);
    }
}

TEST(Beam, WidthOneIsGreedy) {
  for (const std::string kind : {"rnn", "transformer"})
    for (const bool with_memory : {false, true}) {
      DecoderRig rig(kind, with_memory, 9);
      const auto greedy = rig.dec->decode(DecodingStrategy::greedy(), rig.init(3), rig.mem(), nullptr, 6, 3);
      const auto beams = beam_search(*rig.dec, rig.init(3), rig.mem(), 3, 1, 6);
      for (std::size_t b = 0; b < 3; ++b) {
        ASSERT_EQ(beams[b].size(), 1u);
        std::vector<std::int32_t> g;
        for (std::size_t t = 0; t < greedy.lengths[b]; ++t) g.push_back(greedy.id(b, t));
        EXPECT_EQ(beams[b][0].ids, g) << kind << " " << b;
      }
    }
}

TEST(Beam, ScoresAreNonIncreasing) {
  DecoderRig rig("rnn", true, 9);
  for (double alpha : {0.0, 0.6}) {
    const auto beams = beam_search(*rig.dec, rig.init(3), rig.mem(), 3, 4, 7, alpha);
    for (const auto& hyps : beams) {
      EXPECT_FALSE(hyps.empty());
      EXPECT_LE(hyps.size(), 4u);
      for (std::size_t i = 1; i < hyps.size(); ++i) EXPECT_GE(hyps[i - 1].score, hyps[i].score);
      for (const auto& h : hyps) EXPECT_NEAR(h.score, h.log_prob / length_penalty(h.ids.size(), alpha), 1e-12);
    }
  }
  EXPECT_THROW(beam_search_one(*rig.dec, rig.init(1), rig.mem(), 0, 4), ContractError);
}

// -------------------------------------------------------------- connectors

TEST(Connector, ZeroNoiseGivesMean) {
  Rng rng(1);
  const auto mu = random_tensor<float>(rng, {3, 4});
  const auto z = reparameterize(mu, random_tensor<float>(rng, {3, 4}), Tensorf::zeros({3, 4}));
  EXPECT_EQ(z.vec(), mu.vec());
}

TEST(Connector, StandardParamsGiveNoise) {
  Rng rng(2);
  const auto eps = random_tensor<float>(rng, {3, 4});
  EXPECT_EQ(reparameterize(Tensorf::zeros({3, 4}), Tensorf::zeros({3, 4}), eps).vec(), eps.vec());
}

TEST(Connector, ReparameterizedMomentsMatch) {
  const std::size_t n = 100000;
  const std::vector<double> mu{0.5, -1.0, 2.0}, logvar{0.0, std::log(4.0), -1.0};
  std::vector<double> mu_t(n * 3), lv_t(n * 3);
  for (std::size_t i = 0; i < n * 3; ++i) {
    mu_t[i] = mu[i % 3];
    lv_t[i] = logvar[i % 3];
  }
  ParameterStore<double> store;
  StochasticGaussianConnector<double> conn(ConfigNode::map({{"latent_dim", 3}, {"activation", "identity"}}), {1}, {1},
                                           {&store, "c"});
  Rng rng(99);
  const auto z = reparameterize(Tensord({n, 3}, mu_t), Tensord({n, 3}, lv_t), conn.draw_eps(n, rng));
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) s += z[i * 3 + j];
    const double mean = s / n;
    for (std::size_t i = 0; i < n; ++i) s2 += (z[i * 3 + j] - mean) * (z[i * 3 + j] - mean);
    const double var = s2 / (n - 1), sigma2 = std::exp(logvar[j]);
    EXPECT_LT(std::abs(mean - mu[j]), 3 * std::sqrt(sigma2 / n)) << j;
    EXPECT_LT(std::abs(var - sigma2), 3 * sigma2 * std::sqrt(2.0 / (n - 1))) << j;
  }
}

TEST(Connector, ReparameterizationIsDifferentiable) {
  Rng rng(5);
  auto mu = random_tensor<double>(rng, {2, 3}).set_requires_grad(true);
  auto lv = random_tensor<double>(rng, {2, 3}).set_requires_grad(true);
  const auto eps = random_tensor<double>(rng, {2, 3});
  auto report = gradient_check<double>([&] { return reduce_sum(square(reparameterize(mu, lv, eps))); },
                                       {{"mu", &mu}, {"logvar", &lv}}, {.eps = 1e-6});
  EXPECT_LT(report.max_relative_error, 1e-7);
}

TEST(Connector, GaussianShapes) {
  ParameterStore<float> store;
  StochasticGaussianConnector<float> conn(StochasticGaussianConnector<float>::default_hparams(), {6, 4}, {5, 5},
                                          {&store, "c"});
  Rng rng(1);
  const auto eps = conn.draw_eps(3, rng);
  const auto s = conn.sample({Tensorf::zeros({3, 6}), Tensorf::zeros({3, 4})}, eps);
  EXPECT_EQ(s.mu.shape(), (Shape{3, 16}));
  EXPECT_EQ(s.z.shape(), (Shape{3, 16}));
  ASSERT_EQ(s.outputs.size(), 2u);
  EXPECT_EQ(s.outputs[1].shape(), (Shape{3, 5}));
  EXPECT_THROW(conn.sample({Tensorf::zeros({3, 7})}, eps), DimensionError);
}

TEST(Connector, MLPTransformSplitsOutputs) {
  ParameterStore<float> store;
  MLPTransformConnector<float> conn(ConfigNode::map({{"activation", "tanh"}}), {3, 3}, {4, 4, 2}, {&store, "c"});
  Rng rng(4);
  const auto out = conn.connect({random_tensor<float>(rng, {2, 3}), random_tensor<float>(rng, {2, 3})});
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[2].shape(), (Shape{2, 2}));
  for (const auto& o : out)
    for (float v : o.data()) EXPECT_LE(std::abs(v), 1.0f);
  EXPECT_THROW(MLPTransformConnector<float>(ConfigNode::map({{"activation", "swish"}}), {3}, {3}, {&store, "d"}),
               ConfigError);
}

TEST(Connector, ForwardMismatchNamesBothSides) {
  ForwardConnector<float> ok({4, 4}, {4, 4}, "encoder", "decoder");
  EXPECT_EQ(ok.connect({Tensorf::zeros({1, 4}), Tensorf::zeros({1, 4})}).size(), 2u);
  try {
    ForwardConnector<float>({64, 64}, {32, 32}, "encoder", "decoder");
    FAIL();
  } catch (const AssemblyError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("encoder"), std::string::npos);
    EXPECT_NE(msg.find("decoder"), std::string::npos);
    EXPECT_NE(msg.find("64"), std::string::npos);
    EXPECT_NE(msg.find("32"), std::string::npos);
  }
}

// -------------------------------------------------------------- classifier

TEST(Classifier, SoftOneHotEqualsHardIds) {
  ParameterStore<float> store(3);
  auto reg = builtin_registry<float>();
  auto clf = reg.make_classifier(reg.typed_block("RNNClassifier"), 7, {&store, "disc"});
  const auto ids = make_ids({{4, 5, 6, 2}, {6, 2}});
  std::vector<float> onehot(2 * 4 * 7, 0.0f);
  for (std::size_t r = 0; r < 8; ++r) onehot[r * 7 + static_cast<std::size_t>(ids.ids[r])] = 1.0f;
  const auto hard = clf->probs(ids);
  const auto soft = clf->probs_soft(Tensorf({2, 4, 7}, onehot), ids.lengths);
  ASSERT_EQ(hard.shape(), (Shape{2}));
  for (std::size_t b = 0; b < 2; ++b) EXPECT_NEAR(hard[b], soft[b], 1e-6);
}

TEST(Classifier, ZeroReadoutGivesHalf) {
  ParameterStore<float> store(3);
  store.set_pending("disc/readout/w", {32, 1}, std::vector<float>(32, 0.0f));
  auto reg = builtin_registry<float>();
  auto clf = reg.make_classifier(reg.typed_block("RNNClassifier"), 7, {&store, "disc"});
  const auto p = clf->probs(make_ids({{4, 5}, {6, 6, 6, 2}}));
  for (float v : p.data()) EXPECT_EQ(v, 0.5f);
}

TEST(Classifier, SoftInputGradientMatchesFiniteDifferences) {
  ParameterStore<double> store(8);
  auto reg = builtin_registry<double>();
  auto block = reg.typed_block("RNNClassifier");
  auto hp = block.at("hparams");
  hp.set("embed_dim", std::int64_t{5});
  auto cell = hp.at("cell");
  auto cell_hp = cell.at("hparams");
  cell_hp.set("num_units", std::int64_t{6});
  cell.set("hparams", cell_hp);
  hp.set("cell", cell);
  block.set("hparams", hp);
  auto clf = reg.make_classifier(block, 7, {&store, "disc"});
  Rng rng(3);
  auto probs = softmax(random_tensor<double>(rng, {2, 3, 7}, -2, 2), -1).detached();
  probs.set_requires_grad(true);
  auto report = gradient_check<double>([&] { return reduce_sum(log(clf->probs_soft(probs, {3, 2}))); },
                                       {{"probs", &probs}}, {.eps = 1e-6});
  EXPECT_LT(report.max_relative_error, 1e-6);
}

TEST(Classifier, EmptySequenceIsContractError) {
  ParameterStore<float> store;
  auto reg = builtin_registry<float>();
  auto clf = reg.make_classifier(reg.typed_block("RNNClassifier"), 7, {&store, "disc"});
  auto ids = make_ids({{4}, {}});
  EXPECT_THROW(clf->probs(ids), ContractError);
}

// ------------------------------------------------------------- transformer

TEST(Transformer, SingleHeadIsScaledDotProductAttention) {
  Rng rng(7);
  const auto q = random_tensor<double>(rng, {2, 3, 4});
  const auto k = random_tensor<double>(rng, {2, 5, 4});
  const auto v = random_tensor<double>(rng, {2, 5, 4});
  const auto y = multi_head_attention(q, k, v, 1, nullptr);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<double> s(5);
      double mx = -1e300, z = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        s[j] = 0;
        for (std::size_t d = 0; d < 4; ++d) s[j] += q[(b * 3 + i) * 4 + d] * k[(b * 5 + j) * 4 + d];
        s[j] /= 2.0;
        mx = std::max(mx, s[j]);
      }
      for (auto& x : s) z += x = std::exp(x - mx);
      for (std::size_t d = 0; d < 4; ++d) {
        double ref = 0;
        for (std::size_t j = 0; j < 5; ++j) ref += s[j] / z * v[(b * 5 + j) * 4 + d];
        EXPECT_NEAR(y[(b * 3 + i) * 4 + d], ref, 1e-12);
      }
    }
}

TEST(Transformer, HeadsPartitionTheModelDim) {
  Rng rng(8);
  const auto q = random_tensor<double>(rng, {1, 2, 6});
  const auto k = random_tensor<double>(rng, {1, 3, 6});
  const auto v = random_tensor<double>(rng, {1, 3, 6});
  const auto y = multi_head_attention(q, k, v, 2, nullptr);
  for (std::size_t h = 0; h < 2; ++h) {
    const auto part = [&](const Tensord& x) { return slice(x, 2, h * 3, h * 3 + 3); };
    const auto ref = multi_head_attention(part(q), part(k), part(v), 1, nullptr);
    const auto got = slice(y, 2, h * 3, h * 3 + 3);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-12);
  }
}

TEST(Transformer, CausalUnderTeacherForcing) {
  for (const bool with_memory : {false, true}) {
    DecoderRig rig("transformer", with_memory, 9);
    const auto a = make_ids({{4, 5, 6, 7, 2}, {8, 8, 2}, {5, 2}});
    auto b = a;
    for (std::size_t r = 0; r < 3; ++r) b.ids[r * 5 + 3] = Vocabulary::kUnk;  // alter position 3
    const auto la = rig.dec->decode(DecodingStrategy::teacher_forcing(), {}, rig.mem(), &a, 0).logits;
    const auto lb = rig.dec->decode(DecodingStrategy::teacher_forcing(), {}, rig.mem(), &b, 0).logits;
    // Target 3 is the input at step 4: steps 0..3 are unaffected.
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t t = 0; t < 5; ++t) {
        bool same = true;
        for (std::size_t v = 0; v < 9; ++v) same = same && la[(r * 5 + t) * 9 + v] == lb[(r * 5 + t) * 9 + v];
        if (t <= 3) EXPECT_TRUE(same) << r << " " << t;
        else if (r == 0) EXPECT_FALSE(same);
      }
  }
}

TEST(Transformer, MemoryPaddingIsIgnored) {
  DecoderRig rig("transformer", true, 9);
  const auto a = rig.dec->decode(DecodingStrategy::greedy(), {}, rig.mem(), nullptr, 4);
  auto mem = *rig.memory;
  auto vals = mem.values.vec();
  for (std::size_t t = 2; t < 5; ++t)
    for (std::size_t d = 0; d < 12; ++d) vals[(1 * 5 + t) * 12 + d] = 100.0f;  // example 1 has length 2
  mem.values = Tensorf(mem.values.shape(), vals);
  const auto b = rig.dec->decode(DecodingStrategy::greedy(), {}, &mem, nullptr, 4);
  for (std::size_t t = 0; t < std::min(a.steps, b.steps); ++t)
    for (std::size_t v = 0; v < 9; ++v)
      EXPECT_NEAR(a.logits[(1 * a.steps + t) * 9 + v], b.logits[(1 * b.steps + t) * 9 + v], 1e-5);
}

TEST(Transformer, DimNotDivisibleByHeadsIsConfigError) {
  ParameterStore<float> store;
  WordEmbedder<float> emb(dim_hp(8), 9, {&store, "emb"});
  auto hp = TransformerDecoder<float>::default_hparams();
  hp.set("dim", std::int64_t{10});
  hp.set("num_heads", std::int64_t{4});
  EXPECT_THROW(TransformerDecoder<float>(hp, &emb, 0, {&store, "dec"}), ConfigError);
}

TEST(Transformer, LearnedPositions) {
  ParameterStore<float> store;
  WordEmbedder<float> emb(dim_hp(16), 9, {&store, "emb"});
  auto hp = TransformerDecoder<float>::default_hparams();
  hp.set("dim", std::int64_t{16});
  hp.set("position_embedding", "learned");
  hp.set("max_positions", std::int64_t{3});
  TransformerDecoder<float> dec(hp, &emb, 0, {&store, "dec"});
  const auto out = dec.decode(DecodingStrategy::greedy(), {}, nullptr, nullptr, 3, 2);
  EXPECT_TRUE(store.find("dec/position/table"));
  EXPECT_FALSE(store.find("dec/input_proj/w"));
  const auto ids = make_ids({{4, 4, 4, 2}});
  EXPECT_THROW(dec.decode(DecodingStrategy::teacher_forcing(), {}, nullptr, &ids, 0), ContractError);
  hp.set("position_embedding", "rotary");
  EXPECT_THROW(TransformerDecoder<float>(hp, &emb, 0, {&store, "dec2"}), ConfigError);
}

// ---------------------------------------------------------------- reuse

TEST(Reuse, SecondCallCreatesNoParameters) {
  const auto targets = make_ids({{4, 5, 2}, {6, 2}, {7, 8, 4, 2}});
  for (const std::string kind : {"rnn", "transformer"})
    for (const bool with_memory : {false, true}) {
      DecoderRig rig(kind, with_memory, 9);
      rig.dec->decode(DecodingStrategy::teacher_forcing(), rig.init(3), rig.mem(), &targets, 0);
      const auto n = rig.store.size(), total = rig.store.total_size();
      rig.dec->decode(DecodingStrategy::greedy(), rig.init(3), rig.mem(), nullptr, 5, 3);
      rig.dec->decode(DecodingStrategy::teacher_forcing(), rig.init(3), rig.mem(), &targets, 0);
      EXPECT_EQ(rig.store.size(), n) << kind;
      EXPECT_EQ(rig.store.total_size(), total);
    }

  ParameterStore<float> store;
  auto reg = builtin_registry<float>();
  auto enc = reg.make_encoder(reg.typed_block("BidirectionalRNNEncoder"), 3, {&store, "encoder"});
  Rng rng(1);
  enc->encode(random_tensor<float>(rng, {2, 4, 3}), {4, 2});
  const auto n = store.size();
  enc->encode(random_tensor<float>(rng, {5, 2, 3}), {1, 2, 2, 1, 2});
  EXPECT_EQ(store.size(), n);
  EXPECT_EQ(n, 6u);

  auto clf = reg.make_classifier(reg.typed_block("RNNClassifier"), 9, {&store, "disc"});
  clf->probs(make_ids({{4, 2}}));
  const auto m = store.size();
  clf->probs(make_ids({{5, 6, 2}, {7}}));
  EXPECT_EQ(store.size(), m);
}

TEST(Reuse, SharedScopeSharesParameters) {
  ParameterStore<float> store(2);
  WordEmbedder<float> a(dim_hp(4), 9, {&store, "emb"}), b(dim_hp(4), 9, {&store, "emb"});
  EXPECT_EQ(a.table().storage_key(), b.table().storage_key());
  EXPECT_EQ(store.size(), 1u);
  WordEmbedder<float> c(dim_hp(5), 9, {&store, "emb"});
  EXPECT_THROW(c.table(), DimensionError);
}

TEST(Params, InitIsIndependentOfCreationOrder) {
  ParameterStore<float> s1(5), s2(5);
  s1.get("a", {3}, Init::uniform(0.1f));
  s1.get("b", {3}, Init::uniform(0.1f));
  s2.get("b", {3}, Init::uniform(0.1f));
  s2.get("a", {3}, Init::uniform(0.1f));
  EXPECT_EQ(s1.at("a").vec(), s2.at("a").vec());
  EXPECT_NE(s1.at("a").vec(), s1.at("b").vec());
  ParameterStore<double> d;
  d.copy_from(s1);
  EXPECT_EQ(d.at("b")[2], static_cast<double>(s1.at("b")[2]));
}

TEST(Params, XavierBounds) {
  ParameterStore<float> store;
  const auto& w = store.get("w", {30, 70}, Init::xavier());
  const float limit = std::sqrt(6.0f / 100.0f);
  float mx = 0;
  for (float v : w.data()) mx = std::max(mx, std::abs(v));
  EXPECT_LE(mx, limit);
  EXPECT_GT(mx, 0.9f * limit);
}

// ---------------------------------------------------------------- registry

TEST(Registry, BuiltinsAreRegistered) {
  const auto reg = builtin_registry<float>();
  for (const char* name :
       {"WordEmbedder", "LSTMCell", "GRUCell", "UnidirectionalRNNEncoder", "BidirectionalRNNEncoder",
        "LuongAttention", "BasicRNNDecoder", "TransformerDecoder", "MLPTransformConnector", "ForwardConnector",
        "StochasticGaussianConnector", "RNNClassifier"})
    EXPECT_TRUE(reg.contains(name)) << name;
}

TEST(Registry, TypeSwitchMergesNewDefaults) {
  const auto reg = builtin_registry<float>();
  const auto schema = ConfigNode::map({{"encoder", reg.typed_block("UnidirectionalRNNEncoder")}});
  auto user = parse_config(
      "encoder:\n"
      "  type: UnidirectionalRNNEncoder\n"
      "  hparams:\n"
      "    cell:\n"
      "      type: GRUCell\n"
      "      hparams:\n"
      "        num_units: 8\n");
  const auto merged = merge_defaults(user, schema, reg.resolver());
  const auto& cell = merged.at_path("encoder.hparams.cell.hparams");
  EXPECT_EQ(cell.at("num_units").as_int(), 8);
  EXPECT_EQ(cell.at("num_layers").as_int(), 1);
  EXPECT_FALSE(cell.contains("forget_bias"));
}

TEST(Registry, KindMismatchAndTypos) {
  const auto reg = builtin_registry<float>();
  const auto schema = ConfigNode::map({{"encoder", reg.typed_block("UnidirectionalRNNEncoder")}});
  try {
    merge_defaults(parse_config("encoder:\n  type: LSTMCell\n"), schema, reg.resolver());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("'LSTMCell' is a cell, expected an encoder"), std::string::npos) << e.what();
  }
  try {
    merge_defaults(parse_config("encoder:\n  type: BidirectionalRNNEncodr\n"), schema, reg.resolver());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("did you mean 'BidirectionalRNNEncoder'"), std::string::npos) << e.what();
  }
  ParameterStore<float> store;
  EXPECT_THROW(reg.make_cell(ConfigNode::map({{"type", "LSTMCell"}, {"hparams", ConfigNode::map({{"units", 3}})}}), 2,
                             {&store, "c"}),
               ConfigError);
}

TEST(Registry, AttentionNeedsMatchingMemory) {
  auto reg = builtin_registry<float>();
  ParameterStore<float> store;
  WordEmbedder<float> emb(dim_hp(8), 9, {&store, "emb"});
  auto hp = BasicRNNDecoder<float>::default_hparams(lstm_hp(16));
  hp.set("attention", reg.typed_block("LuongAttention"));
  const auto block = ConfigNode::map({{"type", "BasicRNNDecoder"}, {"hparams", hp}});
  EXPECT_THROW(reg.make_decoder(block, &emb, 0, {&store, "dec"}), AssemblyError);
  try {
    reg.make_decoder(block, &emb, 32, {&store, "dec"});
    FAIL();
  } catch (const AssemblyError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("16"), std::string::npos) << msg;
    EXPECT_NE(msg.find("32"), std::string::npos) << msg;
  }
  EXPECT_NO_THROW(reg.make_decoder(block, &emb, 16, {&store, "dec"}));
}

namespace {
// Elman cell, registered by the test as a user extension.
class ElmanCell : public RNNCell<float> {
 public:
  ElmanCell(std::size_t in, std::size_t units, ParamScope<float> s) : in_(in), units_(units), scope_(std::move(s)) {}
  std::size_t input_dim() const override { return in_; }
  std::size_t output_dim() const override { return units_; }
  std::vector<std::size_t> state_dims() const override { return {units_}; }
  std::pair<Tensorf, CellState<float>> step(const Tensorf& x, const CellState<float>& state) override {
    check_input(x, state, "MyCell");
    Tensorf h = tanh(add(matmul(x, scope_("w", {in_, units_}, Init::xavier())),
                         matmul(state[0], scope_("u", {units_, units_}, Init::uniform(0.08f)))));
    return {h, {h}};
  }

 private:
  std::size_t in_, units_;
  ParamScope<float> scope_;
};
}  // namespace

TEST(Registry, UserModulePlugsIntoBuiltins) {
  auto reg = builtin_registry<float>();
  reg.add_cell("MyCell", ConfigNode::map({{"num_units", 5}}),
               [](const ConfigNode& hp, std::size_t in, ParamScope<float> scope) {
                 return std::make_unique<ElmanCell>(in, static_cast<std::size_t>(hp.at("num_units").as_int()),
                                                    std::move(scope));
               });
  EXPECT_THROW(reg.add_cell("MyCell", ConfigNode::map(), {}), ConfigError);
  const auto schema = ConfigNode::map({{"encoder", reg.typed_block("BidirectionalRNNEncoder")}});
  const auto cfg = merge_defaults(parse_config("encoder:\n  hparams:\n    cell:\n      type: MyCell\n"), schema,
                                  reg.resolver());
  ParameterStore<float> store;
  auto enc = reg.make_encoder(cfg.at("encoder"), 3, {&store, "encoder"});
  EXPECT_EQ(enc->output_dim(), 10u);
  Rng rng(1);
  const auto out = enc->encode(random_tensor<float>(rng, {2, 3, 3}), {3, 1});
  EXPECT_EQ(out.final_state.size(), 1u);
  EXPECT_TRUE(store.find("encoder/fw/w"));
}
