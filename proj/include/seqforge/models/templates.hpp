#pragma once

#include <memory>
#include <string>
#include <vector>

#include "seqforge/config/merge.hpp"
#include "seqforge/learning/model.hpp"
#include "seqforge/learning/trainer.hpp"
#include "seqforge/modules/beam_search.hpp"
#include "seqforge/modules/registry.hpp"

namespace seqforge {

inline const std::vector<std::string>& template_names() {
  static const std::vector<std::string> names{"lm", "seq2seq_attn", "vae_lm", "seqgan_lm"};
  return names;
}

inline bool is_lm_family(const std::string& name) { return name != "seq2seq_attn"; }

struct VocabSizes {
  std::size_t source = 0;  // conditional templates only
  std::size_t target = 0;
};

namespace detail {
inline ConfigNode with_cell_units(ConfigNode block, std::int64_t units) {
  block.at_path("hparams.cell.hparams").set("num_units", units);
  return block;
}

inline std::string read_template_name(const ConfigNode& user) {
  if (!user.is_map()) throw ConfigError("model config must be a map");
  const auto* t = user.find("template");
  if (!t) throw ConfigError("template: missing (expected one of lm, seq2seq_attn, vae_lm, seqgan_lm)");
  const auto& name = t->as_string();
  for (const auto& n : template_names())
    if (n == name) return name;
  throw ConfigError("template: unknown '" + name + "' (expected one of lm, seq2seq_attn, vae_lm, seqgan_lm)");
}
}  // namespace detail

/// Complete default model config for a template. `hidden_size` sets the
/// default width of every recurrent cell (halved per direction for the
/// bidirectional encoder, so the attention memory matches the decoder).
template <typename T>
ConfigNode template_schema(const std::string& name, const ModuleRegistry<T>& reg, std::int64_t hidden_size = 64) {
  if (hidden_size < 2) throw ConfigError("hidden_size must be >= 2");
  auto node = ConfigNode::map({{"template", name}, {"hidden_size", hidden_size}});
  auto decoder = detail::with_cell_units(reg.typed_block("BasicRNNDecoder"), hidden_size);
  auto loss = LossSpec::default_hparams();
  auto strategy = StrategySpec::default_hparams();

  if (name == "seq2seq_attn") {
    node.set("source_embedder", reg.typed_block("WordEmbedder"));
    node.set("encoder", detail::with_cell_units(reg.typed_block("BidirectionalRNNEncoder"), hidden_size / 2));
    node.set("connector", reg.typed_block("MLPTransformConnector"));
    decoder.at_path("hparams.attention").set("type", "LuongAttention");
    decoder.at_path("hparams.attention").set("hparams", reg.resolve("LuongAttention").defaults);
    if (hidden_size % 2) throw ConfigError("seq2seq_attn: hidden_size must be even");
  } else if (name == "vae_lm") {
    node.set("encoder", detail::with_cell_units(reg.typed_block("UnidirectionalRNNEncoder"), hidden_size));
    node.set("connector", reg.typed_block("StochasticGaussianConnector"));
    loss.set("kind", "vae_elbo");
    loss.set("kl_anneal_steps", 1000);
  } else if (name == "seqgan_lm") {
    auto disc = reg.typed_block("RNNClassifier");
    disc.at_path("hparams.cell.hparams").set("num_units", hidden_size);
    node.set("discriminator", disc);
    loss.set("kind", "seqgan");
    loss.set("mle_pretrain_epochs", 2);
    strategy.at("train").set("kind", "sample");
  } else if (name != "lm") {
    throw ConfigError("template: unknown '" + name + "'");
  }
  node.set("embedder", reg.typed_block("WordEmbedder"));
  node.set("decoder", decoder);
  node.set("loss", loss);
  node.set("strategy", strategy);
  return node;
}

/// Merges a user model config over its template's defaults.
template <typename T>
ConfigNode merge_model_config(const ConfigNode& user, const ModuleRegistry<T>& reg) {
  const auto name = detail::read_template_name(user);
  std::int64_t hidden = 64;
  if (const auto* h = user.find("hidden_size")) hidden = h->as_int();
  return merge_defaults(user, template_schema(name, reg, hidden), reg.resolver());
}

/// A model assembled from a merged template config.
template <typename T>
class AssembledModel : public SequenceModel<T> {
 public:
  AssembledModel(const ConfigNode& merged, VocabSizes vocab, std::uint64_t seed, const ModuleRegistry<T>& reg)
      : name_(merged.at("template").as_string()), store_(seed), vocab_(vocab) {
    if (vocab_.target <= Vocabulary::kReserved)
      throw ConfigError(name_ + ": target vocabulary has no regular tokens");
    const auto scope = [&](const std::string& n) { return ParamScope<T>(&store_, n); };

    embedder_ = reg.make_embedder(merged.at("embedder"), vocab_.target, scope("embedder"));
    std::size_t memory_dim = 0;

    if (name_ == "seq2seq_attn") {
      if (vocab_.source <= Vocabulary::kReserved)
        throw ConfigError(name_ + ": source vocabulary has no regular tokens");
      source_embedder_ = reg.make_embedder(merged.at("source_embedder"), vocab_.source, scope("source_embedder"));
      encoder_ = reg.make_encoder(merged.at("encoder"), source_embedder_->dim(), scope("encoder"));
      memory_dim = encoder_->output_dim();
    } else if (name_ == "vae_lm") {
      encoder_ = reg.make_encoder(merged.at("encoder"), embedder_->dim(), scope("encoder"));
    }

    decoder_ = reg.make_decoder(merged.at("decoder"), embedder_.get(), memory_dim, scope("decoder"));
    const auto state_dims = decoder_->cell_state_dims();

    if (merged.contains("connector")) {
      const auto& block = merged.at("connector");
      if (name_ == "vae_lm") {
        if (state_dims.empty())
          throw AssemblyError("vae_lm: decoder '" + merged.at_path("decoder.type").as_string() +
                              "' has no recurrent state for the latent code to initialize");
        auto c = reg.make_connector(block, encoder_->state_dims(), state_dims, scope("connector"));
        gaussian_ = dynamic_cast<StochasticGaussianConnector<T>*>(c.get());
        if (!gaussian_)
          throw AssemblyError("vae_lm: connector must be StochasticGaussianConnector, got '" +
                              block.at("type").as_string() + "'");
        connector_ = std::move(c);
      } else if (!state_dims.empty()) {
        connector_ = reg.make_connector(block, encoder_->state_dims(), state_dims, scope("connector"));
      }
    }
    if (merged.contains("discriminator"))
      discriminator_ = reg.make_classifier(merged.at("discriminator"), vocab_.target, scope("discriminator"));

    materialize();
  }

  const std::string& template_name() const { return name_; }
  ParameterStore<T>& parameters() override { return store_; }
  const ParameterStore<T>& parameters() const override { return store_; }
  std::size_t vocab_size() const override { return vocab_.target; }
  VocabSizes vocab_sizes() const { return vocab_; }
  Decoder<T>& decoder() { return *decoder_; }

  std::vector<std::string> generator_parameters() const override { return names_where(false); }
  std::vector<std::string> discriminator_parameters() const override { return names_where(true); }

  bool variational() const override { return gaussian_ != nullptr; }
  bool conditional() const override { return source_embedder_ != nullptr; }
  bool has_discriminator() const override { return discriminator_ != nullptr; }

  TeacherForced<T> teacher_force(const Batch& batch, Rng* rng) override {
    TeacherForced<T> out;
    const auto ctx = context(batch, rng, &out);
    out.logits = decoder_
                     ->decode(DecodingStrategy::teacher_forcing(), ctx.state, ctx.memory ? &*ctx.memory : nullptr,
                              &batch.target, 0)
                     .logits;
    return out;
  }

  DecoderOutput<T> generate(const Batch& batch, const DecodingStrategy& strategy, std::size_t max_len) override {
    Rng rng(derive_seed(strategy.seed, kPriorStream));
    const auto ctx = context(batch, variational() ? &rng : nullptr, nullptr, true);
    return decoder_->decode(strategy, ctx.state, ctx.memory ? &*ctx.memory : nullptr, nullptr, max_len,
                            batch.size());
  }

  /// Beam search per example; hypotheses sorted best first.
  std::vector<std::vector<Hypothesis>> beam_generate(const Batch& batch, std::size_t width, std::size_t max_len,
                                                     double length_penalty = 0, std::uint64_t seed = 0) {
    Rng rng(derive_seed(seed, kPriorStream));
    const auto ctx = context(batch, variational() ? &rng : nullptr, nullptr, true);
    return beam_search<T>(*decoder_, ctx.state, ctx.memory ? &*ctx.memory : nullptr, batch.size(), width, max_len,
                          length_penalty);
  }

  Tensor<T> discriminate(const PaddedIds& ids) override {
    if (!discriminator_) return SequenceModel<T>::discriminate(ids);
    return discriminator_->probs(ids);
  }
  Tensor<T> discriminate_soft(const Tensor<T>& probs, const std::vector<std::size_t>& lengths) override {
    if (!discriminator_) return SequenceModel<T>::discriminate_soft(probs, lengths);
    return discriminator_->probs_soft(probs, lengths);
  }

 private:
  static constexpr std::uint64_t kPriorStream = 0x9a0551a4ull;

  struct Context {
    DecoderState<T> state;
    std::optional<Memory<T>> memory;
  };

  /// Encoder / connector pass producing the decoder's initial state.
  /// `prior`: draw the latent code from N(0, I) instead of the posterior.
  Context context(const Batch& batch, Rng* rng, TeacherForced<T>* tf, bool prior = false) {
    Context ctx;
    const std::size_t n = batch.size();
    if (conditional()) {
      if (!batch.source) throw ContractError(name_ + ": batch has no source sequences");
      if (batch.source->batch != n) throw DimensionError(name_ + ": source/target batch mismatch");
      const auto enc = encoder_->encode(source_embedder_->embed(*batch.source), batch.source->lengths);
      ctx.memory = Memory<T>{enc.outputs, enc.lengths};
      if (connector_) {
        const auto cs = connector_->connect(enc.final_state);
        ctx.state = decoder_->initial_state(n, &cs);
      } else {
        ctx.state = decoder_->initial_state(n, nullptr);
      }
    } else if (variational()) {
      std::vector<Tensor<T>> cs;
      if (prior) {
        const Tensor<T> z = rng ? gaussian_->draw_eps(n, *rng) : Tensor<T>::zeros({n, gaussian_->latent_dim()});
        cs = gaussian_->from_latent(z);
      } else {
        const auto enc = encoder_->encode(embedder_->embed(batch.target), batch.target.lengths);
        const Tensor<T> eps = rng ? gaussian_->draw_eps(n, *rng) : Tensor<T>::zeros({n, gaussian_->latent_dim()});
        auto s = gaussian_->sample(enc.final_state, eps);
        if (tf) {
          tf->mu = s.mu;
          tf->logvar = s.logvar;
        }
        cs = std::move(s.outputs);
      }
      ctx.state = decoder_->initial_state(n, &cs);
    } else {
      ctx.state = decoder_->initial_state(n, nullptr);
    }
    return ctx;
  }

  /// Creates every parameter up front so the parameter set is known before
  /// the first training step.
  void materialize() {
    auto pause = Tape<T>::pause();
    Batch b;
    b.target = PaddedIds::from(std::vector<TokenIds>{{Vocabulary::kEos}});
    if (conditional()) b.source = PaddedIds::from(std::vector<TokenIds>{{Vocabulary::kEos}});
    b.indices = {0};
    teacher_force(b, nullptr);
    if (discriminator_) discriminator_->probs(b.target);
  }

  std::vector<std::string> names_where(bool discriminator) const {
    std::vector<std::string> out;
    for (const auto& e : store_.entries())
      if ((e.name.rfind("discriminator/", 0) == 0) == discriminator) out.push_back(e.name);
    return out;
  }

  std::string name_;
  ParameterStore<T> store_;
  VocabSizes vocab_;
  std::unique_ptr<WordEmbedder<T>> embedder_, source_embedder_;
  std::unique_ptr<Encoder<T>> encoder_;
  std::unique_ptr<Connector<T>> connector_;
  StochasticGaussianConnector<T>* gaussian_ = nullptr;
  std::unique_ptr<Decoder<T>> decoder_;
  std::unique_ptr<RNNClassifier<T>> discriminator_;
};

template <typename T>
struct Instantiated {
  std::unique_ptr<AssembledModel<T>> model;
  LossSpec loss;
  StrategySpec strategy;
  ConfigNode config;  // merged model config
};

/// Parses, merges and assembles a model config into a trainable model.
template <typename T>
Instantiated<T> instantiate_template(const ConfigNode& user, VocabSizes vocab, std::uint64_t seed,
                                     const ModuleRegistry<T>& reg = builtin_registry<T>()) {
  Instantiated<T> out;
  out.config = merge_model_config(user, reg);
  out.loss = LossSpec::from_config(out.config.at("loss"));
  out.strategy = StrategySpec::from_config(out.config.at("strategy"));
  out.model = std::make_unique<AssembledModel<T>>(out.config, vocab, seed, reg);
  check_paradigm(out.loss, out.strategy, out.model->variational(), out.model->has_discriminator());
  return out;
}

}  // namespace seqforge
