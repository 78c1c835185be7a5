#pragma once

#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "seqforge/config/merge.hpp"
#include "seqforge/config/registry.hpp"
#include "seqforge/modules/attention.hpp"
#include "seqforge/modules/classifier.hpp"
#include "seqforge/modules/connectors.hpp"
#include "seqforge/modules/decoder.hpp"
#include "seqforge/modules/embedder.hpp"
#include "seqforge/modules/encoders.hpp"
#include "seqforge/modules/rnn_cells.hpp"
#include "seqforge/modules/rnn_decoder.hpp"
#include "seqforge/modules/transformer_decoder.hpp"

namespace seqforge {

enum class ModuleKind { embedder, cell, encoder, attention, decoder, connector, classifier };

inline const char* module_kind_name(ModuleKind k) {
  switch (k) {
    case ModuleKind::embedder: return "embedder";
    case ModuleKind::cell: return "cell";
    case ModuleKind::encoder: return "encoder";
    case ModuleKind::attention: return "attention";
    case ModuleKind::decoder: return "decoder";
    case ModuleKind::connector: return "connector";
    case ModuleKind::classifier: return "classifier";
  }
  return "?";
}

inline std::string with_article(ModuleKind k) {
  const std::string n = module_kind_name(k);
  return (n[0] == 'a' || n[0] == 'e' ? "an " : "a ") + n;
}

template <typename T>
class ModuleRegistry;

/// Constructor signatures, one per module kind. `hp` is the merged hparams
/// map of the typed block.
template <typename T>
struct ModuleFactories {
  using Embedder = std::function<std::unique_ptr<WordEmbedder<T>>(const ConfigNode& hp, std::size_t vocab,
                                                                  ParamScope<T> scope)>;
  using Cell = std::function<std::unique_ptr<RNNCell<T>>(const ConfigNode& hp, std::size_t input_dim,
                                                         ParamScope<T> scope)>;
  using Encoder = std::function<std::unique_ptr<seqforge::Encoder<T>>(
      const ConfigNode& hp, std::size_t input_dim, ParamScope<T> scope, const ModuleRegistry<T>& registry)>;
  /// Returns nullptr for "no attention".
  using Attention = std::function<std::unique_ptr<LuongAttention<T>>(const ConfigNode& hp)>;
  /// memory_dim is 0 when there is no memory to attend to.
  using Decoder = std::function<std::unique_ptr<seqforge::Decoder<T>>(
      const ConfigNode& hp, WordEmbedder<T>* embedder, std::size_t memory_dim, ParamScope<T> scope,
      const ModuleRegistry<T>& registry)>;
  using Connector = std::function<std::unique_ptr<seqforge::Connector<T>>(
      const ConfigNode& hp, const std::vector<std::size_t>& in_dims, const std::vector<std::size_t>& out_dims,
      ParamScope<T> scope)>;
  using Classifier = std::function<std::unique_ptr<RNNClassifier<T>>(
      const ConfigNode& hp, std::size_t vocab, ParamScope<T> scope, const ModuleRegistry<T>& registry)>;
};

template <typename T>
struct ModuleEntry {
  using F = ModuleFactories<T>;
  ModuleKind kind;
  ConfigNode defaults;
  std::variant<typename F::Embedder, typename F::Cell, typename F::Encoder, typename F::Attention,
               typename F::Decoder, typename F::Connector, typename F::Classifier>
      factory;
};

/// Type name -> (kind, default hparams, constructor). Built-in and user
/// registrations are looked up the same way.
template <typename T>
class ModuleRegistry {
 public:
  using F = ModuleFactories<T>;

  ModuleRegistry() : entries_("module type") {}

  void add_embedder(const std::string& name, ConfigNode defaults, typename F::Embedder f) {
    entries_.add(name, {ModuleKind::embedder, std::move(defaults), std::move(f)});
  }
  void add_cell(const std::string& name, ConfigNode defaults, typename F::Cell f) {
    entries_.add(name, {ModuleKind::cell, std::move(defaults), std::move(f)});
  }
  void add_encoder(const std::string& name, ConfigNode defaults, typename F::Encoder f) {
    entries_.add(name, {ModuleKind::encoder, std::move(defaults), std::move(f)});
  }
  void add_attention(const std::string& name, ConfigNode defaults, typename F::Attention f) {
    entries_.add(name, {ModuleKind::attention, std::move(defaults), std::move(f)});
  }
  void add_decoder(const std::string& name, ConfigNode defaults, typename F::Decoder f) {
    entries_.add(name, {ModuleKind::decoder, std::move(defaults), std::move(f)});
  }
  void add_connector(const std::string& name, ConfigNode defaults, typename F::Connector f) {
    entries_.add(name, {ModuleKind::connector, std::move(defaults), std::move(f)});
  }
  void add_classifier(const std::string& name, ConfigNode defaults, typename F::Classifier f) {
    entries_.add(name, {ModuleKind::classifier, std::move(defaults), std::move(f)});
  }

  bool contains(const std::string& name) const { return entries_.contains(name); }
  std::vector<std::string> names() const { return entries_.names(); }

  const ModuleEntry<T>& resolve(const std::string& name) const { return entries_.resolve(name); }

  const ModuleEntry<T>& resolve(const std::string& name, ModuleKind kind, const std::string& where) const {
    const ModuleEntry<T>* e = nullptr;
    try {
      e = &entries_.resolve(name);
    } catch (const ConfigError& err) {
      throw ConfigError((where.empty() ? "" : where + ": ") + err.what());
    }
    if (e->kind != kind)
      throw ConfigError((where.empty() ? "" : where + ": ") + "'" + name + "' is " + with_article(e->kind) +
                        ", expected " + with_article(kind));
    return *e;
  }

  /// Default `{type, hparams}` block for a registered type.
  ConfigNode typed_block(const std::string& name) const {
    return ConfigNode::map({{"type", name}, {"hparams", resolve(name).defaults}});
  }

  /// Resolver for merge_defaults: a typed block may switch to any
  /// registered type of the same kind.
  TypeResolver resolver() const {
    return [this](const std::string& path, const std::string& default_type, const std::string& type) {
      const auto& def = resolve(default_type);
      return resolve(type, def.kind, path).defaults;
    };
  }

  // Builders from a typed block {type, hparams}; hparams are merged over the
  // type's defaults first.

  std::unique_ptr<WordEmbedder<T>> make_embedder(const ConfigNode& block, std::size_t vocab, ParamScope<T> scope) const {
    auto [e, hp] = prepare(block, ModuleKind::embedder, scope.prefix());
    return std::get<typename F::Embedder>(e->factory)(hp, vocab, std::move(scope));
  }
  std::unique_ptr<RNNCell<T>> make_cell(const ConfigNode& block, std::size_t input_dim, ParamScope<T> scope) const {
    auto [e, hp] = prepare(block, ModuleKind::cell, scope.prefix());
    return std::get<typename F::Cell>(e->factory)(hp, input_dim, std::move(scope));
  }
  std::unique_ptr<Encoder<T>> make_encoder(const ConfigNode& block, std::size_t input_dim, ParamScope<T> scope) const {
    auto [e, hp] = prepare(block, ModuleKind::encoder, scope.prefix());
    return std::get<typename F::Encoder>(e->factory)(hp, input_dim, std::move(scope), *this);
  }
  std::unique_ptr<LuongAttention<T>> make_attention(const ConfigNode& block, const std::string& where) const {
    auto [e, hp] = prepare(block, ModuleKind::attention, where);
    return std::get<typename F::Attention>(e->factory)(hp);
  }
  std::unique_ptr<Decoder<T>> make_decoder(const ConfigNode& block, WordEmbedder<T>* embedder, std::size_t memory_dim,
                                           ParamScope<T> scope) const {
    auto [e, hp] = prepare(block, ModuleKind::decoder, scope.prefix());
    return std::get<typename F::Decoder>(e->factory)(hp, embedder, memory_dim, std::move(scope), *this);
  }
  std::unique_ptr<Connector<T>> make_connector(const ConfigNode& block, const std::vector<std::size_t>& in_dims,
                                               const std::vector<std::size_t>& out_dims, ParamScope<T> scope) const {
    auto [e, hp] = prepare(block, ModuleKind::connector, scope.prefix());
    return std::get<typename F::Connector>(e->factory)(hp, in_dims, out_dims, std::move(scope));
  }
  std::unique_ptr<RNNClassifier<T>> make_classifier(const ConfigNode& block, std::size_t vocab, ParamScope<T> scope) const {
    auto [e, hp] = prepare(block, ModuleKind::classifier, scope.prefix());
    return std::get<typename F::Classifier>(e->factory)(hp, vocab, std::move(scope), *this);
  }

 private:
  std::pair<const ModuleEntry<T>*, ConfigNode> prepare(const ConfigNode& block, ModuleKind kind,
                                                       const std::string& where) const {
    const auto& type = block.at("type").as_string();
    const auto& e = resolve(type, kind, where);
    const ConfigNode* hp = block.find("hparams");
    const std::string path = where.empty() ? "hparams" : where + ".hparams";
    return {&e, merge_defaults(hp ? *hp : ConfigNode::map(), e.defaults, resolver(), path)};
  }

  Registry<ModuleEntry<T>> entries_;
};

/// A registry populated with every built-in module.
template <typename T>
ModuleRegistry<T> builtin_registry() {
  ModuleRegistry<T> r;
  const ConfigNode lstm_defaults = LSTMCell<T>::default_hparams();

  r.add_embedder("WordEmbedder", WordEmbedder<T>::default_hparams(),
                 [](const ConfigNode& hp, std::size_t vocab, ParamScope<T> scope) {
                   return std::make_unique<WordEmbedder<T>>(hp, vocab, std::move(scope));
                 });

  r.add_cell("LSTMCell", lstm_defaults, [](const ConfigNode& hp, std::size_t in, ParamScope<T> scope) {
    return std::make_unique<LSTMCell<T>>(hp, in, std::move(scope));
  });
  r.add_cell("GRUCell", GRUCell<T>::default_hparams(), [](const ConfigNode& hp, std::size_t in, ParamScope<T> scope) {
    return std::make_unique<GRUCell<T>>(hp, in, std::move(scope));
  });

  r.add_encoder("UnidirectionalRNNEncoder", rnn_encoder_defaults(lstm_defaults),
                [](const ConfigNode& hp, std::size_t in, ParamScope<T> scope, const ModuleRegistry<T>& reg) {
                  return std::make_unique<UnidirectionalRNNEncoder<T>>(reg.make_cell(hp.at("cell"), in, scope.child("cell")));
                });
  r.add_encoder("BidirectionalRNNEncoder", rnn_encoder_defaults(lstm_defaults),
                [](const ConfigNode& hp, std::size_t in, ParamScope<T> scope, const ModuleRegistry<T>& reg) {
                  return std::make_unique<BidirectionalRNNEncoder<T>>(reg.make_cell(hp.at("cell"), in, scope.child("fw")),
                                                                      reg.make_cell(hp.at("cell"), in, scope.child("bw")));
                });

  r.add_attention("LuongAttention", LuongAttention<T>::default_hparams(),
                  [](const ConfigNode& hp) { return std::make_unique<LuongAttention<T>>(hp); });
  r.add_attention("none", ConfigNode::map(), [](const ConfigNode&) { return std::unique_ptr<LuongAttention<T>>(); });

  r.add_decoder("BasicRNNDecoder", BasicRNNDecoder<T>::default_hparams(lstm_defaults),
                [](const ConfigNode& hp, WordEmbedder<T>* emb, std::size_t memory_dim, ParamScope<T> scope,
                   const ModuleRegistry<T>& reg) -> std::unique_ptr<Decoder<T>> {
                  auto attention = reg.make_attention(hp.at("attention"), scope.prefix() + ".attention");
                  if (attention && memory_dim == 0)
                    throw AssemblyError(scope.prefix() + ": attention needs an encoder memory, but none is provided");
                  const std::size_t mem = attention ? memory_dim : 0;
                  auto cell = reg.make_cell(hp.at("cell"), emb->dim() + mem, scope.child("cell"));
                  return std::make_unique<BasicRNNDecoder<T>>(emb, std::move(cell), std::move(attention), mem,
                                                              std::move(scope));
                });
  r.add_decoder("TransformerDecoder", TransformerDecoder<T>::default_hparams(),
                [](const ConfigNode& hp, WordEmbedder<T>* emb, std::size_t memory_dim, ParamScope<T> scope,
                   const ModuleRegistry<T>&) -> std::unique_ptr<Decoder<T>> {
                  return std::make_unique<TransformerDecoder<T>>(hp, emb, memory_dim, std::move(scope));
                });

  r.add_connector("MLPTransformConnector", MLPTransformConnector<T>::default_hparams(),
                  [](const ConfigNode& hp, const std::vector<std::size_t>& in, const std::vector<std::size_t>& out,
                     ParamScope<T> scope) -> std::unique_ptr<Connector<T>> {
                    return std::make_unique<MLPTransformConnector<T>>(hp, in, out, std::move(scope));
                  });
  r.add_connector("ForwardConnector", ForwardConnector<T>::default_hparams(),
                  [](const ConfigNode&, const std::vector<std::size_t>& in, const std::vector<std::size_t>& out,
                     ParamScope<T>) -> std::unique_ptr<Connector<T>> {
                    return std::make_unique<ForwardConnector<T>>(in, out, "encoder", "decoder");
                  });
  r.add_connector("StochasticGaussianConnector", StochasticGaussianConnector<T>::default_hparams(),
                  [](const ConfigNode& hp, const std::vector<std::size_t>& in, const std::vector<std::size_t>& out,
                     ParamScope<T> scope) -> std::unique_ptr<Connector<T>> {
                    return std::make_unique<StochasticGaussianConnector<T>>(hp, in, out, std::move(scope));
                  });

  r.add_classifier("RNNClassifier", RNNClassifier<T>::default_hparams(lstm_defaults),
                   [](const ConfigNode& hp, std::size_t vocab, ParamScope<T> scope, const ModuleRegistry<T>& reg) {
                     const auto embed_dim = static_cast<std::size_t>(hp.at("embed_dim").as_int());
                     auto cell = reg.make_cell(hp.at("cell"), embed_dim, scope.child("cell"));
                     return std::make_unique<RNNClassifier<T>>(embed_dim, vocab, std::move(cell), std::move(scope));
                   });
  return r;
}

}  // namespace seqforge
