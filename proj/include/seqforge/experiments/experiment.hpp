#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "seqforge/config/parser.hpp"
#include "seqforge/eval/evaluate.hpp"
#include "seqforge/learning/checkpoint.hpp"
#include "seqforge/learning/trainer.hpp"
#include "seqforge/models/templates.hpp"

namespace seqforge {

inline ConfigNode data_config_schema() {
  return ConfigNode::map({{"tokenizer", "whitespace"},
                          {"paired", false},
                          {"train", ""},
                          {"valid", ""},
                          {"test", ""},
                          {"source_vocab", ""},
                          {"target_vocab", ""}});
}

/// An experiment directory: model.cfg, train.cfg and data.cfg. Data paths
/// in data.cfg are relative to the directory.
struct Experiment {
  std::filesystem::path dir;
  ConfigNode model_cfg;  // as written (merged on instantiation)
  ConfigNode train_cfg;  // merged
  ConfigNode data_cfg;   // merged
  TrainSchedule schedule;
  OptimizerSpec optimizer;
  Vocabulary source_vocab, target_vocab;
  SequenceDataset train, valid, test;

  VocabSizes vocab_sizes() const {
    return {data_cfg.at("paired").as_bool() ? source_vocab.size() : 0, target_vocab.size()};
  }
  bool has_valid() const { return valid.size() > 0; }
  bool has_test() const { return test.size() > 0; }
};

namespace detail {
inline std::filesystem::path require_file(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::is_regular_file(p)) throw IngestionError(what + ": no such file '" + p.string() + "'");
  return p;
}

inline SequenceDataset load_split(const Experiment& e, const std::string& key, bool required) {
  const auto& rel = e.data_cfg.at(key).as_string();
  if (rel.empty()) {
    if (required) throw ConfigError("data." + key + ": path required");
    return {};
  }
  const auto path = require_file(e.dir / rel, "data." + key).string();
  auto ds = e.data_cfg.at("paired").as_bool() ? load_paired(path, e.source_vocab, e.target_vocab)
                                              : load_mono(path, e.target_vocab);
  ds.validate(e.target_vocab.size(), ds.paired() ? e.source_vocab.size() : 0);
  return ds;
}
}  // namespace detail

/// Loads configs, vocabularies and data splits. `seed` overrides train.seed.
inline Experiment load_experiment(const std::string& dir, std::optional<std::uint64_t> seed = std::nullopt) {
  Experiment e;
  e.dir = dir;
  if (!std::filesystem::is_directory(e.dir)) throw IngestionError("config: no such directory '" + dir + "'");
  e.model_cfg = load_config(detail::require_file(e.dir / "model.cfg", "config").string());
  e.train_cfg = merge_defaults(load_config(detail::require_file(e.dir / "train.cfg", "config").string()),
                               TrainSchedule::default_hparams(), nullptr, "train");
  e.data_cfg = merge_defaults(load_config(detail::require_file(e.dir / "data.cfg", "config").string()),
                              data_config_schema(), nullptr, "data");
  if (seed) e.train_cfg.set("seed", static_cast<std::int64_t>(*seed));
  e.schedule = TrainSchedule::from_config(e.train_cfg);
  e.optimizer = OptimizerSpec::from_config(e.train_cfg.at("optimizer"));

  const auto tokenizer = parse_tokenizer(e.data_cfg.at("tokenizer").as_string());
  const auto& tv = e.data_cfg.at("target_vocab").as_string();
  if (tv.empty()) throw ConfigError("data.target_vocab: path required");
  e.target_vocab = Vocabulary::load(detail::require_file(e.dir / tv, "data.target_vocab").string(), tokenizer);
  if (e.data_cfg.at("paired").as_bool()) {
    const auto& sv = e.data_cfg.at("source_vocab").as_string();
    e.source_vocab = sv.empty() ? e.target_vocab
                                : Vocabulary::load(detail::require_file(e.dir / sv, "data.source_vocab").string(),
                                                   tokenizer);
  }
  e.train = detail::load_split(e, "train", true);
  e.valid = detail::load_split(e, "valid", false);
  e.test = detail::load_split(e, "test", false);
  return e;
}

template <typename T>
Instantiated<T> instantiate(const Experiment& e, const ModuleRegistry<T>& reg = builtin_registry<T>()) {
  return instantiate_template<T>(e.model_cfg, e.vocab_sizes(), e.schedule.seed, reg);
}

/// Trains the experiment's model; writes train.log, best.ckpt and
/// last.ckpt to `out_dir` (when non-empty).
inline TrainResult train_experiment(const Experiment& e, const std::string& out_dir,
                                    const ModuleRegistry<float>& reg = builtin_registry<float>()) {
  auto inst = instantiate<float>(e, reg);
  Trainer<float> trainer(*inst.model, inst.loss, inst.strategy, e.optimizer, e.schedule);
  const auto metric = selection_metric<float>(inst.model->template_name(), inst.strategy.max_len);
  return trainer.run(e.train, e.has_valid() ? &e.valid : nullptr, &metric, out_dir);
}

/// Metrics on the test split (valid if there is no test split).
template <typename T>
std::vector<MetricReport> evaluate_experiment(const Experiment& e, AssembledModel<T>& model,
                                              const StrategySpec& strategy) {
  const auto& ds = e.has_test() ? e.test : e.valid;
  if (ds.size() == 0) throw ConfigError("data: eval needs a test or valid split");
  std::vector<MetricReport> out;
  if (is_lm_family(model.template_name())) {
    out.push_back(perplexity(model, ds));
    out.push_back(unigram_perplexity(e.train, ds, e.target_vocab.size()));
  } else {
    out.push_back(token_accuracy(model, ds, strategy.max_len));
    out.push_back(corpus_bleu(model, ds, DecodingStrategy::greedy(), strategy.max_len));
  }
  return out;
}

inline void load_model_checkpoint(ParameterStore<float>& store, const std::string& path) {
  const auto ckpt = read_checkpoint(path);
  for (const auto& name : store.names())
    if (!ckpt.find(name)) throw IngestionError("checkpoint '" + path + "' lacks parameter '" + name + "'");
  restore_parameters(store, ckpt);
  if (const auto pending = store.pending_names(); !pending.empty())
    throw IngestionError("checkpoint '" + path + "' has parameter '" + pending.front() + "' the model does not use");
}

}  // namespace seqforge
