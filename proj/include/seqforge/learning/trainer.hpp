#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seqforge/eval/metrics.hpp"
#include "seqforge/learning/checkpoint.hpp"
#include "seqforge/learning/losses.hpp"
#include "seqforge/learning/model.hpp"

namespace seqforge {

struct LossSpec {
  enum class Kind { mle, vae_elbo, policy_gradient, adversarial_gumbel, seqgan };
  enum class Reward { task_metric, discriminator_score };
  Kind kind = Kind::mle;
  std::size_t kl_anneal_steps = 0;
  double baseline_decay = 0.99;
  Reward reward = Reward::task_metric;
  std::size_t mle_pretrain_epochs = 0;
  std::size_t d_steps = 1, g_steps = 1;

  static ConfigNode default_hparams() {
    return ConfigNode::map({{"kind", "mle"},
                            {"kl_anneal_steps", 0},
                            {"baseline_decay", 0.99},
                            {"reward", "task_metric"},
                            {"mle_pretrain_epochs", 0},
                            {"d_steps", 1},
                            {"g_steps", 1}});
  }

  static const char* kind_name(Kind k) {
    switch (k) {
      case Kind::mle: return "mle";
      case Kind::vae_elbo: return "vae_elbo";
      case Kind::policy_gradient: return "policy_gradient";
      case Kind::adversarial_gumbel: return "adversarial_gumbel";
      case Kind::seqgan: return "seqgan";
    }
    return "?";
  }

  static LossSpec from_config(const ConfigNode& hp) {
    LossSpec s;
    const auto& kind = hp.at("kind").as_string();
    bool found = false;
    for (auto k : {Kind::mle, Kind::vae_elbo, Kind::policy_gradient, Kind::adversarial_gumbel, Kind::seqgan})
      if (kind == kind_name(k)) {
        s.kind = k;
        found = true;
      }
    if (!found)
      throw ConfigError("loss.kind: unknown '" + kind +
                        "' (expected mle, vae_elbo, policy_gradient, adversarial_gumbel or seqgan)");
    const auto non_negative = [&](const char* key) {
      const auto v = hp.at(key).as_int();
      if (v < 0) throw ConfigError(std::string("loss.") + key + " must be >= 0");
      return static_cast<std::size_t>(v);
    };
    s.kl_anneal_steps = non_negative("kl_anneal_steps");
    s.mle_pretrain_epochs = non_negative("mle_pretrain_epochs");
    s.d_steps = non_negative("d_steps");
    s.g_steps = non_negative("g_steps");
    s.baseline_decay = hp.at("baseline_decay").as_float();
    if (!(s.baseline_decay >= 0 && s.baseline_decay <= 1)) throw ConfigError("loss.baseline_decay must be in [0, 1]");
    const auto& reward = hp.at("reward").as_string();
    if (reward == "task_metric") s.reward = Reward::task_metric;
    else if (reward == "discriminator_score") s.reward = Reward::discriminator_score;
    else throw ConfigError("loss.reward: expected task_metric or discriminator_score, got '" + reward + "'");
    return s;
  }
};

/// Train- and eval-time decoding settings.
struct StrategySpec {
  DecodingStrategy train = DecodingStrategy::teacher_forcing();
  DecodingStrategy eval = DecodingStrategy::greedy();
  std::size_t max_len = 40;
  std::size_t beam_width = 0;  // 0: use `eval` instead of beam search
  double length_penalty = 0;

  static ConfigNode default_hparams() {
    auto train = DecodingStrategy::default_hparams();
    train.set("kind", "teacher_forcing");
    return ConfigNode::map({{"train", train},
                            {"eval", DecodingStrategy::default_hparams()},
                            {"max_len", 40},
                            {"beam_width", 0},
                            {"length_penalty", 0.0}});
  }

  static StrategySpec from_config(const ConfigNode& hp) {
    StrategySpec s;
    s.train = DecodingStrategy::from_config(hp.at("train"));
    s.eval = DecodingStrategy::from_config(hp.at("eval"));
    if (s.eval.kind == DecodingStrategy::Kind::teacher_forcing)
      throw ConfigError("strategy.eval: teacher_forcing cannot generate");
    const auto max_len = hp.at("max_len").as_int(), beam = hp.at("beam_width").as_int();
    if (max_len < 1) throw ConfigError("strategy.max_len must be >= 1");
    if (beam < 0) throw ConfigError("strategy.beam_width must be >= 0");
    s.max_len = static_cast<std::size_t>(max_len);
    s.beam_width = static_cast<std::size_t>(beam);
    s.length_penalty = hp.at("length_penalty").as_float();
    return s;
  }
};

/// Checks that the train strategy suits the loss and the model has the
/// parts the loss needs.
inline void check_paradigm(const LossSpec& loss, const StrategySpec& strategy, bool variational,
                           bool has_discriminator) {
  using K = LossSpec::Kind;
  using S = DecodingStrategy::Kind;
  const auto need = [&](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(std::string("loss.kind ") + LossSpec::kind_name(loss.kind) + ": " + what);
  };
  switch (loss.kind) {
    case K::mle:
    case K::vae_elbo:
      need(strategy.train.kind == S::teacher_forcing, "strategy.train.kind must be teacher_forcing");
      need(loss.kind != K::vae_elbo || variational, "requires a variational model (vae_lm)");
      break;
    case K::policy_gradient:
      need(strategy.train.kind == S::sample || strategy.train.kind == S::top_k,
           "strategy.train.kind must be sample or top_k");
      need(loss.reward == LossSpec::Reward::task_metric || has_discriminator,
           "discriminator_score reward requires a discriminator");
      break;
    case K::seqgan:
      need(strategy.train.kind == S::sample || strategy.train.kind == S::top_k,
           "strategy.train.kind must be sample or top_k");
      need(has_discriminator, "requires a discriminator (seqgan_lm)");
      break;
    case K::adversarial_gumbel:
      need(strategy.train.kind == S::gumbel_softmax, "strategy.train.kind must be gumbel_softmax");
      need(has_discriminator, "requires a discriminator (seqgan_lm)");
      break;
  }
}

struct TrainSchedule {
  std::uint64_t seed = 0;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  bool shuffle = true;
  /// Stop once the validation metric reaches this value (0: never).
  double early_stop = 0;

  static ConfigNode default_hparams() {
    return ConfigNode::map({{"seed", 0},
                            {"epochs", 10},
                            {"batch_size", 32},
                            {"shuffle", true},
                            {"early_stop", 0.0},
                            {"optimizer", OptimizerSpec::default_hparams()}});
  }

  static TrainSchedule from_config(const ConfigNode& hp) {
    TrainSchedule s;
    const auto seed = hp.at("seed").as_int(), epochs = hp.at("epochs").as_int(), bs = hp.at("batch_size").as_int();
    if (seed < 0 || epochs < 0 || bs < 1) throw ConfigError("train: seed, epochs must be >= 0 and batch_size >= 1");
    s.seed = static_cast<std::uint64_t>(seed);
    s.epochs = static_cast<std::size_t>(epochs);
    s.batch_size = static_cast<std::size_t>(bs);
    s.shuffle = hp.at("shuffle").as_bool();
    s.early_stop = hp.at("early_stop").as_float();
    return s;
  }
};

struct LogEntry {
  std::size_t step;
  std::string name;
  double value;
};

template <typename T>
struct ValidationMetric {
  std::string name;
  bool higher_is_better = false;
  std::function<MetricReport(SequenceModel<T>&, const SequenceDataset&)> evaluate;
};

struct TrainResult {
  std::vector<LogEntry> log;
  std::vector<MetricReport> validation;  // one per epoch
  std::optional<Checkpoint> best;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  std::size_t epochs_run = 0;
};

using StepLosses = std::vector<std::pair<std::string, double>>;

/// Training executor: runs the configured paradigm over any SequenceModel.
template <typename T>
class Trainer {
 public:
  Trainer(SequenceModel<T>& model, LossSpec loss, StrategySpec strategy, OptimizerSpec optimizer,
          TrainSchedule schedule)
      : model_(model),
        loss_(loss),
        strategy_(strategy),
        schedule_(schedule),
        gen_opt_(optimizer),
        disc_opt_(optimizer),
        baseline_(loss.baseline_decay) {
    check_paradigm(loss_, strategy_, model_.variational(), model_.has_discriminator());
    gen_names_ = model_.generator_parameters();
    disc_names_ = model_.discriminator_parameters();
  }

  TrainResult run(const SequenceDataset& train, const SequenceDataset* valid = nullptr,
                  const ValidationMetric<T>* metric = nullptr, const std::string& out_dir = "") {
    TrainResult result;
    std::ofstream log_file;
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      log_file.open(std::filesystem::path(out_dir) / "train.log", std::ios::app);
      if (!log_file) throw IngestionError("cannot open log in '" + out_dir + "'");
    }
    const auto record = [&](std::size_t step, const std::string& name, double value) {
      result.log.push_back({step, name, value});
      if (log_file) log_file << step << '\t' << name << '\t' << format_value(value) << '\n';
    };

    std::optional<double> best;
    for (std::size_t epoch = 0; epoch < schedule_.epochs; ++epoch) {
      BatchIterator it(train, schedule_.batch_size, schedule_.shuffle, derive_seed(schedule_.seed, epoch));
      const bool pretrain = epoch < loss_.mle_pretrain_epochs;
      while (auto batch = it.next()) {
        const auto losses = pretrain ? mle_step(*batch) : train_step(*batch);
        for (const auto& [name, value] : losses) record(step_, name, value);
      }
      result.epochs_run = epoch + 1;
      if (valid && metric) {
        MetricReport r;
        {
          auto pause = Tape<T>::pause();
          r = metric->evaluate(model_, *valid);
        }
        result.validation.push_back(r);
        record(step_, "valid_" + r.name, r.value);
        const bool improved = !best || (metric->higher_is_better ? r.value > *best : r.value < *best);
        if (improved) {
          best = r.value;
          result.best_epoch = epoch;
          result.best = snapshot(epoch, &r);
          if (!out_dir.empty()) write_checkpoint((std::filesystem::path(out_dir) / "best.ckpt").string(), *result.best);
        }
        if (schedule_.early_stop > 0 &&
            (metric->higher_is_better ? r.value >= schedule_.early_stop : r.value <= schedule_.early_stop))
          break;
      }
    }
    result.steps = step_;
    if (!out_dir.empty()) {
      const auto last = snapshot(result.epochs_run, nullptr);
      write_checkpoint((std::filesystem::path(out_dir) / "last.ckpt").string(), last);
      if (!result.best) write_checkpoint((std::filesystem::path(out_dir) / "best.ckpt").string(), last);
    }
    return result;
  }

  /// One update of the configured paradigm.
  StepLosses train_step(const Batch& batch) {
    switch (loss_.kind) {
      case LossSpec::Kind::mle:
      case LossSpec::Kind::vae_elbo: return mle_step(batch);
      case LossSpec::Kind::policy_gradient: return policy_gradient_step(batch);
      case LossSpec::Kind::adversarial_gumbel: return adversarial_step(batch);
      case LossSpec::Kind::seqgan: return seqgan_step(batch);
    }
    return {};
  }

  /// Cross-entropy (plus annealed KL for variational models).
  StepLosses mle_step(const Batch& batch) {
    Rng rng(derive_seed(schedule_.seed, 1'000'003ull * (step_ + 1)));
    Tape<T> tape;
    StepLosses out;
    Tensor<T> total;
    {
      auto scope = tape.activate();
      const auto tf = model_.teacher_force(batch, &rng);
      const Tensor<T> ce = sequence_cross_entropy(tf.logits, batch.target);
      total = ce;
      out.emplace_back("ce", static_cast<double>(ce.item()));
      if (tf.mu) {
        const double w = kl_anneal_weight(step_, loss_.kl_anneal_steps);
        const auto elbo = vae_elbo_loss(ce, *tf.mu, *tf.logvar, w);
        total = elbo.total;
        out.emplace_back("kl", static_cast<double>(elbo.kl.item()));
        out.emplace_back("kl_weight", w);
      }
    }
    out.insert(out.begin(), {"loss", static_cast<double>(total.item())});
    apply(tape, total, gen_names_, gen_opt_);
    ++step_;
    return out;
  }

  /// REINFORCE with an EMA baseline; reward from the configured source.
  StepLosses policy_gradient_step(const Batch& batch) {
    const auto reward_kind =
        loss_.kind == LossSpec::Kind::seqgan ? LossSpec::Reward::discriminator_score : loss_.reward;
    Tape<T> tape;
    Tensor<T> loss;
    std::vector<double> rewards;
    double baseline = 0;
    {
      auto scope = tape.activate();
      const auto sample = model_.generate(batch, step_strategy(strategy_.train), strategy_.max_len);
      const auto ids = sample.padded();
      {
        auto pause = Tape<T>::pause();
        rewards = compute_rewards(reward_kind, ids, batch);
      }
      baseline = baseline_.update(rewards);
      loss = policy_gradient_loss(token_log_probs(sample.logits, ids), ids.lengths, rewards, baseline);
    }
    double mean = 0;
    for (double r : rewards) mean += r / static_cast<double>(rewards.size());
    StepLosses out{{"pg_loss", static_cast<double>(loss.item())}, {"reward", mean}, {"baseline", baseline}};
    out.emplace_back("g_grad_norm", apply(tape, loss, gen_names_, gen_opt_));
    ++step_;
    return out;
  }

  /// Discriminator update on real vs generated sequences. Generated samples
  /// are constants here, so only discriminator parameters move.
  StepLosses discriminator_step(const Batch& batch, bool soft) {
    DecoderOutput<T> fake;
    {
      auto pause = Tape<T>::pause();
      fake = model_.generate(batch, step_strategy(strategy_.train), strategy_.max_len);
    }
    Tape<T> tape;
    Tensor<T> loss;
    double acc = 0;
    {
      auto scope = tape.activate();
      const Tensor<T> real_p = model_.discriminate(batch.target);
      const Tensor<T> fake_p = soft ? model_.discriminate_soft(fake.soft_samples->detached(), fake.lengths)
                                    : model_.discriminate(fake.padded());
      loss = discriminator_loss(real_p, fake_p);
      acc = discriminator_accuracy<T>(real_p.data(), fake_p.data());
    }
    StepLosses out{{"d_loss", static_cast<double>(loss.item())}, {"d_accuracy", acc}};
    apply(tape, loss, disc_names_, disc_opt_);
    ++step_;
    return out;
  }

  /// Generator update through the Gumbel-softmax path: the discriminator
  /// reads the soft samples, gradients flow back into the decoder.
  StepLosses gumbel_generator_step(const Batch& batch) {
    Tape<T> tape;
    Tensor<T> loss;
    {
      auto scope = tape.activate();
      const auto fake = model_.generate(batch, step_strategy(strategy_.train), strategy_.max_len);
      loss = generator_loss(model_.discriminate_soft(*fake.soft_samples, fake.lengths));
    }
    StepLosses out{{"g_loss", static_cast<double>(loss.item())}};
    out.emplace_back("g_grad_norm", apply(tape, loss, gen_names_, gen_opt_));
    ++step_;
    return out;
  }

  StepLosses adversarial_step(const Batch& batch) {
    StepLosses out;
    for (std::size_t i = 0; i < loss_.d_steps; ++i) append(out, discriminator_step(batch, true));
    for (std::size_t i = 0; i < loss_.g_steps; ++i) append(out, gumbel_generator_step(batch));
    return out;
  }

  StepLosses seqgan_step(const Batch& batch) {
    StepLosses out;
    for (std::size_t i = 0; i < loss_.d_steps; ++i) append(out, discriminator_step(batch, false));
    for (std::size_t i = 0; i < loss_.g_steps; ++i) append(out, policy_gradient_step(batch));
    return out;
  }

  std::vector<double> compute_rewards(LossSpec::Reward kind, const PaddedIds& samples, const Batch& batch) {
    std::vector<double> r(samples.batch);
    if (kind == LossSpec::Reward::discriminator_score) {
      const auto p = model_.discriminate(samples);
      for (std::size_t b = 0; b < samples.batch; ++b) r[b] = static_cast<double>(p[b]);
    } else {
      for (std::size_t b = 0; b < samples.batch; ++b)
        r[b] = sentence_bleu(strip_eos(samples.row(b)), strip_eos(batch.target.row(b)));
    }
    return r;
  }

  Checkpoint snapshot(std::size_t epoch, const MetricReport* metric) const {
    auto c = make_checkpoint<T>(model_.parameters(), {&gen_opt_, &disc_opt_});
    c.meta["epoch"] = std::to_string(epoch);
    c.meta["step"] = std::to_string(step_);
    c.meta["baseline"] = format_value(baseline_.value());
    if (metric) c.meta[metric->name] = format_value(metric->value);
    return c;
  }

  std::size_t global_step() const { return step_; }
  Optimizer<T>& generator_optimizer() { return gen_opt_; }
  Optimizer<T>& discriminator_optimizer() { return disc_opt_; }
  EmaBaseline& baseline() { return baseline_; }
  const LossSpec& loss() const { return loss_; }

 private:
  static void append(StepLosses& out, const StepLosses& more) { out.insert(out.end(), more.begin(), more.end()); }

  static std::string format_value(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
  }

  /// Per-step seed for stochastic strategies.
  DecodingStrategy step_strategy(DecodingStrategy s) const {
    s.seed = derive_seed(s.seed ^ schedule_.seed, step_ + 1);
    return s;
  }

  /// Backward + update of `names`; returns the pre-clip gradient norm.
  double apply(const Tape<T>& tape, const Tensor<T>& loss, const std::vector<std::string>& names, Optimizer<T>& opt) {
    if (!std::isfinite(static_cast<double>(loss.item()))) throw TrainingError(step_, "loss is not finite");
    const auto grads = collect_gradients(tape.backward(loss), model_.parameters(), names);
    return opt.step(model_.parameters(), names, grads);
  }

  SequenceModel<T>& model_;
  LossSpec loss_;
  StrategySpec strategy_;
  TrainSchedule schedule_;
  Optimizer<T> gen_opt_, disc_opt_;
  EmaBaseline baseline_;
  std::vector<std::string> gen_names_, disc_names_;
  std::size_t step_ = 0;
};

}  // namespace seqforge
