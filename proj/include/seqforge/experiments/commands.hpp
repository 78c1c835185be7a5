#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "seqforge/experiments/copy_task.hpp"
#include "seqforge/experiments/experiment.hpp"
#include "seqforge/experiments/grad_suite.hpp"

namespace seqforge {

/// Flags shared by the CLI subcommands.
struct CommandOptions {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::string input;
  std::string output;
  std::optional<std::uint64_t> seed;
  std::string strategy = "greedy";
  std::size_t max_len = 0;     // 0: strategy.max_len from the config
  std::size_t beam_width = 0;  // 0: strategy.beam_width, else 4
  std::size_t k = 0;           // 0: config value
  double tau = 0;              // 0: config value
  double grad_tolerance = 1e-4;
};

enum ExitCode : int { kOk = 0, kFailure = 1, kBadInput = 2, kNonFinite = 3 };

/// Runs a command, mapping exceptions to exit codes: bad or missing input
/// files and configs give 2, a non-finite training quantity gives 3.
inline int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const TrainingError& e) {
    err << "error: training diverged: " << e.what() << '\n';
    return kNonFinite;
  } catch (const IngestionError& e) {
    err << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const AssemblyError& e) {
    err << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

namespace detail {
inline std::string default_out(const CommandOptions& o) {
  if (!o.out.empty()) return o.out;
  return (std::filesystem::path("runs") / std::filesystem::path(o.config).lexically_normal().filename()).string();
}

inline void print_metric(std::ostream& out, const std::string& name, double value) {
  std::ostringstream s;
  s.precision(6);
  s << std::fixed << value;
  out << name << '\t' << s.str() << '\n';
}

struct LoadedModel {
  Experiment experiment;
  Instantiated<float> inst;
};

inline LoadedModel load_trained(const CommandOptions& o) {
  if (o.checkpoint.empty()) throw IngestionError("--checkpoint is required");
  if (!std::filesystem::is_regular_file(o.checkpoint))
    throw IngestionError("checkpoint: no such file '" + o.checkpoint + "'");
  LoadedModel m{load_experiment(o.config, o.seed), {}};
  m.inst = instantiate<float>(m.experiment);
  load_model_checkpoint(m.inst.model->parameters(), o.checkpoint);
  return m;
}
}  // namespace detail

inline int cmd_train(const CommandOptions& o, std::ostream& out) {
  const auto e = load_experiment(o.config, o.seed);
  const auto dir = detail::default_out(o);
  const auto result = train_experiment(e, dir);
  out << "out\t" << dir << '\n';
  out << "steps\t" << result.steps << '\n';
  out << "epochs\t" << result.epochs_run << '\n';
  if (!result.validation.empty()) {
    out << "best_epoch\t" << result.best_epoch << '\n';
    const auto& best = result.validation[result.best_epoch];
    detail::print_metric(out, "valid_" + best.name, best.value);
  }
  return kOk;
}

inline int cmd_eval(const CommandOptions& o, std::ostream& out) {
  auto m = detail::load_trained(o);
  auto strategy = m.inst.strategy;
  if (o.max_len) strategy.max_len = o.max_len;
  for (const auto& r : evaluate_experiment(m.experiment, *m.inst.model, strategy))
    detail::print_metric(out, r.name, r.value);
  return kOk;
}

inline int cmd_generate(const CommandOptions& o, std::ostream& out) {
  auto m = detail::load_trained(o);
  const auto& e = m.experiment;
  auto& model = *m.inst.model;
  const auto& spec = m.inst.strategy;
  const std::size_t max_len = o.max_len ? o.max_len : spec.max_len;

  // Inputs: one example per line (sources for seq2seq; for LMs each line
  // just requests one sample).
  SequenceDataset inputs;
  if (!o.input.empty()) {
    for (const auto& line : read_lines(o.input)) {
      const auto src = line.substr(0, line.find('\t'));
      if (model.conditional()) inputs.sources.push_back(e.source_vocab.encode(src));
      inputs.targets.push_back({Vocabulary::kEos});
    }
  } else {
    inputs = e.has_test() ? e.test : e.valid;
  }
  if (inputs.size() == 0) throw IngestionError("generate: no input lines");
  if (model.conditional() && !inputs.paired()) throw IngestionError("generate: conditional model needs source lines");

  std::optional<std::ofstream> file;
  std::string path = o.output;
  if (path.empty() && !o.out.empty()) path = (std::filesystem::path(o.out) / "generated.txt").string();
  if (!path.empty()) {
    if (const auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
      std::filesystem::create_directories(parent);
    file.emplace(path);
    if (!*file) throw IngestionError("cannot write '" + path + "'");
  }
  std::ostream& sink = file ? *file : out;

  std::vector<std::vector<std::int32_t>> results;
  if (o.strategy == "beam") {
    const std::size_t width = o.beam_width ? o.beam_width : (spec.beam_width ? spec.beam_width : 4);
    auto pause = Tape<float>::pause();
    detail::for_each_batch(inputs, 16, [&](const Batch& b) {
      for (const auto& hyps : model.beam_generate(b, width, max_len, spec.length_penalty, o.seed.value_or(spec.eval.seed)))
        results.push_back(hyps.empty() ? std::vector<std::int32_t>{} : strip_eos(hyps.front().ids));
    });
  } else {
    auto s = spec.eval;
    s.kind = DecodingStrategy::parse_kind(o.strategy);
    if (s.kind == DecodingStrategy::Kind::teacher_forcing)
      throw ConfigError("--strategy teacher_forcing cannot generate");
    if (o.k) s.k = o.k;
    if (o.tau > 0) s.tau = o.tau;
    if (o.seed) s.seed = *o.seed;
    results = generate_all(model, inputs, s, max_len);
  }
  for (const auto& ids : results) sink << e.target_vocab.decode(ids) << '\n';
  return kOk;
}

/// Gradient suite over the configured template, on the first two training
/// examples (cut to 6 tokens plus EOS).
inline int cmd_grad_check(const CommandOptions& o, std::ostream& out) {
  const auto e = load_experiment(o.config, o.seed);
  const auto batch = grad_suite_batch(e.train);
  const auto results = run_grad_suite(e.model_cfg, e.vocab_sizes(), e.schedule.seed, batch, {1e-6, 6, e.schedule.seed});
  for (const auto& r : results) {
    std::ostringstream s;
    s.precision(3);
    s << std::scientific << r.report.max_relative_error;
    out << r.loss << '\t' << s.str() << '\t' << r.report.entries_checked << " entries\n";
  }
  const double worst = max_relative_error(results);
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << worst;
  out << "max_relative_error\t" << s.str() << '\n';
  return worst < o.grad_tolerance ? kOk : kFailure;
}

/// Writes the synthetic data sets (copy task and ascending-runs corpus)
/// under `--out` (default data/).
inline int cmd_synth_data(const CommandOptions& o, std::ostream& out) {
  const std::filesystem::path dir = o.out.empty() ? std::string("data") : o.out;
  CopyTaskSpec spec;
  if (o.seed) spec.seed = *o.seed;
  write_copy_task((dir / "copy_task").string(), spec);
  write_runs_corpus((dir / "runs").string(), spec);
  out << "wrote\t" << (dir / "copy_task").string() << '\n';
  out << "wrote\t" << (dir / "runs").string() << '\n';
  return kOk;
}

}  // namespace seqforge
