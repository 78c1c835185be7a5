#include <iostream>

#include <CLI11.hpp>

#include "seqforge/experiments/commands.hpp"

int main(int argc, char** argv) {
  using namespace seqforge;
  CLI::App app{"seqforge: modular sequence generation"};
  app.require_subcommand(1);
  CommandOptions o;
  std::uint64_t seed = 0;

  const auto common = [&](CLI::App* cmd, bool checkpoint) {
    cmd->add_option("--config", o.config, "experiment directory (model.cfg, train.cfg, data.cfg)")->required();
    cmd->add_option("--seed", seed, "master seed (overrides train.seed)");
    cmd->add_option("--out", o.out, "output directory");
    if (checkpoint) cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  };

  auto* train = app.add_subcommand("train", "train a model; writes train.log, best.ckpt, last.ckpt");
  common(train, false);
  auto* eval = app.add_subcommand("eval", "print test metrics of a checkpoint");
  common(eval, true);
  eval->add_option("--max-len", o.max_len, "decode length limit");
  auto* generate = app.add_subcommand("generate", "decode one line per input line");
  common(generate, true);
  generate->add_option("--strategy", o.strategy, "greedy, sample, top_k, gumbel_softmax or beam");
  generate->add_option("--max-len", o.max_len, "decode length limit");
  generate->add_option("--beam-width", o.beam_width, "beam width (strategy beam)");
  generate->add_option("--k", o.k, "k for top_k");
  generate->add_option("--tau", o.tau, "temperature for gumbel_softmax");
  generate->add_option("--input", o.input, "input lines (default: test split)");
  generate->add_option("--output", o.output, "output file (default: <out>/generated.txt or stdout)");
  auto* grad = app.add_subcommand("grad-check", "finite-difference gradient suite over the configured model");
  common(grad, false);
  grad->add_option("--tolerance", o.grad_tolerance, "maximum allowed relative error");
  auto* synth = app.add_subcommand("synth-data", "write the synthetic copy-task and runs data sets");
  synth->add_option("--out", o.out, "output directory (default data)");
  synth->add_option("--seed", seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kBadInput;
  }
  const auto* active = app.get_subcommands().front();
  if (active->count("--seed")) o.seed = seed;

  return guarded(
      [&] {
        if (active == train) return cmd_train(o, std::cout);
        if (active == eval) return cmd_eval(o, std::cout);
        if (active == generate) return cmd_generate(o, std::cout);
        if (active == grad) return cmd_grad_check(o, std::cout);
        return cmd_synth_data(o, std::cout);
      },
      std::cerr);
}
