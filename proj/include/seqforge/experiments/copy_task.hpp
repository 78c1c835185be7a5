#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "seqforge/core/random.hpp"
#include "seqforge/data/vocabulary.hpp"

namespace seqforge {

struct CopyTaskSpec {
  std::size_t symbols = 8;  // content symbols; vocab = symbols + 4 reserved
  std::size_t min_len = 2, max_len = 8;
  std::size_t train = 2000, valid = 200, test = 200;
  std::uint64_t seed = 1234;
};

inline std::vector<std::string> copy_task_symbols(std::size_t n) {
  if (n == 0 || n > 26) throw ContractError("copy task: 1..26 symbols supported");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(1, static_cast<char>('a' + i));
  return out;
}

/// Random whitespace-tokenized sequences; each line is "x<TAB>x".
inline std::vector<std::string> copy_task_lines(const CopyTaskSpec& spec, std::size_t count, std::uint64_t stream) {
  if (spec.min_len < 1 || spec.max_len < spec.min_len) throw ContractError("copy task: bad length range");
  const auto symbols = copy_task_symbols(spec.symbols);
  Rng rng(derive_seed(spec.seed, stream));
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
    std::string seq;
    for (std::size_t t = 0; t < len; ++t) seq += (t ? " " : "") + symbols[rng.below(symbols.size())];
    lines.push_back(seq + "\t" + seq);
  }
  return lines;
}

/// Writes train.tsv, valid.tsv, test.tsv and vocab.txt into `dir`.
inline void write_copy_task(const std::string& dir, const CopyTaskSpec& spec = {}) {
  std::filesystem::create_directories(dir);
  const auto write = [&](const std::string& name, const std::vector<std::string>& lines) {
    std::ofstream out(std::filesystem::path(dir) / name);
    if (!out) throw IngestionError("cannot write '" + dir + "/" + name + "'");
    for (const auto& l : lines) out << l << '\n';
  };
  write("train.tsv", copy_task_lines(spec, spec.train, 0));
  write("valid.tsv", copy_task_lines(spec, spec.valid, 1));
  write("test.tsv", copy_task_lines(spec, spec.test, 2));
  write("vocab.txt", copy_task_symbols(spec.symbols));
}

/// Toy LM corpus of ascending symbol runs ("c d e f", wrapping after the
/// last symbol). Easy to tell apart from an untrained generator's samples.
inline std::vector<std::string> runs_corpus_lines(const CopyTaskSpec& spec, std::size_t count, std::uint64_t stream) {
  const auto symbols = copy_task_symbols(spec.symbols);
  Rng rng(derive_seed(spec.seed, 100 + stream));
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
    const auto start = rng.below(symbols.size());
    std::string seq;
    for (std::size_t t = 0; t < len; ++t) seq += (t ? " " : "") + symbols[(start + t) % symbols.size()];
    lines.push_back(seq);
  }
  return lines;
}

inline void write_runs_corpus(const std::string& dir, const CopyTaskSpec& spec = {}) {
  std::filesystem::create_directories(dir);
  const auto write = [&](const std::string& name, const std::vector<std::string>& lines) {
    std::ofstream out(std::filesystem::path(dir) / name);
    if (!out) throw IngestionError("cannot write '" + dir + "/" + name + "'");
    for (const auto& l : lines) out << l << '\n';
  };
  write("train.txt", runs_corpus_lines(spec, spec.train, 0));
  write("valid.txt", runs_corpus_lines(spec, spec.valid, 1));
  write("test.txt", runs_corpus_lines(spec, spec.test, 2));
  write("vocab.txt", copy_task_symbols(spec.symbols));
}

}  // namespace seqforge
