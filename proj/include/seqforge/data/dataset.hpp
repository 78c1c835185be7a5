#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqforge/core/random.hpp"
#include "seqforge/data/vocabulary.hpp"

namespace seqforge {

using TokenIds = std::vector<std::int32_t>;

/// Mono-text (targets only) or paired-text (source, target) examples. Every
/// sequence ends with EOS and contains no PAD.
struct SequenceDataset {
  std::vector<TokenIds> targets;
  std::vector<TokenIds> sources;  // empty for mono-text

  bool paired() const { return !sources.empty(); }
  std::size_t size() const { return targets.size(); }

  void validate(std::size_t target_vocab, std::size_t source_vocab = 0) const {
    if (paired() && sources.size() != targets.size())
      throw IngestionError("dataset: source/target count mismatch");
    const auto check = [](const std::vector<TokenIds>& seqs, std::size_t vocab, const char* side) {
      for (std::size_t i = 0; i < seqs.size(); ++i)
        for (auto id : seqs[i])
          if (id == Vocabulary::kPad || id < 0 || static_cast<std::size_t>(id) >= vocab)
            throw IngestionError(std::string("dataset: bad ") + side + " id " +
                                 std::to_string(id) + " in example " + std::to_string(i));
    };
    check(targets, target_vocab, "target");
    if (paired()) check(sources, source_vocab ? source_vocab : target_vocab, "source");
  }
};

/// One example per non-blank line.
inline SequenceDataset load_mono(const std::string& path, const Vocabulary& vocab) {
  SequenceDataset ds;
  for (const auto& line : read_lines(path)) {
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    ds.targets.push_back(vocab.encode(line));
  }
  if (ds.targets.empty()) throw IngestionError("'" + path + "' contains no examples");
  return ds;
}

/// `source<TAB>target` per non-blank line.
inline SequenceDataset load_paired(const std::string& path, const Vocabulary& source_vocab,
                                   const Vocabulary& target_vocab) {
  SequenceDataset ds;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw IngestionError("'" + path + "' line " + std::to_string(i + 1) + ": missing TAB");
    ds.sources.push_back(source_vocab.encode(std::string_view(line).substr(0, tab)));
    ds.targets.push_back(target_vocab.encode(std::string_view(line).substr(tab + 1)));
  }
  if (ds.targets.empty()) throw IngestionError("'" + path + "' contains no examples");
  return ds;
}

/// [batch x max_len] ids padded with PAD, plus true lengths (EOS included).
struct PaddedIds {
  std::size_t batch = 0;
  std::size_t max_len = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> lengths;

  std::int32_t at(std::size_t b, std::size_t t) const { return ids[b * max_len + t]; }

  /// Column t as a [batch] vector.
  std::vector<std::int32_t> column(std::size_t t) const {
    std::vector<std::int32_t> col(batch);
    for (std::size_t b = 0; b < batch; ++b) col[b] = at(b, t);
    return col;
  }

  std::span<const std::int32_t> row(std::size_t b) const {
    return std::span(ids).subspan(b * max_len, lengths[b]);
  }

  static PaddedIds from(std::span<const TokenIds* const> seqs) {
    PaddedIds p;
    p.batch = seqs.size();
    for (const auto* s : seqs) p.max_len = std::max(p.max_len, s->size());
    p.ids.assign(p.batch * p.max_len, Vocabulary::kPad);
    for (std::size_t b = 0; b < p.batch; ++b) {
      std::copy(seqs[b]->begin(), seqs[b]->end(), p.ids.begin() + static_cast<std::ptrdiff_t>(b * p.max_len));
      p.lengths.push_back(seqs[b]->size());
    }
    return p;
  }

  static PaddedIds from(const std::vector<TokenIds>& seqs) {
    std::vector<const TokenIds*> ptrs;
    for (const auto& s : seqs) ptrs.push_back(&s);
    return from(std::span<const TokenIds* const>(ptrs));
  }
};

struct Batch {
  PaddedIds target;
  std::optional<PaddedIds> source;
  std::vector<std::size_t> indices;  // dataset positions of the rows

  std::size_t size() const { return target.batch; }
};

inline Batch make_batch(const SequenceDataset& ds, std::span<const std::size_t> indices) {
  Batch batch;
  batch.indices.assign(indices.begin(), indices.end());
  std::vector<const TokenIds*> tgt, src;
  for (auto i : indices) {
    tgt.push_back(&ds.targets.at(i));
    if (ds.paired()) src.push_back(&ds.sources.at(i));
  }
  batch.target = PaddedIds::from(tgt);
  if (ds.paired()) batch.source = PaddedIds::from(src);
  return batch;
}

/// One epoch over a dataset. Each iterator owns its RNG, so a fixed seed
/// reproduces the same order.
class BatchIterator {
 public:
  BatchIterator(const SequenceDataset& dataset, std::size_t batch_size, bool shuffle,
                std::uint64_t seed = 0)
      : dataset_(&dataset), batch_size_(batch_size), order_(dataset.size()) {
    if (batch_size == 0) throw ContractError("batch_iter: batch_size must be >= 1");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (shuffle) {
      Rng rng(seed);
      rng.shuffle(order_.begin(), order_.end());
    }
  }

  std::optional<Batch> next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    auto batch = make_batch(*dataset_, std::span(order_).subspan(cursor_, end - cursor_));
    cursor_ = end;
    return batch;
  }

  std::size_t num_batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

 private:
  const SequenceDataset* dataset_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace seqforge
