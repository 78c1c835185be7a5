#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seqforge/core/error.hpp"

namespace seqforge {

enum class Tokenizer { whitespace, character };

inline Tokenizer parse_tokenizer(std::string_view name) {
  if (name == "whitespace") return Tokenizer::whitespace;
  if (name == "char" || name == "character") return Tokenizer::character;
  throw ConfigError("unknown tokenizer '" + std::string(name) + "' (expected whitespace or char)");
}

inline const char* tokenizer_name(Tokenizer t) {
  return t == Tokenizer::whitespace ? "whitespace" : "char";
}

/// Whitespace: runs of ASCII blanks separate tokens. Char: one token per
/// UTF-8 code point, blanks included.
inline std::vector<std::string> tokenize(std::string_view line, Tokenizer tokenizer) {
  std::vector<std::string> tokens;
  if (tokenizer == Tokenizer::whitespace) {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      const std::size_t start = i;
      while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
      if (i > start) tokens.emplace_back(line.substr(start, i - start));
    }
    return tokens;
  }
  std::size_t i = 0;
  while (i < line.size()) {
    const auto lead = static_cast<unsigned char>(line[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    len = std::min(len, line.size() - i);
    tokens.emplace_back(line.substr(i, len));
    i += len;
  }
  return tokens;
}

inline std::string detokenize(const std::vector<std::string>& tokens, Tokenizer tokenizer) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i && tokenizer == Tokenizer::whitespace) out += ' ';
    out += tokens[i];
  }
  return out;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

/// Token <-> id map. Ids 0..3 are reserved for PAD, BOS, EOS and UNK.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kBos = 1;
  static constexpr std::int32_t kEos = 2;
  static constexpr std::int32_t kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  static const std::array<std::string, kReserved>& reserved_tokens() {
    static const std::array<std::string, kReserved> names{"<PAD>", "<BOS>", "<EOS>", "<UNK>"};
    return names;
  }

  Vocabulary() : Vocabulary(std::vector<std::string>{}, Tokenizer::whitespace) {}

  /// `tokens` are the non-reserved entries in id order (first gets id 4).
  Vocabulary(std::vector<std::string> tokens, Tokenizer tokenizer) : tokenizer_(tokenizer) {
    const auto& reserved = reserved_tokens();
    id_to_token_.assign(reserved.begin(), reserved.end());
    for (std::size_t i = 0; i < kReserved; ++i)
      token_to_id_.emplace(reserved[i], static_cast<std::int32_t>(i));
    for (auto& t : tokens) {
      if (t.empty() || t.find('\n') != std::string::npos)
        throw IngestionError("vocabulary: invalid token");
      const auto id = static_cast<std::int32_t>(id_to_token_.size());
      if (!token_to_id_.emplace(t, id).second)
        throw IngestionError("vocabulary: duplicate or reserved token '" + t + "'");
      id_to_token_.push_back(std::move(t));
    }
  }

  /// Counts tokens over `lines` and orders them by descending frequency,
  /// ties broken lexicographically. `max_size` (0 = unlimited) caps the
  /// total size including the reserved entries.
  static Vocabulary build(std::span<const std::string> lines, Tokenizer tokenizer,
                          std::size_t max_size = 0, std::size_t min_freq = 1) {
    std::map<std::string, std::size_t> counts;
    for (const auto& line : lines)
      for (auto& tok : tokenize(line, tokenizer)) ++counts[tok];
    if (counts.empty()) throw IngestionError("build_vocab: corpus contains no tokens");
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens;
    for (auto& [tok, n] : ranked) {
      if (n < min_freq) continue;
      if (reserved_id(tok) >= 0) continue;
      if (max_size && kReserved + tokens.size() >= max_size) break;
      tokens.push_back(tok);
    }
    return Vocabulary(std::move(tokens), tokenizer);
  }

  /// One token per line; line k (0-based) holds id k + 4.
  static Vocabulary load(const std::string& path, Tokenizer tokenizer) {
    auto lines = read_lines(path);
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return Vocabulary(std::move(lines), tokenizer);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write '" + path + "'");
    for (std::size_t i = kReserved; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\n';
  }

  std::size_t size() const { return id_to_token_.size(); }
  Tokenizer tokenizer() const { return tokenizer_; }

  std::int32_t id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  const std::string& token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= size())
      throw ContractError("vocabulary: id " + std::to_string(id) + " out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  /// Out-of-vocabulary tokens map to UNK; EOS is appended.
  std::vector<std::int32_t> encode(std::string_view line) const {
    std::vector<std::int32_t> ids;
    for (const auto& tok : tokenize(line, tokenizer_)) ids.push_back(id(tok));
    ids.push_back(kEos);
    return ids;
  }

  /// Stops at the first EOS; PAD and BOS are never emitted.
  std::string decode(std::span<const std::int32_t> ids) const {
    std::vector<std::string> tokens;
    for (auto i : ids) {
      if (i == kEos) break;
      if (i == kPad || i == kBos) continue;
      tokens.push_back(token(i));
    }
    return detokenize(tokens, tokenizer_);
  }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  bool operator==(const Vocabulary& other) const {
    return tokenizer_ == other.tokenizer_ && id_to_token_ == other.id_to_token_;
  }

 private:
  static std::int32_t reserved_id(const std::string& tok) {
    const auto& r = reserved_tokens();
    for (std::size_t i = 0; i < r.size(); ++i)
      if (r[i] == tok) return static_cast<std::int32_t>(i);
    return -1;
  }

  Tokenizer tokenizer_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> token_to_id_;
};

}  // namespace seqforge
