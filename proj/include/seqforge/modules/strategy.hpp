#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "seqforge/config/config_node.hpp"
#include "seqforge/core/random.hpp"
#include "seqforge/tensor/ops.hpp"

namespace seqforge {

struct DecodingStrategy {
  enum class Kind { teacher_forcing, greedy, sample, top_k, gumbel_softmax };
  Kind kind = Kind::greedy;
  std::size_t k = 1;
  double tau = 1.0;
  std::uint64_t seed = 0;

  static DecodingStrategy teacher_forcing() { return {Kind::teacher_forcing}; }
  static DecodingStrategy greedy() { return {Kind::greedy}; }
  static DecodingStrategy sample(std::uint64_t seed) { return {Kind::sample, 1, 1.0, seed}; }
  static DecodingStrategy top_k(std::size_t k, std::uint64_t seed) { return {Kind::top_k, k, 1.0, seed}; }
  static DecodingStrategy gumbel_softmax(double tau, std::uint64_t seed) {
    return {Kind::gumbel_softmax, 1, tau, seed};
  }

  static Kind parse_kind(const std::string& name) {
    if (name == "teacher_forcing") return Kind::teacher_forcing;
    if (name == "greedy") return Kind::greedy;
    if (name == "sample") return Kind::sample;
    if (name == "top_k") return Kind::top_k;
    if (name == "gumbel_softmax") return Kind::gumbel_softmax;
    throw ConfigError("unknown decoding strategy '" + name +
                      "' (expected teacher_forcing, greedy, sample, top_k or gumbel_softmax)");
  }

  static const char* kind_name(Kind k) {
    switch (k) {
      case Kind::teacher_forcing: return "teacher_forcing";
      case Kind::greedy: return "greedy";
      case Kind::sample: return "sample";
      case Kind::top_k: return "top_k";
      case Kind::gumbel_softmax: return "gumbel_softmax";
    }
    return "?";
  }
  const char* name() const { return kind_name(kind); }

  static ConfigNode default_hparams() {
    return ConfigNode::map({{"kind", "greedy"}, {"k", 10}, {"tau", 1.0}, {"seed", 0}});
  }

  static DecodingStrategy from_config(const ConfigNode& hp) {
    DecodingStrategy s;
    s.kind = parse_kind(hp.at("kind").as_string());
    s.k = static_cast<std::size_t>(std::max<std::int64_t>(0, hp.at("k").as_int()));
    s.tau = hp.at("tau").as_float();
    s.seed = static_cast<std::uint64_t>(hp.at("seed").as_int());
    return s;
  }

  bool stochastic() const { return kind == Kind::sample || kind == Kind::top_k || kind == Kind::gumbel_softmax; }

  void validate(std::size_t vocab) const {
    if (kind == Kind::gumbel_softmax && !(tau > 0))
      throw ContractError("gumbel_softmax: tau must be > 0, got " + std::to_string(tau));
    if (kind == Kind::top_k && (k < 1 || k > vocab))
      throw ContractError("top_k: k must be in [1, " + std::to_string(vocab) + "], got " + std::to_string(k));
  }
};

/// softmax((logits + noise) / tau); noise is injected Gumbel(0,1) draws.
template <typename T>
Tensor<T> gumbel_softmax_sample(const Tensor<T>& logits, double tau, const Tensor<T>& noise) {
  if (!(tau > 0)) throw ContractError("gumbel_softmax: tau must be > 0, got " + std::to_string(tau));
  return softmax(scale(add(logits, noise), static_cast<T>(1.0 / tau)), -1);
}

template <typename T>
Tensor<T> gumbel_noise(const Shape& shape, Rng& rng) {
  std::vector<T> g(numel(shape));
  for (auto& x : g) x = static_cast<T>(rng.gumbel());
  return Tensor<T>(shape, std::move(g));
}

/// Index of the largest entry; ties go to the lowest index.
template <typename T>
std::int32_t argmax(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return static_cast<std::int32_t>(best);
}

/// Draws from softmax(row) (computed in double).
template <typename T>
std::int32_t sample_softmax(std::span<const T> row, Rng& rng) {
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : row) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) p[i] = std::exp(static_cast<double>(row[i]) - mx);
  return static_cast<std::int32_t>(rng.categorical(std::span<const double>(p)));
}

/// Draws from softmax restricted to the k largest entries (ties broken by
/// lower index).
template <typename T>
std::int32_t sample_top_k(std::span<const T> row, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, row.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
  std::vector<T> top(k);
  for (std::size_t i = 0; i < k; ++i) top[i] = row[idx[i]];
  return static_cast<std::int32_t>(idx[static_cast<std::size_t>(sample_softmax<T>(top, rng))]);
}

}  // namespace seqforge
