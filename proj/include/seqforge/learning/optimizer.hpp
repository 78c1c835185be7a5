#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "seqforge/config/config_node.hpp"
#include "seqforge/modules/parameters.hpp"

namespace seqforge {

struct OptimizerSpec {
  enum class Kind { sgd, adam };
  Kind kind = Kind::adam;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double clip_grad_norm = 0;  // 0: no clipping

  static ConfigNode default_hparams() {
    return ConfigNode::map({{"kind", "adam"},
                            {"lr", 0.001},
                            {"beta1", 0.9},
                            {"beta2", 0.999},
                            {"eps", 1e-8},
                            {"clip_grad_norm", 5.0}});
  }

  static OptimizerSpec from_config(const ConfigNode& hp) {
    OptimizerSpec s;
    const auto& kind = hp.at("kind").as_string();
    if (kind == "sgd") s.kind = Kind::sgd;
    else if (kind == "adam") s.kind = Kind::adam;
    else throw ConfigError("optimizer.kind: expected sgd or adam, got '" + kind + "'");
    s.lr = hp.at("lr").as_float();
    s.beta1 = hp.at("beta1").as_float();
    s.beta2 = hp.at("beta2").as_float();
    s.eps = hp.at("eps").as_float();
    s.clip_grad_norm = hp.at("clip_grad_norm").as_float();
    const auto bad = [](double v) { return !std::isfinite(v) || v < 0; };
    if (bad(s.lr) || bad(s.eps) || bad(s.clip_grad_norm) || !(s.beta1 >= 0 && s.beta1 < 1) ||
        !(s.beta2 >= 0 && s.beta2 < 1))
      throw ConfigError("optimizer: lr, eps, clip_grad_norm must be finite and >= 0; betas in [0, 1)");
    return s;
  }
};

/// SGD or Adam over a named subset of a parameter store. Moment buffers
/// are kept in double precision and keyed by parameter name.
template <typename T>
class Optimizer {
 public:
  struct Slot {
    std::vector<double> m, v;
  };

  explicit Optimizer(OptimizerSpec spec = {}) : spec_(spec) {}

  /// Applies one update; grads[i] belongs to names[i]. Returns the global
  /// gradient norm before clipping. Non-finite gradients raise
  /// TrainingError and leave the parameters untouched.
  double step(ParameterStore<T>& store, const std::vector<std::string>& names,
              const std::vector<std::vector<T>>& grads) {
    if (names.size() != grads.size()) throw ContractError("optimizer: one gradient per parameter required");
    double sq = 0;
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto& p = store.at(names[i]);
      if (grads[i].size() != p.size())
        throw DimensionError("optimizer: gradient for '" + names[i] + "' has " + std::to_string(grads[i].size()) +
                             " entries, parameter has " + std::to_string(p.size()));
      for (T g : grads[i]) {
        if (!std::isfinite(static_cast<double>(g)))
          throw TrainingError(step_count_, "non-finite gradient for parameter '" + names[i] + "'");
        sq += static_cast<double>(g) * static_cast<double>(g);
      }
    }
    const double norm = std::sqrt(sq);
    const double factor = spec_.clip_grad_norm > 0 && norm > spec_.clip_grad_norm ? spec_.clip_grad_norm / norm : 1.0;
    ++step_count_;
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto& p = store.at(names[i]);
      std::vector<T> values = p.vec();
      if (spec_.kind == OptimizerSpec::Kind::sgd) {
        for (std::size_t j = 0; j < values.size(); ++j)
          values[j] = static_cast<T>(values[j] - spec_.lr * factor * static_cast<double>(grads[i][j]));
      } else {
        auto& s = slots_[names[i]];
        if (s.m.empty()) {
          s.m.assign(values.size(), 0.0);
          s.v.assign(values.size(), 0.0);
        }
        const double t = static_cast<double>(step_count_);
        const double c1 = 1 - std::pow(spec_.beta1, t), c2 = 1 - std::pow(spec_.beta2, t);
        for (std::size_t j = 0; j < values.size(); ++j) {
          const double g = factor * static_cast<double>(grads[i][j]);
          s.m[j] = spec_.beta1 * s.m[j] + (1 - spec_.beta1) * g;
          s.v[j] = spec_.beta2 * s.v[j] + (1 - spec_.beta2) * g * g;
          const double mhat = s.m[j] / c1, vhat = s.v[j] / c2;
          values[j] = static_cast<T>(values[j] - spec_.lr * mhat / (std::sqrt(vhat) + spec_.eps));
        }
      }
      store.assign(names[i], p.shape(), std::move(values));
    }
    return norm;
  }

  const OptimizerSpec& spec() const { return spec_; }
  std::size_t step_count() const { return step_count_; }
  void set_step_count(std::size_t n) { step_count_ = n; }
  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }

 private:
  OptimizerSpec spec_;
  std::size_t step_count_ = 0;
  std::map<std::string, Slot> slots_;
};

/// Gradient vectors of `names` from one backward pass (zeros when a
/// parameter was not reached).
template <typename T>
std::vector<std::vector<T>> collect_gradients(const Gradients<T>& grads, const ParameterStore<T>& store,
                                              const std::vector<std::string>& names) {
  std::vector<std::vector<T>> out;
  out.reserve(names.size());
  for (const auto& n : names) {
    const auto& p = store.at(n);
    if (const auto* g = grads.find(p)) out.push_back(*g);
    else out.emplace_back(p.size(), T(0));
  }
  return out;
}

inline double global_norm(const std::vector<std::vector<float>>& grads) {
  double sq = 0;
  for (const auto& g : grads)
    for (float v : g) sq += static_cast<double>(v) * v;
  return std::sqrt(sq);
}

}  // namespace seqforge
