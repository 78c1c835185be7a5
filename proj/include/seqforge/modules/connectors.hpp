#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "seqforge/config/config_node.hpp"
#include "seqforge/core/random.hpp"
#include "seqforge/modules/parameters.hpp"

namespace seqforge {

/// Maps the tensors produced by one module (e.g. an encoder's final state)
/// to the tensors another module expects (e.g. a decoder's initial state).
template <typename T>
class Connector {
 public:
  virtual ~Connector() = default;
  virtual std::vector<Tensor<T>> connect(const std::vector<Tensor<T>>& inputs) = 0;
};

template <typename T>
Tensor<T> apply_activation(const std::string& name, const Tensor<T>& x) {
  if (name == "identity") return x;
  if (name == "tanh") return tanh(x);
  if (name == "relu") return relu(x);
  if (name == "sigmoid") return sigmoid(x);
  throw ConfigError("unknown activation '" + name + "' (expected identity, tanh, relu or sigmoid)");
}

namespace detail {
inline std::size_t total(const std::vector<std::size_t>& v) { return std::accumulate(v.begin(), v.end(), std::size_t{0}); }

template <typename T>
std::vector<Tensor<T>> split_columns(const Tensor<T>& x, const std::vector<std::size_t>& widths) {
  std::vector<Tensor<T>> out;
  std::size_t at = 0;
  for (auto w : widths) {
    out.push_back(slice(x, 1, at, at + w));
    at += w;
  }
  return out;
}

template <typename T>
Tensor<T> join_columns(const std::vector<Tensor<T>>& parts) {
  return parts.size() == 1 ? parts[0] : concat(parts, 1);
}
}  // namespace detail

/// Concatenates the inputs, applies one dense layer (+ activation) and
/// splits the result into the output widths.
template <typename T>
class MLPTransformConnector : public Connector<T> {
 public:
  static ConfigNode default_hparams() { return ConfigNode::map({{"activation", "identity"}}); }

  MLPTransformConnector(const ConfigNode& hp, std::vector<std::size_t> in_dims, std::vector<std::size_t> out_dims,
                        ParamScope<T> scope)
      : activation_(hp.at("activation").as_string()),
        out_dims_(std::move(out_dims)),
        dense_(scope.child("dense"), detail::total(in_dims), detail::total(out_dims_)) {
    apply_activation<T>(activation_, Tensor<T>::zeros({1}));  // validates the name
  }

  std::vector<Tensor<T>> connect(const std::vector<Tensor<T>>& inputs) override {
    return detail::split_columns(apply_activation(activation_, dense_(detail::join_columns(inputs))), out_dims_);
  }

 private:
  std::string activation_;
  std::vector<std::size_t> out_dims_;
  Dense<T> dense_;
};

/// Passes tensors through unchanged; the widths must already agree.
template <typename T>
class ForwardConnector : public Connector<T> {
 public:
  static ConfigNode default_hparams() { return ConfigNode::map(); }

  ForwardConnector(const std::vector<std::size_t>& in_dims, const std::vector<std::size_t>& out_dims,
                   const std::string& from, const std::string& to) {
    if (in_dims != out_dims) {
      const auto fmt = [](const std::vector<std::size_t>& v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
        return s + "]";
      };
      throw AssemblyError("ForwardConnector: " + from + " provides state dims " + fmt(in_dims) + " but " + to +
                          " expects " + fmt(out_dims));
    }
  }

  std::vector<Tensor<T>> connect(const std::vector<Tensor<T>>& inputs) override { return inputs; }
};

/// z = mu + exp(logvar / 2) * eps.
template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar, const Tensor<T>& eps) {
  return add(mu, mul(exp(scale(logvar, T(0.5))), eps));
}

template <typename T>
struct GaussianSample {
  Tensor<T> mu, logvar, z;
  std::vector<Tensor<T>> outputs;  // z mapped to the output widths
};

/// Variational connector: inputs -> (mu, logvar) -> z -> output widths.
template <typename T>
class StochasticGaussianConnector : public Connector<T> {
 public:
  static ConfigNode default_hparams() { return ConfigNode::map({{"latent_dim", 16}, {"activation", "identity"}}); }

  StochasticGaussianConnector(const ConfigNode& hp, std::vector<std::size_t> in_dims,
                              std::vector<std::size_t> out_dims, ParamScope<T> scope)
      : latent_(static_cast<std::size_t>(hp.at("latent_dim").as_int())),
        activation_(hp.at("activation").as_string()),
        out_dims_(std::move(out_dims)),
        mu_(scope.child("mu"), detail::total(in_dims), latent_),
        logvar_(scope.child("logvar"), detail::total(in_dims), latent_),
        out_(scope.child("output"), latent_, detail::total(out_dims_)) {
    if (latent_ == 0) throw ConfigError("StochasticGaussianConnector: latent_dim must be >= 1");
    apply_activation<T>(activation_, Tensor<T>::zeros({1}));
  }

  std::size_t latent_dim() const { return latent_; }

  /// eps: [batch x latent] standard normal draws.
  GaussianSample<T> sample(const std::vector<Tensor<T>>& inputs, const Tensor<T>& eps) {
    const Tensor<T> x = detail::join_columns(inputs);
    GaussianSample<T> s;
    s.mu = mu_(x);
    s.logvar = logvar_(x);
    s.z = reparameterize(s.mu, s.logvar, eps);
    s.outputs = from_latent(s.z);
    return s;
  }

  std::vector<Tensor<T>> from_latent(const Tensor<T>& z) {
    return detail::split_columns(apply_activation(activation_, out_(z)), out_dims_);
  }

  Tensor<T> draw_eps(std::size_t batch, Rng& rng) const {
    std::vector<T> e(batch * latent_);
    for (auto& v : e) v = static_cast<T>(rng.normal());
    return Tensor<T>({batch, latent_}, std::move(e));
  }

  std::vector<Tensor<T>> connect(const std::vector<Tensor<T>>& inputs) override {
    Rng rng(0);
    return sample(inputs, draw_eps(inputs.at(0).dim(0), rng)).outputs;
  }

 private:
  std::size_t latent_;
  std::string activation_;
  std::vector<std::size_t> out_dims_;
  Dense<T> mu_, logvar_, out_;
};

}  // namespace seqforge
