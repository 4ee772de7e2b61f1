#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mmfss/autograd.hpp"

namespace mmfss {

/// Named trainable leaves in registration order.
class ParamStore {
 public:
  Var& add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    index_[name] = params_.size();
    params_.emplace_back(name, parameter(std::move(init)));
    return params_.back().second;
  }

  const Var& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("unknown parameter: " + name);
    return params_[it->second].second;
  }
  Var& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("unknown parameter: " + name);
    return params_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::vector<Var> vars() const {
    std::vector<Var> out;
    for (const auto& [_, v] : params_) out.push_back(v);
    return out;
  }

  void zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += v.value().size();
    return n;
  }

  /// Deep copy of every value, keyed by name.
  std::map<std::string, Tensor> snapshot() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : params_) out.emplace(name, v.value());
    return out;
  }

 private:
  std::vector<std::pair<std::string, Var>> params_;
  std::map<std::string, std::size_t> index_;
};

/// x W + b with W stored as in x out.
struct Linear {
  Var weight;
  Var bias;

  Linear() = default;

  template <class Rng>
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    weight = store.add(name + ".weight", Tensor::uniform({in, out}, rng, -bound, bound));
    if (with_bias) bias = store.add(name + ".bias", Tensor::zeros({out}));
  }

  /// Binds to parameters already present in `store` (e.g. after loading a checkpoint).
  static Linear bind(const ParamStore& store, const std::string& name) {
    Linear l;
    l.weight = store.at(name + ".weight");
    if (store.contains(name + ".bias")) l.bias = store.at(name + ".bias");
    return l;
  }

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Var operator()(const Var& x) const {
    if (x.shape().size() != 2 || x.dim(1) != in_features()) {
      throw ContractError("linear layer expects width " + std::to_string(in_features()) + ", got " +
                          shape_str(x.shape()));
    }
    Var y = matmul(x, weight);
    return bias ? add_bias(y, bias) : y;
  }
};

/// Stack of linear layers with ReLU between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;

  template <class Rng>
  Mlp(ParamStore& store, const std::string& name, const std::vector<std::size_t>& widths, Rng& rng) {
    if (widths.size() < 2) throw ContractError("mlp needs at least input and output widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
      layers.emplace_back(store, name + "." + std::to_string(i), widths[i], widths[i + 1], rng);
  }

  static Mlp bind(const ParamStore& store, const std::string& name, std::size_t depth) {
    Mlp m;
    for (std::size_t i = 0; i < depth; ++i) m.layers.push_back(Linear::bind(store, name + "." + std::to_string(i)));
    return m;
  }

  std::size_t out_features() const { return layers.back().out_features(); }

  Var operator()(Var x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = relu(x);
    }
    return x;
  }

  /// Zeroes the last layer so the block starts as an exact no-op on a residual path.
  void zero_last() {
    layers.back().weight.mutable_value().fill(0.0);
    if (layers.back().bias) layers.back().bias.mutable_value().fill(0.0);
  }
};

}  // namespace mmfss
