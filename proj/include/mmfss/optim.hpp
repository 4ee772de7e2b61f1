#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mmfss/nn.hpp"

namespace mmfss {

struct AdamWOptions {
  double lr = 0.006;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment estimates for one optimizer, aligned with the parameter list it was built for.
struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

/// Adam with decoupled weight decay:
///   p <- p - lr*wd*p;  m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
class AdamW {
 public:
  AdamW(std::vector<Var> params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {
    for (const Var& p : params_) {
      state_.first_moment.emplace_back(p.shape());
      state_.second_moment.emplace_back(p.shape());
    }
  }

  const AdamWOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }
  const OptimizerState& state() const { return state_; }

  /// Applies one update from each parameter's accumulated gradient.
  void step() {
    std::vector<Tensor> grads;
    grads.reserve(params_.size());
    for (const Var& p : params_) grads.push_back(p.grad());
    step(grads);
  }

  void step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size()) throw ContractError("adamw: gradient count differs from parameter count");
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (grads[i].shape() != params_[i].shape()) throw DimensionError("adamw: gradient shape mismatch");
      if (!grads[i].all_finite()) throw TrainingError("adamw: non-finite gradient for parameter " + std::to_string(i));
    }
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double c1 = 1.0 - std::pow(opts_.beta1, t);
    const double c2 = 1.0 - std::pow(opts_.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i].mutable_value();
      Tensor& m = state_.first_moment[i];
      Tensor& v = state_.second_moment[i];
      const Tensor& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        p[j] -= opts_.lr * opts_.weight_decay * p[j];
        m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g[j];
        v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g[j] * g[j];
        p[j] -= opts_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opts_.eps);
      }
    }
  }

 private:
  std::vector<Var> params_;
  AdamWOptions opts_;
  OptimizerState state_;
};

}  // namespace mmfss
