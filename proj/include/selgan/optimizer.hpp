#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "selgan/nn.hpp"

namespace selgan {

struct AdamOptions {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Parameters without a gradient are skipped.
/// Moment buffers are public state so checkpoints can carry them.
template <typename T>
class Adam {
 public:
  struct Slot {
    Tensor<T> m;
    Tensor<T> v;
  };

  Adam() = default;
  Adam(ParameterList<T> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    slots_.reserve(params_.size());
    for (const auto& p : params_) slots_.push_back({Tensor<T>(p.var.shape()), Tensor<T>(p.var.shape())});
  }

  void step() {
    ++steps_;
    const double lr = options_.learning_rate;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
    const T step_size = static_cast<T>(lr / c1);
    const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
    const T eps = static_cast<T>(options_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var<T> p = params_[i].var;
      if (!p.has_grad()) continue;
      const T* g = p.grad().data();
      T* w = p.mutable_value().data();
      T* m = slots_[i].m.data();
      T* v = slots_[i].v.data();
      const std::int64_t n = p.numel();
      for (std::int64_t k = 0; k < n; ++k) {
        m[k] = b1 * m[k] + (T(1) - b1) * g[k];
        v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
        w[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_c2 + eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) {
      Var<T> handle = p.var;
      handle.zero_grad();
    }
  }

  const ParameterList<T>& parameters() const { return params_; }
  const AdamOptions& options() const { return options_; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t steps) { steps_ = steps; }

 private:
  ParameterList<T> params_;
  AdamOptions options_;
  std::vector<Slot> slots_;
  std::int64_t steps_ = 0;
};

}  // namespace selgan
