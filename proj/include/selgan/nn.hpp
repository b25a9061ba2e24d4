#pragma once

// Learnable building blocks shared by the generators, the refinement head and
// the discriminator.

#include <random>
#include <string>
#include <vector>

#include "selgan/autograd.hpp"

namespace selgan {

template <typename T>
struct NamedParameter {
  std::string name;
  Var<T> var;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

using Rng = std::mt19937_64;

/// Gaussian N(0, stddev) initialisation.
template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
void set_requires_grad(const ParameterList<T>& params, bool on) {
  for (const auto& p : params) {
    Var<T> handle = p.var;
    handle.set_requires_grad(on);
  }
}

template <typename T>
std::int64_t count_parameters(const ParameterList<T>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.var.numel();
  return n;
}

inline constexpr double kInitStddev = 0.02;

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel, int stride, int pad,
         Rng& rng, bool with_bias = true)
      : weight_(normal_tensor<T>({out_channels, in_channels, kernel, kernel}, kInitStddev, rng), true),
        stride_(stride),
        pad_(pad) {
    if (with_bias) bias_ = Var<T>(Tensor<T>({out_channels}), true);
  }

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight_, bias_, stride_, pad_); }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight_});
    if (bias_.defined()) out.push_back({prefix + ".bias", bias_});
  }

  std::int64_t in_channels() const { return weight_.dim(1); }
  std::int64_t out_channels() const { return weight_.dim(0); }
  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }

 private:
  Var<T> weight_;
  Var<T> bias_;
  int stride_ = 1;
  int pad_ = 0;
};

template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::int64_t in_channels, std::int64_t out_channels, int kernel, int stride,
                  int pad, Rng& rng, bool with_bias = true)
      : weight_(normal_tensor<T>({in_channels, out_channels, kernel, kernel}, kInitStddev, rng), true),
        stride_(stride),
        pad_(pad) {
    if (with_bias) bias_ = Var<T>(Tensor<T>({out_channels}), true);
  }

  Var<T> operator()(const Var<T>& x) const {
    return ops::conv_transpose2d(x, weight_, bias_, stride_, pad_);
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight_});
    if (bias_.defined()) out.push_back({prefix + ".bias", bias_});
  }

 private:
  Var<T> weight_;
  Var<T> bias_;
  int stride_ = 2;
  int pad_ = 1;
};

}  // namespace selgan
