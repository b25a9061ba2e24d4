#pragma once

// Multi-scale spatial pooling & channel selection: the stage-II front-end that
// fuses coarse outputs and generator features into F_c'.

#include <vector>

#include "selgan/nn.hpp"

namespace selgan {

/// F_c = concat(I_a, I_g', F_i, F_s) along channels. `guidance_features` may
/// be undefined when the guidance cycle is disabled.
template <typename T>
Var<T> concat_stage_features(const Var<T>& source, const Var<T>& coarse_image,
                             const Var<T>& image_features, const Var<T>& guidance_features);

/// F_m = concat(F_c, F_c ⊗ up(avgpool_s1(F_c)), ...). Output has (M+1)·C channels.
/// Throws ConfigError when a scale does not divide H and W.
template <typename T>
Var<T> multiscale_pool(const Var<T>& features, const std::vector<int>& scales);

/// Row-softmax of the per-sample channel Gram matrix: [B,C,H,W] -> [B,C,C].
template <typename T>
Var<T> channel_attention(const Var<T>& features);

/// out_j = alpha * Σ_i A_ji X_i + X_j with A = channel_attention(X).
template <typename T>
Var<T> channel_selection(const Var<T>& features, const Var<T>& alpha);

template <typename T>
Var<T> channel_selection(const Var<T>& features, T alpha) {
  return channel_selection(features, Var<T>(Tensor<T>({1}, alpha)));
}

/// Learnable part of the block: residual scale alpha (initialised to 0) and
/// the 3x3 projection from (M+1)·C back to C channels.
template <typename T>
class MultiScaleChannelSelection {
 public:
  MultiScaleChannelSelection() = default;
  MultiScaleChannelSelection(std::int64_t channels, std::vector<int> scales, Rng& rng);

  /// F_c -> F_c', same shape as the input.
  Var<T> forward(const Var<T>& features) const;
  Var<T> project_back(const Var<T>& selected) const;

  const Var<T>& alpha() const { return alpha_; }
  const std::vector<int>& scales() const { return scales_; }
  std::int64_t channels() const { return channels_; }
  void collect(const std::string& prefix, ParameterList<T>& out) const;

 private:
  std::int64_t channels_ = 0;
  std::vector<int> scales_;
  Var<T> alpha_;
  Conv2d<T> projection_;
};

}  // namespace selgan
