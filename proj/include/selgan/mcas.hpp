#pragma once

// Multi-channel attention selection: N intermediate generations blended by a
// per-pixel softmax over N attention maps, plus K uncertainty maps derived
// from those attention maps.
//
// Batched layouts:
//   generations  [B, 3N, H, W]   generation n occupies channels 3n..3n+2
//   attention    [B, N, H, W]    sums to 1 over N at every pixel
//   uncertainty  [B, K, H, W]    sigmoid output clamped to [epsilon, 1]

#include "selgan/nn.hpp"

namespace selgan {

inline constexpr double kUncertaintyEpsilon = 1e-3;

/// Σ_n attention[n] ⊗ generations[n], attention broadcast over RGB.
template <typename T>
Var<T> select(const Var<T>& generations, const Var<T>& attention);

/// mean(loss_map / u + log u). Expects u already clamped away from zero.
template <typename T>
Var<T> uncertainty_weighted_loss(const Var<T>& loss_map, const Var<T>& u);

template <typename T>
class AttentionSelection {
 public:
  AttentionSelection() = default;
  /// Throws ConfigError if generations < 1 or uncertainty_maps < 1.
  AttentionSelection(std::int64_t in_channels, int generations, int uncertainty_maps, Rng& rng,
                     double epsilon = kUncertaintyEpsilon);

  Var<T> make_generations(const Var<T>& features) const;
  Var<T> make_attention(const Var<T>& features) const;
  Var<T> make_uncertainty(const Var<T>& attention, bool detach = false) const;

  int generations() const { return generations_; }
  int uncertainty_maps() const { return uncertainty_maps_; }
  double epsilon() const { return epsilon_; }

  // Direct access for tests that pin weights.
  const Conv2d<T>& generation_conv() const { return generation_conv_; }
  const Conv2d<T>& attention_conv() const { return attention_conv_; }
  const Conv2d<T>& uncertainty_conv() const { return uncertainty_conv_; }

  void collect(const std::string& prefix, ParameterList<T>& out) const;

 private:
  int generations_ = 0;
  int uncertainty_maps_ = 0;
  double epsilon_ = kUncertaintyEpsilon;
  Conv2d<T> generation_conv_;
  Conv2d<T> attention_conv_;
  Conv2d<T> uncertainty_conv_;
};

}  // namespace selgan
