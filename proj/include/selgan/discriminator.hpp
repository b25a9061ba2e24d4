#pragma once

#include <vector>

#include "selgan/nn.hpp"

namespace selgan {

struct PatchDiscriminatorSpec {
  std::int64_t in_channels = 6;
  std::int64_t base_width = 64;
  int strided_layers = 3;  ///< 4x4 stride-2 convolutions before the two stride-1 layers
};

/// Patch discriminator over channel-concatenated (condition, candidate) pairs.
/// One instance is shared by both stages.
///
/// Layout for the default spec: 4x4 convolutions with widths 64-128-256-512,
/// the first three with stride 2, then a 4x4 stride-1 convolution to a single
/// logit map. Every convolution uses padding 1. Outputs raw logits.
template <typename T>
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  PatchDiscriminator(PatchDiscriminatorSpec spec, Rng& rng);

  /// pair_a [B,3,H,W], pair_b [B,3,H,W] -> logits [B,1,h',w'].
  Var<T> discriminate(const Var<T>& pair_a, const Var<T>& pair_b) const;
  Var<T> forward(const Var<T>& pair) const;

  const PatchDiscriminatorSpec& spec() const { return spec_; }
  void collect(const std::string& prefix, ParameterList<T>& out) const;
  ParameterList<T> parameters() const {
    ParameterList<T> out;
    collect("D", out);
    return out;
  }

 private:
  PatchDiscriminatorSpec spec_;
  std::vector<Conv2d<T>> layers_;
};

/// Closed-form logits size for a given input side length; 0 if the input is too small.
std::int64_t patch_output_size(std::int64_t input, int strided_layers);

}  // namespace selgan
