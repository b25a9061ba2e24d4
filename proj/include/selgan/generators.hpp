#pragma once

// U-Net image generator G_i and guidance generator G_s, plus the stage-I
// guidance cycle [I_a, S_g] -> I_g' -> S_g'.

#include <vector>

#include "selgan/nn.hpp"

namespace selgan {

struct UNetSpec {
  std::int64_t in_channels = 6;
  std::int64_t out_channels = 3;
  std::int64_t base_width = 64;
  int depth = 4;  ///< number of stride-2 down/up levels
};

/// Encoder-decoder with mirrored skip connections.
///
/// Encoder level k has base_width * 2^min(k,3) filters. Leaky-slope 0.2 in the
/// encoder, plain rectifier in the decoder, instance normalisation everywhere
/// except the outermost and innermost encoder convolutions. The final decoder
/// level produces `base_width` feature maps at input resolution; a 3x3
/// convolution followed by tanh maps them to the output.
template <typename T>
class UNetGenerator {
 public:
  struct Output {
    Var<T> image;     ///< [B,out,H,W], values in (-1,1)
    Var<T> features;  ///< [B,base_width,H,W], activations feeding the output conv
  };

  UNetGenerator() = default;
  UNetGenerator(UNetSpec spec, Rng& rng);

  Output forward(const Var<T>& x) const;

  const UNetSpec& spec() const { return spec_; }
  std::int64_t width_at(int level) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;
  ParameterList<T> parameters() const {
    ParameterList<T> out;
    collect("", out);
    return out;
  }

 private:
  UNetSpec spec_;
  std::vector<Conv2d<T>> down_;
  std::vector<ConvTranspose2d<T>> up_;
  Conv2d<T> head_;
};

/// Throws ShapeError unless H and W are divisible by 2^depth.
void require_divisible(std::int64_t height, std::int64_t width, int depth);

enum class GeneratorInput { source, guidance, concat };

/// Builds the G_i input: I_a, S_g, or their channel concatenation.
template <typename T>
Var<T> generator_input(GeneratorInput mode, const Var<T>& source, const Var<T>& guidance);

template <typename T>
struct StageOneOutput {
  Var<T> image;              ///< I_g'
  Var<T> guidance;           ///< S_g' (undefined without the cycle)
  Var<T> image_features;     ///< F_i
  Var<T> guidance_features;  ///< F_s (undefined without the cycle)
};

/// Stage-I cycle. `guidance_gen` may be null, in which case only G_i runs.
template <typename T>
StageOneOutput<T> stage1_forward(const UNetGenerator<T>& image_gen,
                                 const UNetGenerator<T>* guidance_gen, GeneratorInput mode,
                                 const Var<T>& source, const Var<T>& guidance);

}  // namespace selgan
