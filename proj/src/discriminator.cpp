#include "selgan/discriminator.hpp"

#include <algorithm>

namespace selgan {

std::int64_t patch_output_size(std::int64_t input, int strided_layers) {
  std::int64_t s = input;
  for (int i = 0; i < strided_layers; ++i) s = (s + 2 - 4) / 2 + 1;
  for (int i = 0; i < 2; ++i) s = s + 2 - 4 + 1;
  return std::max<std::int64_t>(s, 0);
}

template <typename T>
PatchDiscriminator<T>::PatchDiscriminator(PatchDiscriminatorSpec spec, Rng& rng) : spec_(spec) {
  if (spec_.strided_layers < 1) throw ConfigError("discriminator needs at least one strided layer");
  std::int64_t in = spec_.in_channels;
  for (int i = 0; i <= spec_.strided_layers; ++i) {
    const std::int64_t out = spec_.base_width << std::min(i, 3);
    // Normalised layers (all but the first) need no bias.
    layers_.emplace_back(in, out, 4, i < spec_.strided_layers ? 2 : 1, 1, rng, i == 0);
    in = out;
  }
  layers_.emplace_back(in, 1, 4, 1, 1, rng);
}

template <typename T>
Var<T> PatchDiscriminator<T>::forward(const Var<T>& pair) const {
  if (pair.shape().size() != 4 || pair.dim(1) != spec_.in_channels) {
    throw ShapeError("discriminator expects [B," + std::to_string(spec_.in_channels) +
                     ",H,W], got " + to_string(pair.shape()));
  }
  if (patch_output_size(pair.dim(2), spec_.strided_layers) < 1 ||
      patch_output_size(pair.dim(3), spec_.strided_layers) < 1) {
    throw ShapeError("discriminator input " + to_string(pair.shape()) + " is too small");
  }
  const T slope = static_cast<T>(0.2);
  Var<T> h = pair;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i > 0) h = ops::instance_norm(h, static_cast<T>(1e-5));
    h = ops::leaky_relu(h, slope);
  }
  return layers_.back()(h);
}

template <typename T>
Var<T> PatchDiscriminator<T>::discriminate(const Var<T>& pair_a, const Var<T>& pair_b) const {
  if (pair_a.shape() != pair_b.shape()) {
    throw ShapeError("discriminator pair mismatch: " + to_string(pair_a.shape()) + " vs " +
                     to_string(pair_b.shape()));
  }
  return forward(ops::concat_channels<T>({pair_a, pair_b}));
}

template <typename T>
void PatchDiscriminator<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".conv" + std::to_string(i), out);
}

template class PatchDiscriminator<float>;
template class PatchDiscriminator<double>;

}  // namespace selgan
