#include "selgan/generators.hpp"

#include <algorithm>

namespace selgan {

namespace {
constexpr double kLeakySlope = 0.2;
constexpr double kNormEps = 1e-5;
}  // namespace

void require_divisible(std::int64_t height, std::int64_t width, int depth) {
  const std::int64_t f = std::int64_t{1} << depth;
  if (height % f != 0 || width % f != 0) {
    throw ShapeError("spatial size " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by 2^" + std::to_string(depth));
  }
}

template <typename T>
UNetGenerator<T>::UNetGenerator(UNetSpec spec, Rng& rng) : spec_(spec) {
  if (spec_.depth < 2) throw ConfigError("U-Net depth must be at least 2");
  if (spec_.base_width < 1 || spec_.in_channels < 1 || spec_.out_channels < 1) {
    throw ConfigError("U-Net widths must be positive");
  }
  // A bias directly followed by instance normalisation is cancelled by it, so
  // only the unnormalised outermost and innermost encoder convolutions carry one.
  const int d = spec_.depth;
  for (int k = 0; k < d; ++k) {
    const std::int64_t in = k == 0 ? spec_.in_channels : width_at(k - 1);
    down_.emplace_back(in, width_at(k), 4, 2, 1, rng, k == 0 || k == d - 1);
  }
  // up_[k] undoes down_[k]; innermost first in forward order.
  up_.resize(static_cast<std::size_t>(d));
  for (int k = d - 1; k >= 0; --k) {
    const std::int64_t in = k == d - 1 ? width_at(k) : 2 * width_at(k);
    const std::int64_t out = k == 0 ? spec_.base_width : width_at(k - 1);
    up_[static_cast<std::size_t>(k)] = ConvTranspose2d<T>(in, out, 4, 2, 1, rng, false);
  }
  head_ = Conv2d<T>(spec_.base_width, spec_.out_channels, 3, 1, 1, rng);
}

template <typename T>
std::int64_t UNetGenerator<T>::width_at(int level) const {
  return spec_.base_width << std::min(level, 3);
}

template <typename T>
typename UNetGenerator<T>::Output UNetGenerator<T>::forward(const Var<T>& x) const {
  if (x.shape().size() != 4 || x.dim(1) != spec_.in_channels) {
    throw ShapeError("U-Net expects [B," + std::to_string(spec_.in_channels) + ",H,W], got " +
                     to_string(x.shape()));
  }
  require_divisible(x.dim(2), x.dim(3), spec_.depth);
  const int d = spec_.depth;
  const T slope = static_cast<T>(kLeakySlope);
  const T eps = static_cast<T>(kNormEps);

  std::vector<Var<T>> skips;
  skips.reserve(static_cast<std::size_t>(d));
  Var<T> h = down_[0](x);
  skips.push_back(h);
  for (int k = 1; k < d; ++k) {
    h = down_[static_cast<std::size_t>(k)](ops::leaky_relu(h, slope));
    if (k < d - 1) h = ops::instance_norm(h, eps);
    skips.push_back(h);
  }

  Var<T> u = skips.back();
  for (int k = d - 1; k >= 1; --k) {
    Var<T> in = k == d - 1 ? u : ops::concat_channels<T>({u, skips[static_cast<std::size_t>(k)]});
    u = ops::instance_norm(up_[static_cast<std::size_t>(k)](ops::relu(in)), eps);
  }
  Var<T> in = ops::concat_channels<T>({u, skips[0]});
  Var<T> features = ops::relu(ops::instance_norm(up_[0](ops::relu(in)), eps));
  return {ops::tanh(head_(features)), features};
}

template <typename T>
void UNetGenerator<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  const std::string p = prefix.empty() ? "" : prefix + ".";
  for (std::size_t k = 0; k < down_.size(); ++k) down_[k].collect(p + "down" + std::to_string(k), out);
  for (std::size_t k = 0; k < up_.size(); ++k) up_[k].collect(p + "up" + std::to_string(k), out);
  head_.collect(p + "head", out);
}

template <typename T>
Var<T> generator_input(GeneratorInput mode, const Var<T>& source, const Var<T>& guidance) {
  switch (mode) {
    case GeneratorInput::source:
      return source;
    case GeneratorInput::guidance:
      return guidance;
    case GeneratorInput::concat:
      return ops::concat_channels<T>({source, guidance});
  }
  throw ConfigError("unknown generator input mode");
}

template <typename T>
StageOneOutput<T> stage1_forward(const UNetGenerator<T>& image_gen,
                                 const UNetGenerator<T>* guidance_gen, GeneratorInput mode,
                                 const Var<T>& source, const Var<T>& guidance) {
  auto image = image_gen.forward(generator_input(mode, source, guidance));
  StageOneOutput<T> out;
  out.image = image.image;
  out.image_features = image.features;
  if (guidance_gen) {
    auto cycled = guidance_gen->forward(image.image);
    out.guidance = cycled.image;
    out.guidance_features = cycled.features;
  }
  return out;
}

#define SELGAN_INSTANTIATE(T)                                                                \
  template class UNetGenerator<T>;                                                           \
  template Var<T> generator_input(GeneratorInput, const Var<T>&, const Var<T>&);             \
  template StageOneOutput<T> stage1_forward(const UNetGenerator<T>&, const UNetGenerator<T>*, \
                                            GeneratorInput, const Var<T>&, const Var<T>&);

SELGAN_INSTANTIATE(float)
SELGAN_INSTANTIATE(double)

#undef SELGAN_INSTANTIATE

}  // namespace selgan
