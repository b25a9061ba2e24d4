#include "selgan/mspc.hpp"

namespace selgan {

template <typename T>
Var<T> concat_stage_features(const Var<T>& source, const Var<T>& coarse_image,
                             const Var<T>& image_features, const Var<T>& guidance_features) {
  std::vector<Var<T>> parts{source, coarse_image, image_features};
  if (guidance_features.defined()) parts.push_back(guidance_features);
  for (const auto& p : parts) {
    if (p.shape().size() != 4 || p.dim(0) != source.dim(0) || p.dim(2) != source.dim(2) ||
        p.dim(3) != source.dim(3)) {
      throw ShapeError("concat_stage_features: " + to_string(p.shape()) +
                       " does not match source " + to_string(source.shape()));
    }
  }
  return ops::concat_channels(parts);
}

template <typename T>
Var<T> multiscale_pool(const Var<T>& features, const std::vector<int>& scales) {
  if (features.shape().size() != 4) throw ShapeError("multiscale_pool expects [B,C,H,W]");
  std::vector<Var<T>> branches{features};
  for (int s : scales) {
    if (s < 1 || features.dim(2) % s != 0 || features.dim(3) % s != 0) {
      throw ConfigError("pooling scale " + std::to_string(s) + " does not divide " +
                        std::to_string(features.dim(2)) + "x" + std::to_string(features.dim(3)));
    }
    branches.push_back(ops::mul(features, ops::pool_upsample(features, s)));
  }
  return ops::concat_channels(branches);
}

template <typename T>
Var<T> channel_attention(const Var<T>& features) {
  const Shape& s = features.shape();
  if (s.size() != 4) throw ShapeError("channel_attention expects [B,C,H,W]");
  Var<T> flat = ops::reshape(features, {s[0], s[1], s[2] * s[3]});
  return ops::softmax_lastdim(ops::gram(flat));
}

template <typename T>
Var<T> channel_selection(const Var<T>& features, const Var<T>& alpha) {
  const Shape s = features.shape();
  if (s.size() != 4) throw ShapeError("channel_selection expects [B,C,H,W]");
  Var<T> flat = ops::reshape(features, {s[0], s[1], s[2] * s[3]});
  Var<T> attention = ops::softmax_lastdim(ops::gram(flat));
  Var<T> mixed = ops::reshape(ops::bmm(attention, flat), s);
  return ops::add(ops::scale_by(mixed, alpha), features);
}

template <typename T>
MultiScaleChannelSelection<T>::MultiScaleChannelSelection(std::int64_t channels,
                                                          std::vector<int> scales, Rng& rng)
    : channels_(channels),
      scales_(std::move(scales)),
      alpha_(Tensor<T>({1}, T(0)), true),
      projection_(channels * static_cast<std::int64_t>(scales_.size() + 1), channels, 3, 1, 1, rng) {}

template <typename T>
Var<T> MultiScaleChannelSelection<T>::project_back(const Var<T>& selected) const {
  if (selected.shape().size() != 4 || selected.dim(1) != projection_.in_channels()) {
    throw ShapeError("project_back expects " + std::to_string(projection_.in_channels()) +
                     " channels, got " + to_string(selected.shape()));
  }
  return projection_(selected);
}

template <typename T>
Var<T> MultiScaleChannelSelection<T>::forward(const Var<T>& features) const {
  if (features.shape().size() != 4 || features.dim(1) != channels_) {
    throw ShapeError("MSPC expects " + std::to_string(channels_) + " channels, got " +
                     to_string(features.shape()));
  }
  return project_back(channel_selection(multiscale_pool(features, scales_), alpha_));
}

template <typename T>
void MultiScaleChannelSelection<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".alpha", alpha_});
  projection_.collect(prefix + ".projection", out);
}

#define SELGAN_INSTANTIATE(T)                                                                \
  template Var<T> concat_stage_features(const Var<T>&, const Var<T>&, const Var<T>&,         \
                                        const Var<T>&);                                      \
  template Var<T> multiscale_pool(const Var<T>&, const std::vector<int>&);                   \
  template Var<T> channel_attention(const Var<T>&);                                          \
  template Var<T> channel_selection(const Var<T>&, const Var<T>&);                           \
  template class MultiScaleChannelSelection<T>;

SELGAN_INSTANTIATE(float)
SELGAN_INSTANTIATE(double)

#undef SELGAN_INSTANTIATE

}  // namespace selgan
