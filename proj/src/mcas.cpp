#include "selgan/mcas.hpp"

namespace selgan {

template <typename T>
Var<T> select(const Var<T>& generations, const Var<T>& attention) {
  return ops::attention_select(generations, attention);
}

template <typename T>
Var<T> uncertainty_weighted_loss(const Var<T>& loss_map, const Var<T>& u) {
  return ops::uncertainty_weighted_mean(loss_map, u);
}

template <typename T>
AttentionSelection<T>::AttentionSelection(std::int64_t in_channels, int generations,
                                          int uncertainty_maps, Rng& rng, double epsilon)
    : generations_(generations), uncertainty_maps_(uncertainty_maps), epsilon_(epsilon) {
  if (generations < 1) throw ConfigError("number of attention channels must be >= 1");
  if (uncertainty_maps < 1) throw ConfigError("number of uncertainty maps must be >= 1");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("uncertainty epsilon must lie in (0,1)");
  generation_conv_ = Conv2d<T>(in_channels, 3 * generations, 3, 1, 1, rng);
  attention_conv_ = Conv2d<T>(in_channels, generations, 1, 1, 0, rng);
  uncertainty_conv_ = Conv2d<T>(generations, uncertainty_maps, 1, 1, 0, rng);
}

template <typename T>
Var<T> AttentionSelection<T>::make_generations(const Var<T>& features) const {
  return ops::tanh(generation_conv_(features));
}

template <typename T>
Var<T> AttentionSelection<T>::make_attention(const Var<T>& features) const {
  return ops::softmax_channels(attention_conv_(features));
}

template <typename T>
Var<T> AttentionSelection<T>::make_uncertainty(const Var<T>& attention, bool detach) const {
  Var<T> in = detach ? attention.detach() : attention;
  return ops::clamp(ops::sigmoid(uncertainty_conv_(in)), static_cast<T>(epsilon_), T(1));
}

template <typename T>
void AttentionSelection<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  generation_conv_.collect(prefix + ".generation", out);
  attention_conv_.collect(prefix + ".attention", out);
  uncertainty_conv_.collect(prefix + ".uncertainty", out);
}

#define SELGAN_INSTANTIATE(T)                                               \
  template Var<T> select(const Var<T>&, const Var<T>&);                     \
  template Var<T> uncertainty_weighted_loss(const Var<T>&, const Var<T>&);  \
  template class AttentionSelection<T>;

SELGAN_INSTANTIATE(float)
SELGAN_INSTANTIATE(double)

#undef SELGAN_INSTANTIATE

}  // namespace selgan
