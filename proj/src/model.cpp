#include "selgan/model.hpp"

namespace selgan {

namespace {

// One independent stream per module, so toggling a component leaves the
// initialisation of the others untouched.
Rng module_rng(std::uint64_t seed, std::uint32_t module) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), module};
  return Rng(seq);
}

}  // namespace

template <typename T>
SelectionGan<T>::SelectionGan(const TrainConfig& config) : config_(config), mask_(config.mask()) {
  config_.validate();
  const std::int64_t cg = config_.guidance_channels;

  UNetSpec image_spec;
  switch (mask_.generator_input()) {
    case GeneratorInput::source: image_spec.in_channels = 3; break;
    case GeneratorInput::guidance: image_spec.in_channels = cg; break;
    case GeneratorInput::concat: image_spec.in_channels = 3 + cg; break;
  }
  image_spec.out_channels = 3;
  image_spec.base_width = config_.image_base_width;
  image_spec.depth = config_.image_depth;
  Rng rng_i = module_rng(config_.seed, 1);
  image_gen_ = UNetGenerator<T>(image_spec, rng_i);

  if (mask_.cycle) {
    UNetSpec guidance_spec{3, cg, config_.guidance_base_width, config_.guidance_depth};
    Rng rng_s = module_rng(config_.seed, 2);
    guidance_gen_ = UNetGenerator<T>(guidance_spec, rng_s);
  }

  if (mask_.stage2()) {
    fused_channels_ = 3 + 3 + config_.image_base_width + (mask_.cycle ? config_.guidance_base_width : 0);
    if (mask_.multiscale_pooling) {
      Rng rng_m = module_rng(config_.seed, 3);
      mspc_ = MultiScaleChannelSelection<T>(fused_channels_, config_.resolved_pooling_scales(), rng_m);
    }
    Rng rng_a = module_rng(config_.seed, 4);
    head_ = AttentionSelection<T>(fused_channels_, config_.effective_generations(),
                                  config_.uncertainty_maps, rng_a, config_.uncertainty_epsilon);
  }

  PatchDiscriminatorSpec disc_spec{6, config_.disc_base_width, config_.disc_layers};
  Rng rng_d = module_rng(config_.seed, 5);
  disc_ = PatchDiscriminator<T>(disc_spec, rng_d);
}

template <typename T>
ModelOutputs<T> SelectionGan<T>::forward(const Var<T>& source, const Var<T>& guidance) const {
  const auto& src_shape = source.shape();
  if (source.value().rank() != 4 || src_shape[1] != 3) {
    throw ShapeError("source must be [B,3,H,W], got " + to_string(src_shape));
  }
  if (guidance.value().rank() != 4 || guidance.dim(1) != config_.guidance_channels ||
      guidance.dim(0) != source.dim(0) || guidance.dim(2) != source.dim(2) ||
      guidance.dim(3) != source.dim(3)) {
    throw ShapeError("guidance " + to_string(guidance.shape()) + " does not match source " +
                     to_string(src_shape) + " with " + std::to_string(config_.guidance_channels) +
                     " channels");
  }

  ModelOutputs<T> out;
  out.stage1 = stage1_forward(image_gen_, mask_.cycle ? &guidance_gen_ : nullptr,
                              mask_.generator_input(), source, guidance);
  if (!mask_.stage2()) return out;

  Var<T> fused = concat_stage_features(source, out.stage1.image, out.stage1.image_features,
                                       out.stage1.guidance_features);
  if (mask_.multiscale_pooling) fused = mspc_.forward(fused);
  out.fused = fused;
  out.generations = head_.make_generations(fused);
  out.attention = head_.make_attention(fused);
  out.image2 = select(out.generations, out.attention);
  if (mask_.uncertainty) out.uncertainty = head_.make_uncertainty(out.attention, config_.detach_uncertainty);
  if (mask_.cycle) out.guidance2 = guidance_gen_.forward(out.image2).image;
  return out;
}

template <typename T>
ParameterList<T> SelectionGan<T>::generator_parameters() const {
  ParameterList<T> out;
  image_gen_.collect("G_i", out);
  if (mask_.cycle) guidance_gen_.collect("G_s", out);
  if (mask_.stage2()) {
    if (mask_.multiscale_pooling) mspc_.collect("mspc", out);
    head_.collect("mcas", out);
  }
  return out;
}

template <typename T>
ParameterList<T> SelectionGan<T>::discriminator_parameters() const {
  return disc_.parameters();
}

template <typename T>
ParameterList<T> SelectionGan<T>::parameters() const {
  ParameterList<T> out = generator_parameters();
  disc_.collect("D", out);
  return out;
}

template class SelectionGan<float>;
template class SelectionGan<double>;

}  // namespace selgan
