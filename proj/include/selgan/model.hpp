#pragma once

// The full two-stage network assembled from a TrainConfig: G_i, optional G_s,
// optional pooling/channel-selection front-end, the attention-selection head
// and the shared patch discriminator.

#include "selgan/config.hpp"
#include "selgan/discriminator.hpp"
#include "selgan/generators.hpp"
#include "selgan/mcas.hpp"
#include "selgan/mspc.hpp"

namespace selgan {

template <typename T>
struct ModelOutputs {
  StageOneOutput<T> stage1;
  Var<T> fused;        ///< F_c' entering the selection head (undefined without stage II)
  Var<T> generations;  ///< [B,3N,H,W]
  Var<T> attention;    ///< [B,N,H,W]
  Var<T> image2;       ///< I_g''
  Var<T> guidance2;    ///< S_g'' = G_s(I_g'')
  Var<T> uncertainty;  ///< [B,K,H,W]

  /// I_g'' when stage II runs, I_g' otherwise.
  const Var<T>& final_image() const { return image2.defined() ? image2 : stage1.image; }
};

template <typename T>
class SelectionGan {
 public:
  /// Validates the config and initialises every weight from `seed` alone.
  explicit SelectionGan(const TrainConfig& config);

  ModelOutputs<T> forward(const Var<T>& source, const Var<T>& guidance) const;

  const TrainConfig& config() const { return config_; }
  const FeatureMask& mask() const { return mask_; }
  bool has_guidance_generator() const { return mask_.cycle; }
  bool has_stage2() const { return mask_.stage2(); }
  /// Channel count of F_c.
  std::int64_t fused_channels() const { return fused_channels_; }

  const UNetGenerator<T>& image_generator() const { return image_gen_; }
  const UNetGenerator<T>& guidance_generator() const { return guidance_gen_; }
  const MultiScaleChannelSelection<T>& channel_selection() const { return mspc_; }
  const AttentionSelection<T>& selection_head() const { return head_; }
  const PatchDiscriminator<T>& discriminator() const { return disc_; }

  /// Every generator-side parameter (G_i, G_s, pooling, selection head).
  ParameterList<T> generator_parameters() const;
  ParameterList<T> discriminator_parameters() const;
  /// Generator parameters followed by discriminator parameters.
  ParameterList<T> parameters() const;

 private:
  TrainConfig config_;
  FeatureMask mask_;
  std::int64_t fused_channels_ = 0;
  UNetGenerator<T> image_gen_;
  UNetGenerator<T> guidance_gen_;
  MultiScaleChannelSelection<T> mspc_;
  AttentionSelection<T> head_;
  PatchDiscriminator<T> disc_;
};

}  // namespace selgan
