#pragma once

// Adversarial, reconstruction and regularisation terms and their weighted
// combination into the generator objective.

#include <string>
#include <utility>
#include <vector>

#include "selgan/autograd.hpp"

namespace selgan {

struct LossWeights {
  double lambda1 = 100.0;   ///< stage-I image reconstruction
  double lambda2 = 1.0;     ///< stage-I guidance reconstruction (cycle)
  double lambda3 = 200.0;   ///< stage-II image reconstruction
  double lambda4 = 2.0;     ///< stage-II guidance reconstruction
  double lambda_tv = 1e-6;  ///< total variation on the final image
  double lambda_gan2 = 4.0; ///< weight of the stage-II adversarial term

  /// Throws ConfigError on a negative weight.
  void validate() const;
};

enum class GanSide { generator, discriminator };

/// Binary cross-entropy on patch logits. Discriminator side:
/// BCE(real, 1) + BCE(fake, 0); generator side: BCE(fake, 1), `real` unused.
template <typename T>
Var<T> gan_loss(const Var<T>& logits_real, const Var<T>& logits_fake, GanSide side);

/// stage1 + lambda * stage2; `stage2` may be undefined.
template <typename T>
Var<T> combined_gan_loss(const Var<T>& stage1, const Var<T>& stage2, double lambda);

/// Per-pixel mean over channels of |pred - target|: [B,C,H,W] -> [B,1,H,W].
template <typename T>
Var<T> pixel_l1_map(const Var<T>& pred, const Var<T>& target);

/// Anisotropic L1 total variation, summed over channels, divided by B*H*W.
template <typename T>
Var<T> tv_loss(const Var<T>& image);

struct LossBreakdown {
  std::vector<std::pair<std::string, double>> terms;
  double total = 0.0;

  double term(const std::string& name) const;
};

/// Predictions entering the generator objective. Undefined members are
/// skipped together with their weight.
template <typename T>
struct GeneratorPredictions {
  Var<T> image1;       ///< I_g'
  Var<T> guidance1;    ///< S_g'
  Var<T> image2;       ///< I_g''
  Var<T> guidance2;    ///< S_g''
  Var<T> uncertainty;  ///< [B,4,H,W], one map per pixel term; undefined means U ≡ 1
};

struct ObjectiveOptions {
  /// Apply the uncertainty maps to the stage-I pixel terms as well.
  bool uncertainty_stage1 = true;
};

template <typename T>
struct Objective {
  Var<T> total;
  LossBreakdown breakdown;
};

/// Σ λ_i · pixel_i + gan + λ_tv · tv(I_g''), where pixel_i is the
/// uncertainty-weighted mean when a map is available and the plain mean
/// otherwise. Breakdown entries are the weighted contributions.
template <typename T>
Objective<T> total_objective(const GeneratorPredictions<T>& pred, const Var<T>& target_image,
                             const Var<T>& target_guidance, const LossWeights& weights,
                             const Var<T>& gan_term, const ObjectiveOptions& options = {});

}  // namespace selgan
