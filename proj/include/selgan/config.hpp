#pragma once

// Training configuration, ablation levels and their feature masks.
//
// The JSON form of TrainConfig is flat: every field, including the loss
// weights, is a top-level key with the same name as the matching CLI flag.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "selgan/generators.hpp"
#include "selgan/losses.hpp"

namespace selgan {

/// Rows of the component ladder. B is a sibling of A (guidance-only input);
/// every later level adds one component to the previous one.
enum class AblationLevel { A, B, C, D, E, F, G, H };

AblationLevel parse_ablation_level(std::string_view text);
char to_char(AblationLevel level);

struct FeatureMask {
  bool source_input = true;         ///< I_a enters G_i
  bool guidance_input = true;       ///< S_g enters G_i
  bool cycle = true;                ///< G_s reconstructs S_g from the generated image
  bool uncertainty = true;          ///< pixel losses weighted by learned uncertainty maps
  bool attention_selection = true;  ///< N intermediate generations blended by attention
  bool total_variation = true;      ///< TV regulariser on the final image
  bool multiscale_pooling = true;   ///< pooling & channel selection before the selection head

  int enabled_count() const;
  /// Whether a refinement stage runs after G_i. Uncertainty maps are derived
  /// from attention maps, so enabling uncertainty alone runs a single-generation
  /// (N = 1) head.
  bool stage2() const { return attention_selection || uncertainty || multiscale_pooling; }
  GeneratorInput generator_input() const;

  friend bool operator==(const FeatureMask&, const FeatureMask&) = default;
};

FeatureMask feature_mask(AblationLevel level);

struct TrainConfig {
  // Refinement head.
  int attention_channels = 10;            ///< N
  std::vector<int> pooling_scales{2, 4, 8};  ///< M = 3 scales; empty derives size/32, size/16, size/8
  int uncertainty_maps = 4;               ///< K, one per pixel-loss map
  double uncertainty_epsilon = 1e-3;
  bool detach_uncertainty = false;
  bool uncertainty_stage1 = true;

  LossWeights weights;

  // Optimiser.
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double learning_rate = 2e-4;
  int batch_size = 4;
  int iterations = 2000;
  std::uint64_t seed = 0;

  AblationLevel ablation_level = AblationLevel::H;

  // Data.
  int image_size = 64;
  int guidance_channels = 3;
  bool one_hot_guidance = false;
  bool flip = true;
  int crop_pad = 0;  ///< replicate-pad then random-crop back, in pixels
  int holdout = 64;  ///< trailing manifest entries reserved for evaluation

  // Architecture.
  int image_base_width = 64;
  int guidance_base_width = 4;
  int image_depth = 4;
  int guidance_depth = 3;
  int disc_base_width = 64;
  int disc_layers = 3;

  int checkpoint_every = 500;

  FeatureMask mask() const { return feature_mask(ablation_level); }
  /// Generations actually built: N with attention selection, 1 otherwise.
  int effective_generations() const;
  /// Loss weights with terms of disabled components zeroed.
  LossWeights effective_weights() const;
  std::vector<int> resolved_pooling_scales() const;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
};

nlohmann::ordered_json to_json(const TrainConfig& config);
/// Overlays `j` onto `base`; unknown keys and ill-typed values raise ConfigError.
TrainConfig merge_config(const TrainConfig& base, const nlohmann::json& j);
/// Names of all configuration keys, in serialisation order.
std::vector<std::string> config_keys();

}  // namespace selgan
