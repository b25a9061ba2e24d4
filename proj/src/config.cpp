#include "selgan/config.hpp"

namespace selgan {

AblationLevel parse_ablation_level(std::string_view text) {
  if (text.size() == 1) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
    if (c >= 'A' && c <= 'H') return static_cast<AblationLevel>(c - 'A');
  }
  throw ConfigError("unknown ablation level '" + std::string(text) + "' (expected A..H)");
}

char to_char(AblationLevel level) { return static_cast<char>('A' + static_cast<int>(level)); }

int FeatureMask::enabled_count() const {
  return static_cast<int>(source_input) + guidance_input + cycle + uncertainty +
         attention_selection + total_variation + multiscale_pooling;
}

GeneratorInput FeatureMask::generator_input() const {
  if (source_input && guidance_input) return GeneratorInput::concat;
  if (guidance_input) return GeneratorInput::guidance;
  return GeneratorInput::source;
}

FeatureMask feature_mask(AblationLevel level) {
  FeatureMask m{false, false, false, false, false, false, false};
  const int rank = static_cast<int>(level);
  if (level == AblationLevel::A) {
    m.source_input = true;
    return m;
  }
  if (level == AblationLevel::B) {
    m.guidance_input = true;
    return m;
  }
  m.source_input = m.guidance_input = true;
  m.cycle = rank >= static_cast<int>(AblationLevel::D);
  m.uncertainty = rank >= static_cast<int>(AblationLevel::E);
  m.attention_selection = rank >= static_cast<int>(AblationLevel::F);
  m.total_variation = rank >= static_cast<int>(AblationLevel::G);
  m.multiscale_pooling = rank >= static_cast<int>(AblationLevel::H);
  return m;
}

int TrainConfig::effective_generations() const {
  return mask().attention_selection ? attention_channels : 1;
}

LossWeights TrainConfig::effective_weights() const {
  const FeatureMask m = mask();
  LossWeights w = weights;
  if (!m.cycle) w.lambda2 = w.lambda4 = 0.0;
  if (!m.stage2()) w.lambda3 = w.lambda4 = w.lambda_gan2 = 0.0;
  if (!m.total_variation) w.lambda_tv = 0.0;
  return w;
}

std::vector<int> TrainConfig::resolved_pooling_scales() const {
  if (!pooling_scales.empty()) return pooling_scales;
  return {image_size / 32, image_size / 16, image_size / 8};
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  weights.validate();
  require(attention_channels >= 1, "attention_channels must be >= 1");
  require(uncertainty_maps == 4, "uncertainty_maps must be 4 (one per pixel-loss map)");
  require(uncertainty_epsilon > 0 && uncertainty_epsilon < 1, "uncertainty_epsilon must lie in (0,1)");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1,
          "adam betas must lie in [0,1)");
  require(learning_rate >= 0, "learning_rate must be non-negative");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(iterations >= 0, "iterations must be non-negative");
  require(guidance_channels >= 1, "guidance_channels must be >= 1");
  require(image_base_width >= 1 && guidance_base_width >= 1 && disc_base_width >= 1,
          "network widths must be positive");
  require(image_depth >= 2 && guidance_depth >= 2, "generator depths must be >= 2");
  require(disc_layers >= 1, "disc_layers must be >= 1");
  require(crop_pad >= 0, "crop_pad must be non-negative");
  require(holdout >= 0, "holdout must be non-negative");
  require(checkpoint_every >= 0, "checkpoint_every must be non-negative");
  require(image_size >= 16, "image_size must be >= 16");
  const int max_depth = std::max(image_depth, guidance_depth);
  require(image_size % (1 << max_depth) == 0,
          "image_size " + std::to_string(image_size) + " must be divisible by 2^" + std::to_string(max_depth));
  const auto scales = resolved_pooling_scales();
  require(scales.size() == 3, "pooling_scales must list exactly 3 scales");
  for (int s : scales) {
    require(s >= 1 && image_size % s == 0,
            "pooling scale " + std::to_string(s) + " does not divide image_size " + std::to_string(image_size));
  }
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["attention_channels"] = c.attention_channels;
  j["pooling_scales"] = c.pooling_scales;
  j["uncertainty_maps"] = c.uncertainty_maps;
  j["uncertainty_epsilon"] = c.uncertainty_epsilon;
  j["detach_uncertainty"] = c.detach_uncertainty;
  j["uncertainty_stage1"] = c.uncertainty_stage1;
  j["lambda1"] = c.weights.lambda1;
  j["lambda2"] = c.weights.lambda2;
  j["lambda3"] = c.weights.lambda3;
  j["lambda4"] = c.weights.lambda4;
  j["lambda_tv"] = c.weights.lambda_tv;
  j["lambda_gan2"] = c.weights.lambda_gan2;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["iterations"] = c.iterations;
  j["seed"] = c.seed;
  j["ablation_level"] = std::string(1, to_char(c.ablation_level));
  j["image_size"] = c.image_size;
  j["guidance_channels"] = c.guidance_channels;
  j["one_hot_guidance"] = c.one_hot_guidance;
  j["flip"] = c.flip;
  j["crop_pad"] = c.crop_pad;
  j["holdout"] = c.holdout;
  j["image_base_width"] = c.image_base_width;
  j["guidance_base_width"] = c.guidance_base_width;
  j["image_depth"] = c.image_depth;
  j["guidance_depth"] = c.guidance_depth;
  j["disc_base_width"] = c.disc_base_width;
  j["disc_layers"] = c.disc_layers;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

std::vector<std::string> config_keys() {
  const auto defaults = to_json(TrainConfig{});
  std::vector<std::string> keys;
  for (const auto& [k, v] : defaults.items()) keys.push_back(k);
  return keys;
}

namespace {

template <typename V>
void read(const nlohmann::json& j, const char* key, V& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<V, bool>) {
      if (!it->is_boolean()) throw ConfigError(std::string(key) + " must be a boolean");
    } else if constexpr (std::is_integral_v<V>) {
      if (!it->is_number_integer()) throw ConfigError(std::string(key) + " must be an integer");
      if constexpr (std::is_unsigned_v<V>) {
        if (it->is_number_integer() && !it->is_number_unsigned() && it->get<std::int64_t>() < 0) {
          throw ConfigError(std::string(key) + " must be non-negative");
        }
      }
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!it->is_number()) throw ConfigError(std::string(key) + " must be a number");
    }
    out = it->get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid value for ") + key + ": " + e.what());
  }
}

}  // namespace

TrainConfig merge_config(const TrainConfig& base, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  const auto keys = config_keys();
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ConfigError("unknown configuration key '" + k + "'");
    }
  }
  TrainConfig c = base;
  read(j, "attention_channels", c.attention_channels);
  read(j, "pooling_scales", c.pooling_scales);
  read(j, "uncertainty_maps", c.uncertainty_maps);
  read(j, "uncertainty_epsilon", c.uncertainty_epsilon);
  read(j, "detach_uncertainty", c.detach_uncertainty);
  read(j, "uncertainty_stage1", c.uncertainty_stage1);
  read(j, "lambda1", c.weights.lambda1);
  read(j, "lambda2", c.weights.lambda2);
  read(j, "lambda3", c.weights.lambda3);
  read(j, "lambda4", c.weights.lambda4);
  read(j, "lambda_tv", c.weights.lambda_tv);
  read(j, "lambda_gan2", c.weights.lambda_gan2);
  read(j, "adam_beta1", c.adam_beta1);
  read(j, "adam_beta2", c.adam_beta2);
  read(j, "learning_rate", c.learning_rate);
  read(j, "batch_size", c.batch_size);
  read(j, "iterations", c.iterations);
  read(j, "seed", c.seed);
  if (j.contains("ablation_level")) {
    if (!j["ablation_level"].is_string()) throw ConfigError("ablation_level must be a string");
    c.ablation_level = parse_ablation_level(j["ablation_level"].get<std::string>());
  }
  read(j, "image_size", c.image_size);
  read(j, "guidance_channels", c.guidance_channels);
  read(j, "one_hot_guidance", c.one_hot_guidance);
  read(j, "flip", c.flip);
  read(j, "crop_pad", c.crop_pad);
  read(j, "holdout", c.holdout);
  read(j, "image_base_width", c.image_base_width);
  read(j, "guidance_base_width", c.guidance_base_width);
  read(j, "image_depth", c.image_depth);
  read(j, "guidance_depth", c.guidance_depth);
  read(j, "disc_base_width", c.disc_base_width);
  read(j, "disc_layers", c.disc_layers);
  read(j, "checkpoint_every", c.checkpoint_every);
  return c;
}

}  // namespace selgan
