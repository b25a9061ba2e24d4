#include "selgan/losses.hpp"

#include "selgan/mcas.hpp"

namespace selgan {

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {
      {"lambda1", lambda1}, {"lambda2", lambda2},     {"lambda3", lambda3},
      {"lambda4", lambda4}, {"lambda_tv", lambda_tv}, {"lambda_gan2", lambda_gan2}};
  for (const auto& [name, v] : all) {
    if (!(v >= 0.0)) throw ConfigError(std::string(name) + " must be non-negative");
  }
}

double LossBreakdown::term(const std::string& name) const {
  for (const auto& [n, v] : terms) {
    if (n == name) return v;
  }
  throw ConfigError("no loss term named '" + name + "'");
}

template <typename T>
Var<T> gan_loss(const Var<T>& logits_real, const Var<T>& logits_fake, GanSide side) {
  if (side == GanSide::generator) return ops::bce_with_logits(logits_fake, T(1));
  require_same_shape(logits_real.shape(), logits_fake.shape(), "gan_loss");
  return ops::add(ops::bce_with_logits(logits_real, T(1)), ops::bce_with_logits(logits_fake, T(0)));
}

template <typename T>
Var<T> combined_gan_loss(const Var<T>& stage1, const Var<T>& stage2, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("adversarial weight must be non-negative");
  if (!stage2.defined()) return stage1;
  return ops::weighted_sum<T>({stage1, stage2}, {T(1), static_cast<T>(lambda)});
}

template <typename T>
Var<T> pixel_l1_map(const Var<T>& pred, const Var<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "pixel_l1_map");
  return ops::mean_channels(ops::abs(ops::sub(pred, target)));
}

template <typename T>
Var<T> tv_loss(const Var<T>& image) {
  return ops::total_variation(image);
}

template <typename T>
Objective<T> total_objective(const GeneratorPredictions<T>& pred, const Var<T>& target_image,
                             const Var<T>& target_guidance, const LossWeights& weights,
                             const Var<T>& gan_term, const ObjectiveOptions& options) {
  struct PixelTerm {
    const char* name;
    const Var<T>* prediction;
    const Var<T>* target;
    double weight;
    bool stage1;
  };
  const PixelTerm pixel_terms[] = {
      {"pixel_image1", &pred.image1, &target_image, weights.lambda1, true},
      {"pixel_guidance1", &pred.guidance1, &target_guidance, weights.lambda2, true},
      {"pixel_image2", &pred.image2, &target_image, weights.lambda3, false},
      {"pixel_guidance2", &pred.guidance2, &target_guidance, weights.lambda4, false},
  };

  std::vector<Var<T>> terms;
  std::vector<T> coefficients;
  Objective<T> result;
  auto add_term = [&](const std::string& name, Var<T> value, double weight) {
    result.breakdown.terms.emplace_back(name, weight * static_cast<double>(value.item()));
    terms.push_back(std::move(value));
    coefficients.push_back(static_cast<T>(weight));
  };

  const bool have_u = pred.uncertainty.defined();
  if (have_u && pred.uncertainty.dim(1) < 4) {
    throw ShapeError("total_objective needs 4 uncertainty maps, got " +
                     to_string(pred.uncertainty.shape()));
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const PixelTerm& t = pixel_terms[i];
    if (!t.prediction->defined()) continue;
    Var<T> map = pixel_l1_map(*t.prediction, *t.target);
    const bool weighted = have_u && (!t.stage1 || options.uncertainty_stage1);
    Var<T> value = weighted ? uncertainty_weighted_loss(map, ops::slice_channels(pred.uncertainty,
                                                                                 static_cast<std::int64_t>(i), 1))
                            : ops::mean(map);
    add_term(t.name, std::move(value), t.weight);
  }
  if (gan_term.defined()) add_term("gan", gan_term, 1.0);
  const Var<T>& final_image = pred.image2.defined() ? pred.image2 : pred.image1;
  if (weights.lambda_tv > 0.0 && final_image.defined()) {
    add_term("tv", tv_loss(final_image), weights.lambda_tv);
  }
  if (terms.empty()) throw ConfigError("objective has no terms");
  result.total = ops::weighted_sum(terms, coefficients);
  result.breakdown.total = static_cast<double>(result.total.item());
  return result;
}

#define SELGAN_INSTANTIATE(T)                                                                  \
  template Var<T> gan_loss(const Var<T>&, const Var<T>&, GanSide);                             \
  template Var<T> combined_gan_loss(const Var<T>&, const Var<T>&, double);                     \
  template Var<T> pixel_l1_map(const Var<T>&, const Var<T>&);                                  \
  template Var<T> tv_loss(const Var<T>&);                                                      \
  template Objective<T> total_objective(const GeneratorPredictions<T>&, const Var<T>&,         \
                                        const Var<T>&, const LossWeights&, const Var<T>&,      \
                                        const ObjectiveOptions&);

SELGAN_INSTANTIATE(float)
SELGAN_INSTANTIATE(double)

#undef SELGAN_INSTANTIATE

}  // namespace selgan
