#include "selgan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "selgan/losses.hpp"
#include "selgan/mcas.hpp"
#include "selgan/model.hpp"
#include "selgan/mspc.hpp"

namespace selgan {

namespace {

std::string describe(const std::string& name, std::int64_t index, double analytic, double numeric) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "[%lld] analytic %.6e numeric %.6e", static_cast<long long>(index), analytic,
                numeric);
  return name + buf;
}

template <typename T>
Var<T> random_leaf(Shape shape, double lo, double hi, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return Var<T>(std::move(t), true);
}

// Weighted sum with fixed random coefficients, so every output entry carries
// a distinct upstream gradient.
Var<double> probe(const Var<double>& out, const Tensor<double>& coefficients) {
  return ops::sum(ops::mul(out, Var<double>(coefficients)));
}

Tensor<double> coefficients_like(const Var<double>& v, Rng& rng) {
  Tensor<double> t(v.shape());
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (auto& x : t.values()) x = dist(rng);
  return t;
}

TrainConfig toy_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.image_size = 16;
  cfg.image_base_width = 4;
  cfg.guidance_base_width = 2;
  cfg.image_depth = 2;
  cfg.guidance_depth = 2;
  cfg.disc_base_width = 4;
  cfg.disc_layers = 2;
  cfg.attention_channels = 3;
  cfg.pooling_scales = {2, 4, 8};
  cfg.ablation_level = AblationLevel::H;
  return cfg;
}

struct ToyBatch {
  Var<double> source, guidance, target;
};

ToyBatch toy_batch(Rng& rng) {
  return {random_leaf<double>({1, 3, 16, 16}, -0.9, 0.9, rng).detach(),
          random_leaf<double>({1, 3, 16, 16}, -0.9, 0.9, rng).detach(),
          random_leaf<double>({1, 3, 16, 16}, -0.9, 0.9, rng).detach()};
}

// Zero-initialised scalars would hide whole branches from the check.
void perturb_zero_parameters(const ParameterList<double>& params, Rng& rng) {
  std::uniform_real_distribution<double> dist(-0.3, 0.3);
  for (const auto& p : params) {
    Var<double> handle = p.var;
    auto values = handle.mutable_value().values();
    if (std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; })) {
      for (auto& v : values) v = dist(rng);
    }
  }
}

}  // namespace

CheckResult gradient_check(const std::string& suite, const std::function<Var<double>()>& loss,
                           const ParameterList<double>& inputs, const GradcheckOptions& options) {
  CheckResult result;
  result.suite = suite;
  result.tolerance = options.tolerance;

  for (const auto& p : inputs) {
    Var<double> handle = p.var;
    handle.set_requires_grad(true);
    handle.zero_grad();
  }
  {
    Var<double> value = loss();
    value.backward();
  }

  double scale = 0.0;
  for (const auto& p : inputs) {
    if (!p.var.has_grad()) continue;
    for (double g : p.var.grad().values()) scale = std::max(scale, std::abs(g));
  }
  const double floor = std::max(options.floor, options.relative_floor * scale);

  Rng pick(options.seed ^ 0x9E3779B97F4A7C15ull);
  for (const auto& p : inputs) {
    Var<double> handle = p.var;
    const Tensor<double> analytic = handle.has_grad() ? handle.grad() : Tensor<double>(handle.shape());
    const std::int64_t n = handle.numel();
    std::vector<std::int64_t> entries(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) entries[static_cast<std::size_t>(i)] = i;
    if (options.max_entries > 0 && n > options.max_entries) {
      for (std::int64_t i = 0; i < options.max_entries; ++i) {
        std::uniform_int_distribution<std::int64_t> dist(i, n - 1);
        std::swap(entries[static_cast<std::size_t>(i)], entries[static_cast<std::size_t>(dist(pick))]);
      }
      entries.resize(static_cast<std::size_t>(options.max_entries));
    }
    NoGradGuard no_grad;
    for (std::int64_t i : entries) {
      double& x = handle.mutable_value()[i];
      const double saved = x;
      x = saved + options.step;
      const double up = loss().item();
      x = saved - options.step;
      const double down = loss().item();
      x = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.checked;
      if (err >= result.max_error) {
        result.max_error = err;
        result.detail = describe(p.name, i, a, numeric);
      }
    }
  }
  result.passed = result.max_error <= options.tolerance;
  return result;
}

CheckResult check_channel_selection_gradients(const GradcheckOptions& options) {
  Rng rng(options.seed + 11);
  const Var<double> x = random_leaf<double>({1, 4, 16, 16}, -1.0, 1.0, rng);
  MultiScaleChannelSelection<double> block(4, {2, 4, 8}, rng);
  ParameterList<double> params{{"input", x}};
  block.collect("mspc", params);
  Var<double> alpha = block.alpha();
  alpha.mutable_value()[0] = 0.7;
  // Weights of order one keep the Gram softmax away from saturation.
  for (const auto& p : params) {
    if (p.name == "mspc.projection.weight") {
      Var<double> w = p.var;
      w.mutable_value() = normal_tensor<double>(w.shape(), 0.2, rng);
    }
  }
  const Var<double> out = block.forward(x);
  const Tensor<double> coeff = coefficients_like(out, rng);
  return gradient_check("mspc", [&] { return probe(block.forward(x), coeff); }, params, options);
}

CheckResult check_selection_gradients(const GradcheckOptions& options) {
  Rng rng(options.seed + 12);
  const Var<double> gens = random_leaf<double>({1, 9, 2, 2}, -0.9, 0.9, rng);
  const Var<double> logits = random_leaf<double>({1, 3, 2, 2}, -2.0, 2.0, rng);
  auto forward = [&] { return select(gens, ops::softmax_channels(logits)); };
  const Tensor<double> coeff = coefficients_like(forward(), rng);
  return gradient_check("mcas_select", [&] { return probe(forward(), coeff); },
                        {{"generations", gens}, {"attention_logits", logits}}, options);
}

CheckResult check_uncertainty_loss_gradients(const GradcheckOptions& options) {
  Rng rng(options.seed + 13);
  const Var<double> loss_map = random_leaf<double>({2, 1, 4, 4}, 0.01, 1.0, rng);
  const Var<double> u = random_leaf<double>({2, 1, 4, 4}, 0.05, 1.0, rng);
  return gradient_check("uncertainty_loss", [&] { return uncertainty_weighted_loss(loss_map, u); },
                        {{"loss_map", loss_map}, {"uncertainty", u}}, options);
}

CheckResult check_toy_generator_gradients(const GradcheckOptions& options) {
  const SelectionGan<double> model(toy_config(options.seed));
  Rng rng(options.seed + 14);
  const ToyBatch batch = toy_batch(rng);
  const ParameterList<double> params = model.generator_parameters();
  perturb_zero_parameters(params, rng);
  set_requires_grad(model.discriminator_parameters(), false);
  const LossWeights weights;
  auto loss = [&] {
    const auto out = model.forward(batch.source, batch.guidance);
    const auto& d = model.discriminator();
    const Var<double> none;
    const Var<double> gan =
        combined_gan_loss(gan_loss(none, d.discriminate(batch.source, out.stage1.image), GanSide::generator),
                          gan_loss(none, d.discriminate(batch.source, out.image2), GanSide::generator),
                          weights.lambda_gan2);
    GeneratorPredictions<double> pred{out.stage1.image, out.stage1.guidance, out.image2, out.guidance2,
                                      out.uncertainty};
    return total_objective(pred, batch.target, batch.guidance, weights, gan).total;
  };
  return gradient_check("toy_generator", loss, params, options);
}

CheckResult check_toy_discriminator_gradients(const GradcheckOptions& options) {
  const SelectionGan<double> model(toy_config(options.seed));
  Rng rng(options.seed + 15);
  const ToyBatch batch = toy_batch(rng);
  const ParameterList<double> params = model.discriminator_parameters();
  perturb_zero_parameters(params, rng);
  Var<double> fake1, fake2;
  {
    NoGradGuard no_grad;
    const auto out = model.forward(batch.source, batch.guidance);
    fake1 = out.stage1.image.detach();
    fake2 = out.image2.detach();
  }
  const LossWeights weights;
  auto loss = [&] {
    const auto& d = model.discriminator();
    const Var<double> real = d.discriminate(batch.source, batch.target);
    return combined_gan_loss(gan_loss(real, d.discriminate(batch.source, fake1), GanSide::discriminator),
                             gan_loss(real, d.discriminate(batch.source, fake2), GanSide::discriminator),
                             weights.lambda_gan2);
  };
  return gradient_check("toy_discriminator", loss, params, options);
}

CheckResult check_attention_normalization(std::uint64_t seed, int cases) {
  CheckResult r;
  r.suite = "attention_normalization";
  r.tolerance = 1e-5;
  Rng rng(seed + 21);
  const int choices[] = {2, 5, 10};
  NoGradGuard no_grad;
  for (int c = 0; c < cases; ++c) {
    const int n = choices[c % 3];
    const Var<float> logits = random_leaf<float>({1, n, 4, 4}, -10.0, 10.0, rng);
    const Tensor<float> att = ops::softmax_channels(logits).value();
    for (std::int64_t p = 0; p < 16; ++p) {
      double sum = 0.0;
      for (int k = 0; k < n; ++k) sum += att[k * 16 + p];
      r.max_error = std::max(r.max_error, std::abs(sum - 1.0));
    }
    ++r.checked;
  }
  r.passed = r.max_error <= r.tolerance;
  return r;
}

CheckResult check_selection_convexity(std::uint64_t seed, int cases) {
  CheckResult r;
  r.suite = "selection_convexity";
  r.tolerance = 0.0;
  Rng rng(seed + 22);
  NoGradGuard no_grad;
  for (int c = 0; c < cases; ++c) {
    const int n = 1 + c % 10;
    const Var<float> gens = random_leaf<float>({1, 3 * n, 3, 3}, -1.0, 1.0, rng);
    const Var<float> att = ops::softmax_channels(random_leaf<float>({1, n, 3, 3}, -5.0, 5.0, rng));
    const Tensor<float> out = select(gens, att).value();
    for (std::int64_t ch = 0; ch < 3; ++ch) {
      for (std::int64_t p = 0; p < 9; ++p) {
        float lo = 1e30f, hi = -1e30f;
        for (int k = 0; k < n; ++k) {
          const float g = gens.value()[(3 * k + ch) * 9 + p];
          lo = std::min(lo, g);
          hi = std::max(hi, g);
        }
        const float v = out[ch * 9 + p];
        // Float rounding may overshoot the hull by an ulp-sized margin.
        const double slack = 4.0 * std::numeric_limits<float>::epsilon();
        const double excess = std::max(0.0, std::max<double>(lo - v, v - hi) - slack);
        r.max_error = std::max(r.max_error, excess);
        if (n == 1 && v != gens.value()[ch * 9 + p]) r.max_error = std::max(r.max_error, 1.0);
      }
    }
    ++r.checked;
  }
  r.passed = r.max_error <= r.tolerance;
  return r;
}

CheckResult check_uncertainty_minimizer() {
  CheckResult r;
  r.suite = "uncertainty_minimizer";
  constexpr int kGrid = 10000;
  r.tolerance = 1.0 / kGrid;
  NoGradGuard no_grad;
  for (double l : {0.1, 0.3, 0.7}) {
    const Var<double> loss_map(Tensor<double>({1, 1, 1, 1}, l));
    double best_u = 0.0, best = 1e300;
    for (int k = 1; k <= kGrid; ++k) {
      const double u = static_cast<double>(k) / kGrid;
      const double v = uncertainty_weighted_loss(loss_map, Var<double>(Tensor<double>({1, 1, 1, 1}, u))).item();
      if (v < best) {
        best = v;
        best_u = u;
      }
    }
    r.max_error = std::max(r.max_error, std::abs(best_u - l));
    ++r.checked;
  }
  r.passed = r.max_error <= r.tolerance;
  return r;
}

std::vector<CheckResult> run_all_checks(std::uint64_t seed) {
  GradcheckOptions options;
  options.seed = seed;
  return {check_channel_selection_gradients(options),
          check_selection_gradients(options),
          check_uncertainty_loss_gradients(options),
          check_toy_generator_gradients(options),
          check_toy_discriminator_gradients(options),
          check_attention_normalization(seed, 1000),
          check_selection_convexity(seed, 1000),
          check_uncertainty_minimizer()};
}

}  // namespace selgan
