#include <doctest.h>

#include <numeric>

#include "selgan/losses.hpp"
#include "test_util.hpp"

using namespace selgan;
using testutil::uniform;

namespace {

Var<double> constant(Shape shape, double v) { return Var<double>(Tensor<double>(std::move(shape), v)); }

LossWeights zero_weights() {
  LossWeights w;
  w.lambda1 = w.lambda2 = w.lambda3 = w.lambda4 = w.lambda_tv = w.lambda_gan2 = 0.0;
  return w;
}

}  // namespace

TEST_CASE("default weights") {
  const LossWeights w;
  CHECK(w.lambda1 == 100.0);
  CHECK(w.lambda2 == 1.0);
  CHECK(w.lambda3 == 200.0);
  CHECK(w.lambda4 == 2.0);
  CHECK(w.lambda_tv == 1e-6);
  CHECK(w.lambda_gan2 == 4.0);
  LossWeights bad;
  bad.lambda3 = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("adversarial loss values") {
  const auto zero = constant({2, 1, 6, 6}, 0.0);
  CHECK(gan_loss(zero, zero, GanSide::discriminator).item() == doctest::Approx(2 * std::log(2.0)));
  CHECK(std::abs(gan_loss(zero, zero, GanSide::discriminator).item() - 1.3863) < 1e-4);
  CHECK(std::abs(gan_loss(Var<double>(), zero, GanSide::generator).item() - 0.6931) < 1e-4);
  const auto big = constant({1, 1, 2, 2}, 60.0);
  const auto small = constant({1, 1, 2, 2}, -60.0);
  CHECK(gan_loss(big, small, GanSide::discriminator).item() < 1e-20);
  CHECK_THROWS_AS(gan_loss(zero, big, GanSide::discriminator), ShapeError);
}

TEST_CASE("generator adversarial loss decreases with the fake logit") {
  double previous = 1e9;
  for (double logit : {-2.0, 0.0, 2.0}) {
    const double v = gan_loss(Var<double>(), constant({1, 1, 2, 2}, logit), GanSide::generator).item();
    CHECK(v < previous);
    previous = v;
  }
}

TEST_CASE("combined adversarial loss") {
  const auto v1 = constant({1}, 0.7);
  const auto v2 = constant({1}, 0.7);
  CHECK(combined_gan_loss(v1, v2, 0.0).item() == doctest::Approx(0.7));
  CHECK(combined_gan_loss(v1, v2, 4.0).item() == doctest::Approx(3.5));
  CHECK(combined_gan_loss(v1, Var<double>(), 4.0).item() == doctest::Approx(0.7));
  CHECK_THROWS_AS(combined_gan_loss(v1, v2, -1.0), ConfigError);
}

TEST_CASE("pixel L1 map") {
  const auto t = uniform({1, 3, 4, 4}, -1, 1, 1);
  const auto same = pixel_l1_map(Var<double>(t), Var<double>(t)).value();
  for (double v : same.values()) CHECK(v == 0.0);
  auto shifted = t;
  for (auto& v : shifted.values()) v += 0.5;
  const auto m = pixel_l1_map(Var<double>(shifted), Var<double>(t)).value();
  CHECK(m.shape() == Shape{1, 1, 4, 4});
  for (double v : m.values()) CHECK(v == doctest::Approx(0.5));
  const Var<double> p(Tensor<double>({1, 3, 1, 1}, std::vector<double>{0.2, -0.4, 0.6}));
  CHECK(pixel_l1_map(p, constant({1, 3, 1, 1}, 0.0)).item() == doctest::Approx(0.4));
  CHECK_THROWS_AS(pixel_l1_map(p, constant({1, 2, 1, 1}, 0.0)), ShapeError);
}

TEST_CASE("total variation") {
  CHECK(tv_loss(constant({1, 3, 5, 5}, 0.3)).item() == 0.0);
  // One horizontal difference of 1, normalised by the two pixels.
  const Var<double> pair(Tensor<double>({1, 1, 1, 2}, std::vector<double>{0, 1}));
  CHECK(tv_loss(pair).item() * 2 == doctest::Approx(1.0));
  // Vertical stripes of period 2: every horizontal neighbour pair differs by a.
  const double a = 0.6;
  Tensor<double> stripes({1, 1, 4, 6});
  for (int h = 0; h < 4; ++h)
    for (int w = 0; w < 6; ++w) stripes.at(0, 0, h, w) = (w % 2) * a;
  const double expected = 4 * 5 * a / (4 * 6);
  CHECK(tv_loss(Var<double>(stripes)).item() == doctest::Approx(expected));
}

TEST_CASE("objective with only the stage-one image term") {
  LossWeights w = zero_weights();
  w.lambda1 = 100;
  GeneratorPredictions<double> pred;
  const auto target = constant({1, 3, 4, 4}, 0.0);
  pred.image1 = constant({1, 3, 4, 4}, 0.01);
  pred.uncertainty = constant({1, 4, 4, 4}, 1.0);
  const auto obj = total_objective(pred, target, constant({1, 3, 4, 4}, 0.0), w, Var<double>());
  CHECK(obj.total.item() == doctest::Approx(1.0));
}

TEST_CASE("perfect predictions with unit uncertainty and no adversarial term give zero") {
  const auto img = uniform({2, 3, 8, 8}, -1, 1, 2);
  const auto gd = uniform({2, 3, 8, 8}, -1, 1, 3);
  GeneratorPredictions<double> pred{Var<double>(img), Var<double>(gd), Var<double>(img), Var<double>(gd),
                                    constant({2, 4, 8, 8}, 1.0)};
  LossWeights w;
  w.lambda_tv = 0;
  const auto obj = total_objective(pred, Var<double>(img), Var<double>(gd), w, Var<double>());
  CHECK(obj.total.item() == 0.0);
}

TEST_CASE("breakdown sums to the total") {
  const auto target = uniform({2, 3, 8, 8}, -1, 1, 4);
  const auto tg = uniform({2, 3, 8, 8}, -1, 1, 5);
  GeneratorPredictions<double> pred{Var<double>(uniform({2, 3, 8, 8}, -1, 1, 6)),
                                    Var<double>(uniform({2, 3, 8, 8}, -1, 1, 7)),
                                    Var<double>(uniform({2, 3, 8, 8}, -1, 1, 8)),
                                    Var<double>(uniform({2, 3, 8, 8}, -1, 1, 9)),
                                    Var<double>(uniform({2, 4, 8, 8}, 0.05, 1, 10))};
  const auto obj = total_objective(pred, Var<double>(target), Var<double>(tg), LossWeights{}, constant({1}, 1.7));
  double sum = 0;
  for (const auto& [name, v] : obj.breakdown.terms) sum += v;
  CHECK(std::abs(sum - obj.breakdown.total) < 1e-6);
  CHECK(obj.breakdown.total == obj.total.item());
  CHECK(obj.breakdown.term("gan") == doctest::Approx(1.7));
  CHECK(obj.breakdown.terms.size() == 6);
  CHECK_THROWS_AS(obj.breakdown.term("nope"), ConfigError);
}

TEST_CASE("unit uncertainty reduces pixel terms to weighted L1 means") {
  const auto target = uniform({1, 3, 8, 8}, -1, 1, 11);
  const auto tg = uniform({1, 3, 8, 8}, -1, 1, 12);
  GeneratorPredictions<double> pred{Var<double>(uniform({1, 3, 8, 8}, -1, 1, 13)),
                                    Var<double>(uniform({1, 3, 8, 8}, -1, 1, 14)),
                                    Var<double>(uniform({1, 3, 8, 8}, -1, 1, 15)),
                                    Var<double>(uniform({1, 3, 8, 8}, -1, 1, 16)), Var<double>()};
  const LossWeights w;
  const auto plain = total_objective(pred, Var<double>(target), Var<double>(tg), w, Var<double>());
  pred.uncertainty = constant({1, 4, 8, 8}, 1.0);
  const auto unit = total_objective(pred, Var<double>(target), Var<double>(tg), w, Var<double>());
  CHECK(unit.total.item() == doctest::Approx(plain.total.item()).epsilon(1e-14));
  // Independent recomputation of the first term.
  double l1 = 0;
  for (std::int64_t i = 0; i < target.numel(); ++i) l1 += std::abs(pred.image1.value()[i] - target[i]);
  CHECK(unit.breakdown.term("pixel_image1") == doctest::Approx(100 * l1 / target.numel()));
}

TEST_CASE("stage-one uncertainty weighting can be switched off") {
  const auto target = constant({1, 3, 4, 4}, 0.0);
  GeneratorPredictions<double> pred;
  pred.image1 = constant({1, 3, 4, 4}, 0.5);
  pred.uncertainty = constant({1, 4, 4, 4}, 0.5);
  LossWeights w = zero_weights();
  w.lambda1 = 1;
  const auto on = total_objective(pred, target, target, w, Var<double>());
  const auto off = total_objective(pred, target, target, w, Var<double>(), ObjectiveOptions{false});
  CHECK(on.total.item() == doctest::Approx(1.0 + std::log(0.5)));
  CHECK(off.total.item() == doctest::Approx(0.5));
}

TEST_CASE("objective gradient on a small pipeline matches finite differences") {
  Var<double> p1(uniform({1, 3, 4, 4}, -0.9, 0.9, 17), true);
  Var<double> p2(uniform({1, 3, 4, 4}, -0.9, 0.9, 18), true);
  Var<double> u(uniform({1, 4, 4, 4}, 0.1, 1, 19), true);
  const auto target = Var<double>(uniform({1, 3, 4, 4}, -0.9, 0.9, 20));
  const auto tg = Var<double>(uniform({1, 3, 4, 4}, -0.9, 0.9, 21));
  auto f = [&] {
    GeneratorPredictions<double> pred{ops::tanh(p1), ops::tanh(p2), ops::tanh(ops::scale(p1, 0.5)),
                                      ops::tanh(ops::scale(p2, 0.5)), u};
    return total_objective(pred, target, tg, LossWeights{}, Var<double>()).total;
  };
  f().backward();
  for (Var<double>* v : {&p1, &p2, &u}) {
    const Tensor<double> analytic = v->grad();
    const auto numeric = testutil::numeric_grad([&] { return f().item(); }, *v);
    CHECK(testutil::relative_error(analytic, numeric) < 1e-4);
  }
}
