#include <doctest.h>

#include <limits>

#include "selgan/autograd.hpp"
#include "test_util.hpp"

using namespace selgan;
using testutil::numeric_grad;
using testutil::relative_error;
using testutil::uniform;

TEST_CASE("tensor construction checks data size") {
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor<float> t({2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t[5] == 1.5f);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
}

TEST_CASE("rank-4 indexing is row-major") {
  Tensor<int> t({2, 3, 4, 5});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<int>(i);
  CHECK(t.at(1, 2, 3, 4) == ((1 * 3 + 2) * 4 + 3) * 5 + 4);
}

TEST_CASE("elementwise ops and their gradients") {
  Var<double> a(Tensor<double>({3}, std::vector<double>{1, -2, 3}), true);
  Var<double> b(Tensor<double>({3}, std::vector<double>{4, 5, -6}), true);
  // loss = sum(a*b + a - b)
  auto loss = ops::sum(ops::sub(ops::add(ops::mul(a, b), a), b));
  CHECK(loss.item() == doctest::Approx(4 - 10 - 18 + (1 - 2 + 3) - (4 + 5 - 6)));
  loss.backward();
  for (int i = 0; i < 3; ++i) {
    CHECK(a.grad()[i] == doctest::Approx(b.value()[i] + 1));
    CHECK(b.grad()[i] == doctest::Approx(a.value()[i] - 1));
  }
}

TEST_CASE("shared subexpressions accumulate gradient") {
  Var<double> x(Tensor<double>({1}, 3.0), true);
  auto y = ops::mul(x, x);          // x^2
  auto z = ops::sum(ops::add(y, y));  // 2 x^2
  z.backward();
  CHECK(x.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("no-grad mode records nothing") {
  Var<double> x(Tensor<double>({2}, 1.0), true);
  Var<double> y;
  {
    NoGradGuard guard;
    CHECK_FALSE(GradMode::enabled());
    y = ops::mul(x, x);
  }
  CHECK(GradMode::enabled());
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("constants produce constants") {
  Var<double> x(Tensor<double>({2}, 1.0));
  auto y = ops::tanh(x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("detach cuts the graph") {
  Var<double> x(Tensor<double>({2}, 2.0), true);
  auto d = ops::mul(x, x).detach();
  CHECK_FALSE(d.requires_grad());
  CHECK(d.value()[0] == 4.0);
}

TEST_CASE("unary ops match finite differences") {
  Var<double> x(uniform({2, 3, 2, 2}, -1.5, 1.5, 7), true);
  const auto coeff = uniform({2, 3, 2, 2}, -1, 1, 8);
  const Var<double> c(coeff);
  using Fn = std::function<Var<double>(const Var<double>&)>;
  const std::vector<std::pair<const char*, Fn>> fns = {
      {"tanh", [](const Var<double>& v) { return ops::tanh(v); }},
      {"sigmoid", [](const Var<double>& v) { return ops::sigmoid(v); }},
      {"leaky_relu", [](const Var<double>& v) { return ops::leaky_relu(v, 0.2); }},
      {"log_of_shifted", [](const Var<double>& v) { return ops::log(ops::add_scalar(v, 2.0)); }},
      {"softmax_channels", [](const Var<double>& v) { return ops::softmax_channels(v); }},
      {"mean_channels", [](const Var<double>& v) { return ops::mean_channels(v); }},
      {"instance_norm", [](const Var<double>& v) { return ops::instance_norm(v, 1e-5); }},
      {"total_variation", [](const Var<double>& v) { return ops::total_variation(v); }},
  };
  for (const auto& [name, fn] : fns) {
    CAPTURE(name);
    auto f = [&] {
      auto y = fn(x);
      Tensor<double> k(y.shape());
      for (std::int64_t i = 0; i < k.numel(); ++i) k[i] = coeff[i % coeff.numel()];
      return ops::sum(ops::mul(y, Var<double>(k)));
    };
    x.zero_grad();
    f().backward();
    const Tensor<double> analytic = x.grad();
    const auto numeric = numeric_grad([&] {
      NoGradGuard g;
      return f().item();
    }, x);
    CHECK(relative_error(analytic, numeric) < 1e-5);
  }
}

TEST_CASE("clamp passes gradient only inside the interval") {
  Var<double> x(Tensor<double>({3}, std::vector<double>{-1, 0.5, 2}), true);
  auto y = ops::clamp(x, 0.0, 1.0);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == 0.5);
  CHECK(y.value()[2] == 1.0);
  ops::sum(y).backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("softmax over channels sums to one") {
  const Var<double> x(uniform({2, 5, 3, 3}, -30, 30, 3));
  const auto s = ops::softmax_channels(x).value();
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t h = 0; h < 3; ++h)
      for (std::int64_t w = 0; w < 3; ++w) {
        double total = 0;
        for (std::int64_t n = 0; n < 5; ++n) total += s.at(b, n, h, w);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
      }
}

TEST_CASE("bce with logits matches the closed form") {
  const Var<double> zeros(Tensor<double>({4}, 0.0));
  CHECK(ops::bce_with_logits(zeros, 1.0).item() == doctest::Approx(std::log(2.0)));
  const Var<double> big(Tensor<double>({1}, 800.0));
  // Stable for large logits: -log(sigmoid(800)) ~ 0 and -log(1 - sigmoid(800)) ~ 800.
  CHECK(ops::bce_with_logits(big, 1.0).item() == doctest::Approx(0.0));
  CHECK(ops::bce_with_logits(big, 0.0).item() == doctest::Approx(800.0));
}

TEST_CASE("shape mismatches raise ShapeError") {
  const Var<double> a(Tensor<double>({2, 3}));
  const Var<double> b(Tensor<double>({3, 2}));
  CHECK_THROWS_AS(ops::add(a, b), ShapeError);
  CHECK_THROWS_AS(ops::mul(a, b), ShapeError);
}

TEST_CASE("backward requires a scalar") {
  Var<double> a(Tensor<double>({2}, 1.0), true);
  CHECK_THROWS_AS(ops::mul(a, a).backward(), ShapeError);
}

TEST_CASE("activations propagate NaN") {
  const float nan = std::numeric_limits<float>::quiet_NaN();
  const Var<float> x(Tensor<float>({2}, std::vector<float>{nan, -1.0f}));
  CHECK(std::isnan(ops::relu(x).value()[0]));
  CHECK(std::isnan(ops::leaky_relu(x, 0.2f).value()[0]));
  CHECK(ops::leaky_relu(x, 0.2f).value()[1] == doctest::Approx(-0.2f));
}
