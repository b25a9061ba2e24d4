#include <doctest.h>

#include "selgan/discriminator.hpp"
#include "test_util.hpp"

using namespace selgan;
using testutil::uniform;

namespace {

// Output side of a k x k convolution, written out per layer.
std::int64_t conv_out(std::int64_t n, int k, int stride, int pad) { return (n + 2 * pad - k) / stride + 1; }

std::int64_t traced_size(std::int64_t n, int strided) {
  for (int i = 0; i < strided; ++i) n = conv_out(n, 4, 2, 1);
  n = conv_out(n, 4, 1, 1);
  return conv_out(n, 4, 1, 1);
}

}  // namespace

TEST_CASE("64x64 pairs give 6x6 logits with the default layout") {
  Rng rng(1);
  const PatchDiscriminator<float> d({6, 64, 3}, rng);
  const Var<float> a(uniform<float>({1, 3, 64, 64}, -1, 1, 2));
  const Var<float> b(uniform<float>({1, 3, 64, 64}, -1, 1, 3));
  CHECK(d.discriminate(a, b).shape() == Shape{1, 1, 6, 6});
  CHECK(patch_output_size(64, 3) == 6);
}

TEST_CASE("output size follows the stride recurrence") {
  Rng rng(2);
  for (int strided : {1, 2, 3}) {
    const PatchDiscriminator<double> d({6, 4, strided}, rng);
    for (std::int64_t n : {16, 24, 32, 40, 48}) {
      CAPTURE(strided);
      CAPTURE(n);
      CHECK(patch_output_size(n, strided) == std::max<std::int64_t>(traced_size(n, strided), 0));
      const Var<double> a(uniform({1, 3, n, n + 8}, -1, 1, n));
      if (traced_size(n, strided) < 1) {
        CHECK(patch_output_size(n, strided) == 0);
        CHECK_THROWS_AS(d.discriminate(a, a), ShapeError);
        continue;
      }
      const auto logits = d.discriminate(a, a);
      CHECK(logits.dim(2) == traced_size(n, strided));
      CHECK(logits.dim(3) == traced_size(n + 8, strided));
    }
  }
}

TEST_CASE("pair order matters") {
  Rng rng(3);
  const PatchDiscriminator<double> d({6, 8, 2}, rng);
  const Var<double> a(uniform({1, 3, 16, 16}, -1, 1, 4));
  const Var<double> b(uniform({1, 3, 16, 16}, -1, 1, 5));
  CHECK_FALSE(d.discriminate(a, b).value() == d.discriminate(b, a).value());
}

TEST_CASE("shape errors") {
  Rng rng(4);
  const PatchDiscriminator<double> d({6, 8, 3}, rng);
  const Var<double> a(Tensor<double>({1, 3, 16, 16}));
  const Var<double> b(Tensor<double>({1, 3, 8, 8}));
  CHECK_THROWS_AS(d.discriminate(a, b), ShapeError);
  const Var<double> tiny(Tensor<double>({1, 3, 4, 4}));
  CHECK_THROWS_AS(d.discriminate(tiny, tiny), ShapeError);
}

TEST_CASE("gradient reaches both pair members") {
  Rng rng(5);
  const PatchDiscriminator<double> d({6, 4, 2}, rng);
  Var<double> a(uniform({1, 3, 16, 16}, -1, 1, 6), true);
  Var<double> b(uniform({1, 3, 16, 16}, -1, 1, 7), true);
  ops::sum(d.discriminate(a, b)).backward();
  for (const Var<double>* v : {&a, &b}) {
    double norm = 0;
    for (double g : v->grad().values()) norm += std::abs(g);
    CHECK(norm > 0);
  }
}

TEST_CASE("one set of parameters serves every call") {
  Rng rng(6);
  const PatchDiscriminator<double> d({6, 4, 2}, rng);
  const auto first = d.parameters();
  const auto second = d.parameters();
  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i].var.same_node(second[i].var));
}
