#include <doctest.h>

#include <fstream>
#include <iterator>
#include <set>

#include "selgan/datamodel.hpp"
#include "test_util.hpp"

using namespace selgan;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::set<std::array<std::uint8_t, 3>> colours(const Image8& img) {
  std::set<std::array<std::uint8_t, 3>> out;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.insert({img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
  return out;
}

}  // namespace

TEST_CASE("pixel normalisation endpoints") {
  CHECK(normalize_pixel(0) == -1.0f);
  CHECK(normalize_pixel(255) == 1.0f);
  CHECK(normalize_pixel(128) == doctest::Approx(2.0 * 128 / 255 - 1));
  CHECK(std::abs(normalize_pixel(128) - 0.00392) < 1e-5);
}

TEST_CASE("normalisation round-trips every 8-bit value") {
  for (int p = 0; p < 256; ++p) CHECK(denormalize_pixel(normalize_pixel(static_cast<std::uint8_t>(p))) == p);
  CHECK(denormalize_pixel(-7.0) == 0);
  CHECK(denormalize_pixel(7.0) == 255);
}

TEST_CASE("png round trip") {
  const auto dir = testutil::scratch_dir("png");
  Image8 img{5, 3, std::vector<std::uint8_t>(45)};
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(i * 5);
  write_png(dir / "a.png", img);
  const Image8 back = read_png(dir / "a.png");
  CHECK(back.width == 5);
  CHECK(back.height == 3);
  CHECK(back.rgb == img.rgb);
  CHECK(tensor_to_image(image_to_tensor(img)).rgb == img.rgb);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), FileError);
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(read_png(dir / "junk.png"), FileError);
}

TEST_CASE("synthetic dataset cardinality and determinism") {
  const auto a = testutil::scratch_dir("synth_a");
  const auto b = testutil::scratch_dir("synth_b");
  const auto m = synth_dataset(a, {7, 4, 64, 64});
  synth_dataset(b, {7, 4, 64, 64});
  CHECK(m.entries.size() == 4);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.path().extension() != ".png") continue;
    ++files;
    CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
  }
  CHECK(files == 12);
  CHECK(slurp(a / "pairs.jsonl") == slurp(b / "pairs.jsonl"));

  const auto c = testutil::scratch_dir("synth_c");
  synth_dataset(c, {8, 4, 64, 64});
  CHECK(slurp(a / m.entries[0].target_path) != slurp(c / m.entries[0].target_path));
}

TEST_CASE("synthetic options are validated") {
  const auto dir = testutil::scratch_dir("synth_bad");
  CHECK_THROWS_AS(synth_dataset(dir, {0, 0, 64, 64}), ConfigError);
  CHECK_THROWS_AS(synth_dataset(dir, {0, 1, 16, 16}), ConfigError);
  CHECK_THROWS_AS(synth_dataset(dir, {0, 1, 40, 64}), ConfigError);
  std::ofstream(dir / "file") << "x";
  CHECK_THROWS_AS(synth_dataset(dir / "file" / "sub", {0, 1, 32, 32}), FileError);
}

TEST_CASE("guidance maps use only palette colours") {
  const auto dir = testutil::scratch_dir("synth_palette");
  const auto m = synth_dataset(dir, {3, 6, 32, 32});
  const auto& palette = guidance_palette();
  const std::set<std::array<std::uint8_t, 3>> allowed(palette.begin(), palette.end());
  for (const auto& e : m.entries) {
    for (const auto& c : colours(read_png(dir / e.guidance_path))) CHECK(allowed.count(c) == 1);
  }
}

TEST_CASE("one-object scene renders two guidance colours") {
  Scene scene;
  scene.objects.push_back({2, true, 16, 16, 6, 9, {10, -5, 3}});
  const auto g = render_guidance(scene, {}, 32, 32);
  const auto cs = colours(g);
  CHECK(cs.size() == 2);
  CHECK(cs.count(guidance_palette()[0]) == 1);
  CHECK(cs.count(guidance_palette()[2]) == 1);
}

TEST_CASE("manifest loading and errors") {
  const auto dir = testutil::scratch_dir("manifest");
  const auto written = synth_dataset(dir, {1, 3, 32, 32});
  const auto m = read_manifest(dir);
  CHECK(m.entries.size() == 3);
  CHECK(m.height == 32);
  CHECK(m.width == 32);
  const auto samples = load_dataset(m);
  REQUIRE(samples.size() == 3);
  CHECK(samples[0].source.shape() == Shape{3, 32, 32});
  for (const auto& s : samples)
    for (float v : s.target.values()) CHECK((v >= -1.0f && v <= 1.0f));

  const auto onehot = load_sample(m, m.entries[0], true);
  CHECK(onehot.guidance.dim(0) == static_cast<std::int64_t>(guidance_palette().size()));
  for (std::int64_t p = 0; p < 32 * 32; ++p) {
    int hot = 0;
    for (std::int64_t c = 0; c < onehot.guidance.dim(0); ++c) hot += onehot.guidance[c * 1024 + p] == 1.0f;
    CHECK(hot == 1);
  }

  SUBCASE("missing manifest") { CHECK_THROWS_AS(read_manifest(dir / "nowhere"), FileError); }
  SUBCASE("missing image") {
    fs::remove(dir / m.entries[1].target_path);
    CHECK_THROWS_AS(read_manifest(dir), FileError);
  }
  SUBCASE("duplicate id") {
    auto dup = m;
    dup.entries[1].id = dup.entries[0].id;
    write_manifest(dup);
    CHECK_THROWS_AS(read_manifest(dir), FormatError);
  }
  SUBCASE("malformed line") {
    std::ofstream(dir / "pairs.jsonl", std::ios::app) << "{\"id\": 3\n";
    CHECK_THROWS_AS(read_manifest(dir), FormatError);
  }
  SUBCASE("dimension mismatch") {
    write_png(dir / m.entries[0].target_path, Image8{16, 16, std::vector<std::uint8_t>(16 * 16 * 3)});
    CHECK_THROWS_AS(load_sample(m, m.entries[0]), ShapeError);
  }
}

TEST_CASE("stacking keeps order and rejects mixed shapes") {
  GuidedSample a{"a", Tensor<float>({3, 4, 4}, 0.1f), Tensor<float>({3, 4, 4}), Tensor<float>({3, 4, 4})};
  GuidedSample b{"b", Tensor<float>({3, 4, 4}, 0.2f), Tensor<float>({3, 4, 4}), Tensor<float>({3, 4, 4})};
  const auto batch = stack({&b, &a});
  CHECK(batch.size() == 2);
  CHECK(batch.ids == std::vector<std::string>{"b", "a"});
  CHECK(batch.source.at(0, 0, 0, 0) == 0.2f);
  CHECK(batch.source.at(1, 0, 0, 0) == 0.1f);
  GuidedSample c{"c", Tensor<float>({3, 8, 8}), Tensor<float>({3, 8, 8}), Tensor<float>({3, 8, 8})};
  CHECK_THROWS_AS(stack({&a, &c}), ShapeError);
  CHECK_THROWS_AS(stack({}), ShapeError);
}
