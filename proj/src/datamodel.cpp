#include "selgan/datamodel.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>
#include <set>

namespace selgan {

namespace fs = std::filesystem;

Image8 read_png(const fs::path& path) {
  if (!fs::exists(path)) throw FileError("missing image file: " + path.string());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw FileError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image8 out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw FileError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const fs::path& path, const Image8& image) {
  if (image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw ShapeError("image buffer does not match its dimensions");
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.rgb.data(), 0, nullptr)) {
    throw FileError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

std::uint8_t denormalize_pixel(double v) {
  const double p = std::round((v + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
}

Tensor<float> image_to_tensor(const Image8& image) {
  const std::int64_t H = image.height, W = image.width;
  Tensor<float> t({3, H, W});
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x)
        t[(c * H + y) * W + x] = normalize_pixel(image.at(static_cast<int>(y), static_cast<int>(x), static_cast<int>(c)));
  return t;
}

Image8 tensor_to_image(const Tensor<float>& chw) {
  if (chw.rank() != 3 || (chw.dim(0) != 3 && chw.dim(0) != 1)) {
    throw ShapeError("tensor_to_image expects [3,H,W] or [1,H,W], got " + to_string(chw.shape()));
  }
  const std::int64_t C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  Image8 img;
  img.width = static_cast<int>(W);
  img.height = static_cast<int>(H);
  img.rgb.resize(static_cast<std::size_t>(H * W * 3));
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(static_cast<int>(y), static_cast<int>(x), c) =
            denormalize_pixel(chw[((C == 3 ? c : 0) * H + y) * W + x]);
  return img;
}

Batch stack(const std::vector<const GuidedSample*>& samples) {
  if (samples.empty()) throw ShapeError("cannot stack an empty batch");
  const auto& first = *samples.front();
  const std::int64_t B = static_cast<std::int64_t>(samples.size());
  auto batched = [B](const Tensor<float>& t) {
    Shape s{B};
    s.insert(s.end(), t.shape().begin(), t.shape().end());
    return Tensor<float>(s);
  };
  Batch batch;
  batch.source = batched(first.source);
  batch.guidance = batched(first.guidance);
  batch.target = batched(first.target);
  for (std::int64_t b = 0; b < B; ++b) {
    const GuidedSample& s = *samples[static_cast<std::size_t>(b)];
    if (s.source.shape() != first.source.shape() || s.guidance.shape() != first.guidance.shape() ||
        s.target.shape() != first.target.shape()) {
      throw ShapeError("sample '" + s.id + "' has a different shape from '" + first.id + "'");
    }
    std::copy(s.source.values().begin(), s.source.values().end(), batch.source.data() + b * s.source.numel());
    std::copy(s.guidance.values().begin(), s.guidance.values().end(), batch.guidance.data() + b * s.guidance.numel());
    std::copy(s.target.values().begin(), s.target.values().end(), batch.target.data() + b * s.target.numel());
    batch.ids.push_back(s.id);
  }
  return batch;
}

DatasetManifest read_manifest(const fs::path& root) {
  const fs::path file = root / "pairs.jsonl";
  std::ifstream in(file);
  if (!in) throw FileError("cannot open manifest " + file.string());
  DatasetManifest manifest;
  manifest.root = root;
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ManifestEntry e{j.at("id").get<std::string>(), j.at("source").get<std::string>(),
                      j.at("guidance").get<std::string>(), j.at("target").get<std::string>()};
      if (!ids.insert(e.id).second) throw FormatError("duplicate id '" + e.id + "'");
      for (const auto* p : {&e.source_path, &e.guidance_path, &e.target_path}) {
        if (!fs::exists(root / *p)) throw FileError("manifest references missing file " + (root / *p).string());
      }
      manifest.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  if (manifest.entries.empty()) throw FormatError("manifest " + file.string() + " has no entries");
  const Image8 probe = read_png(root / manifest.entries.front().source_path);
  manifest.height = probe.height;
  manifest.width = probe.width;
  return manifest;
}

void write_manifest(const DatasetManifest& manifest) {
  const fs::path file = manifest.root / "pairs.jsonl";
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot write manifest " + file.string());
  for (const auto& e : manifest.entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["source"] = e.source_path;
    j["guidance"] = e.guidance_path;
    j["target"] = e.target_path;
    out << j.dump() << '\n';
  }
  if (!out) throw FileError("failed writing manifest " + file.string());
}

const std::vector<std::array<std::uint8_t, 3>>& guidance_palette() {
  static const std::vector<std::array<std::uint8_t, 3>> palette = {
      {0, 0, 0},       // background
      {230, 25, 75},   // 1
      {60, 180, 75},   // 2
      {0, 130, 200},   // 3
      {255, 225, 25},  // 4
      {145, 30, 180},  // 5
  };
  return palette;
}

namespace {

Image8 load_checked(const fs::path& path, const DatasetManifest& manifest) {
  Image8 img = read_png(path);
  if (manifest.height > 0 && (img.height != manifest.height || img.width != manifest.width)) {
    throw ShapeError(path.string() + " is " + std::to_string(img.width) + "x" +
                     std::to_string(img.height) + ", expected " + std::to_string(manifest.width) +
                     "x" + std::to_string(manifest.height));
  }
  return img;
}

Tensor<float> one_hot_guidance(const Image8& img, const std::string& id) {
  const auto& palette = guidance_palette();
  const std::int64_t K = static_cast<std::int64_t>(palette.size());
  const std::int64_t H = img.height, W = img.width;
  Tensor<float> t({K, H, W}, -1.0f);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::array<std::uint8_t, 3> c{img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
      const auto it = std::find(palette.begin(), palette.end(), c);
      if (it == palette.end()) {
        throw FormatError("guidance of '" + id + "' has a colour outside the class palette");
      }
      t[((it - palette.begin()) * H + y) * W + x] = 1.0f;
    }
  }
  return t;
}

}  // namespace

GuidedSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry, bool one_hot) {
  const Image8 source = load_checked(manifest.root / entry.source_path, manifest);
  const Image8 guidance = load_checked(manifest.root / entry.guidance_path, manifest);
  const Image8 target = load_checked(manifest.root / entry.target_path, manifest);
  if (source.height != guidance.height || source.width != guidance.width ||
      source.height != target.height || source.width != target.width) {
    throw ShapeError("images of '" + entry.id + "' have different dimensions");
  }
  GuidedSample s;
  s.id = entry.id;
  s.source = image_to_tensor(source);
  s.guidance = one_hot ? one_hot_guidance(guidance, entry.id) : image_to_tensor(guidance);
  s.target = image_to_tensor(target);
  return s;
}

std::vector<GuidedSample> load_dataset(const DatasetManifest& manifest, bool one_hot) {
  std::vector<GuidedSample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) out.push_back(load_sample(manifest, e, one_hot));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace {

struct WorldPoint {
  double x, y;
};

WorldPoint to_world(const ViewTransform& v, double px, double py, int height, int width) {
  const double cx = width / 2.0, cy = height / 2.0;
  return {(px - cx - v.tx) / v.sx + cx, (py - cy - v.ty) / v.sy + cy};
}

bool contains(const SceneObject& o, const WorldPoint& p) {
  const double dx = (p.x - o.cx) / o.rx;
  const double dy = (p.y - o.cy) / o.ry;
  if (o.ellipse) return dx * dx + dy * dy <= 1.0;
  return std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
}

// Index of the topmost object covering p, or -1 for background.
int hit(const Scene& scene, const WorldPoint& p) {
  for (int i = static_cast<int>(scene.objects.size()) - 1; i >= 0; --i) {
    if (contains(scene.objects[static_cast<std::size_t>(i)], p)) return i;
  }
  return -1;
}

// Appearance colours, distinct from the guidance palette.
constexpr std::array<std::array<int, 3>, 6> kMaterial = {{
    {0, 0, 0},
    {170, 80, 60},
    {70, 140, 60},
    {80, 110, 170},
    {200, 180, 90},
    {120, 80, 140},
}};

double texture(int cls, const WorldPoint& p, const SceneObject& o) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double u = p.x - o.cx, v = p.y - o.cy;
  switch (cls) {
    case 1: return std::sin(two_pi * v / 6.0);
    case 2: return std::sin(two_pi * u / 5.0);
    case 3: return (static_cast<int>(std::floor(u / 4.0) + std::floor(v / 4.0)) & 1) ? 1.0 : -1.0;
    case 4: return std::sin(two_pi * (u + v) / 8.0);
    default: return std::cos(two_pi * std::sqrt(u * u + v * v) / 6.0);
  }
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

Image8 render_guidance(const Scene& scene, const ViewTransform& view, int height, int width) {
  Image8 img{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * 3)};
  const auto& palette = guidance_palette();
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int i = hit(scene, to_world(view, x + 0.5, y + 0.5, height, width));
      const auto& c = palette[i < 0 ? 0 : static_cast<std::size_t>(scene.objects[static_cast<std::size_t>(i)].cls)];
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = c[static_cast<std::size_t>(ch)];
    }
  }
  return img;
}

Image8 render_textured(const Scene& scene, const ViewTransform& view, int height, int width) {
  Image8 img{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * 3)};
  constexpr std::array<double, 3> sky_top{95, 115, 150}, ground{150, 140, 115};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const WorldPoint p = to_world(view, x + 0.5, y + 0.5, height, width);
      const int i = hit(scene, p);
      for (int ch = 0; ch < 3; ++ch) {
        double v;
        if (i < 0) {
          const double t = std::clamp(p.y / height, 0.0, 1.0);
          v = sky_top[static_cast<std::size_t>(ch)] * (1.0 - t) + ground[static_cast<std::size_t>(ch)] * t;
        } else {
          const SceneObject& o = scene.objects[static_cast<std::size_t>(i)];
          v = kMaterial[static_cast<std::size_t>(o.cls)][static_cast<std::size_t>(ch)] +
              o.tint[static_cast<std::size_t>(ch)] + 35.0 * texture(o.cls, p, o);
        }
        img.at(y, x, ch) = to_byte(v);
      }
    }
  }
  return img;
}

DatasetManifest synth_dataset(const fs::path& root, const SynthOptions& options) {
  if (options.count < 1) throw ConfigError("count must be >= 1");
  if (options.height < 32 || options.width < 32 || options.height % 16 != 0 || options.width % 16 != 0) {
    throw ConfigError("image size must be >= 32 and divisible by 16");
  }
  std::error_code ec;
  for (const char* sub : {"source", "guidance", "target"}) {
    fs::create_directories(root / sub, ec);
    if (ec) throw FileError("cannot create " + (root / sub).string() + ": " + ec.message());
  }

  std::mt19937_64 rng(options.seed);
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto integer = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const int H = options.height, W = options.width;
  const double max_shift = H / 4.0;
  auto random_view = [&] {
    ViewTransform v;
    v.sx = uniform(0.8, 1.2);
    v.sy = uniform(0.8, 1.2);
    v.tx = uniform(-max_shift, max_shift);
    v.ty = uniform(-max_shift, max_shift);
    return v;
  };

  DatasetManifest manifest;
  manifest.root = root;
  manifest.height = H;
  manifest.width = W;
  char id[32];
  for (int n = 0; n < options.count; ++n) {
    Scene scene;
    const int objects = integer(2, 5);
    for (int k = 0; k < objects; ++k) {
      SceneObject o;
      o.cls = integer(1, 5);
      o.ellipse = integer(0, 1) == 1;
      o.cx = uniform(W / 6.0, 5.0 * W / 6.0);
      o.cy = uniform(H / 6.0, 5.0 * H / 6.0);
      o.rx = uniform(W / 10.0, W / 4.0);
      o.ry = uniform(H / 10.0, H / 4.0);
      for (auto& t : o.tint) t = integer(-30, 30);
      scene.objects.push_back(o);
    }
    const ViewTransform source_view = random_view();
    const ViewTransform target_view = random_view();

    std::snprintf(id, sizeof id, "%06d", n);
    ManifestEntry e{id, std::string("source/") + id + ".png", std::string("guidance/") + id + ".png",
                    std::string("target/") + id + ".png"};
    write_png(root / e.source_path, render_textured(scene, source_view, H, W));
    write_png(root / e.guidance_path, render_guidance(scene, target_view, H, W));
    write_png(root / e.target_path, render_textured(scene, target_view, H, W));
    manifest.entries.push_back(std::move(e));
  }
  write_manifest(manifest);
  return manifest;
}

}  // namespace selgan
