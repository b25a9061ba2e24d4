#pragma once

// Samples, batches, the on-disk dataset layout and the synthetic paired-scene
// generator.
//
// On disk a dataset is a root directory holding `pairs.jsonl` (one JSON object
// per line with keys id, source, guidance, target; paths relative to the
// root) and 8-bit RGB PNG files.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "selgan/tensor.hpp"

namespace selgan {

/// 8-bit interleaved RGB image.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  ///< height * width * 3 bytes

  std::uint8_t& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// Reads any 8-bit PNG, converting palette/gray/alpha variants to RGB.
Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

/// [0,255] -> [-1,1] via 2p/255 - 1.
inline float normalize_pixel(std::uint8_t p) { return 2.0f * static_cast<float>(p) / 255.0f - 1.0f; }
/// [-1,1] -> nearest 8-bit value, saturating.
std::uint8_t denormalize_pixel(double v);

/// Image8 -> [3,H,W] in [-1,1].
Tensor<float> image_to_tensor(const Image8& image);
/// [3,H,W] (or [1,H,W], replicated to gray) in [-1,1] -> Image8.
Image8 tensor_to_image(const Tensor<float>& chw);

struct GuidedSample {
  std::string id;
  Tensor<float> source;    ///< [3,H,W]
  Tensor<float> guidance;  ///< [C_g,H,W]
  Tensor<float> target;    ///< [3,H,W]
};

struct Batch {
  std::vector<std::string> ids;
  Tensor<float> source;    ///< [B,3,H,W]
  Tensor<float> guidance;  ///< [B,C_g,H,W]
  Tensor<float> target;    ///< [B,3,H,W]

  std::int64_t size() const { return static_cast<std::int64_t>(ids.size()); }
};

/// Stacks samples in order. Throws ShapeError on an empty list or mixed shapes.
Batch stack(const std::vector<const GuidedSample*>& samples);

struct ManifestEntry {
  std::string id;
  std::string source_path;
  std::string guidance_path;
  std::string target_path;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  int guidance_channels = 3;
  int height = 0;
  int width = 0;
};

/// Parses root/pairs.jsonl and checks that ids are unique and files exist.
/// Image size is taken from the first source image.
DatasetManifest read_manifest(const std::filesystem::path& root);
void write_manifest(const DatasetManifest& manifest);

/// Class colours of the synthetic guidance maps; index 0 is background.
const std::vector<std::array<std::uint8_t, 3>>& guidance_palette();

/// Loads and normalises one triple. With `one_hot`, the colour-coded guidance
/// is expanded to one channel per palette class (+1 for the class, -1
/// elsewhere). Throws FileError for missing files, ShapeError when a file is
/// not height x width, FormatError for unknown guidance colours in one-hot mode.
GuidedSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry,
                         bool one_hot = false);

std::vector<GuidedSample> load_dataset(const DatasetManifest& manifest, bool one_hot = false);

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SceneObject {
  int cls = 1;  ///< 1..5, palette index
  bool ellipse = false;
  double cx = 0, cy = 0;  ///< centre, canvas pixels
  double rx = 0, ry = 0;  ///< half extents
  std::array<int, 3> tint{};  ///< per-instance colour offset
};

struct Scene {
  std::vector<SceneObject> objects;  ///< painter's order
};

/// Axis-aligned view: image = scale ⊙ (world - centre) + centre + shift.
struct ViewTransform {
  double sx = 1, sy = 1;
  double tx = 0, ty = 0;
};

/// Flat class colours with hard edges (no anti-aliasing).
Image8 render_guidance(const Scene& scene, const ViewTransform& view, int height, int width);
/// Class-dependent procedural texture with per-object tint over a gradient background.
Image8 render_textured(const Scene& scene, const ViewTransform& view, int height, int width);

struct SynthOptions {
  std::uint64_t seed = 0;
  int count = 1;
  int height = 64;
  int width = 64;
};

/// Writes `count` triples plus pairs.jsonl under `root`. Output bytes are a
/// pure function of the options. Throws ConfigError on invalid options and
/// FileError when the root cannot be written.
DatasetManifest synth_dataset(const std::filesystem::path& root, const SynthOptions& options);

}  // namespace selgan
