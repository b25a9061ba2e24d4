#include "selgan/metrics.hpp"

#include <array>
#include <cmath>

namespace selgan::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 255) * (0.01 * 255);
constexpr double kC2 = (0.03 * 255) * (0.03 * 255);
constexpr double kTinyDivisor = 1e-10;

void require_image_pair(const Tensor<double>& x, const Tensor<double>& y, const char* what) {
  if (x.rank() != 3) throw ShapeError(std::string(what) + " expects [C,H,W], got " + to_string(x.shape()));
  require_same_shape(x.shape(), y.shape(), what);
}

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double total = 0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kSigma * kSigma));
    total += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= total;
  return w;
}

// Separable valid-mode filtering of one H x W plane.
std::vector<double> filter_valid(const double* plane, std::int64_t H, std::int64_t W,
                                 const std::array<double, kWindow>& k) {
  const std::int64_t oh = H - kWindow + 1, ow = W - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(H * ow));
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < kWindow; ++i) acc += k[static_cast<std::size_t>(i)] * plane[y * W + x + i];
      rows[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < kWindow; ++i) acc += k[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>((y + i) * ow + x)];
      out[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  return out;
}

double to_db(double divisor) {
  if (divisor <= kTinyDivisor) return kMetricCapDb;
  return std::min(kMetricCapDb, 10.0 * std::log10(255.0 * 255.0 / divisor));
}

}  // namespace

Tensor<double> to_pixel_domain(const Tensor<float>& image) {
  Tensor<double> out(image.shape());
  for (std::int64_t i = 0; i < image.numel(); ++i) {
    out[i] = std::clamp(std::round((static_cast<double>(image[i]) + 1.0) * 127.5), 0.0, 255.0);
  }
  return out;
}

double ssim(const Tensor<double>& x, const Tensor<double>& y) {
  require_image_pair(x, y, "ssim");
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H < kWindow || W < kWindow) {
    throw ShapeError("ssim needs images of at least 11x11, got " + to_string(x.shape()));
  }
  static const auto window = gaussian_window();
  const std::int64_t n = H * W;
  std::vector<double> xx(static_cast<std::size_t>(n)), yy(xx.size()), xy(xx.size());
  double total = 0;
  std::int64_t windows = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    const double* px = x.data() + c * n;
    const double* py = y.data() + c * n;
    for (std::int64_t i = 0; i < n; ++i) {
      xx[static_cast<std::size_t>(i)] = px[i] * px[i];
      yy[static_cast<std::size_t>(i)] = py[i] * py[i];
      xy[static_cast<std::size_t>(i)] = px[i] * py[i];
    }
    const auto mx = filter_valid(px, H, W, window);
    const auto my = filter_valid(py, H, W, window);
    const auto sxx = filter_valid(xx.data(), H, W, window);
    const auto syy = filter_valid(yy.data(), H, W, window);
    const auto sxy = filter_valid(xy.data(), H, W, window);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      total += ((2 * mx[i] * my[i] + kC1) * (2 * cov + kC2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    windows += static_cast<std::int64_t>(mx.size());
  }
  return total / static_cast<double>(windows);
}

double psnr(const Tensor<double>& x, const Tensor<double>& y) {
  require_image_pair(x, y, "psnr");
  double mse = 0;
  for (std::int64_t i = 0; i < x.numel(); ++i) mse += (x[i] - y[i]) * (x[i] - y[i]);
  return to_db(mse / static_cast<double>(x.numel()));
}

double sharpness_difference(const Tensor<double>& x, const Tensor<double>& y) {
  require_image_pair(x, y, "sharpness_difference");
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto grad = [H, W](const double* p, std::int64_t h, std::int64_t w) {
    const double dh = h + 1 < H ? std::abs(p[(h + 1) * W + w] - p[h * W + w]) : 0.0;
    const double dw = w + 1 < W ? std::abs(p[h * W + w + 1] - p[h * W + w]) : 0.0;
    return dh + dw;
  };
  double total = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    const double* px = x.data() + c * H * W;
    const double* py = y.data() + c * H * W;
    for (std::int64_t h = 0; h < H; ++h)
      for (std::int64_t w = 0; w < W; ++w) total += std::abs(grad(py, h, w) - grad(px, h, w));
  }
  return to_db(total / static_cast<double>(x.numel()));
}

ImageScores score(const Tensor<double>& prediction, const Tensor<double>& truth) {
  return {ssim(prediction, truth), psnr(prediction, truth), sharpness_difference(prediction, truth)};
}

}  // namespace selgan::metrics
