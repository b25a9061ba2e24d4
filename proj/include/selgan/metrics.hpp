#pragma once

// Pixel-level image quality metrics on [C,H,W] arrays in the [0,255] domain.
//
// Sharpness difference (SD) has no single published definition. This library
// uses
//     SD = 10 log10( 255^2 / mean_{c,h,w} | (|∂h y|+|∂w y|) - (|∂h x|+|∂w x|) | )
// with forward differences and a zero gradient on the last row/column, so SD
// values are only comparable to other numbers produced by this code.

#include "selgan/tensor.hpp"

namespace selgan::metrics {

inline constexpr double kMetricCapDb = 100.0;

/// [-1,1] network output -> 8-bit-requantised values in [0,255].
Tensor<double> to_pixel_domain(const Tensor<float>& image);

/// Gaussian-windowed SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03) averaged over
/// valid windows and channels. Needs H,W >= 11.
double ssim(const Tensor<double>& x, const Tensor<double>& y);

/// 10 log10(255^2 / MSE), capped at 100 dB.
double psnr(const Tensor<double>& x, const Tensor<double>& y);

/// Sharpness difference in dB, capped at 100 dB.
double sharpness_difference(const Tensor<double>& x, const Tensor<double>& y);

struct ImageScores {
  double ssim = 0;
  double psnr = 0;
  double sd = 0;
};

ImageScores score(const Tensor<double>& prediction, const Tensor<double>& truth);

}  // namespace selgan::metrics
