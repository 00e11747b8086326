// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "lafr/data/image.hpp"
#include "lafr/random.hpp"

namespace lafr {

struct DegradationParams {
  int scale_factor = 4;
  double blur_sigma = 0.0;   // Gaussian kernel std, pixels
  double noise_sigma = 0.0;  // additive Gaussian std, intensity units
  int jpeg_quality = 100;    // 100 skips the JPEG step
  std::uint64_t seed = 0;
};

/// Per-image sampling ranges for synthetic training degradations.
struct DegradationRanges {
  int scale_factor = 4;
  double blur_min = 0.0, blur_max = 3.0;
  double noise_min = 0.0, noise_max = 0.08;
  int quality_min = 40, quality_max = 95;

  DegradationParams sample(Rng& rng) const;
  /// Fixed evaluation degradation: the midpoint of every range.
  DegradationParams midpoint(std::uint64_t seed) const;
};

/// Separable Gaussian blur, radius ceil(3 sigma), edge-replicated borders.
/// sigma == 0 returns the input unchanged.
Image gaussian_blur(const Image& img, double sigma);

/// Separable bicubic (Keys, a = -0.5) resampling; the kernel is stretched when
/// shrinking so downsampling is antialiased. Equal sizes return a copy.
Image resize_bicubic(const Image& img, int out_height, int out_width);

/// blur -> bicubic downsample -> additive noise (clipped) -> JPEG round trip.
Image degrade(const Image& hq, const DegradationParams& params);

/// Bicubic upsample by an integer factor, clipped to [0, 1].
Image upsample(const Image& lq, int factor);

}  // namespace lafr
