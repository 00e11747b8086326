// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include "lafr/data/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace lafr {

DegradationParams DegradationRanges::sample(Rng& rng) const {
  DegradationParams p;
  p.scale_factor = scale_factor;
  p.blur_sigma = uniform(rng, blur_min, blur_max);
  p.noise_sigma = uniform(rng, noise_min, noise_max);
  p.jpeg_quality = static_cast<int>(uniform_int(rng, quality_min, quality_max));
  p.seed = rng();
  return p;
}

DegradationParams DegradationRanges::midpoint(std::uint64_t seed) const {
  DegradationParams p;
  p.scale_factor = scale_factor;
  p.blur_sigma = 0.5 * (blur_min + blur_max);
  p.noise_sigma = 0.5 * (noise_min + noise_max);
  p.jpeg_quality = (quality_min + quality_max) / 2;
  p.seed = seed;
  return p;
}

namespace {

struct Taps {
  int first = 0;
  std::vector<double> weights;
};

/// Resamples along one axis: `taps[o]` lists the input weights for output o.
Image apply_axis(const Image& img, const std::vector<Taps>& taps, bool horizontal) {
  const int out_h = horizontal ? img.height() : static_cast<int>(taps.size());
  const int out_w = horizontal ? static_cast<int>(taps.size()) : img.width();
  const int limit = horizontal ? img.width() : img.height();
  Image out(out_h, out_w, img.channels());
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const Taps& t = taps[horizontal ? x : y];
      for (int c = 0; c < img.channels(); ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t.weights.size(); ++k) {
          const int src = std::clamp(t.first + static_cast<int>(k), 0, limit - 1);
          acc += t.weights[k] * (horizontal ? img.at(y, src, c) : img.at(src, x, c));
        }
        out.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

double cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

std::vector<Taps> bicubic_taps(int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  const double support_scale = std::max(1.0, scale);
  const double support = 2.0 * support_scale;
  std::vector<Taps> taps(out_size);
  for (int o = 0; o < out_size; ++o) {
    const double center = (o + 0.5) * scale;
    const int lo = static_cast<int>(std::floor(center - support));
    const int hi = static_cast<int>(std::ceil(center + support));
    Taps t;
    t.first = lo;
    double total = 0.0;
    for (int i = lo; i <= hi; ++i) {
      const double w = cubic((i + 0.5 - center) / support_scale);
      t.weights.push_back(w);
      total += w;
    }
    for (auto& w : t.weights) w /= total;
    taps[o] = std::move(t);
  }
  return taps;
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("blur sigma must be >= 0");
  if (sigma == 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (auto& k : kernel) k /= total;
  const auto taps_for = [&](int n) {
    std::vector<Taps> taps(n);
    for (int o = 0; o < n; ++o) taps[o] = {o - radius, kernel};
    return taps;
  };
  return apply_axis(apply_axis(img, taps_for(img.width()), true), taps_for(img.height()), false);
}

Image resize_bicubic(const Image& img, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) throw SizeError("resize target must be positive");
  if (out_height == img.height() && out_width == img.width()) return img;
  Image horizontal = out_width == img.width() ? img : apply_axis(img, bicubic_taps(img.width(), out_width), true);
  if (out_height == img.height()) return horizontal;
  return apply_axis(horizontal, bicubic_taps(img.height(), out_height), false);
}

Image degrade(const Image& hq, const DegradationParams& params) {
  if (params.scale_factor < 1) throw SizeError("scale factor must be >= 1");
  if (hq.height() % params.scale_factor != 0 || hq.width() % params.scale_factor != 0) {
    throw SizeError("scale factor " + std::to_string(params.scale_factor) + " does not divide " + hq.shape_str());
  }
  if (params.jpeg_quality < 1 || params.jpeg_quality > 100) {
    throw std::invalid_argument("jpeg quality " + std::to_string(params.jpeg_quality) + " outside [1, 100]");
  }
  if (params.noise_sigma < 0.0) throw std::invalid_argument("noise sigma must be >= 0");

  Image out = gaussian_blur(hq, params.blur_sigma);
  out = resize_bicubic(out, hq.height() / params.scale_factor, hq.width() / params.scale_factor);
  out.clip();
  if (params.noise_sigma > 0.0) {
    Rng rng(derive_seed(params.seed, "noise"));
    for (auto& v : out.pixels()) v = static_cast<float>(v + params.noise_sigma * normal(rng));
    out.clip();
  }
  if (params.jpeg_quality < 100) out = jpeg_roundtrip(out, params.jpeg_quality);
  return out;
}

Image upsample(const Image& lq, int factor) {
  if (factor < 1) throw SizeError("upsample factor must be >= 1");
  Image out = resize_bicubic(lq, lq.height() * factor, lq.width() * factor);
  out.clip();
  return out;
}

}  // namespace lafr
