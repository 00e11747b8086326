// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lafr/nn/tensor.hpp"

namespace lafr {

class SizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Interleaved H x W x C intensities in [0, 1]; C is 1 or 3.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, float fill = 0.0f);
  Image(int height, int width, int channels, std::vector<float> pixels);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  float& at(int y, int x, int c) { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c]; }
  float at(int y, int x, int c) const { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c]; }

  std::vector<float>& pixels() { return pixels_; }
  const std::vector<float>& pixels() const { return pixels_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  std::string shape_str() const;

  /// Clamps every element into [0, 1]; NaN becomes 0.
  void clip();
  bool in_range() const;

  bool operator==(const Image& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> pixels_;
};

void require_same_shape(const Image& a, const Image& b, const char* what);

template <typename T>
nn::Tensor<T> to_tensor(const Image& img) {
  nn::Tensor<T> t({img.channels(), img.height(), img.width()});
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) t.at(c, y, x) = static_cast<T>(img.at(y, x, c));
  return t;
}

/// Converts a C x H x W tensor back to an image, clipping into [0, 1].
template <typename T>
Image to_image(const nn::Tensor<T>& t) {
  Image img(t.height(), t.width(), t.channels());
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < t.height(); ++y)
      for (int x = 0; x < t.width(); ++x) img.at(y, x, c) = static_cast<float>(t.at(c, y, x));
  img.clip();
  return img;
}

/// Rounds every intensity to the nearest 8-bit level.
Image quantize8(const Image& img);

/// 8-bit PNG, lossless for quantized images.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// In-memory JPEG round trip at the given quality (1..100).
Image jpeg_roundtrip(const Image& img, int quality);

}  // namespace lafr
