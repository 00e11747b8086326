// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include "lafr/data/toy_faces.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "lafr/random.hpp"

namespace lafr {
namespace {

using Color = std::array<double, 3>;

Color mix(const Color& a, const Color& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

Color jitter(Color c, Rng& rng, double amount) {
  for (auto& v : c) v = std::clamp(v + uniform(rng, -amount, amount), 0.0, 1.0);
  return c;
}

Color shade(Color c, double factor) {
  for (auto& v : c) v = std::clamp(v * factor, 0.0, 1.0);
  return c;
}

struct Ellipse {
  double cx, cy, rx, ry;
  Color color;
};

class Canvas {
 public:
  Canvas(int size, double softness) : size_(size), soft_(softness), rgb_(static_cast<std::size_t>(size) * size) {}

  void vertical_gradient(const Color& top, const Color& bottom) {
    for (int y = 0; y < size_; ++y) {
      const Color c = mix(top, bottom, (y + 0.5) / size_);
      for (int x = 0; x < size_; ++x) rgb_[index(x, y)] = c;
    }
  }

  /// Alpha-composites an ellipse with a smooth (logistic) edge.
  void fill(const Ellipse& e) {
    const double r = std::min(e.rx, e.ry);
    const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx - 4 * soft_)));
    const int x1 = std::min(size_ - 1, static_cast<int>(std::ceil(e.cx + e.rx + 4 * soft_)));
    const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry - 4 * soft_)));
    const int y1 = std::min(size_ - 1, static_cast<int>(std::ceil(e.cy + e.ry + 4 * soft_)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = (x + 0.5 - e.cx) / e.rx;
        const double dy = (y + 0.5 - e.cy) / e.ry;
        const double signed_dist = (std::sqrt(dx * dx + dy * dy) - 1.0) * r;
        const double alpha = 1.0 / (1.0 + std::exp(signed_dist / soft_));
        auto& px = rgb_[index(x, y)];
        for (int c = 0; c < 3; ++c) px[c] += (e.color[c] - px[c]) * alpha;
      }
    }
  }

  Image image() const {
    Image img(size_, size_, 3);
    for (int y = 0; y < size_; ++y)
      for (int x = 0; x < size_; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(rgb_[index(x, y)][c]);
    return quantize8(img);
  }

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * size_ + x; }

  int size_;
  double soft_;
  std::vector<Color> rgb_;
};

}  // namespace

ToyFace render_toy_face(int image_size, std::uint64_t seed, std::uint64_t index) {
  if (image_size < 4 || image_size % 4 != 0) {
    throw SizeError("toy face size must be a positive multiple of 4, got " + std::to_string(image_size));
  }
  Rng rng(derive_seed(seed, index));
  const double s = image_size / 64.0;

  const Color skin = jitter(mix({0.97, 0.84, 0.74}, {0.42, 0.28, 0.20}, uniform01(rng)), rng, 0.04);
  const Color hair = jitter(mix({0.08, 0.06, 0.05}, {0.80, 0.64, 0.38}, std::pow(uniform01(rng), 2.0)), rng, 0.03);
  const Color bg_top = jitter({uniform(rng, 0.2, 0.9), uniform(rng, 0.2, 0.9), uniform(rng, 0.2, 0.9)}, rng, 0.0);
  const Color bg_bottom = jitter(bg_top, rng, 0.12);
  const Color shirt = {uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9)};
  const Color lips = jitter(mix(skin, {0.70, 0.22, 0.25}, uniform(rng, 0.45, 0.8)), rng, 0.03);
  const Color iris = jitter(mix({0.08, 0.05, 0.03}, {0.25, 0.45, 0.60}, uniform01(rng)), rng, 0.03);

  const double cx = image_size / 2.0 + uniform(rng, -3.0, 3.0) * s;
  const double cy = image_size / 2.0 + uniform(rng, -1.5, 3.0) * s;
  const double rx = uniform(rng, 17.0, 21.0) * s;
  const double ry = uniform(rng, 21.5, 25.0) * s;
  const double yaw = uniform(rng, -2.5, 2.5) * s;  // features shift against the head outline
  const double eye_dx = uniform(rng, 7.0, 8.8) * s;
  const double eye_y = cy - uniform(rng, 3.0, 6.0) * s;
  const double eye_rx = uniform(rng, 2.8, 3.8) * s;
  const double eye_ry = uniform(rng, 1.8, 2.6) * s;
  const double nose_y = cy + uniform(rng, 2.5, 4.5) * s;
  const double mouth_y = cy + uniform(rng, 10.0, 12.5) * s;
  const double mouth_w = uniform(rng, 5.0, 8.5) * s;
  const double mouth_h = uniform(rng, 1.3, 2.8) * s;
  const double brow_lift = uniform(rng, 3.2, 4.8) * s;

  Canvas canvas(image_size, 0.6 * s);
  canvas.vertical_gradient(bg_top, bg_bottom);
  canvas.fill({cx, image_size * 1.08, 0.48 * image_size, 0.22 * image_size, shirt});
  canvas.fill({cx, cy - 0.12 * ry, rx * 1.1, ry * 1.02, hair});
  canvas.fill({cx, cy, rx, ry, skin});
  canvas.fill({cx, cy - 0.78 * ry, rx * 0.92, ry * 0.36, hair});

  const double fx = cx + yaw;
  for (const double side : {-1.0, 1.0}) {
    const double ex = fx + side * eye_dx;
    canvas.fill({ex, eye_y - brow_lift, eye_rx * 1.15, 0.8 * s, shade(hair, 0.8)});
    canvas.fill({ex, eye_y, eye_rx, eye_ry, {0.95, 0.95, 0.93}});
    canvas.fill({ex, eye_y, 0.62 * eye_ry, 0.62 * eye_ry, iris});
  }
  canvas.fill({fx, nose_y, 2.2 * s, 3.6 * s, shade(skin, 0.82)});
  canvas.fill({fx, mouth_y, mouth_w, mouth_h, lips});

  ToyFace face;
  face.image = canvas.image();
  face.landmarks = {
      {fx - eye_dx, eye_y}, {fx + eye_dx, eye_y}, {fx, nose_y + 2.6 * s}, {fx - mouth_w, mouth_y}, {fx + mouth_w, mouth_y}};
  return face;
}

std::vector<Image> generate_toy_faces(int n, int image_size, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_toy_faces: n must be >= 1");
  std::vector<Image> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(render_toy_face(image_size, seed, static_cast<std::uint64_t>(i)).image);
  return out;
}

std::vector<Image> generate_noise_images(int n, int image_size, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_noise_images: n must be >= 1");
  std::vector<Image> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    Image img(image_size, image_size, 3);
    for (auto& v : img.pixels()) v = static_cast<float>(uniform01(rng));
    out.push_back(quantize8(img));
  }
  return out;
}

}  // namespace lafr
