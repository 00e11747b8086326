// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "lafr/data/image.hpp"

namespace lafr {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

/// Ordered facial anchor points: left eye, right eye, nose tip, left and right
/// mouth corner.
using Landmarks = std::vector<Point2>;

struct ToyFace {
  Image image;
  Landmarks landmarks;
};

/// Renders the `index`-th face of the corpus identified by `seed`. Faces are
/// soft-edged parametric sprites (head, hair, eyes, brows, nose, mouth,
/// shoulders) with jittered geometry and tones, quantized to 8 bits.
ToyFace render_toy_face(int image_size, std::uint64_t seed, std::uint64_t index);

/// n faces of the corpus `seed`; face i equals render_toy_face(size, seed, i).
std::vector<Image> generate_toy_faces(int n, int image_size, std::uint64_t seed);

/// i.i.d. uniform-noise images, the scattered reference corpus for compactness checks.
std::vector<Image> generate_noise_images(int n, int image_size, std::uint64_t seed);

}  // namespace lafr
