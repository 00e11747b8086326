// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "lafr/codec/codec.hpp"
#include "lafr/data/toy_faces.hpp"
#include "lafr/metrics/metrics.hpp"

using namespace lafr;
using namespace lafr::codec;

namespace {

CodecConfig small_config() {
  CodecConfig c;
  c.hidden_widths = {6, 8};
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Codec, LatentShapeLaw) {
  const Codec c(CodecConfig{});
  const Image img = generate_toy_faces(1, 64, 1)[0];
  const LatentCode z = c.encode(img);
  EXPECT_EQ(z.channels(), 4);
  EXPECT_EQ(z.height(), 16);
  EXPECT_EQ(z.width(), 16);
  const Image back = c.decode(z);
  EXPECT_TRUE(back.same_shape(img));
  EXPECT_TRUE(back.in_range());
}

TEST(Codec, DeterministicEncodeAndDecode) {
  const Codec c(small_config());
  const Image img = generate_toy_faces(1, 32, 2)[0];
  const LatentCode a = c.encode(img), b = c.encode(img);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_EQ(c.decode(a), c.decode(b));
  const Image zero = c.decode(LatentCode(a.shape()));
  EXPECT_TRUE(zero.in_range());
}

TEST(Codec, ShapeMismatchIsAnError) {
  const Codec c(small_config());
  EXPECT_THROW(c.encode(Image(30, 32, 3)), nn::ShapeError);
  EXPECT_THROW(c.encode(Image(32, 32, 1)), nn::ShapeError);
  EXPECT_THROW(c.decode(LatentCode({3, 8, 8})), nn::ShapeError);
}

TEST(Codec, InvalidConfigRejected) {
  CodecConfig c;
  c.stride = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = CodecConfig{};
  c.hidden_widths = {8};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Codec, DecodeBackwardMatchesFiniteDifferences) {
  Codec c(small_config());
  for (auto* p : c.parameters()) p->trainable = false;
  Rng rng(4);
  LatentCode z({4, 2, 2});
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<float>(normal(rng));
  const auto tr = c.decode_trace(z);
  nn::TensorF w(tr.trace.output().shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(normal(rng));
  const LatentCode g = c.decode_backward(tr, w);
  auto objective = [&](const LatentCode& zz) {
    const auto y = c.decode_tensor(zz);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(w[i]) * y[i];
    return s;
  };
  const float h = 1e-2f;
  for (std::size_t i = 0; i < z.size(); ++i) {
    LatentCode zp = z, zm = z;
    zp[i] += h;
    zm[i] -= h;
    const double fd = (objective(zp) - objective(zm)) / (2.0 * h);
    EXPECT_NEAR(g[i], fd, 2e-2 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Codec, DecodeBackwardRefusesTrainableCodec) {
  Codec c(small_config());
  for (auto* p : c.decoder().parameters()) p->trainable = true;
  LatentCode z({4, 2, 2});
  const auto tr = c.decode_trace(z);
  EXPECT_THROW(c.decode_backward(tr, nn::TensorF(tr.trace.output().shape())), std::logic_error);
}

TEST(Codec, TrainingIsDeterministicAndReportsFailure) {
  CodecConfig cfg = small_config();
  cfg.epochs = 1;
  cfg.max_final_loss = 1.0;
  const auto imgs = generate_toy_faces(64, 16, 5);
  Codec a(cfg), b(cfg);
  train_toy_codec(a, imgs);
  train_toy_codec(b, imgs);
  EXPECT_EQ(a.checksum(), b.checksum());

  cfg.max_final_loss = 1e-9;
  Codec f(cfg);
  try {
    train_toy_codec(f, imgs);
    FAIL() << "expected a training failure";
  } catch (const TrainingFailure& e) {
    EXPECT_EQ(e.trace().size(), 1u);
  }
  EXPECT_THROW(train_toy_codec(f, generate_toy_faces(10, 16, 5)), std::invalid_argument);
}

// Default toy codec trained on 512 faces clears the 28 dB round-trip floor on
// held-out faces.
TEST(Codec, DefaultTrainingClearsRoundTripFloor) {
  Codec c(CodecConfig{});
  train_toy_codec(c, generate_toy_faces(512, 64, 11));
  const auto held = generate_toy_faces(32, 64, 12);
  double total = 0.0;
  for (const auto& img : held) total += metrics::psnr(quantize8(img), c.decode(c.encode(quantize8(img))));
  EXPECT_GE(total / static_cast<double>(held.size()), 28.0);
}
