// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "lafr/adapter/alignment.hpp"

using namespace lafr;
using namespace lafr::adapter;

namespace {

// Independent exhaustive scan in double precision.
int oracle_nearest(const std::vector<float>& f, const Codebook& cb) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cb.size(); ++k) {
    double d = 0.0;
    const auto e = cb.entry(k);
    for (int j = 0; j < cb.dim(); ++j) {
      const double t = static_cast<double>(f[j]) - static_cast<double>(e[j]);
      d += t * t;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

nn::TensorF random_map(nn::Shape s, Rng& rng, double scale = 1.0) {
  nn::TensorF t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(normal(rng) * scale);
  return t;
}

AdapterConfig tiny_config() {
  AdapterConfig c;
  c.codebook_size = 16;
  c.code_dim = 4;
  c.hidden = 8;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(NearestCode, MatchesExhaustiveOracle) {
  Rng rng(1);
  for (int k : {1, 7, 256, 1024}) {
    Codebook cb = Codebook::random(k, 8, rng);
    for (int i = 0; i < 100; ++i) {
      std::vector<float> f(8);
      for (auto& v : f) v = static_cast<float>(normal(rng) * 0.4);
      EXPECT_EQ(find_nearest(f, cb), oracle_nearest(f, cb));
    }
  }
}

TEST(NearestCode, TiesResolveToLowestIndex) {
  Codebook cb(4, 2);
  cb.entries().value = {1, 0, 0, 1, 1, 0, 0, 1};  // entries 0/2 and 1/3 coincide
  EXPECT_EQ(find_nearest(std::vector<float>{0.9f, 0.0f}, cb), 0);
  EXPECT_EQ(find_nearest(std::vector<float>{0.0f, 2.0f}, cb), 1);
  // equidistant from entries 0 and 1
  EXPECT_EQ(find_nearest(std::vector<float>{0.5f, 0.5f}, cb), 0);
}

TEST(NearestCode, UsageCountsOnlyThroughNearestCode) {
  Rng rng(2);
  Codebook cb = Codebook::random(8, 3, rng);
  const std::vector<float> f = {0.1f, 0.2f, 0.3f};
  find_nearest(f, cb);
  EXPECT_EQ(cb.total_queries(), 0u);
  const NearestCode n = nearest_code(f, cb);
  EXPECT_EQ(cb.total_queries(), 1u);
  EXPECT_EQ(cb.usage_counts()[static_cast<std::size_t>(n.index)], 1u);
  EXPECT_EQ(n.entry.size(), 3u);
  EXPECT_DOUBLE_EQ(cb.utilization(), 1.0 / 8.0);
}

TEST(NearestCode, DimensionMismatchIsAnError) {
  Codebook cb(4, 3);
  EXPECT_THROW(find_nearest(std::vector<float>{1.0f, 2.0f}, cb), nn::ShapeError);
}

TEST(QuantizeMap, EveryPositionMatchesTheScan) {
  Rng rng(3);
  Codebook cb = Codebook::random(300, 6, rng);
  const nn::TensorF feats = random_map({6, 5, 7}, rng, 0.5);
  const QuantizedMap q = quantize_map(feats, cb);
  ASSERT_EQ(q.indices.size(), 35u);
  const auto fm = feats.matrix();
  const auto qm = q.quantized.matrix();
  for (Eigen::Index p = 0; p < fm.cols(); ++p) {
    std::vector<float> f(6);
    for (int j = 0; j < 6; ++j) f[j] = fm(j, p);
    const int k = oracle_nearest(f, cb);
    EXPECT_EQ(q.indices[static_cast<std::size_t>(p)], k);
    for (int j = 0; j < 6; ++j) EXPECT_EQ(qm(j, p), cb.entry(k)[j]);
  }
}

TEST(AlignmentLoss, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  const nn::TensorD za = [&] {
    nn::TensorD t({2, 3, 3});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(rng);
    return t;
  }();
  nn::TensorD zh(za.shape()), f({3, 2, 2}), q({3, 2, 2});
  for (std::size_t i = 0; i < zh.size(); ++i) zh[i] = normal(rng);
  for (std::size_t i = 0; i < f.size(); ++i) {
    f[i] = normal(rng);
    q[i] = normal(rng);
  }
  nn::TensorD ga, gf;
  alignment_loss(za, zh, f, q, 0.25, &ga, &gf);
  const double h = 1e-6;
  for (std::size_t i = 0; i < za.size(); ++i) {
    nn::TensorD p = za, m = za;
    p[i] += h;
    m[i] -= h;
    EXPECT_NEAR(ga[i], (alignment_loss(p, zh, f, q, 0.25) - alignment_loss(m, zh, f, q, 0.25)) / (2 * h), 1e-6);
  }
  for (std::size_t i = 0; i < f.size(); ++i) {
    nn::TensorD p = f, m = f;
    p[i] += h;
    m[i] -= h;
    EXPECT_NEAR(gf[i], (alignment_loss(za, zh, p, q, 0.25) - alignment_loss(za, zh, m, q, 0.25)) / (2 * h), 1e-6);
  }
}

TEST(AlignmentLoss, ZeroWhenAlignedAndCommitted) {
  nn::TensorD z({1, 2, 2}, 0.5);
  EXPECT_EQ(alignment_loss(z, z, z, z, 1.0), 0.0);
  EXPECT_THROW(alignment_loss(z, z, z, z, -1.0), std::invalid_argument);
  EXPECT_THROW(alignment_loss(z, nn::TensorD({1, 2, 3}), z, z, 0.0), nn::ShapeError);
}

TEST(StraightThrough, FeatureGradientEqualsQuantizedGradientExactly) {
  for (int up : {1, 2}) {
    AdapterConfig cfg = tiny_config();
    cfg.beta = 0.0;
    cfg.feature_upsample = up;
    AlignmentAdapter a(cfg);
    a.set_trainable(true);
    a.codebook().entries().trainable = false;
    Rng rng(6);
    const LatentCode z = random_map({4, 4, 4}, rng);
    const LatentCode hq = random_map({4, 4, 4}, rng);
    const auto tr = a.forward_trace(z, false);
    LatentCode g;
    nn::TensorF gc;
    alignment_loss(tr.aligned(), hq, tr.features(), tr.quantized.quantized, 0.0, &g, &gc);
    const auto back = a.backward(tr, g, gc);
    ASSERT_EQ(back.grad_features.size(), back.grad_quantized.size());
    for (std::size_t i = 0; i < back.grad_features.size(); ++i) {
      EXPECT_EQ(back.grad_features[i], back.grad_quantized[i]);
    }
    for (float v : a.codebook().entries().grad) EXPECT_EQ(v, 0.0f);
  }
}

TEST(Adapter, AlignIsReadOnlyAndShapePreserving) {
  AlignmentAdapter a(tiny_config());
  Rng rng(7);
  const LatentCode z = random_map({4, 6, 6}, rng);
  const std::uint64_t before = a.checksum();
  const LatentCode out = a.align(z);
  EXPECT_EQ(out.shape(), z.shape());
  EXPECT_EQ(a.codebook().total_queries(), 0u);
  EXPECT_EQ(a.checksum(), before);
  EXPECT_THROW(a.align(LatentCode({3, 6, 6})), nn::ShapeError);
}

TEST(Adapter, FinerFeatureGridQuantizesMorePositions) {
  AdapterConfig cfg = tiny_config();
  cfg.feature_upsample = 2;
  AlignmentAdapter a(cfg);
  Rng rng(8);
  const auto tr = a.forward_trace(random_map({4, 4, 4}, rng), true);
  EXPECT_EQ(tr.features().height(), 8);
  EXPECT_EQ(tr.quantized.indices.size(), 64u);
  EXPECT_EQ(a.codebook().total_queries(), 64u);
  EXPECT_EQ(tr.aligned().shape(), nn::Shape({4, 4, 4}));
}

TEST(Adapter, InvalidGeometryRejected) {
  AdapterConfig cfg = tiny_config();
  cfg.kernel_size = 4;
  EXPECT_THROW(AlignmentAdapter{cfg}, std::invalid_argument);
  cfg = tiny_config();
  cfg.beta = -0.1;
  EXPECT_THROW(AlignmentAdapter{cfg}, std::invalid_argument);
}

TEST(Stage1, ZeroEpochsLeavesInitialization) {
  AlignmentAdapter a(tiny_config());
  const AlignmentAdapter fresh(tiny_config());
  Rng rng(9);
  std::vector<LatentPair> pairs{{random_map({4, 4, 4}, rng), random_map({4, 4, 4}, rng)}};
  Stage1Schedule s;
  s.epochs = 0;
  const auto r = train_stage1(a, pairs, s);
  EXPECT_TRUE(r.loss_trace.empty());
  EXPECT_EQ(a.checksum(), fresh.checksum());
}

TEST(Stage1, TrainingShrinksTheGapAndIsDeterministic) {
  Rng rng(10);
  std::vector<LatentPair> pairs;
  for (int i = 0; i < 8; ++i) {
    LatentCode hq = random_map({4, 4, 4}, rng, 0.5);
    LatentCode lq = hq;
    for (std::size_t k = 0; k < lq.size(); ++k) lq[k] = 0.5f * lq[k] + static_cast<float>(0.2 * normal(rng));
    pairs.push_back({lq, hq});
  }
  Stage1Schedule s{1e-2, 4, 40, 1.0, 3};
  AlignmentAdapter a(tiny_config()), b(tiny_config());
  const double untrained = mean_alignment_gap(a, pairs);
  const auto ra = train_stage1(a, pairs, s);
  train_stage1(b, pairs, s);
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_LT(mean_alignment_gap(a, pairs), untrained);
  EXPECT_LT(ra.loss_trace.back(), ra.loss_trace.front());
  EXPECT_EQ(a.codebook().total_queries(), 8u * 16u * 40u);
  for (const auto* p : std::as_const(a).parameters()) EXPECT_FALSE(p->trainable);
}

TEST(Stage1, InvalidScheduleRejected) {
  AlignmentAdapter a(tiny_config());
  std::vector<LatentPair> none;
  EXPECT_THROW(train_stage1(a, none, Stage1Schedule{}), std::invalid_argument);
  Stage1Schedule s;
  s.batch_size = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}
