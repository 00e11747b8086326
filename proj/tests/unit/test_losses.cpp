// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "lafr/losses/losses.hpp"
#include "lafr/random.hpp"

using namespace lafr;
using namespace lafr::losses;

namespace {

ImageTensor random_image(std::uint64_t seed, int size = 8) {
  Rng rng(seed);
  ImageTensor t({3, size, size});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1 + 0.8 * uniform01(rng);
  return t;
}

void expect_gradient(const std::function<double(const ImageTensor&)>& f, const ImageTensor& x,
                     const ImageTensor& analytic) {
  const double h = 1e-6;
  ASSERT_EQ(analytic.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    ImageTensor p = x, m = x;
    p[i] += h;
    m[i] -= h;
    const double fd = (f(p) - f(m)) / (2 * h);
    EXPECT_NEAR(analytic[i], fd, 1e-4 * std::max(std::abs(fd), 1e-3)) << "element " << i;
  }
}

class LossFixture : public ::testing::Test {
 protected:
  FeatureStack stack;
  IdentityProvider identity{stack};
  LayoutProvider layout{stack};
  StructureProvider structure;
  ImageTensor res = random_image(1);
  ImageTensor gt = random_image(2);
};

}  // namespace

TEST_F(LossFixture, MseGradient) {
  ImageTensor g;
  mse(res, gt, &g);
  expect_gradient([&](const ImageTensor& x) { return mse(x, gt); }, res, g);
}

TEST_F(LossFixture, PerceptualGradient) {
  ImageTensor g;
  perceptual_distance(res, gt, stack, &g);
  expect_gradient([&](const ImageTensor& x) { return perceptual_distance(x, gt, stack); }, res, g);
}

TEST_F(LossFixture, ReconstructionGradient) {
  const LossWeights w;
  ImageTensor g;
  reconstruction_loss(res, gt, w, stack, &g);
  expect_gradient([&](const ImageTensor& x) { return reconstruction_loss(x, gt, w, stack); }, res, g);
}

TEST_F(LossFixture, EmbeddingGradientsForEveryProviderAndDistance) {
  for (const EmbeddingProvider* p : {static_cast<const EmbeddingProvider*>(&identity),
                                     static_cast<const EmbeddingProvider*>(&layout),
                                     static_cast<const EmbeddingProvider*>(&structure)}) {
    for (auto kind : {EmbeddingDistance::kCosine, EmbeddingDistance::kSquaredL2}) {
      SCOPED_TRACE(p->name());
      ImageTensor g;
      embedding_loss(res, gt, *p, kind, &g);
      expect_gradient([&](const ImageTensor& x) { return embedding_loss(x, gt, *p, kind); }, res, g);
    }
  }
}

TEST_F(LossFixture, TotalLossGradientAndComposition) {
  LossWeights w{2.0, 0.7, 1.3, 0.4};
  const LossProviders prov{stack, identity, structure};
  ImageTensor g;
  const LossBreakdown b = total_loss(res, gt, w, prov, &g);
  EXPECT_NEAR(b.total, 0.7 * b.reconstruction + 1.3 * b.identity + 0.4 * b.structure, 1e-12);
  EXPECT_NEAR(b.reconstruction, reconstruction_loss(res, gt, w, stack), 1e-12);
  expect_gradient([&](const ImageTensor& x) { return total_loss(x, gt, w, prov).total; }, res, g);
}

TEST_F(LossFixture, ZeroWeightTermsAreReportedButNotDifferentiated) {
  LossWeights w{2.0, 1.0, 0.0, 0.0};
  const LossProviders prov{stack, identity, structure};
  ImageTensor g_total, g_rec;
  const LossBreakdown b = total_loss(res, gt, w, prov, &g_total);
  reconstruction_loss(res, gt, w, stack, &g_rec);
  EXPECT_GT(b.identity, 0.0);
  EXPECT_EQ(b.total, b.reconstruction);
  for (std::size_t i = 0; i < g_rec.size(); ++i) EXPECT_EQ(g_total[i], g_rec[i]);
}

TEST_F(LossFixture, IdenticalImagesGiveZeroLoss) {
  const LossProviders prov{stack, identity, structure};
  const LossBreakdown b = total_loss(gt, gt, LossWeights{}, prov);
  EXPECT_NEAR(b.total, 0.0, 1e-12);
}

TEST_F(LossFixture, EmbeddingsAreUnitNorm) {
  EXPECT_NEAR(identity.embed(res).norm(), 1.0, 1e-12);
  EXPECT_NEAR(layout.embed(res).norm(), 1.0, 1e-12);
  EXPECT_NEAR(structure.embed(res).norm(), 1.0, 1e-12);
}

// On unit vectors |u - v|^2 = 2 (1 - cos).
TEST_F(LossFixture, SquaredL2IsTwiceCosineOnUnitEmbeddings) {
  const double c = embedding_loss(res, gt, identity, EmbeddingDistance::kCosine);
  const double l = embedding_loss(res, gt, identity, EmbeddingDistance::kSquaredL2);
  EXPECT_NEAR(l, 2.0 * c, 1e-12);
}

TEST(CosineDistance, KnownValuesAndZeroVector) {
  Eigen::VectorXd u(2), v(2), w(2), z = Eigen::VectorXd::Zero(2);
  u << 1, 0;
  v << 0, 3;
  w << -2, 0;
  EXPECT_NEAR(cosine_distance(u, v), 1.0, 1e-15);
  EXPECT_NEAR(cosine_distance(u, w), 2.0, 1e-15);
  EXPECT_NEAR(cosine_distance(u, u * 5.0), 0.0, 1e-15);
  EXPECT_THROW(cosine_distance(u, z), std::invalid_argument);
}

TEST(LossWeights, NegativeWeightRejected) {
  LossWeights w;
  w.lambda_id = -1.0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
}

TEST(Losses, ShapeMismatchRejected) {
  EXPECT_THROW(mse(random_image(1, 8), random_image(2, 4)), nn::ShapeError);
}
