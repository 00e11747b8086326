// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>

#include <json.hpp>

#include "lafr/data/toy_faces.hpp"
#include "lafr/metrics/metrics.hpp"
#include "lafr/random.hpp"

using namespace lafr;
using namespace lafr::metrics;

namespace {

Image random_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size, 3);
  for (auto& v : img.pixels()) v = static_cast<float>(uniform01(rng));
  return img;
}

FeatureSet gaussian_set(int n, int dim, double offset, std::uint64_t seed) {
  Rng rng(seed);
  FeatureSet f;
  f.rows.resize(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) f.rows(i, j) = normal(rng) + offset;
  }
  return f;
}

// Textbook per-point silhouette, written out directly.
double silhouette_oracle(const Eigen::MatrixXd& x, const std::vector<int>& labels) {
  const auto n = x.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::map<int, std::pair<double, int>> by_class;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      auto& [s, c] = by_class[labels[j]];
      s += (x.row(i) - x.row(j)).norm();
      ++c;
    }
    if (!by_class.count(labels[i])) continue;
    const double a = by_class[labels[i]].first / by_class[labels[i]].second;
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [k, sc] : by_class) {
      if (k != labels[i]) b = std::min(b, sc.first / sc.second);
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST(Psnr, KnownValues) {
  const Image a(8, 8, 3, 0.5f);
  const Image b(8, 8, 3, 0.6f);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-4);  // MSE 0.01
  EXPECT_NEAR(psnr(Image(4, 4, 3, 0.0f), Image(4, 4, 3, 1.0f)), 0.0, 1e-12);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_GT(psnr(a, a), 0.0);
  EXPECT_THROW(psnr(a, Image(8, 7, 3)), SizeError);
}

TEST(Psnr, FormatRoundTrip) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_EQ(format_psnr(inf), "inf");
  EXPECT_EQ(parse_psnr("inf"), inf);
  EXPECT_EQ(format_psnr(21.5), "21.500000");
  EXPECT_DOUBLE_EQ(parse_psnr(format_psnr(21.5)), 21.5);
}

TEST(Ssim, IdenticalIsOneAndSymmetric) {
  const Image a = random_image(16, 1), b = random_image(16, 2);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_LT(ssim(a, b), 0.5);
}

// Flat images: only the luminance term survives.
TEST(Ssim, ConstantImagesClosedForm) {
  const double c1 = 0.01 * 0.01;
  const double mu1 = 0.2, mu2 = 0.8;
  const double expected = (2 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1);
  EXPECT_NEAR(ssim(Image(12, 12, 3, 0.2f), Image(12, 12, 3, 0.8f)), expected, 1e-6);
}

TEST(Ssim, TooSmallForWindowIsAnError) {
  EXPECT_THROW(ssim(Image(8, 8, 3), Image(8, 8, 3)), SizeError);
}

TEST(Fid, IdenticalSetsGiveZero) {
  const FeatureSet a = gaussian_set(40, 5, 0.0, 1);
  EXPECT_NEAR(fid(a, a), 0.0, 1e-8);
}

// {0,2}: mean 1, var 2. {0,4}: mean 2, var 8. 1 + 2 + 8 - 2 * 4 = 3.
TEST(Fid, UnivariateClosedForm) {
  FeatureSet a, b;
  a.rows.resize(2, 1);
  a.rows << 0, 2;
  b.rows.resize(2, 1);
  b.rows << 0, 4;
  EXPECT_NEAR(fid(a, b), 3.0, 1e-12);
}

TEST(Fid, SymmetricAndGrowsWithShift) {
  const FeatureSet a = gaussian_set(60, 4, 0.0, 2), b = gaussian_set(60, 4, 0.5, 3), c = gaussian_set(60, 4, 2.0, 3);
  EXPECT_NEAR(fid(a, b), fid(b, a), 1e-8);
  EXPECT_LT(fid(a, b), fid(a, c));
}

TEST(Fid, Errors) {
  EXPECT_THROW(fid(gaussian_set(1, 3, 0, 1), gaussian_set(5, 3, 0, 1)), std::invalid_argument);
  EXPECT_THROW(fid(gaussian_set(5, 2, 0, 1), gaussian_set(5, 3, 0, 1)), std::invalid_argument);
}

TEST(IdentityDegree, KnownAngles) {
  Eigen::VectorXd x(3), y(3), z(3);
  x << 1, 0, 0;
  y << 0, 2, 0;
  z << 1, 1, 0;
  EXPECT_EQ(identity_degree(x, x), 0.0);
  EXPECT_NEAR(identity_degree(x, y), 90.0, 1e-12);
  EXPECT_NEAR(identity_degree(x, -x), 180.0, 1e-12);
  EXPECT_NEAR(identity_degree(x, z), 45.0, 1e-12);
  EXPECT_NEAR(identity_degree(x, z) + identity_degree(z, y), identity_degree(x, y), 1e-12);
  EXPECT_THROW(identity_degree(x, Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST(IdentityDegree, ExactZeroForArbitraryEqualVectors) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd v(64);
    for (auto& e : v) e = normal(rng);
    EXPECT_EQ(identity_degree(v, v), 0.0);
  }
}

TEST(LandmarkDistance, ThreeFourFive) {
  const Landmarks a{{0, 0}, {10, 10}};
  const Landmarks b{{3, 4}, {13, 14}};
  EXPECT_DOUBLE_EQ(landmark_distance(a, b), 5.0);
  EXPECT_EQ(landmark_distance(a, a), 0.0);
  EXPECT_THROW(landmark_distance(a, Landmarks{{0, 0}}), std::invalid_argument);
  EXPECT_THROW(landmark_distance({}, {}), std::invalid_argument);
}

TEST(LocateLandmarks, ReferenceAgainstItselfIsExact) {
  const ToyFace f = render_toy_face(64, 1, 3);
  const Landmarks found = locate_landmarks(f.image, f.image, f.landmarks);
  EXPECT_EQ(landmark_distance(found, f.landmarks), 0.0);
}

TEST(IntraClass, MatchesPairwiseMean) {
  FeatureSet f;
  f.rows.resize(3, 2);
  f.rows << 0, 0, 3, 4, 0, 8;  // distances 5, 8, 5
  EXPECT_NEAR(intra_class_distance(f), 6.0, 1e-12);
}

TEST(Silhouette, HandPlacedClusters) {
  FeatureSet f;
  f.rows.resize(6, 1);
  f.rows << 0, 1, 2, 10, 11, 12;
  const std::vector<int> labels{0, 0, 0, 1, 1, 1};
  EXPECT_NEAR(silhouette(f, labels), silhouette_oracle(f.rows, labels), 1e-12);
  // point 0: a = 1.5, b = 11
  EXPECT_GT(silhouette(f, labels), 0.8);
}

TEST(Silhouette, RandomMatchesOracleWithSingleton) {
  FeatureSet f = gaussian_set(50, 3, 0.0, 7);
  std::vector<int> labels(50);
  for (int i = 0; i < 50; ++i) labels[i] = i % 3;
  labels[49] = 9;  // singleton contributes 0
  EXPECT_NEAR(silhouette(f, labels), silhouette_oracle(f.rows, labels), 1e-12);
  EXPECT_THROW(silhouette(f, std::vector<int>(50, 1)), std::invalid_argument);
  EXPECT_THROW(silhouette(f, std::vector<int>(3, 1)), std::invalid_argument);
}

TEST(Report, AggregatesAndInfiniteSentinel) {
  MetricsReport r;
  r.rows = {{"a", 20.0, 0.5, 10.0, 1.0}, {"b", 30.0, 0.7, 20.0, 3.0}};
  EXPECT_DOUBLE_EQ(r.mean_psnr(), 25.0);
  EXPECT_DOUBLE_EQ(r.mean_ssim(), 0.6);
  EXPECT_DOUBLE_EQ(r.mean_deg(), 15.0);
  EXPECT_DOUBLE_EQ(r.mean_lmd(), 2.0);
  EXPECT_EQ(r.csv(), "id,psnr,ssim,deg,lmd\na,20.000000,0.500000,10.000000,1.000000\n"
                     "b,30.000000,0.700000,20.000000,3.000000\n");
  r.rows[1].psnr = std::numeric_limits<double>::infinity();
  EXPECT_TRUE(std::isinf(r.mean_psnr()));
  const auto j = nlohmann::json::parse(r.summary_json());
  EXPECT_EQ(j["psnr"], "inf");
  EXPECT_EQ(j["rows"], 2);
}
