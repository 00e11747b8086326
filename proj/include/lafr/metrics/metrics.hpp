// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lafr/data/image.hpp"
#include "lafr/data/toy_faces.hpp"

namespace lafr::metrics {

/// n x m embedding matrix with a source label.
struct FeatureSet {
  Eigen::MatrixXd rows;
  std::string source;
  Eigen::Index size() const { return rows.rows(); }
};

/// 10 log10(1 / MSE); +infinity when the images are identical.
double psnr(const Image& a, const Image& b);
/// "inf" for the infinite sentinel, otherwise fixed 6-decimal text.
std::string format_psnr(double db);
/// Inverse of format_psnr.
double parse_psnr(const std::string& text);

/// Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5), averaged
/// over channels. K1 = 0.01, K2 = 0.03, dynamic range 1.
double ssim(const Image& a, const Image& b);

/// Frechet distance between Gaussian fits of two feature sets.
double fid(const FeatureSet& a, const FeatureSet& b);

/// Angle between two embeddings in degrees.
double identity_degree(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Mean Euclidean distance between corresponding points.
double landmark_distance(const Landmarks& a, const Landmarks& b);

/// Mean pairwise Euclidean distance over unordered pairs.
double intra_class_distance(const FeatureSet& f);

/// Mean silhouette coefficient; singleton classes contribute 0.
double silhouette(const FeatureSet& f, const std::vector<int>& labels);

/// Locates each reference landmark in `restored` by maximizing normalized
/// cross-correlation of a grayscale patch taken around the same point in
/// `reference`, searching a small window. Coordinates stay in bounds.
Landmarks locate_landmarks(const Image& restored, const Image& reference, const Landmarks& reference_points,
                           int patch_radius = 4, int search_radius = 4);

struct MetricsRow {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
  double deg = 0.0;
  double lmd = 0.0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  double fid = 0.0;
  std::size_t restored_count = 0;
  std::size_t reference_count = 0;

  double mean_psnr() const;  // infinity if any row is infinite
  double mean_ssim() const;
  double mean_deg() const;
  double mean_lmd() const;

  std::string csv() const;
  std::string summary_json() const;
};

}  // namespace lafr::metrics
