// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lafr/data/image.hpp"
#include "lafr/nn/sequential.hpp"

namespace lafr::losses {

using ImageTensor = nn::TensorD;  // C x H x W, values nominally in [0, 1]

/// Fixed, randomly initialized conv stack (3x3 convs, strides 1/2/2, tanh).
/// Parameters are frozen; backward only propagates to the input.
class FeatureStack {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5eed0f00d;

  explicit FeatureStack(int image_channels = 3, std::uint64_t seed = kDefaultSeed);

  int image_channels() const { return channels_; }
  int depth() const { return 3; }

  /// Activations after each tanh, shallow to deep.
  std::vector<ImageTensor> features(const ImageTensor& x) const;
  /// Input gradient given per-tap gradients (empty tensors count as zero).
  ImageTensor backward(const ImageTensor& x, const std::vector<ImageTensor>& grad_taps) const;

 private:
  int channels_;
  mutable nn::Sequential<double> net_;  // frozen: backward only reads weights
};

/// Image -> unit-norm n-vector.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string name() const = 0;

  Eigen::VectorXd embed(const ImageTensor& x) const;
  Eigen::VectorXd embed(const Image& img) const { return embed(to_tensor<double>(img)); }
  /// Gradient of <grad_embedding, embed(x)> w.r.t. x.
  ImageTensor embed_backward(const ImageTensor& x, const Eigen::VectorXd& grad_embedding) const;

 protected:
  /// Unnormalized embedding and its input gradient.
  virtual Eigen::VectorXd raw(const ImageTensor& x) const = 0;
  virtual ImageTensor raw_backward(const ImageTensor& x, const Eigen::VectorXd& grad_raw) const = 0;
};

/// Global-average-pooled deepest FeatureStack activations.
class IdentityProvider final : public EmbeddingProvider {
 public:
  explicit IdentityProvider(const FeatureStack& stack) : stack_(stack) {}
  std::string name() const override { return "identity"; }

 protected:
  Eigen::VectorXd raw(const ImageTensor& x) const override;
  ImageTensor raw_backward(const ImageTensor& x, const Eigen::VectorXd& grad_raw) const override;

 private:
  const FeatureStack& stack_;
};

/// Deepest FeatureStack activations flattened without pooling, so the
/// embedding keeps spatial layout. Used for corpus compactness statistics.
class LayoutProvider final : public EmbeddingProvider {
 public:
  explicit LayoutProvider(const FeatureStack& stack) : stack_(stack) {}
  std::string name() const override { return "layout"; }

 protected:
  Eigen::VectorXd raw(const ImageTensor& x) const override;
  ImageTensor raw_backward(const ImageTensor& x, const Eigen::VectorXd& grad_raw) const override;

 private:
  const FeatureStack& stack_;
};

/// Edge-orientation histogram: squared rectified responses of the grayscale
/// gradient along 8 directions, summed over a 4x4 cell grid, plus a small
/// floor per bin. Images must be at least 4x4.
class StructureProvider final : public EmbeddingProvider {
 public:
  static constexpr int kBins = 8;
  static constexpr int kCells = 4;
  static constexpr double kFloor = 1e-6;

  std::string name() const override { return "structure"; }

 protected:
  Eigen::VectorXd raw(const ImageTensor& x) const override;
  ImageTensor raw_backward(const ImageTensor& x, const Eigen::VectorXd& grad_raw) const override;
};

struct LossWeights {
  double lambda_lpips = 2.0;
  double lambda_res = 1.0;
  double lambda_id = 1.0;
  double lambda_fs = 1.0;
  void validate() const;
};

enum class EmbeddingDistance { kCosine, kSquaredL2 };

/// 1 - cos(u, v), clamped to [0, 2]. Throws on a zero vector.
double cosine_distance(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

/// Mean over positions of squared differences of channel-normalized
/// features, summed over the stack's taps.
double perceptual_distance(const ImageTensor& a, const ImageTensor& b, const FeatureStack& stack,
                           ImageTensor* grad_a = nullptr);
double perceptual_distance(const Image& a, const Image& b, const FeatureStack& stack);

/// Mean squared pixel error.
double mse(const ImageTensor& a, const ImageTensor& b, ImageTensor* grad_a = nullptr);

/// MSE + lambda_lpips * perceptual_distance.
double reconstruction_loss(const ImageTensor& res, const ImageTensor& gt, const LossWeights& weights,
                           const FeatureStack& stack, ImageTensor* grad_res = nullptr);
double reconstruction_loss(const Image& res, const Image& gt, const LossWeights& weights, const FeatureStack& stack);

/// Cosine (default) or squared-L2 distance between provider embeddings.
double embedding_loss(const ImageTensor& res, const ImageTensor& gt, const EmbeddingProvider& provider,
                      EmbeddingDistance kind, ImageTensor* grad_res = nullptr);

double identity_loss(const Image& res, const Image& gt, const EmbeddingProvider& id_provider,
                     EmbeddingDistance kind = EmbeddingDistance::kCosine);
double structure_loss(const Image& res, const Image& gt, const EmbeddingProvider& fs_provider,
                      EmbeddingDistance kind = EmbeddingDistance::kCosine);

struct LossProviders {
  const FeatureStack& stack;
  const EmbeddingProvider& identity;
  const EmbeddingProvider& structure;
  EmbeddingDistance identity_kind = EmbeddingDistance::kCosine;
  EmbeddingDistance structure_kind = EmbeddingDistance::kCosine;
};

struct LossBreakdown {
  double reconstruction = 0.0;  // unweighted L_res (already includes lambda_lpips)
  double identity = 0.0;
  double structure = 0.0;
  double total = 0.0;
};

/// lambda_res * L_res + lambda_id * L_id + lambda_fs * L_fs. Terms with a
/// zero weight are still reported but not differentiated.
LossBreakdown total_loss(const ImageTensor& res, const ImageTensor& gt, const LossWeights& weights,
                         const LossProviders& providers, ImageTensor* grad_res = nullptr);
LossBreakdown total_loss(const Image& res, const Image& gt, const LossWeights& weights,
                         const LossProviders& providers);

}  // namespace lafr::losses
