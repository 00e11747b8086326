// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lafr/codec/codec.hpp"
#include "lafr/nn/adam.hpp"
#include "lafr/nn/sequential.hpp"

namespace lafr::adapter {

using codec::LatentCode;

/// K x d dictionary of anchors with a per-entry query histogram.
class Codebook {
 public:
  Codebook(int size, int dim);
  /// Entries drawn from N(0, 1) / sqrt(dim).
  static Codebook random(int size, int dim, Rng& rng);

  int size() const { return size_; }
  int dim() const { return dim_; }
  std::span<const float> entry(int k) const {
    return {entries_.value.data() + static_cast<std::size_t>(k) * dim_, static_cast<std::size_t>(dim_)};
  }

  nn::Parameter<float>& entries() { return entries_; }
  const nn::Parameter<float>& entries() const { return entries_; }

  const std::vector<std::uint64_t>& usage_counts() const { return usage_; }
  void record_use(int k) { ++usage_[static_cast<std::size_t>(k)]; }
  void reset_usage() { std::fill(usage_.begin(), usage_.end(), 0); }
  std::uint64_t total_queries() const;
  /// Fraction of entries with a non-zero usage count.
  double utilization() const;

 private:
  int size_;
  int dim_;
  nn::Parameter<float> entries_;
  std::vector<std::uint64_t> usage_;
};

struct NearestCode {
  int index = -1;
  std::vector<float> entry;
  double distance_sq = 0.0;
};

/// Exact squared-Euclidean argmin over all entries; ties go to the lowest
/// index. Does not touch usage counts.
int find_nearest(std::span<const float> f, const Codebook& codebook, double* distance_sq = nullptr);

/// find_nearest plus a usage_counts increment for the selected entry.
NearestCode nearest_code(std::span<const float> f, Codebook& codebook);

struct QuantizedMap {
  nn::TensorF quantized;     // d x H x W, every column a codebook row
  std::vector<int> indices;  // H * W, row-major
};

/// Per-position nearest-entry replacement. Candidates are screened with a
/// GEMM distance expansion and resolved with the exact scan, so indices equal
/// find_nearest at every position. Counts usage when `count_usage` is set.
QuantizedMap quantize_map(const nn::TensorF& features, const Codebook& codebook);
QuantizedMap quantize_map(const nn::TensorF& features, Codebook& codebook, bool count_usage);

/// Mean |z_aligned - z_hq| + beta * mean (features - sg(quantized))^2.
/// When `grad_aligned` / `grad_features` are given they receive the partial
/// gradients w.r.t. z_aligned and (via the commitment term) the features.
template <typename T>
double alignment_loss(const nn::Tensor<T>& z_aligned, const nn::Tensor<T>& z_hq, const nn::Tensor<T>& features,
                      const nn::Tensor<T>& quantized, double beta, nn::Tensor<T>* grad_aligned = nullptr,
                      nn::Tensor<T>* grad_features = nullptr) {
  z_aligned.require_same_shape(z_hq, "alignment_loss(z_aligned, z_hq)");
  features.require_same_shape(quantized, "alignment_loss(features, quantized)");
  if (beta < 0.0) throw std::invalid_argument("commitment weight must be >= 0");
  const double n_latent = static_cast<double>(z_aligned.size());
  const double n_feat = static_cast<double>(features.size());
  double l1 = 0.0;
  if (grad_aligned) *grad_aligned = nn::Tensor<T>(z_aligned.shape());
  for (std::size_t i = 0; i < z_aligned.size(); ++i) {
    const double d = static_cast<double>(z_aligned[i]) - static_cast<double>(z_hq[i]);
    l1 += std::abs(d);
    if (grad_aligned) (*grad_aligned)[i] = static_cast<T>((d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n_latent);
  }
  double commit = 0.0;
  if (grad_features) *grad_features = nn::Tensor<T>(features.shape());
  if (beta > 0.0 && n_feat > 0) {
    for (std::size_t i = 0; i < features.size(); ++i) {
      const double d = static_cast<double>(features[i]) - static_cast<double>(quantized[i]);
      commit += d * d;
      if (grad_features) (*grad_features)[i] = static_cast<T>(2.0 * beta * d / n_feat);
    }
    commit /= n_feat;
  }
  return l1 / n_latent + beta * commit;
}

struct AdapterConfig {
  int latent_channels = 4;
  int codebook_size = 256;
  int code_dim = 64;
  int hidden = 64;
  int kernel_size = 3;  // odd, shared by every adapter conv
  int feature_upsample = 1;  // feature grid is this many times finer than the latent grid
  double beta = 0.25;
  double codebook_weight = 0.0;  // pull of selected entries toward sg(features)
  std::uint64_t seed = 0;
};

/// Feature extractor -> per-position codebook matching -> mapping network.
class AlignmentAdapter {
 public:
  explicit AlignmentAdapter(const AdapterConfig& config);

  const AdapterConfig& config() const { return config_; }
  double beta() const { return config_.beta; }

  nn::TensorF extract_features(const LatentCode& z) const;
  LatentCode map_to_latent(const nn::TensorF& quantized) const;
  /// Read-only inference path; usage counts are untouched.
  LatentCode align(const LatentCode& z_lq) const;

  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }
  nn::Sequential<float>& extractor() { return extractor_; }
  nn::Sequential<float>& mapping() { return mapping_; }
  const nn::Sequential<float>& mapping() const { return mapping_; }

  /// One training-mode pass, kept for the backward step.
  struct Trace {
    nn::Sequential<float>::Trace extractor;
    QuantizedMap quantized;
    nn::Sequential<float>::Trace mapping;
    const LatentCode& aligned() const { return mapping.output(); }
    const nn::TensorF& features() const { return extractor.output(); }
  };
  Trace forward_trace(const LatentCode& z_lq, bool count_usage);

  struct Backward {
    nn::TensorF grad_quantized;
    nn::TensorF grad_features;
  };
  /// Accumulates parameter gradients. The quantized-map gradient reaches the
  /// selected codebook rows and, straight through, the features, to which the
  /// commitment gradient is added.
  Backward backward(const Trace& trace, const LatentCode& grad_aligned, const nn::TensorF& grad_commitment);

  std::vector<nn::Parameter<float>*> parameters();
  std::vector<const nn::Parameter<float>*> parameters() const;
  std::uint64_t checksum() const { return nn::checksum(parameters()); }
  void set_trainable(bool on);

 private:
  void check_latent(const LatentCode& z) const;

  AdapterConfig config_;
  nn::Sequential<float> extractor_;
  Codebook codebook_;
  nn::Sequential<float> mapping_;
};

struct LatentPair {
  LatentCode lq;
  LatentCode hq;
};

struct Stage1Schedule {
  double learning_rate = 1e-4;
  int batch_size = 16;
  int epochs = 100;
  double lr_floor_fraction = 1.0;  // cosine decay target; 1 keeps the rate constant
  std::uint64_t seed = 0;
  nn::AdamMoments moments;
  void validate() const;
};

struct Stage1Result {
  std::vector<double> loss_trace;  // mean alignment loss per epoch
};

/// Mean over pairs of mean |align(lq) - hq|.
double mean_alignment_gap(const AlignmentAdapter& adapter, const std::vector<LatentPair>& pairs);
/// Mean over pairs of mean |lq - hq|.
double mean_latent_gap(const std::vector<LatentPair>& pairs);

/// Adam on adapter parameters only. Usage counts are reset at the start and
/// accumulate over every training query. Throws codec::TrainingFailure on a
/// non-finite epoch loss.
Stage1Result train_stage1(AlignmentAdapter& adapter, const std::vector<LatentPair>& pairs,
                          const Stage1Schedule& schedule,
                          const std::function<void(int, double)>& on_epoch = {});

}  // namespace lafr::adapter
