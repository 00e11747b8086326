// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "lafr/data/image.hpp"
#include "lafr/nn/adam.hpp"
#include "lafr/nn/sequential.hpp"

namespace lafr::codec {

/// C_z x H/stride x W/stride latent map.
using LatentCode = nn::TensorF;

struct CodecConfig {
  int image_channels = 3;
  int latent_channels = 4;
  int stride = 4;                        // power of two >= 2
  std::vector<int> hidden_widths = {24, 48};  // one per 2x downsampling stage
  double learning_rate = 1.2e-3;
  int batch_size = 2;
  int epochs = 10;
  std::uint64_t seed = 0;
  double max_final_loss = 3e-3;  // mean pixel MSE of the last epoch
  nn::AdamMoments moments;

  void validate() const;
};

/// Raised when training diverges or ends above the loss threshold.
class TrainingFailure : public std::runtime_error {
 public:
  TrainingFailure(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

/// Deterministic (non-variational) convolutional autoencoder. Latents are
/// normalized per channel with statistics frozen at the end of training.
class Codec {
 public:
  explicit Codec(const CodecConfig& config);

  const CodecConfig& config() const { return config_; }
  nn::Shape latent_shape(int height, int width) const;

  LatentCode encode(const Image& img) const;
  Image decode(const LatentCode& z) const;

  /// Differentiable paths used by training: images as C x H x W tensors,
  /// decoder output unclipped.
  LatentCode encode_tensor(const nn::TensorF& x) const;
  nn::TensorF decode_tensor(const LatentCode& z) const;

  struct DecodeTrace {
    nn::Sequential<float>::Trace trace;
  };
  DecodeTrace decode_trace(const LatentCode& z) const;
  /// Gradient w.r.t. the latent given a gradient on the unclipped decoder output.
  /// Never touches parameter values; parameter gradients are not accumulated.
  LatentCode decode_backward(const DecodeTrace& trace, const nn::TensorF& grad_output) const;

  nn::Sequential<float>& encoder() { return encoder_; }
  nn::Sequential<float>& decoder() { return decoder_; }

  std::vector<nn::Parameter<float>*> parameters();
  std::vector<const nn::Parameter<float>*> parameters() const;
  std::uint64_t checksum() const { return nn::checksum(parameters()); }

  /// Sets the latent normalization from raw encoder outputs.
  void fit_latent_statistics(const std::vector<LatentCode>& raw_latents);

 private:
  void check_image_shape(int channels, int height, int width) const;

  CodecConfig config_;
  nn::Sequential<float> encoder_;
  mutable nn::Sequential<float> decoder_;  // backward with frozen params only reads values
  nn::Parameter<float> latent_mean_;
  nn::Parameter<float> latent_std_;
};

struct CodecTrainingResult {
  std::vector<double> loss_trace;  // mean MSE per epoch
};

using EpochCallback = std::function<void(int epoch, double loss)>;

/// Trains codec parameters on HQ images (>= 64) by pixel MSE, then fits the
/// latent statistics. Deterministic under config.seed.
CodecTrainingResult train_toy_codec(Codec& codec, const std::vector<Image>& hq_images,
                                    const EpochCallback& on_epoch = {});

}  // namespace lafr::codec
