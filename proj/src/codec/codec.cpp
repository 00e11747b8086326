// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include "lafr/codec/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lafr/nn/adam.hpp"

namespace lafr::codec {

using nn::ActivationKind;
using nn::Activation;
using nn::Conv2d;
using nn::DepthToSpace;
using nn::SpaceToDepth;

void CodecConfig::validate() const {
  if (stride < 2 || (stride & (stride - 1)) != 0) {
    throw std::invalid_argument("codec stride must be a power of two >= 2, got " + std::to_string(stride));
  }
  int stages = 0;
  for (int s = stride; s > 1; s >>= 1) ++stages;
  if (static_cast<int>(hidden_widths.size()) != stages) {
    throw std::invalid_argument("codec needs one hidden width per downsampling stage (" + std::to_string(stages) +
                                "), got " + std::to_string(hidden_widths.size()));
  }
  if (latent_channels < 1 || image_channels < 1) throw std::invalid_argument("codec channel counts must be >= 1");
  if (batch_size < 1 || epochs < 0 || learning_rate <= 0.0) throw std::invalid_argument("invalid codec schedule");
}

Codec::Codec(const CodecConfig& config)
    : config_(config),
      latent_mean_("latent.mean", {config.latent_channels}),
      latent_std_("latent.std", {config.latent_channels}) {
  config_.validate();
  latent_mean_.trainable = false;
  latent_std_.trainable = false;
  std::fill(latent_std_.value.begin(), latent_std_.value.end(), 1.0f);

  Rng rng = make_rng(config_.seed, "codec.init");
  const auto& widths = config_.hidden_widths;
  const double act_gain = std::sqrt(2.0);

  int channels = config_.image_channels;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string p = "enc.down" + std::to_string(i);
    encoder_.add<SpaceToDepth<float>>(p + ".pack", 2);
    encoder_.add<Conv2d<float>>(p + ".conv1", channels * 4, widths[i], 3, 1, rng, act_gain);
    encoder_.add<Activation<float>>(p + ".act1", ActivationKind::kSilu);
    encoder_.add<Conv2d<float>>(p + ".conv2", widths[i], widths[i], 3, 1, rng, act_gain);
    encoder_.add<Activation<float>>(p + ".act2", ActivationKind::kSilu);
    channels = widths[i];
  }
  encoder_.add<Conv2d<float>>("enc.conv_out", channels, config_.latent_channels, 3, 1, rng);

  decoder_.add<Conv2d<float>>("dec.conv_in", config_.latent_channels, widths.back(), 3, 1, rng);
  decoder_.add<Activation<float>>("dec.act_in", ActivationKind::kSilu);
  for (std::size_t i = widths.size(); i-- > 0;) {
    const std::string p = "dec.up" + std::to_string(i);
    const int out = i == 0 ? config_.image_channels : widths[i - 1];
    decoder_.add<Conv2d<float>>(p + ".conv1", widths[i], widths[i], 3, 1, rng, act_gain);
    decoder_.add<Activation<float>>(p + ".act1", ActivationKind::kSilu);
    decoder_.add<Conv2d<float>>(p + ".conv2", widths[i], out * 4, 3, 1, rng, i == 0 ? 0.5 : act_gain);
    if (i != 0) decoder_.add<Activation<float>>(p + ".act2", ActivationKind::kSilu);
    decoder_.add<DepthToSpace<float>>(p + ".unpack", 2);
  }
  for (auto* p : parameters()) p->trainable = false;
}

nn::Shape Codec::latent_shape(int height, int width) const {
  return {config_.latent_channels, height / config_.stride, width / config_.stride};
}

void Codec::check_image_shape(int channels, int height, int width) const {
  if (channels != config_.image_channels || height % config_.stride != 0 || width % config_.stride != 0 ||
      height < config_.stride || width < config_.stride) {
    throw nn::ShapeError("codec expects " + std::to_string(config_.image_channels) + "-channel images with sides "
                         "divisible by " + std::to_string(config_.stride) + ", got " + std::to_string(height) + "x" +
                         std::to_string(width) + "x" + std::to_string(channels));
  }
}

LatentCode Codec::encode_tensor(const nn::TensorF& x) const {
  check_image_shape(x.channels(), x.height(), x.width());
  LatentCode z = encoder_.forward(x);
  auto m = z.matrix();
  for (int c = 0; c < config_.latent_channels; ++c) {
    m.row(c).array() = (m.row(c).array() - latent_mean_.value[c]) / latent_std_.value[c];
  }
  return z;
}

LatentCode Codec::encode(const Image& img) const { return encode_tensor(to_tensor<float>(img)); }

namespace {

LatentCode denormalize(const LatentCode& z, const nn::Parameter<float>& mean, const nn::Parameter<float>& stddev) {
  LatentCode raw = z;
  auto m = raw.matrix();
  for (int c = 0; c < raw.channels(); ++c) m.row(c).array() = m.row(c).array() * stddev.value[c] + mean.value[c];
  return raw;
}

}  // namespace

nn::TensorF Codec::decode_tensor(const LatentCode& z) const {
  if (z.channels() != config_.latent_channels || z.height() < 1 || z.width() < 1) {
    throw nn::ShapeError("codec decode expects " + std::to_string(config_.latent_channels) + " latent channels, got " +
                         z.shape().str());
  }
  return decoder_.forward(denormalize(z, latent_mean_, latent_std_));
}

Image Codec::decode(const LatentCode& z) const { return to_image(decode_tensor(z)); }

Codec::DecodeTrace Codec::decode_trace(const LatentCode& z) const {
  if (z.channels() != config_.latent_channels) {
    throw nn::ShapeError("codec decode expects " + std::to_string(config_.latent_channels) + " latent channels, got " +
                         z.shape().str());
  }
  return {decoder_.trace(denormalize(z, latent_mean_, latent_std_))};
}

LatentCode Codec::decode_backward(const DecodeTrace& trace, const nn::TensorF& grad_output) const {
  for (const auto* p : decoder_.parameters()) {
    if (p->trainable) throw std::logic_error("decode_backward requires a frozen codec");
  }
  LatentCode g = decoder_.backward(trace.trace, grad_output, true);
  auto m = g.matrix();
  for (int c = 0; c < g.channels(); ++c) m.row(c) *= latent_std_.value[c];
  return g;
}

std::vector<nn::Parameter<float>*> Codec::parameters() {
  auto out = encoder_.parameters();
  for (auto* p : decoder_.parameters()) out.push_back(p);
  out.push_back(&latent_mean_);
  out.push_back(&latent_std_);
  return out;
}

std::vector<const nn::Parameter<float>*> Codec::parameters() const {
  auto out = encoder_.parameters();
  for (const auto* p : std::as_const(decoder_).parameters()) out.push_back(p);
  out.push_back(&latent_mean_);
  out.push_back(&latent_std_);
  return out;
}

void Codec::fit_latent_statistics(const std::vector<LatentCode>& raw_latents) {
  if (raw_latents.empty()) throw std::invalid_argument("fit_latent_statistics: no latents");
  for (int c = 0; c < config_.latent_channels; ++c) {
    double sum = 0.0;
    double sq = 0.0;
    double n = 0.0;
    for (const auto& z : raw_latents) {
      const auto row = z.matrix().row(c);
      for (Eigen::Index i = 0; i < row.size(); ++i) {
        sum += row[i];
        sq += static_cast<double>(row[i]) * row[i];
      }
      n += static_cast<double>(row.size());
    }
    const double mean = sum / n;
    const double var = std::max(sq / n - mean * mean, 1e-12);
    latent_mean_.value[c] = static_cast<float>(mean);
    latent_std_.value[c] = static_cast<float>(std::sqrt(var));
  }
}

CodecTrainingResult train_toy_codec(Codec& codec, const std::vector<Image>& hq_images, const EpochCallback& on_epoch) {
  const CodecConfig& cfg = codec.config();
  if (hq_images.size() < 64) {
    throw std::invalid_argument("codec training needs at least 64 images, got " + std::to_string(hq_images.size()));
  }
  std::vector<nn::TensorF> inputs;
  inputs.reserve(hq_images.size());
  for (const auto& img : hq_images) inputs.push_back(to_tensor<float>(img));

  auto params = codec.parameters();
  for (auto* p : params) p->trainable = p->name.rfind("latent.", 0) != 0;
  nn::Adam<float> adam(params, nn::AdamSettings::with(cfg.learning_rate, cfg.moments));
  Rng order_rng = make_rng(cfg.seed, "codec.batch-order");

  CodecTrainingResult result;
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  const long steps_per_epoch = static_cast<long>((inputs.size() + cfg.batch_size - 1) / cfg.batch_size);
  const long total_steps = steps_per_epoch * cfg.epochs;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(order_rng, 0, static_cast<std::int64_t>(i - 1)))]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t k = start; k < end; ++k) {
        const nn::TensorF& x = inputs[order[k]];
        const auto enc = codec.encoder().trace(x);
        const auto dec = codec.decoder().trace(enc.output());
        const nn::TensorF& y = dec.output();
        nn::TensorF grad(y.shape());
        double loss = 0.0;
        const float scale = 2.0f / static_cast<float>(y.size());
        for (std::size_t j = 0; j < y.size(); ++j) {
          const float d = y[j] - x[j];
          loss += static_cast<double>(d) * d;
          grad[j] = scale * d;
        }
        epoch_loss += loss / static_cast<double>(y.size());
        const nn::TensorF dz = codec.decoder().backward(dec, grad, true);
        codec.encoder().backward(enc, dz, false);
      }
      adam.set_learning_rate(nn::cosine_learning_rate(cfg.learning_rate, adam.steps(), total_steps, 0.05));
      adam.step(1.0 / static_cast<double>(end - start));
    }
    epoch_loss /= static_cast<double>(order.size());
    result.loss_trace.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
    if (!std::isfinite(epoch_loss)) {
      throw TrainingFailure("codec training diverged at epoch " + std::to_string(epoch), result.loss_trace);
    }
  }
  for (auto* p : params) p->trainable = false;
  if (!result.loss_trace.empty() && result.loss_trace.back() > cfg.max_final_loss) {
    throw TrainingFailure("codec training did not converge: final loss " + std::to_string(result.loss_trace.back()) +
                              " > " + std::to_string(cfg.max_final_loss),
                          result.loss_trace);
  }
  std::vector<LatentCode> raw;
  raw.reserve(inputs.size());
  for (const auto& x : inputs) raw.push_back(codec.encoder().forward(x));
  codec.fit_latent_statistics(raw);
  return result;
}

}  // namespace lafr::codec
