// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lafr/adapter/alignment.hpp"
#include "lafr/codec/codec.hpp"
#include "lafr/losses/losses.hpp"
#include "lafr/nn/adam.hpp"
#include "lafr/nn/layers.hpp"

namespace lafr::finetune {

using codec::LatentCode;

inline constexpr const char* kDefaultPrompt = "face, high quality";

struct RestorerConfig {
  int latent_channels = 4;
  int width = 32;
  int cond_dim = 32;
  int vocab = 64;      // hashed token buckets
  int token_dim = 16;
  std::uint64_t seed = 0;
  void validate() const;
};

/// Prompt and timestep embeddings frozen into plain arrays.
struct PrecomputedConditioning {
  std::string prompt_text;
  std::vector<float> prompt_embedding;
  std::vector<float> timestep_embedding;
  std::uint64_t checksum = 0;

  static std::uint64_t compute_checksum(const std::string& prompt, const std::vector<float>& prompt_embedding,
                                        const std::vector<float>& timestep_embedding);
  bool valid() const { return checksum == compute_checksum(prompt_text, prompt_embedding, timestep_embedding); }
};

/// Lowercased alphanumeric runs of `prompt`.
std::vector<std::string> tokenize(const std::string& prompt);

/// One-step latent restorer: conv_in, two residual blocks (each conv1,
/// conditioning bias, conv2, then self-attention), conv_out, and a global
/// skip from the input latent. Conditioning is a prompt embedding (hashed
/// token table, mean-pooled, projected) plus a learned constant timestep
/// embedding passed through a small MLP.
class Restorer {
 public:
  explicit Restorer(const RestorerConfig& config);
  Restorer(Restorer&&) noexcept = default;

  const RestorerConfig& config() const { return config_; }
  const std::string& prompt() const { return prompt_; }
  void set_prompt(std::string prompt);

  /// Every named layer, in forward order; the embedding modules last while
  /// they are still present.
  std::vector<std::string> layer_names() const;
  /// Layers that carry a kernel and can host a low-rank adapter.
  std::vector<std::string> adaptable_layer_names() const;
  nn::Conv2d<float>& kernel_layer(const std::string& name);
  const nn::Conv2d<float>& kernel_layer(const std::string& name) const;
  /// Parameters of a named layer (any kind), LoRA parameters included.
  std::vector<nn::Parameter<float>*> layer_parameters(const std::string& name);

  bool pruned() const { return !text_encoder_.has_value(); }
  /// Runs the live embedding modules once. Throws if already pruned.
  PrecomputedConditioning precompute_conditioning(const std::string& prompt) const;
  /// Drops the embedding modules and serves `conditioning` instead.
  void prune(const PrecomputedConditioning& conditioning);
  const std::optional<PrecomputedConditioning>& conditioning() const { return conditioning_; }

  LatentCode forward(const LatentCode& z) const;

  struct Trace;
  Trace trace(const LatentCode& z) const;
  /// Accumulates gradients into trainable parameters only.
  void backward(const Trace& t, const LatentCode& grad_output);

  std::vector<nn::Parameter<float>*> parameters();
  std::vector<const nn::Parameter<float>*> parameters() const;
  /// Parameters excluding LoRA factors.
  std::vector<const nn::Parameter<float>*> base_parameters() const;
  std::vector<nn::Parameter<float>*> lora_parameters();
  std::vector<const nn::Parameter<float>*> lora_parameters() const;

  std::size_t parameter_count() const { return nn::count_values(parameters()); }
  std::size_t trainable_parameter_count() const;
  std::uint64_t base_checksum() const { return nn::checksum(base_parameters()); }
  std::uint64_t lora_checksum() const { return nn::checksum(lora_parameters()); }

 private:
  struct Block {
    std::unique_ptr<nn::Conv2d<float>> conv1;
    std::unique_ptr<nn::Conv2d<float>> conv2;
    nn::Parameter<float> cond_weight;  // width x cond_dim
    nn::Parameter<float> cond_bias;
    std::unique_ptr<nn::SelfAttention<float>> attn;
    std::string name;
    std::string attn_name;
  };
  struct TextEncoder {
    nn::Parameter<float> table;       // vocab x token_dim
    nn::Parameter<float> projection;  // cond_dim x token_dim
    nn::Parameter<float> bias;
  };
  struct TimeEmbedding {
    nn::Parameter<float> constant;  // cond_dim
    nn::Parameter<float> weight;    // cond_dim x cond_dim
    nn::Parameter<float> bias;
  };

  std::vector<float> text_embedding(const std::string& prompt) const;
  std::vector<float> time_embedding() const;
  std::vector<float> conditioning_vector() const;
  void check_latent(const LatentCode& z) const;

  RestorerConfig config_;
  std::string prompt_ = kDefaultPrompt;
  std::unique_ptr<nn::Conv2d<float>> conv_in_;
  std::vector<Block> blocks_;
  std::unique_ptr<nn::Conv2d<float>> conv_out_;
  std::optional<TextEncoder> text_encoder_;
  std::optional<TimeEmbedding> time_embed_;
  std::optional<PrecomputedConditioning> conditioning_;
};

struct Restorer::Trace {
  LatentCode z;
  std::vector<float> cond;
  nn::TensorF h0;
  struct BlockTrace {
    nn::TensorF h_in, a, u, v, w, h_mid, h_out;
  };
  std::vector<BlockTrace> blocks;
  nn::TensorF s;
  nn::TensorF o;
  LatentCode y;
};

struct ParamSelector {
  std::string name_substring = "conv";
};

/// Marks every parameter of the layers whose names contain the substring as
/// trainable and freezes everything else. Throws when nothing matches.
std::vector<std::string> select_trainable(Restorer& model, const ParamSelector& selector);

/// Attaches a rank-`rank` adapter to one kernel layer, A drawn from a stream
/// derived from (seed, layer name).
nn::LoraAdapter<float>& attach_lora(Restorer& model, const std::string& layer, int rank, double alpha,
                                    std::uint64_t seed);

/// Freezes the base model and attaches adapters to every selected kernel
/// layer; returns the adapted layer names. Throws when none qualifies.
std::vector<std::string> attach_lora_to_selection(Restorer& model, const ParamSelector& selector, int rank,
                                                  double alpha, std::uint64_t seed);

struct PriorSchedule {
  double learning_rate = 1e-3;
  int batch_size = 8;
  int steps = 1500;
  double max_sigma = 0.5;
  std::uint64_t seed = 0;
  nn::AdamMoments moments;
  void validate() const;
};

struct PriorResult {
  std::vector<double> loss_trace;  // per step
  double clean_mse = 0.0;          // mean |restorer(z) - z|^2 on clean training latents
};

/// Trains every base parameter except the (frozen) text encoder to denoise
/// HQ latents corrupted with N(0, sigma^2), sigma ~ U[0, max_sigma].
PriorResult pretrain_toy_restorer(Restorer& model, const std::vector<LatentCode>& hq_latents,
                                  const PriorSchedule& schedule,
                                  const std::function<void(int, double)>& on_step = {});

/// Mean squared error of restorer(z) against z.
double clean_latent_mse(const Restorer& model, const std::vector<LatentCode>& latents);

/// Decoded one-step restoration, clipped to [0, 1].
Image restore(const LatentCode& z_aligned, const Restorer& model, const codec::Codec& codec);

struct Stage2Schedule {
  double learning_rate = 5e-5;
  int batch_size = 2;
  int total_steps = 2000;
  std::uint64_t seed = 0;
  nn::AdamMoments moments;
  void validate() const;
};

struct Stage2Example {
  LatentCode input;          // aligned (or raw LQ) latent
  losses::ImageTensor target;  // HQ image
};

/// LQ -> bicubic upsample -> encode -> (align). `adapter` may be null.
LatentCode restorer_input(const Image& lq, int scale_factor, const codec::Codec& codec,
                          const adapter::AlignmentAdapter* adapter);

struct Stage2Log {
  int step = 0;
  losses::LossBreakdown loss;  // batch mean
};

struct FrozenChecksums {
  std::uint64_t restorer_base = 0;
  std::uint64_t codec = 0;
  std::uint64_t adapter = 0;
  bool operator==(const FrozenChecksums&) const = default;
};

struct Stage2Result {
  std::vector<Stage2Log> log;
  FrozenChecksums before;
  FrozenChecksums after;
};

FrozenChecksums frozen_checksums(const Restorer& model, const codec::Codec& codec,
                                 const adapter::AlignmentAdapter* adapter);

/// Adam on the trainable (LoRA) parameters under the total loss. Throws
/// codec::TrainingFailure on a non-finite loss and std::logic_error if a
/// frozen checksum moves.
Stage2Result train_stage2(Restorer& model, const codec::Codec& codec, const adapter::AlignmentAdapter* adapter,
                          const std::vector<Stage2Example>& examples, const losses::LossWeights& weights,
                          const losses::LossProviders& providers, const Stage2Schedule& schedule,
                          const std::function<void(const Stage2Log&)>& on_step = {});

}  // namespace lafr::finetune
