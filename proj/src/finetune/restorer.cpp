// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include "lafr/finetune/restorer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iostream>
#include <numeric>

#include "lafr/data/degradation.hpp"
#include "lafr/nn/adam.hpp"

namespace lafr::finetune {

using nn::Activation;
using nn::ActivationKind;
using nn::Conv2d;
using nn::Parameter;
using nn::TensorF;

namespace {

float silu(float v) { return Activation<float>::apply(ActivationKind::kSilu, v); }
float silu_grad(float x, float y) { return Activation<float>::derivative(ActivationKind::kSilu, x, y); }

TensorF silu(const TensorF& x) {
  TensorF y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = silu(x[i]);
  return y;
}

// dy * silu'(x), elementwise
TensorF silu_backward(const TensorF& x, const TensorF& y, const TensorF& dy) {
  TensorF dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * silu_grad(x[i], y[i]);
  return dx;
}

bool contains(const std::string& s, const std::string& sub) { return s.find(sub) != std::string::npos; }

bool is_lora_name(const std::string& name) {
  return name.ends_with(".lora_a") || name.ends_with(".lora_b");
}

}  // namespace

void RestorerConfig::validate() const {
  if (latent_channels < 1 || width < 1 || cond_dim < 1 || vocab < 1 || token_dim < 1) {
    throw std::invalid_argument("invalid restorer geometry");
  }
}

std::uint64_t PrecomputedConditioning::compute_checksum(const std::string& prompt,
                                                        const std::vector<float>& prompt_embedding,
                                                        const std::vector<float>& timestep_embedding) {
  std::uint64_t h = fnv1a64(prompt, 0xcbf29ce484222325ull);
  for (const auto* v : {&prompt_embedding, &timestep_embedding}) {
    h = fnv1a64(std::to_string(v->size()), h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(v->data()), v->size() * sizeof(float)), h);
  }
  return h;
}

std::vector<std::string> tokenize(const std::string& prompt) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : prompt) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Restorer::Restorer(const RestorerConfig& config) : config_(config) {
  config_.validate();
  Rng rng = make_rng(config_.seed, "restorer.init");
  const int c = config_.latent_channels;
  const int w = config_.width;
  const int cd = config_.cond_dim;
  const double act_gain = std::sqrt(2.0);

  conv_in_ = std::make_unique<Conv2d<float>>("conv_in", c, w, 3, 1, rng);
  for (int b = 1; b <= 2; ++b) {
    Block block;
    block.name = "block" + std::to_string(b);
    block.attn_name = "attn" + std::to_string(b);
    block.conv1 = std::make_unique<Conv2d<float>>(block.name + ".conv1", w, w, 3, 1, rng, act_gain);
    block.cond_weight = Parameter<float>(block.name + ".cond_proj.weight", {w, cd});
    block.cond_bias = Parameter<float>(block.name + ".cond_proj.bias", {w});
    nn::fill_normal(block.cond_weight, rng, 0.5 / std::sqrt(static_cast<double>(cd)));
    block.conv2 = std::make_unique<Conv2d<float>>(block.name + ".conv2", w, w, 3, 1, rng, 0.5);
    block.attn = std::make_unique<nn::SelfAttention<float>>(block.attn_name, w, rng, 0.5);
    blocks_.push_back(std::move(block));
  }
  conv_out_ = std::make_unique<Conv2d<float>>("conv_out", w, c, 3, 1, rng, 0.1);

  TextEncoder text{Parameter<float>("text_encoder.token_table", {config_.vocab, config_.token_dim}),
                   Parameter<float>("text_encoder.projection.weight", {cd, config_.token_dim}),
                   Parameter<float>("text_encoder.projection.bias", {cd})};
  nn::fill_normal(text.table, rng, 1.0);
  nn::fill_normal(text.projection, rng, 1.0 / std::sqrt(static_cast<double>(config_.token_dim)));
  text.table.trainable = text.projection.trainable = text.bias.trainable = false;
  text_encoder_ = std::move(text);

  TimeEmbedding time{Parameter<float>("time_embed.constant", {cd}), Parameter<float>("time_embed.fc.weight", {cd, cd}),
                     Parameter<float>("time_embed.fc.bias", {cd})};
  nn::fill_normal(time.constant, rng, 1.0);
  nn::fill_normal(time.weight, rng, 1.0 / std::sqrt(static_cast<double>(cd)));
  time_embed_ = std::move(time);
}

void Restorer::set_prompt(std::string prompt) {
  if (pruned()) throw std::logic_error("the prompt of a pruned restorer is fixed by its precomputed conditioning");
  prompt_ = std::move(prompt);
}

std::vector<std::string> Restorer::layer_names() const {
  std::vector<std::string> out = {"conv_in"};
  for (const auto& b : blocks_) {
    out.push_back(b.conv1->name());
    out.push_back(b.name + ".cond_proj");
    out.push_back(b.conv2->name());
    out.push_back(b.attn_name);
  }
  out.push_back("conv_out");
  if (text_encoder_) out.push_back("text_encoder");
  if (time_embed_) out.push_back("time_embed");
  return out;
}

std::vector<std::string> Restorer::adaptable_layer_names() const {
  std::vector<std::string> out = {"conv_in"};
  for (const auto& b : blocks_) {
    out.push_back(b.conv1->name());
    out.push_back(b.conv2->name());
    out.push_back(b.attn_name);
  }
  out.push_back("conv_out");
  return out;
}

Conv2d<float>& Restorer::kernel_layer(const std::string& name) {
  return const_cast<Conv2d<float>&>(std::as_const(*this).kernel_layer(name));
}

const Conv2d<float>& Restorer::kernel_layer(const std::string& name) const {
  if (name == "conv_in") return *conv_in_;
  if (name == "conv_out") return *conv_out_;
  for (const auto& b : blocks_) {
    if (name == b.conv1->name()) return *b.conv1;
    if (name == b.conv2->name()) return *b.conv2;
    if (name == b.attn_name) return b.attn->projection();
  }
  throw std::invalid_argument("restorer has no kernel layer named '" + name + "'");
}

std::vector<Parameter<float>*> Restorer::layer_parameters(const std::string& name) {
  std::vector<Parameter<float>*> out;
  for (auto& b : blocks_) {
    if (name == b.name + ".cond_proj") return {&b.cond_weight, &b.cond_bias};
  }
  if (name == "text_encoder" && text_encoder_) {
    return {&text_encoder_->table, &text_encoder_->projection, &text_encoder_->bias};
  }
  if (name == "time_embed" && time_embed_) return {&time_embed_->constant, &time_embed_->weight, &time_embed_->bias};
  kernel_layer(name).collect(out);
  return out;
}

std::vector<float> Restorer::text_embedding(const std::string& prompt) const {
  const auto& t = *text_encoder_;
  const int td = config_.token_dim;
  const int cd = config_.cond_dim;
  std::vector<float> mean(static_cast<std::size_t>(td), 0.0f);
  const auto tokens = tokenize(prompt);
  for (const auto& tok : tokens) {
    const auto row = static_cast<std::size_t>(fnv1a64(tok, 0xcbf29ce484222325ull) % static_cast<std::uint64_t>(config_.vocab));
    for (int j = 0; j < td; ++j) mean[j] += t.table.value[row * td + j];
  }
  if (!tokens.empty()) {
    for (auto& v : mean) v /= static_cast<float>(tokens.size());
  }
  std::vector<float> out(static_cast<std::size_t>(cd));
  for (int i = 0; i < cd; ++i) {
    float acc = t.bias.value[i];
    for (int j = 0; j < td; ++j) acc += t.projection.value[static_cast<std::size_t>(i) * td + j] * mean[j];
    out[i] = std::tanh(acc);
  }
  return out;
}

std::vector<float> Restorer::time_embedding() const {
  const auto& t = *time_embed_;
  const int cd = config_.cond_dim;
  std::vector<float> act(static_cast<std::size_t>(cd));
  for (int j = 0; j < cd; ++j) act[j] = silu(t.constant.value[j]);
  std::vector<float> out(static_cast<std::size_t>(cd));
  for (int i = 0; i < cd; ++i) {
    float acc = t.bias.value[i];
    for (int j = 0; j < cd; ++j) acc += t.weight.value[static_cast<std::size_t>(i) * cd + j] * act[j];
    out[i] = acc;
  }
  return out;
}

PrecomputedConditioning Restorer::precompute_conditioning(const std::string& prompt) const {
  if (pruned()) throw std::logic_error("embedding modules were already pruned");
  PrecomputedConditioning c;
  c.prompt_text = prompt;
  c.prompt_embedding = text_embedding(prompt);
  c.timestep_embedding = time_embedding();
  c.checksum = PrecomputedConditioning::compute_checksum(c.prompt_text, c.prompt_embedding, c.timestep_embedding);
  return c;
}

void Restorer::prune(const PrecomputedConditioning& conditioning) {
  if (!conditioning.valid()) throw std::invalid_argument("precomputed conditioning fails its checksum");
  const auto cd = static_cast<std::size_t>(config_.cond_dim);
  if (conditioning.prompt_embedding.size() != cd || conditioning.timestep_embedding.size() != cd) {
    throw nn::ShapeError("precomputed conditioning has the wrong width");
  }
  conditioning_ = conditioning;
  prompt_ = conditioning.prompt_text;
  text_encoder_.reset();
  time_embed_.reset();
}

std::vector<float> Restorer::conditioning_vector() const {
  std::vector<float> pe;
  std::vector<float> te;
  if (pruned()) {
    pe = conditioning_->prompt_embedding;
    te = conditioning_->timestep_embedding;
  } else {
    pe = text_embedding(prompt_);
    te = time_embedding();
  }
  for (std::size_t i = 0; i < pe.size(); ++i) pe[i] += te[i];
  return pe;
}

void Restorer::check_latent(const LatentCode& z) const {
  if (z.channels() != config_.latent_channels || z.height() < 1 || z.width() < 1) {
    throw nn::ShapeError("restorer expects a " + std::to_string(config_.latent_channels) + "-channel latent, got " +
                         z.shape().str());
  }
}

Restorer::Trace Restorer::trace(const LatentCode& z) const {
  check_latent(z);
  Trace t;
  t.z = z;
  t.cond = conditioning_vector();
  t.h0 = conv_in_->forward(z);
  const int w = config_.width;
  const int cd = config_.cond_dim;
  const TensorF* h = &t.h0;
  t.blocks.reserve(blocks_.size());
  for (const auto& b : blocks_) {
    Trace::BlockTrace bt;
    bt.h_in = *h;
    bt.a = silu(bt.h_in);
    bt.u = b.conv1->forward(bt.a);
    auto um = bt.u.matrix();
    for (int i = 0; i < w; ++i) {
      float bias = b.cond_bias.value[i];
      for (int j = 0; j < cd; ++j) bias += b.cond_weight.value[static_cast<std::size_t>(i) * cd + j] * t.cond[j];
      um.row(i).array() += bias;
    }
    bt.v = silu(bt.u);
    bt.w = b.conv2->forward(bt.v);
    bt.h_mid = bt.h_in;
    bt.h_mid += bt.w;
    bt.h_out = b.attn->forward(bt.h_mid);
    t.blocks.push_back(std::move(bt));
    h = &t.blocks.back().h_out;
  }
  t.s = silu(*h);
  t.o = conv_out_->forward(t.s);
  t.y = z;
  t.y += t.o;
  return t;
}

LatentCode Restorer::forward(const LatentCode& z) const { return trace(z).y; }

void Restorer::backward(const Trace& t, const LatentCode& grad_output) {
  t.y.require_same_shape(grad_output, "restorer backward");
  const int w = config_.width;
  const int cd = config_.cond_dim;
  const TensorF& h_last = t.blocks.empty() ? t.h0 : t.blocks.back().h_out;
  TensorF ds = conv_out_->backward(t.s, t.o, grad_output, true);
  TensorF dh = silu_backward(h_last, t.s, ds);
  std::vector<double> dcond(static_cast<std::size_t>(cd), 0.0);
  for (std::size_t bi = blocks_.size(); bi-- > 0;) {
    auto& b = blocks_[bi];
    const auto& bt = t.blocks[bi];
    TensorF dmid = b.attn->backward(bt.h_mid, bt.h_out, dh, true);
    TensorF dv = b.conv2->backward(bt.v, bt.w, dmid, true);
    TensorF du = silu_backward(bt.u, bt.v, dv);
    const auto dum = du.matrix();
    for (int i = 0; i < w; ++i) {
      const double dbias = dum.row(i).template cast<double>().sum();
      if (b.cond_bias.trainable) b.cond_bias.grad[i] += static_cast<float>(dbias);
      for (int j = 0; j < cd; ++j) {
        const std::size_t k = static_cast<std::size_t>(i) * cd + j;
        if (b.cond_weight.trainable) b.cond_weight.grad[k] += static_cast<float>(dbias * t.cond[j]);
        dcond[j] += dbias * b.cond_weight.value[k];
      }
    }
    TensorF da = b.conv1->backward(bt.a, bt.u, du, true);
    dh = silu_backward(bt.h_in, bt.a, da);
    dh += dmid;
  }
  conv_in_->backward(t.z, t.h0, dh, false);

  if (pruned()) return;
  auto& te = *time_embed_;
  if (te.weight.trainable || te.bias.trainable || te.constant.trainable) {
    for (int i = 0; i < cd; ++i) {
      if (te.bias.trainable) te.bias.grad[i] += static_cast<float>(dcond[i]);
    }
    for (int j = 0; j < cd; ++j) {
      const float act = silu(te.constant.value[j]);
      double dact = 0.0;
      for (int i = 0; i < cd; ++i) {
        const std::size_t k = static_cast<std::size_t>(i) * cd + j;
        if (te.weight.trainable) te.weight.grad[k] += static_cast<float>(dcond[i] * act);
        dact += dcond[i] * te.weight.value[k];
      }
      if (te.constant.trainable) {
        te.constant.grad[j] += static_cast<float>(dact * silu_grad(te.constant.value[j], act));
      }
    }
  }
  auto& tx = *text_encoder_;
  if (tx.projection.trainable || tx.bias.trainable || tx.table.trainable) {
    const int td = config_.token_dim;
    const auto tokens = tokenize(prompt_);
    std::vector<double> mean(static_cast<std::size_t>(td), 0.0);
    std::vector<std::size_t> rows;
    for (const auto& tok : tokens) {
      rows.push_back(static_cast<std::size_t>(fnv1a64(tok, 0xcbf29ce484222325ull) %
                                              static_cast<std::uint64_t>(config_.vocab)));
      for (int j = 0; j < td; ++j) mean[j] += tx.table.value[rows.back() * td + j];
    }
    if (!tokens.empty()) {
      for (auto& v : mean) v /= static_cast<double>(tokens.size());
    }
    const std::vector<float> pe = text_embedding(prompt_);
    std::vector<double> dmean(static_cast<std::size_t>(td), 0.0);
    for (int i = 0; i < cd; ++i) {
      const double dpre = dcond[i] * (1.0 - static_cast<double>(pe[i]) * pe[i]);
      if (tx.bias.trainable) tx.bias.grad[i] += static_cast<float>(dpre);
      for (int j = 0; j < td; ++j) {
        const std::size_t k = static_cast<std::size_t>(i) * td + j;
        if (tx.projection.trainable) tx.projection.grad[k] += static_cast<float>(dpre * mean[j]);
        dmean[j] += dpre * tx.projection.value[k];
      }
    }
    if (tx.table.trainable && !tokens.empty()) {
      for (std::size_t row : rows) {
        for (int j = 0; j < td; ++j) {
          tx.table.grad[row * td + j] += static_cast<float>(dmean[j] / static_cast<double>(tokens.size()));
        }
      }
    }
  }
}

std::vector<Parameter<float>*> Restorer::parameters() {
  std::vector<Parameter<float>*> out;
  conv_in_->collect(out);
  for (auto& b : blocks_) {
    b.conv1->collect(out);
    out.push_back(&b.cond_weight);
    out.push_back(&b.cond_bias);
    b.conv2->collect(out);
    b.attn->collect(out);
  }
  conv_out_->collect(out);
  if (text_encoder_) {
    out.push_back(&text_encoder_->table);
    out.push_back(&text_encoder_->projection);
    out.push_back(&text_encoder_->bias);
  }
  if (time_embed_) {
    out.push_back(&time_embed_->constant);
    out.push_back(&time_embed_->weight);
    out.push_back(&time_embed_->bias);
  }
  return out;
}

std::vector<const Parameter<float>*> Restorer::parameters() const {
  const auto mutable_list = const_cast<Restorer*>(this)->parameters();
  return {mutable_list.begin(), mutable_list.end()};
}

std::vector<const Parameter<float>*> Restorer::base_parameters() const {
  std::vector<const Parameter<float>*> out;
  for (const auto* p : parameters()) {
    if (!is_lora_name(p->name)) out.push_back(p);
  }
  return out;
}

std::vector<Parameter<float>*> Restorer::lora_parameters() {
  std::vector<Parameter<float>*> out;
  for (auto* p : parameters()) {
    if (is_lora_name(p->name)) out.push_back(p);
  }
  return out;
}

std::vector<const Parameter<float>*> Restorer::lora_parameters() const {
  const auto mutable_list = const_cast<Restorer*>(this)->lora_parameters();
  return {mutable_list.begin(), mutable_list.end()};
}

std::size_t Restorer::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) {
    if (p->trainable) n += p->size();
  }
  return n;
}

std::vector<std::string> select_trainable(Restorer& model, const ParamSelector& selector) {
  std::vector<std::string> selected;
  for (const auto& name : model.layer_names()) {
    if (contains(name, selector.name_substring)) selected.push_back(name);
  }
  if (selected.empty()) {
    std::cerr << "warning: no restorer layer name contains '" << selector.name_substring << "'\n";
    throw std::invalid_argument("empty trainable selection for substring '" + selector.name_substring + "'");
  }
  for (auto* p : model.parameters()) p->trainable = false;
  for (const auto& name : selected) {
    for (auto* p : model.layer_parameters(name)) p->trainable = true;
  }
  return selected;
}

nn::LoraAdapter<float>& attach_lora(Restorer& model, const std::string& layer, int rank, double alpha,
                                    std::uint64_t seed) {
  auto& conv = model.kernel_layer(layer);
  Rng rng = make_rng(seed, "lora." + layer);
  return conv.attach_lora(rank, static_cast<float>(alpha), rng);
}

std::vector<std::string> attach_lora_to_selection(Restorer& model, const ParamSelector& selector, int rank,
                                                  double alpha, std::uint64_t seed) {
  std::vector<std::string> selected;
  for (const auto& name : model.adaptable_layer_names()) {
    if (contains(name, selector.name_substring)) selected.push_back(name);
  }
  if (selected.empty()) {
    std::cerr << "warning: no adaptable restorer layer name contains '" << selector.name_substring << "'\n";
    throw std::invalid_argument("empty LoRA selection for substring '" + selector.name_substring + "'");
  }
  for (auto* p : model.parameters()) p->trainable = false;
  for (const auto& name : selected) attach_lora(model, name, rank, alpha, seed);
  return selected;
}

void PriorSchedule::validate() const {
  if (learning_rate <= 0.0 || batch_size < 1 || steps < 0 || max_sigma < 0.0) {
    throw std::invalid_argument("invalid prior schedule");
  }
}

double clean_latent_mse(const Restorer& model, const std::vector<LatentCode>& latents) {
  if (latents.empty()) throw std::invalid_argument("clean_latent_mse: no latents");
  double total = 0.0;
  for (const auto& z : latents) {
    const LatentCode y = model.forward(z);
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double d = static_cast<double>(y[i]) - z[i];
      acc += d * d;
    }
    total += acc / static_cast<double>(z.size());
  }
  return total / static_cast<double>(latents.size());
}

PriorResult pretrain_toy_restorer(Restorer& model, const std::vector<LatentCode>& hq_latents,
                                  const PriorSchedule& schedule, const std::function<void(int, double)>& on_step) {
  schedule.validate();
  if (hq_latents.empty()) throw std::invalid_argument("prior pretraining needs HQ latents");
  if (!model.lora_parameters().empty()) throw std::logic_error("prior pretraining expects a model without adapters");
  auto params = model.parameters();
  for (auto* p : params) p->trainable = !p->name.starts_with("text_encoder.");
  nn::Adam<float> adam(params, nn::AdamSettings::with(schedule.learning_rate, schedule.moments));
  Rng batch_rng = make_rng(schedule.seed, "prior.batch-order");
  Rng noise_rng = make_rng(schedule.seed, "prior.noise");

  PriorResult result;
  for (int step = 0; step < schedule.steps; ++step) {
    double loss = 0.0;
    for (int k = 0; k < schedule.batch_size; ++k) {
      const auto idx = static_cast<std::size_t>(
          uniform_int(batch_rng, 0, static_cast<std::int64_t>(hq_latents.size()) - 1));
      const LatentCode& z = hq_latents[idx];
      const double sigma = uniform(noise_rng, 0.0, schedule.max_sigma);
      LatentCode noisy = z;
      for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] += static_cast<float>(sigma * normal(noise_rng));
      const auto t = model.trace(noisy);
      LatentCode grad(z.shape());
      const double inv = 1.0 / static_cast<double>(z.size());
      double acc = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double d = static_cast<double>(t.y[i]) - z[i];
        acc += d * d;
        grad[i] = static_cast<float>(2.0 * d * inv);
      }
      loss += acc * inv;
      model.backward(t, grad);
    }
    loss /= schedule.batch_size;
    result.loss_trace.push_back(loss);
    if (!std::isfinite(loss)) {
      for (auto* p : params) p->trainable = false;
      throw codec::TrainingFailure("prior pretraining diverged at step " + std::to_string(step), result.loss_trace);
    }
    adam.set_learning_rate(nn::cosine_learning_rate(schedule.learning_rate, step, schedule.steps, 0.05));
    adam.step(1.0 / schedule.batch_size);
    if (on_step) on_step(step, loss);
  }
  for (auto* p : params) p->trainable = false;
  result.clean_mse = clean_latent_mse(model, hq_latents);
  return result;
}

Image restore(const LatentCode& z_aligned, const Restorer& model, const codec::Codec& codec) {
  return codec.decode(model.forward(z_aligned));
}

void Stage2Schedule::validate() const {
  if (learning_rate <= 0.0 || batch_size < 1 || total_steps < 0) throw std::invalid_argument("invalid stage-2 schedule");
}

LatentCode restorer_input(const Image& lq, int scale_factor, const codec::Codec& codec,
                          const adapter::AlignmentAdapter* adapter) {
  const LatentCode z = codec.encode(upsample(lq, scale_factor));
  return adapter ? adapter->align(z) : z;
}

FrozenChecksums frozen_checksums(const Restorer& model, const codec::Codec& codec,
                                 const adapter::AlignmentAdapter* adapter) {
  return {model.base_checksum(), codec.checksum(), adapter ? adapter->checksum() : 0};
}

Stage2Result train_stage2(Restorer& model, const codec::Codec& codec, const adapter::AlignmentAdapter* adapter,
                          const std::vector<Stage2Example>& examples, const losses::LossWeights& weights,
                          const losses::LossProviders& providers, const Stage2Schedule& schedule,
                          const std::function<void(const Stage2Log&)>& on_step) {
  schedule.validate();
  weights.validate();
  if (examples.empty()) throw std::invalid_argument("stage-2 training needs at least one example");
  for (const auto* p : model.base_parameters()) {
    if (p->trainable) throw std::logic_error("stage 2 expects a frozen base restorer; '" + p->name + "' is trainable");
  }
  Stage2Result result;
  result.before = frozen_checksums(model, codec, adapter);
  auto params = model.lora_parameters();
  if (schedule.total_steps > 0 &&
      std::none_of(params.begin(), params.end(), [](const auto* p) { return p->trainable; })) {
    throw std::invalid_argument("stage 2 has no trainable adapter parameters");
  }
  nn::Adam<float> adam(params, nn::AdamSettings::with(schedule.learning_rate, schedule.moments));
  Rng order_rng = make_rng(schedule.seed, "stage2.batch-order");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  for (int step = 0; step < schedule.total_steps; ++step) {
    Stage2Log entry{step, {}};
    for (int k = 0; k < schedule.batch_size; ++k) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1],
                    order[static_cast<std::size_t>(uniform_int(order_rng, 0, static_cast<std::int64_t>(i - 1)))]);
        }
        cursor = 0;
      }
      const Stage2Example& ex = examples[order[cursor++]];
      const auto t = model.trace(ex.input);
      const auto dec = codec.decode_trace(t.y);
      losses::ImageTensor grad;
      const auto br =
          losses::total_loss(dec.trace.output().cast<double>(), ex.target, weights, providers, &grad);
      entry.loss.reconstruction += br.reconstruction;
      entry.loss.identity += br.identity;
      entry.loss.structure += br.structure;
      entry.loss.total += br.total;
      const LatentCode dz = codec.decode_backward(dec, grad.cast<float>());
      model.backward(t, dz);
    }
    const double inv = 1.0 / schedule.batch_size;
    entry.loss.reconstruction *= inv;
    entry.loss.identity *= inv;
    entry.loss.structure *= inv;
    entry.loss.total *= inv;
    result.log.push_back(entry);
    if (!std::isfinite(entry.loss.total)) {
      std::vector<double> trace;
      for (const auto& l : result.log) trace.push_back(l.loss.total);
      throw codec::TrainingFailure("stage-2 training diverged at step " + std::to_string(step), trace);
    }
    adam.step(inv);
    if (on_step) on_step(entry);
  }
  result.after = frozen_checksums(model, codec, adapter);
  if (!(result.after == result.before)) throw std::logic_error("a frozen component changed during stage 2");
  return result;
}

}  // namespace lafr::finetune
