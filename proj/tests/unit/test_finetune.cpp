// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "lafr/data/degradation.hpp"
#include "lafr/data/toy_faces.hpp"
#include "lafr/finetune/restorer.hpp"

using namespace lafr;
using namespace lafr::finetune;

namespace {

RestorerConfig small_config() {
  RestorerConfig c;
  c.width = 8;
  c.cond_dim = 8;
  c.vocab = 16;
  c.token_dim = 4;
  c.seed = 2;
  return c;
}

LatentCode random_latent(std::uint64_t seed, int size = 4) {
  Rng rng(seed);
  LatentCode z({4, size, size});
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<float>(normal(rng) * 0.5);
  return z;
}

void expect_same(const LatentCode& a, const LatentCode& b) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]) << "element " << i;
}

double weighted(const LatentCode& y, const LatentCode& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(w[i]) * y[i];
  return s;
}

}  // namespace

TEST(Restorer, DeterministicAndShapePreserving) {
  const Restorer a(small_config()), b(small_config());
  const LatentCode z = random_latent(1);
  expect_same(a.forward(z), b.forward(z));
  EXPECT_EQ(a.forward(z).shape(), z.shape());
  EXPECT_THROW(a.forward(LatentCode({3, 4, 4})), nn::ShapeError);
}

TEST(Restorer, PromptChangesOutput) {
  Restorer r(small_config());
  const LatentCode z = random_latent(2);
  const LatentCode y1 = r.forward(z);
  r.set_prompt("blurry old photograph");
  const LatentCode y2 = r.forward(z);
  double diff = 0.0;
  for (std::size_t i = 0; i < y1.size(); ++i) diff += std::abs(y1[i] - y2[i]);
  EXPECT_GT(diff, 0.0);
}

TEST(Tokenize, LowercaseAlphanumericRuns) {
  EXPECT_EQ(tokenize("Face, HIGH-quality 4k!"), (std::vector<std::string>{"face", "high", "quality", "4k"}));
  EXPECT_TRUE(tokenize(" ,;").empty());
}

TEST(Prune, BitIdenticalWithFewerParameters) {
  Restorer r(small_config());
  const LatentCode z = random_latent(3);
  const LatentCode before = r.forward(z);
  const std::size_t count = r.parameter_count();
  const auto layers = r.layer_names().size();
  const PrecomputedConditioning c = r.precompute_conditioning(r.prompt());
  EXPECT_TRUE(c.valid());
  r.prune(c);
  EXPECT_TRUE(r.pruned());
  EXPECT_LT(r.parameter_count(), count);
  EXPECT_LT(r.layer_names().size(), layers);
  expect_same(r.forward(z), before);
  EXPECT_THROW(r.precompute_conditioning("x"), std::logic_error);
  EXPECT_THROW(r.set_prompt("x"), std::logic_error);
}

TEST(Prune, CorruptedConditioningRejected) {
  Restorer r(small_config());
  PrecomputedConditioning c = r.precompute_conditioning(r.prompt());
  c.prompt_embedding[0] += 1.0f;
  EXPECT_FALSE(c.valid());
  EXPECT_THROW(r.prune(c), std::invalid_argument);
}

TEST(Lora, FreshAdaptersKeepRestorerOutputBitIdentical) {
  for (const char* sel : {"conv", "attn", ""}) {
    Restorer r(small_config());
    const LatentCode z = random_latent(4);
    const LatentCode before = r.forward(z);
    const auto names = attach_lora_to_selection(r, {sel}, 2, 2.0, 9);
    EXPECT_FALSE(names.empty());
    expect_same(r.forward(z), before);
    EXPECT_EQ(r.trainable_parameter_count(), nn::count_values(std::as_const(r).lora_parameters()));
  }
}

TEST(Lora, MergingMatchesAdaptedOutput) {
  Restorer r(small_config());
  const auto names = attach_lora_to_selection(r, {"conv"}, 2, 4.0, 9);
  Rng rng(5);
  for (auto* p : r.lora_parameters()) {
    for (auto& v : p->value) v = static_cast<float>(normal(rng) * 0.2);
  }
  const LatentCode z = random_latent(5);
  const LatentCode adapted = r.forward(z);
  for (const auto& n : names) r.kernel_layer(n).merge_lora();
  EXPECT_TRUE(r.lora_parameters().empty());
  const LatentCode merged = r.forward(z);
  for (std::size_t i = 0; i < merged.size(); ++i) EXPECT_NEAR(merged[i], adapted[i], 1e-4);
}

TEST(Lora, EmptySelectionThrows) {
  Restorer r(small_config());
  EXPECT_THROW(attach_lora_to_selection(r, {"no_such_layer"}, 2, 2.0, 1), std::invalid_argument);
  EXPECT_THROW(select_trainable(r, {"no_such_layer"}), std::invalid_argument);
  EXPECT_THROW(r.kernel_layer("no_such_layer"), std::invalid_argument);
}

TEST(SelectTrainable, OnlyMatchingLayers) {
  Restorer r(small_config());
  const auto chosen = select_trainable(r, {"attn"});
  EXPECT_EQ(chosen.size(), 2u);
  for (const auto* p : std::as_const(r).parameters()) {
    EXPECT_EQ(p->trainable, p->name.find("attn") != std::string::npos) << p->name;
  }
}

// Parameter gradients of <w, restorer(z)>; float model, so loose tolerance.
TEST(Restorer, BackwardMatchesFiniteDifferences) {
  Restorer r(small_config());
  attach_lora_to_selection(r, {""}, 2, 2.0, 3);
  Rng rng(6);
  for (auto* p : r.lora_parameters()) {
    for (auto& v : p->value) v = static_cast<float>(normal(rng) * 0.2);
  }
  for (auto* p : r.parameters()) p->trainable = true;
  const LatentCode z = random_latent(7);
  LatentCode w(z.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(normal(rng));
  for (auto* p : r.parameters()) p->zero_grad();
  r.backward(r.trace(z), w);

  const float h = 1e-2f;
  int checked = 0;
  for (auto* p : r.parameters()) {
    const std::size_t stride = std::max<std::size_t>(1, p->size() / 3);
    for (std::size_t k = 0; k < p->size(); k += stride) {
      const float keep = p->value[k];
      p->value[k] = keep + h;
      const double up = weighted(r.forward(z), w);
      p->value[k] = keep - h;
      const double dn = weighted(r.forward(z), w);
      p->value[k] = keep;
      const double fd = (up - dn) / (2.0 * h);
      EXPECT_NEAR(p->grad[k], fd, 3e-2 * std::max(1.0, std::abs(fd))) << p->name << "[" << k << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 20);
}

TEST(Restorer, FrozenParametersReceiveNoGradient) {
  Restorer r(small_config());
  attach_lora_to_selection(r, {"conv"}, 2, 2.0, 3);
  const LatentCode z = random_latent(8);
  r.backward(r.trace(z), z);
  for (const auto* p : r.base_parameters()) {
    for (float g : p->grad) EXPECT_EQ(g, 0.0f) << p->name;
  }
}

TEST(Prior, PretrainingRejectsAdaptedModel) {
  Restorer r(small_config());
  attach_lora_to_selection(r, {"conv"}, 2, 2.0, 3);
  EXPECT_THROW(pretrain_toy_restorer(r, {random_latent(1)}, PriorSchedule{}), std::logic_error);
}

TEST(Prior, PretrainingReducesDenoisingLoss) {
  Restorer r(small_config());
  std::vector<LatentCode> lat;
  for (int i = 0; i < 8; ++i) lat.push_back(random_latent(20 + i));
  const PriorSchedule s{3e-3, 4, 80, 0.3, 1};
  const PriorResult res = pretrain_toy_restorer(r, lat, s);
  ASSERT_EQ(res.loss_trace.size(), 80u);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 20; ++i) {
    head += res.loss_trace[static_cast<std::size_t>(i)];
    tail += res.loss_trace[static_cast<std::size_t>(60 + i)];
  }
  EXPECT_LT(tail, head);
  EXPECT_DOUBLE_EQ(res.clean_mse, clean_latent_mse(r, lat));
}

class Stage2Fixture : public ::testing::Test {
 protected:
  void SetUp() override {
    codec::CodecConfig cc;
    cc.hidden_widths = {6, 8};
    cc.seed = 1;
    codec = std::make_unique<codec::Codec>(cc);
    for (auto* p : codec->parameters()) p->trainable = false;
    const auto faces = generate_toy_faces(3, 16, 4);
    for (const auto& f : faces) {
      const Image lq = degrade(f, DegradationParams{4, 1.0, 0.02, 80, 1});
      examples.push_back({restorer_input(lq, 4, *codec, nullptr), to_tensor<double>(f)});
    }
  }

  std::unique_ptr<codec::Codec> codec;
  std::vector<Stage2Example> examples;
  losses::FeatureStack stack;
  losses::IdentityProvider identity{stack};
  losses::StructureProvider structure;
};

TEST_F(Stage2Fixture, OnlyAdaptersMoveAndFrozenChecksumsHold) {
  Restorer r(small_config());
  r.prune(r.precompute_conditioning(r.prompt()));
  attach_lora_to_selection(r, {"conv"}, 2, 2.0, 3);
  const std::uint64_t lora_before = r.lora_checksum();
  const Stage2Schedule s{1e-3, 2, 4, 7};
  const auto res = train_stage2(r, *codec, nullptr, examples, {}, {stack, identity, structure}, s);
  EXPECT_EQ(res.log.size(), 4u);
  EXPECT_EQ(res.before, res.after);
  EXPECT_EQ(res.before, frozen_checksums(r, *codec, nullptr));
  EXPECT_NE(r.lora_checksum(), lora_before);
}

TEST_F(Stage2Fixture, DeterministicUnderSeed) {
  auto run = [&] {
    Restorer r(small_config());
    attach_lora_to_selection(r, {"conv"}, 2, 2.0, 3);
    train_stage2(r, *codec, nullptr, examples, {}, {stack, identity, structure}, Stage2Schedule{1e-3, 2, 3, 7});
    return r.lora_checksum();
  };
  EXPECT_EQ(run(), run());
}

TEST_F(Stage2Fixture, RefusesTrainableBaseOrMissingAdapters) {
  Restorer r(small_config());
  EXPECT_THROW(train_stage2(r, *codec, nullptr, examples, {}, {stack, identity, structure}, Stage2Schedule{}),
               std::logic_error);
  for (auto* p : r.parameters()) p->trainable = false;
  EXPECT_THROW(train_stage2(r, *codec, nullptr, examples, {}, {stack, identity, structure}, Stage2Schedule{}),
               std::invalid_argument);
}
