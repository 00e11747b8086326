// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance gate. One PASS/FAIL line per criterion; exit status is the
// number of failures. Tolerances are fixed below.

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "lafr/adapter/alignment.hpp"
#include "lafr/data/manifest.hpp"
#include "lafr/data/toy_faces.hpp"
#include "lafr/finetune/restorer.hpp"
#include "lafr/harness/config.hpp"
#include "lafr/harness/pipeline.hpp"
#include "lafr/losses/losses.hpp"
#include "lafr/metrics/metrics.hpp"

using namespace lafr;
namespace fs = std::filesystem;

namespace {

constexpr int kOracleVectors = 1000;
constexpr double kOracleSeconds = 10.0;
constexpr double kFdRelative = 1e-4;
constexpr double kFdFloor = 1e-4;  // |fd| below this is compared absolutely at kFdRelative * kFdFloor
constexpr double kAlignRatio = 0.6;
constexpr std::size_t kAlignPairs = 512;
constexpr double kAlignSeconds = 600.0;
constexpr int kLoraInputs = 100;
constexpr double kLoraRelative = 1e-5;
constexpr double kMetricExact = 1e-9;
constexpr double kPsnrExact = 1e-12;
constexpr double kFidSelf = 1e-6;
constexpr double kFidSampling = 0.1;
constexpr int kCompactnessSeeds = 5;
constexpr double kPipelineSeconds = 1800.0;
constexpr double kL2Identity = 1e-9;

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %2d %-28s %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// Runs `body`; an exception is a failure with the message as detail.
void guarded(int id, const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

int scan_oracle(const std::vector<float>& f, const adapter::Codebook& cb) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cb.size(); ++k) {
    double d = 0.0;
    const auto e = cb.entry(k);
    for (int j = 0; j < cb.dim(); ++j) d += (static_cast<double>(f[j]) - e[j]) * (static_cast<double>(f[j]) - e[j]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  std::size_t checked = 0, agree = 0;
  for (int k : {1, 16, 257, 1024, 4096}) {
    adapter::Codebook cb = adapter::Codebook::random(k, 16, rng);
    for (int i = 0; i < kOracleVectors; ++i) {
      std::vector<float> f(16);
      for (auto& v : f) v = static_cast<float>(normal(rng) * 0.3);
      ++checked;
      agree += adapter::find_nearest(f, cb) == scan_oracle(f, cb);
    }
  }
  // duplicated entries: every query must land on the lower copy
  adapter::Codebook dup = adapter::Codebook::random(64, 8, rng);
  for (int k = 32; k < 64; ++k) {
    for (int j = 0; j < 8; ++j) dup.entries().value[static_cast<std::size_t>(k * 8 + j)] = dup.entry(k - 32)[j];
  }
  std::size_t ties = 0, tie_ok = 0;
  for (int i = 0; i < kOracleVectors; ++i) {
    std::vector<float> f(8);
    for (auto& v : f) v = static_cast<float>(normal(rng) * 0.3);
    ++ties;
    tie_ok += adapter::find_nearest(f, dup) < 32;
  }
  const double s = seconds_since(t0);
  report(1, "quantization oracle", agree == checked && tie_ok == ties && s < kOracleSeconds,
         std::to_string(agree) + "/" + std::to_string(checked) + " agree, ties " + std::to_string(tie_ok) + "/" +
             std::to_string(ties) + ", " + fmt("%.2f s", s));
}

losses::ImageTensor random_image8(Rng& rng) {
  losses::ImageTensor t({3, 8, 8});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1 + 0.8 * uniform01(rng);
  return t;
}

// Worst relative error of analytic vs central-difference gradient.
double worst_fd(const std::function<double(const losses::ImageTensor&)>& f, const losses::ImageTensor& x,
                const losses::ImageTensor& g) {
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    losses::ImageTensor p = x, m = x;
    p[i] += h;
    m[i] -= h;
    const double fd = (f(p) - f(m)) / (2 * h);
    worst = std::max(worst, std::abs(g[i] - fd) / std::max(std::abs(fd), kFdFloor));
  }
  return worst;
}

void criterion2() {
  // straight-through: beta 0, frozen codebook
  bool exact = true;
  for (int up : {1, 2}) {
    adapter::AdapterConfig cfg;
    cfg.codebook_size = 64;
    cfg.code_dim = 8;
    cfg.hidden = 16;
    cfg.beta = 0.0;
    cfg.feature_upsample = up;
    adapter::AlignmentAdapter a(cfg);
    a.set_trainable(true);
    a.codebook().entries().trainable = false;
    Rng rng(202);
    codec::LatentCode z({4, 8, 8}), hq({4, 8, 8});
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = static_cast<float>(normal(rng));
      hq[i] = static_cast<float>(normal(rng));
    }
    const auto tr = a.forward_trace(z, false);
    codec::LatentCode g;
    nn::TensorF gc;
    adapter::alignment_loss(tr.aligned(), hq, tr.features(), tr.quantized.quantized, 0.0, &g, &gc);
    const auto back = a.backward(tr, g, gc);
    exact = exact && back.grad_features.size() == back.grad_quantized.size();
    for (std::size_t i = 0; exact && i < back.grad_features.size(); ++i) {
      exact = back.grad_features[i] == back.grad_quantized[i];
    }
  }

  const losses::FeatureStack stack;
  const losses::IdentityProvider identity(stack);
  const losses::StructureProvider structure;
  const losses::LossWeights w;
  Rng rng(203);
  const auto res = random_image8(rng), gt = random_image8(rng);
  std::map<std::string, double> worst;
  losses::ImageTensor g;
  losses::mse(res, gt, &g);
  worst["mse"] = worst_fd([&](const auto& x) { return losses::mse(x, gt); }, res, g);
  losses::perceptual_distance(res, gt, stack, &g);
  worst["perceptual"] = worst_fd([&](const auto& x) { return losses::perceptual_distance(x, gt, stack); }, res, g);
  losses::reconstruction_loss(res, gt, w, stack, &g);
  worst["reconstruction"] =
      worst_fd([&](const auto& x) { return losses::reconstruction_loss(x, gt, w, stack); }, res, g);
  for (auto kind : {losses::EmbeddingDistance::kCosine, losses::EmbeddingDistance::kSquaredL2}) {
    const std::string suffix = kind == losses::EmbeddingDistance::kCosine ? "_cos" : "_l2";
    for (const losses::EmbeddingProvider* p :
         {static_cast<const losses::EmbeddingProvider*>(&identity),
          static_cast<const losses::EmbeddingProvider*>(&structure)}) {
      losses::embedding_loss(res, gt, *p, kind, &g);
      worst[p->name() + suffix] =
          worst_fd([&](const auto& x) { return losses::embedding_loss(x, gt, *p, kind); }, res, g);
    }
  }
  const losses::LossProviders prov{stack, identity, structure};
  losses::total_loss(res, gt, w, prov, &g);
  worst["total"] = worst_fd([&](const auto& x) { return losses::total_loss(x, gt, w, prov).total; }, res, g);

  // alignment loss w.r.t. aligned latent and features
  {
    nn::TensorD za({2, 4, 4}), zh({2, 4, 4}), f({3, 4, 4}), q({3, 4, 4});
    for (auto* t : {&za, &zh, &f, &q}) {
      for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = normal(rng);
    }
    nn::TensorD ga, gf;
    adapter::alignment_loss(za, zh, f, q, 0.25, &ga, &gf);
    const double h = 1e-6;
    double wa = 0.0;
    for (std::size_t i = 0; i < za.size(); ++i) {
      nn::TensorD p = za, m = za;
      p[i] += h;
      m[i] -= h;
      const double fd = (adapter::alignment_loss(p, zh, f, q, 0.25) - adapter::alignment_loss(m, zh, f, q, 0.25)) / (2 * h);
      wa = std::max(wa, std::abs(ga[i] - fd) / std::max(std::abs(fd), kFdFloor));
    }
    for (std::size_t i = 0; i < f.size(); ++i) {
      nn::TensorD p = f, m = f;
      p[i] += h;
      m[i] -= h;
      const double fd = (adapter::alignment_loss(za, zh, p, q, 0.25) - adapter::alignment_loss(za, zh, m, q, 0.25)) / (2 * h);
      wa = std::max(wa, std::abs(gf[i] - fd) / std::max(std::abs(fd), kFdFloor));
    }
    worst["alignment"] = wa;
  }

  double overall = 0.0;
  std::string which;
  for (const auto& [k, v] : worst) {
    if (v >= overall) {
      overall = v;
      which = k;
    }
  }
  report(2, "straight-through + loss FD", exact && overall <= kFdRelative,
         std::string(exact ? "ST exact" : "ST MISMATCH") + ", worst FD rel " + fmt("%.2e", overall) + " (" + which +
             ", " + std::to_string(worst.size()) + " losses)");
}

harness::RunConfig pipeline_config(const fs::path& out) {
  harness::RunConfig c;
  c.set("output_dir", out.string());
  return c;
}

struct PipelineRun {
  double seconds = 0.0;
  harness::EvaluationSummary summary;
};

PipelineRun run_pipeline(const harness::RunConfig& cfg) {
  fs::remove_all(cfg.output_dir());
  const auto t0 = std::chrono::steady_clock::now();
  harness::cmd_prepare_data(cfg);
  for (const char* stage : {"codec", "prior", "1", "2"}) harness::cmd_train(cfg, stage);
  PipelineRun r;
  r.summary = harness::cmd_evaluate(cfg);
  r.seconds = seconds_since(t0);
  return r;
}

void criterion3(const harness::RunConfig& cfg) {
  const harness::Layout L{cfg.output_dir()};
  const codec::Codec c = harness::load_codec(cfg, L);
  const int scale = static_cast<int>(cfg.get_int("data.scale_factor"));
  const DatasetManifest pool = read_manifest(L.manifest("pool"));
  const DatasetManifest subset = sample_training_subset(pool, kAlignPairs, derive_seed(cfg.seed(), "data.train"));
  const auto train = harness::latent_pairs(harness::load_pairs(L, subset), scale, c);
  const auto held = harness::latent_pairs(harness::load_pairs(L, "eval"), scale, c);
  adapter::AlignmentAdapter a(harness::adapter_config(cfg));
  const auto t0 = std::chrono::steady_clock::now();
  adapter::train_stage1(a, train, harness::stage1_schedule(cfg));
  const double s = seconds_since(t0);
  const double before = adapter::mean_latent_gap(held);
  const double after = adapter::mean_alignment_gap(a, held);
  const double ratio = after / before;
  report(3, "stage-1 alignment efficacy", ratio <= kAlignRatio && s < kAlignSeconds,
         "held-out L1 " + fmt("%.4f", after) + " vs " + fmt("%.4f", before) + " ratio " + fmt("%.3f", ratio) +
             " (<= " + fmt("%.2f", kAlignRatio) + "), " + std::to_string(train.size()) + " pairs, " +
             fmt("%.0f s", s));
}

void criterion4(const PipelineRun& run) {
  const double r = run.summary.restored.mean_psnr();
  const double u = run.summary.upsampled.mean_psnr();
  const double n = run.summary.no_adapter.mean_psnr();
  report(4, "stage-2 efficacy", r > u && r > n,
         "restored " + fmt("%.3f dB", r) + ", upsampled LQ " + fmt("%.3f dB", u) + ", no adapter " +
             fmt("%.3f dB", n) + " (" + std::to_string(run.summary.restored.rows.size()) + " eval images)");
}

void criterion5() {
  finetune::Restorer r{finetune::RestorerConfig{}};
  Rng rng(505);
  std::vector<codec::LatentCode> inputs;
  for (int i = 0; i < kLoraInputs; ++i) {
    codec::LatentCode z({4, 16, 16});
    for (std::size_t k = 0; k < z.size(); ++k) z[k] = static_cast<float>(normal(rng));
    inputs.push_back(std::move(z));
  }
  std::vector<codec::LatentCode> base;
  for (const auto& z : inputs) base.push_back(r.forward(z));
  const auto names = finetune::attach_lora_to_selection(r, {""}, 4, 4.0, 17);
  bool identical = true;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto y = r.forward(inputs[i]);
    for (std::size_t k = 0; identical && k < y.size(); ++k) identical = y[k] == base[i][k];
  }
  for (auto* p : r.lora_parameters()) {
    for (auto& v : p->value) v = static_cast<float>(normal(rng) * 0.05);
  }
  std::vector<codec::LatentCode> adapted;
  for (const auto& z : inputs) adapted.push_back(r.forward(z));
  for (const auto& n : names) r.kernel_layer(n).merge_lora();
  double worst = 0.0, moved = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto y = r.forward(inputs[i]);
    double num = 0.0, den = 0.0, shift = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
      num += (static_cast<double>(y[k]) - adapted[i][k]) * (static_cast<double>(y[k]) - adapted[i][k]);
      den += static_cast<double>(adapted[i][k]) * adapted[i][k];
      shift += (static_cast<double>(adapted[i][k]) - base[i][k]) * (static_cast<double>(adapted[i][k]) - base[i][k]);
    }
    worst = std::max(worst, std::sqrt(num / den));
    moved = std::max(moved, std::sqrt(shift / den));
  }
  report(5, "LoRA identity and merge", identical && worst <= kLoraRelative && moved > 0.0,
         std::string(identical ? "fresh adapters bit-identical" : "fresh adapters CHANGED output") + ", merge rel err " +
             fmt("%.2e", worst) + " on " + std::to_string(kLoraInputs) + " inputs (" + std::to_string(names.size()) +
             " layers)");
}

void criterion6(const harness::RunConfig& cfg) {
  const harness::Layout L{cfg.output_dir()};
  const codec::Codec c = harness::load_codec(cfg, L);
  const adapter::AlignmentAdapter a = harness::load_stage1(cfg, L);
  const harness::PairSet eval = harness::load_pairs(L, "eval");
  const int scale = static_cast<int>(cfg.get_int("data.scale_factor"));
  finetune::Restorer full = harness::load_prior(cfg, L);
  full.set_prompt(cfg.get("stage2.prompt"));
  finetune::Restorer pruned = harness::load_prior(cfg, L);
  pruned.prune(pruned.precompute_conditioning(cfg.get("stage2.prompt")));
  std::size_t same = 0;
  for (const auto& lq : eval.lq) {
    const auto z = finetune::restorer_input(lq, scale, c, &a);
    const auto y1 = full.forward(z), y2 = pruned.forward(z);
    bool eq = true;
    for (std::size_t k = 0; eq && k < y1.size(); ++k) eq = y1[k] == y2[k];
    same += eq;
  }
  const auto nf = full.parameter_count(), np = pruned.parameter_count();
  report(6, "pruning equivalence", same == eval.size() && np < nf,
         std::to_string(same) + "/" + std::to_string(eval.size()) + " eval outputs bit-identical, params " +
             std::to_string(np) + " < " + std::to_string(nf));
}

void criterion7(const harness::RunConfig& cfg) {
  const harness::Layout L{cfg.output_dir()};
  const codec::Codec c = harness::load_codec(cfg, L);
  const adapter::AlignmentAdapter a = harness::load_stage1(cfg, L);
  const harness::Providers prov;
  const int scale = static_cast<int>(cfg.get_int("data.scale_factor"));
  const harness::PairSet train = harness::load_pairs(L, "train");

  // 1: the pipeline's stage-2 checkpoint kept the prior's base weights
  finetune::Restorer prior = harness::load_prior(cfg, L);
  harness::prepare_stage2_model(prior, cfg);
  const finetune::Restorer stage2 = harness::load_stage2(cfg, L);
  const bool checkpoint_ok = prior.base_checksum() == stage2.base_checksum();

  // 2: a fresh short stage-2 run, checksums taken independently
  finetune::Restorer model = harness::load_prior(cfg, L);
  harness::prepare_stage2_model(model, cfg);
  const std::uint64_t cb = c.checksum(), ab = a.checksum(), rb = model.base_checksum();
  std::vector<finetune::Stage2Example> ex;
  for (std::size_t i = 0; i < 16; ++i) ex.push_back({finetune::restorer_input(train.lq[i], scale, c, &a),
                                                     to_tensor<double>(train.hq[i])});
  finetune::Stage2Schedule s = harness::stage2_schedule(cfg);
  s.total_steps = 20;
  const std::uint64_t lb = model.lora_checksum();
  finetune::train_stage2(model, c, &a, ex, harness::loss_weights(cfg),
                         {prov.stack, prov.identity, prov.structure}, s);
  const bool run_ok = c.checksum() == cb && a.checksum() == ab && model.base_checksum() == rb;
  report(7, "frozen contracts", checkpoint_ok && run_ok && model.lora_checksum() != lb,
         std::string("checkpoint base ") + (checkpoint_ok ? "unchanged" : "CHANGED") + ", codec/restorer/adapter " +
             (run_ok ? "unchanged" : "CHANGED") + " over 20 steps, LoRA moved");
}

void criterion8() {
  std::vector<std::string> bad;
  // one of 100 pixels off by 1 in every channel: MSE exactly 0.01
  Image a(10, 10, 3, 0.0f), b(10, 10, 3, 0.0f);
  for (int c = 0; c < 3; ++c) b.at(4, 7, c) = 1.0f;
  if (std::abs(metrics::psnr(a, b) - 20.0) > kPsnrExact) bad.push_back("psnr 20");
  if (std::abs(metrics::psnr(Image(4, 4, 3, 0.0f), Image(4, 4, 3, 1.0f))) > kPsnrExact) bad.push_back("psnr 0");
  if (!std::isinf(metrics::psnr(a, a))) bad.push_back("psnr inf");

  Rng rng(808);
  Image x(32, 32, 3);
  for (auto& v : x.pixels()) v = static_cast<float>(uniform01(rng));
  const double s = metrics::ssim(x, x);
  if (std::abs(s - 1.0) > kMetricExact) bad.push_back("ssim");

  metrics::FeatureSet f{Eigen::MatrixXd(200, 6), "x"};
  for (Eigen::Index i = 0; i < f.rows.size(); ++i) f.rows.data()[i] = normal(rng);
  const double self = metrics::fid(f, f);
  if (self > kFidSelf) bad.push_back("fid self");
  // N(0,1) vs N(1,4): 1 + 1 + 4 - 2 * 2 = 2
  metrics::FeatureSet p{Eigen::MatrixXd(20000, 1), "p"}, q{Eigen::MatrixXd(20000, 1), "q"};
  for (Eigen::Index i = 0; i < 20000; ++i) {
    p.rows(i, 0) = normal(rng);
    q.rows(i, 0) = 1.0 + 2.0 * normal(rng);
  }
  const double uni = metrics::fid(p, q);
  if (std::abs(uni - 2.0) > kFidSampling) bad.push_back("fid univariate");

  metrics::FeatureSet g{Eigen::MatrixXd(50, 4), "g"};
  std::vector<int> labels(50);
  for (int i = 0; i < 50; ++i) {
    labels[static_cast<std::size_t>(i)] = i % 3;
    for (int j = 0; j < 4; ++j) g.rows(i, j) = normal(rng) + (i % 3) * 1.5;
  }
  double intra = 0.0;
  int pairs = 0;
  double sil = 0.0;
  for (int i = 0; i < 50; ++i) {
    double own = 0.0, own_n = 0.0;
    double other[3] = {0, 0, 0}, other_n[3] = {0, 0, 0};
    for (int j = 0; j < 50; ++j) {
      const double d = (g.rows.row(i) - g.rows.row(j)).norm();
      if (j > i) {
        intra += d;
        ++pairs;
      }
      if (j == i) continue;
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
        own += d;
        own_n += 1;
      } else {
        other[labels[static_cast<std::size_t>(j)]] += d;
        other_n[labels[static_cast<std::size_t>(j)]] += 1;
      }
    }
    const double ai = own / own_n;
    double bi = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
      if (other_n[k] > 0) bi = std::min(bi, other[k] / other_n[k]);
    }
    sil += (bi - ai) / std::max(ai, bi);
  }
  intra /= pairs;
  sil /= 50.0;
  const double ei = std::abs(metrics::intra_class_distance(g) - intra);
  const double es = std::abs(metrics::silhouette(g, labels) - sil);
  if (ei > kMetricExact) bad.push_back("intra-class");
  if (es > kMetricExact) bad.push_back("silhouette");

  std::string detail = "psnr 20/0/inf, ssim " + fmt("%.12f", s) + ", fid self " + fmt("%.1e", self) +
                       ", fid N(0,1)|N(1,4) " + fmt("%.4f", uni) + " (2), intra err " + fmt("%.1e", ei) +
                       ", silhouette err " + fmt("%.1e", es);
  for (const auto& m : bad) detail += " BAD:" + m;
  report(8, "metric oracles", bad.empty(), detail);
}

void criterion9() {
  const harness::Providers prov;
  int ok = 0;
  std::string detail;
  for (int s = 0; s < kCompactnessSeeds; ++s) {
    const auto c = harness::corpus_compactness(64, 64, 900 + static_cast<std::uint64_t>(s), prov);
    ok += c.face_intra < c.noise_intra;
    detail += fmt(" %.3f", c.face_intra) + fmt("<%.3f", c.noise_intra);
  }
  report(9, "compactness analog", ok == kCompactnessSeeds,
         std::to_string(ok) + "/" + std::to_string(kCompactnessSeeds) + " seeds face<noise:" + detail);
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = harness::read_file(e.path());
  }
  return out;
}

void criterion10(const PipelineRun& a, const harness::RunConfig& ca) {
  const harness::RunConfig cb = pipeline_config(ca.output_dir().parent_path() / "run_b");
  const PipelineRun b = run_pipeline(cb);
  const auto ta = tree_bytes(harness::Layout{ca.output_dir()}.reports());
  const auto tb = tree_bytes(harness::Layout{cb.output_dir()}.reports());
  std::size_t differ = 0;
  for (const auto& [k, v] : ta) {
    const auto it = tb.find(k);
    differ += it == tb.end() || it->second != v;
  }
  differ += tb.size() > ta.size() ? tb.size() - ta.size() : 0;
  const bool fast = a.seconds < kPipelineSeconds && b.seconds < kPipelineSeconds;
  report(10, "determinism", differ == 0 && !ta.empty() && fast,
         std::to_string(ta.size() - std::min(differ, ta.size())) + "/" + std::to_string(ta.size()) +
             " report files byte-identical, runs " + fmt("%.0f s", a.seconds) + " and " + fmt("%.0f s", b.seconds) +
             " (< " + fmt("%.0f s", kPipelineSeconds) + ")");
}

void criterion11() {
  const losses::FeatureStack stack;
  const losses::IdentityProvider identity(stack);
  const losses::StructureProvider structure;
  Rng rng(1111);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    losses::ImageTensor x({3, 16, 16}), y({3, 16, 16});
    for (std::size_t k = 0; k < x.size(); ++k) {
      x[k] = uniform01(rng);
      y[k] = uniform01(rng);
    }
    for (const losses::EmbeddingProvider* p : {static_cast<const losses::EmbeddingProvider*>(&identity),
                                               static_cast<const losses::EmbeddingProvider*>(&structure)}) {
      const double c = losses::embedding_loss(x, y, *p, losses::EmbeddingDistance::kCosine);
      const double l = losses::embedding_loss(x, y, *p, losses::EmbeddingDistance::kSquaredL2);
      worst = std::max(worst, std::abs(l - 2.0 * c));
    }
  }
  report(11, "L2 = 2 x cosine", worst <= kL2Identity, "max |L2 - 2 cos| " + fmt("%.2e", worst) + " over 40 pairs");
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_runs";

  guarded(1, "quantization oracle", criterion1);
  guarded(2, "straight-through + loss FD", criterion2);
  guarded(5, "LoRA identity and merge", criterion5);
  guarded(8, "metric oracles", criterion8);
  guarded(9, "compactness analog", criterion9);
  guarded(11, "L2 = 2 x cosine", criterion11);

  const harness::RunConfig ca = pipeline_config(work / "run_a");
  PipelineRun a;
  bool have_a = false;
  try {
    a = run_pipeline(ca);
    have_a = true;
  } catch (const std::exception& e) {
    for (int id : {3, 4, 6, 7, 10}) report(id, "needs default pipeline", false, std::string("pipeline: ") + e.what());
  }
  if (have_a) {
    guarded(4, "stage-2 efficacy", [&] { criterion4(a); });
    guarded(6, "pruning equivalence", [&] { criterion6(ca); });
    guarded(7, "frozen contracts", [&] { criterion7(ca); });
    guarded(3, "stage-1 alignment efficacy", [&] { criterion3(ca); });
    guarded(10, "determinism", [&] { criterion10(a, ca); });
  }
  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
