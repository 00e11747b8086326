// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include "lafr/harness/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lafr/data/toy_faces.hpp"
#include "lafr/harness/container.hpp"
#include "lafr/harness/plot.hpp"

namespace lafr::harness {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string padded_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "face%05zu", i);
  return buf;
}

void require(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw MissingArtifact("missing " + what + ": " + p.string());
}

class Stopwatch {
 public:
  explicit Stopwatch(std::string what) : what_(std::move(what)), start_(std::chrono::steady_clock::now()) {}
  ~Stopwatch() {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::fprintf(stderr, "[lafr] %s took %.1f s\n", what_.c_str(), s);
  }

 private:
  std::string what_;
  std::chrono::steady_clock::time_point start_;
};

/// Lock plus resolved-config snapshot, shared by every command.
struct CommandScope {
  Layout layout;
  DirectoryLock lock;
  CommandScope(const RunConfig& cfg, const std::string& name)
      : layout{cfg.output_dir()}, lock(cfg.output_dir()) {
    write_file_atomic(layout.resolved(name), cfg.serialize());
  }
};

void save_params(const fs::path& path, const std::vector<const nn::Parameter<float>*>& params, const RunConfig& cfg,
                 NamedArrayContainer extra = {}) {
  extra.add_bytes("meta.config", cfg.serialize());
  extra.add_parameters(params);
  extra.save(path);
}

std::vector<codec::LatentCode> encode_all(const codec::Codec& codec, const std::vector<Image>& images) {
  std::vector<codec::LatentCode> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(codec.encode(img));
  return out;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double mean_l1(const nn::TensorF& a, const nn::TensorF& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return s / static_cast<double>(a.size());
}

void write_report(const fs::path& dir, const std::string& name, const metrics::MetricsReport& report) {
  write_file_atomic(dir / (name + ".csv"), report.csv());
  write_file_atomic(dir / (name + ".json"), report.summary_json());
}

std::vector<Image> upsample_all(const std::vector<Image>& lq, int scale) {
  std::vector<Image> out;
  out.reserve(lq.size());
  for (const auto& img : lq) out.push_back(upsample(img, scale));
  return out;
}

/// Stage-2 training on `train` followed by evaluation on `eval`; shared by
/// the train command, ablations and the size sweep.
struct Stage2Outcome {
  finetune::Restorer model;
  finetune::Stage2Result result;
};

Stage2Outcome run_stage2(const RunConfig& cfg, const Layout& layout, const PairSet& train, const codec::Codec& codec,
                         const adapter::AlignmentAdapter& adapter, const Providers& providers) {
  finetune::Restorer model = load_prior(cfg, layout);
  prepare_stage2_model(model, cfg);
  const bool align = cfg.get_bool("stage2.align");
  const int scale = static_cast<int>(cfg.get_int("data.scale_factor"));
  std::vector<finetune::Stage2Example> examples;
  examples.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    examples.push_back({finetune::restorer_input(train.lq[i], scale, codec, align ? &adapter : nullptr),
                        to_tensor<double>(train.hq[i])});
  }
  const losses::LossProviders lp{providers.stack, providers.identity, providers.structure,
                                 embedding_distance(cfg.get("loss.id_variant")),
                                 embedding_distance(cfg.get("loss.fs_variant"))};
  auto result = finetune::train_stage2(model, codec, &adapter, examples, loss_weights(cfg), lp, stage2_schedule(cfg));
  return {std::move(model), std::move(result)};
}

std::string stage2_log_csv(const finetune::Stage2Result& r) {
  std::string out = "step,reconstruction,identity,structure,total\n";
  for (const auto& l : r.log) {
    out += std::to_string(l.step) + "," + num(l.loss.reconstruction) + "," + num(l.loss.identity) + "," +
           num(l.loss.structure) + "," + num(l.loss.total) + "\n";
  }
  return out;
}

double mean_perceptual(const std::vector<Image>& restored, const std::vector<Image>& reference,
                       const Providers& providers) {
  double s = 0.0;
  for (std::size_t i = 0; i < restored.size(); ++i) s += losses::perceptual_distance(restored[i], reference[i], providers.stack);
  return restored.empty() ? 0.0 : s / static_cast<double>(restored.size());
}

}  // namespace

std::vector<adapter::LatentPair> latent_pairs(const PairSet& pairs, int scale, const codec::Codec& codec) {
  std::vector<adapter::LatentPair> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out.push_back({finetune::restorer_input(pairs.lq[i], scale, codec, nullptr), codec.encode(pairs.hq[i])});
  }
  return out;
}

// ---------------------------------------------------------------- settings

DegradationRanges degradation_ranges(const RunConfig& cfg) {
  DegradationRanges r;
  r.scale_factor = static_cast<int>(cfg.get_int("data.scale_factor"));
  r.blur_min = 0.0;
  r.blur_max = cfg.get_double("data.blur_sigma_max");
  r.noise_min = 0.0;
  r.noise_max = cfg.get_double("data.noise_sigma_max");
  r.quality_min = static_cast<int>(cfg.get_int("data.jpeg_quality_min"));
  r.quality_max = static_cast<int>(cfg.get_int("data.jpeg_quality_max"));
  if (r.scale_factor < 1 || r.blur_max < 0 || r.noise_max < 0 || r.quality_min < 1 || r.quality_max > 100 ||
      r.quality_min > r.quality_max) {
    throw ConfigError("invalid degradation ranges");
  }
  return r;
}

namespace {
nn::AdamMoments moments(const RunConfig& cfg) {
  return {cfg.get_double("optim.beta1"), cfg.get_double("optim.beta2"), cfg.get_double("optim.epsilon")};
}
}  // namespace

codec::CodecConfig codec_config(const RunConfig& cfg) {
  codec::CodecConfig c;
  c.latent_channels = static_cast<int>(cfg.get_int("codec.latent_channels"));
  c.stride = static_cast<int>(cfg.get_int("codec.stride"));
  c.hidden_widths = cfg.get_int_list("codec.hidden_widths");
  c.learning_rate = cfg.get_double("codec.learning_rate");
  c.batch_size = static_cast<int>(cfg.get_int("codec.batch_size"));
  c.epochs = static_cast<int>(cfg.get_int("codec.epochs"));
  c.max_final_loss = cfg.get_double("codec.max_final_loss");
  c.seed = derive_seed(cfg.seed(), "init.codec");
  c.moments = moments(cfg);
  c.validate();
  return c;
}

adapter::AdapterConfig adapter_config(const RunConfig& cfg) {
  adapter::AdapterConfig a;
  a.latent_channels = static_cast<int>(cfg.get_int("codec.latent_channels"));
  a.codebook_size = static_cast<int>(cfg.get_int("adapter.codebook_size"));
  a.code_dim = static_cast<int>(cfg.get_int("adapter.code_dim"));
  a.hidden = static_cast<int>(cfg.get_int("adapter.hidden"));
  a.kernel_size = static_cast<int>(cfg.get_int("adapter.kernel_size"));
  a.feature_upsample = static_cast<int>(cfg.get_int("adapter.feature_upsample"));
  a.beta = cfg.get_double("adapter.beta");
  a.seed = derive_seed(cfg.seed(), "init.adapter");
  return a;
}

adapter::Stage1Schedule stage1_schedule(const RunConfig& cfg) {
  adapter::Stage1Schedule s;
  s.learning_rate = cfg.get_double("stage1.learning_rate");
  s.batch_size = static_cast<int>(cfg.get_int("stage1.batch_size"));
  s.epochs = static_cast<int>(cfg.get_int("stage1.epochs"));
  s.lr_floor_fraction = cfg.get_double("stage1.lr_floor_fraction");
  s.seed = derive_seed(cfg.seed(), "stage1");
  s.moments = moments(cfg);
  s.validate();
  return s;
}

finetune::RestorerConfig restorer_config(const RunConfig& cfg) {
  finetune::RestorerConfig r;
  r.latent_channels = static_cast<int>(cfg.get_int("codec.latent_channels"));
  r.width = static_cast<int>(cfg.get_int("prior.width"));
  r.seed = derive_seed(cfg.seed(), "init.restorer");
  r.validate();
  return r;
}

finetune::PriorSchedule prior_schedule(const RunConfig& cfg) {
  finetune::PriorSchedule p;
  p.learning_rate = cfg.get_double("prior.learning_rate");
  p.batch_size = static_cast<int>(cfg.get_int("prior.batch_size"));
  p.steps = static_cast<int>(cfg.get_int("prior.steps"));
  p.max_sigma = cfg.get_double("prior.max_sigma");
  p.seed = derive_seed(cfg.seed(), "prior");
  p.moments = moments(cfg);
  p.validate();
  return p;
}

finetune::Stage2Schedule stage2_schedule(const RunConfig& cfg) {
  finetune::Stage2Schedule s;
  s.learning_rate = cfg.get_double("stage2.learning_rate");
  s.batch_size = static_cast<int>(cfg.get_int("stage2.batch_size"));
  s.total_steps = static_cast<int>(cfg.get_int("stage2.total_steps"));
  s.seed = derive_seed(cfg.seed(), "stage2");
  s.moments = moments(cfg);
  s.validate();
  return s;
}

losses::LossWeights loss_weights(const RunConfig& cfg) {
  losses::LossWeights w;
  w.lambda_lpips = cfg.get_double("loss.lambda_lpips");
  w.lambda_res = cfg.get_double("loss.lambda_res");
  w.lambda_id = cfg.get_double("loss.lambda_id");
  w.lambda_fs = cfg.get_double("loss.lambda_fs");
  w.validate();
  return w;
}

losses::EmbeddingDistance embedding_distance(const std::string& variant) {
  if (variant == "cosine") return losses::EmbeddingDistance::kCosine;
  if (variant == "l2") return losses::EmbeddingDistance::kSquaredL2;
  throw ConfigError("loss variant must be 'cosine' or 'l2', got '" + variant + "'");
}

finetune::ParamSelector lora_selector(const std::string& target) {
  if (target == "conv") return {"conv"};
  if (target == "attn") return {"attn"};
  if (target == "all") return {""};
  throw ConfigError("stage2.lora_target must be conv, attn or all, got '" + target + "'");
}

// ---------------------------------------------------------------- data

PairSet load_pairs(const Layout& layout, const DatasetManifest& manifest) {
  PairSet out;
  for (const auto& e : manifest.entries) {
    out.ids.push_back(e.id);
    out.hq.push_back(read_png(layout.root / "manifests" / e.path));
    out.lq.push_back(read_png(layout.lq_dir() / (e.id + ".png")));
  }
  return out;
}

PairSet load_pairs(const Layout& layout, const std::string& manifest_name) {
  const fs::path p = layout.manifest(manifest_name);
  require(p, manifest_name + " manifest (run prepare-data)");
  return load_pairs(layout, read_manifest(p));
}

std::vector<Landmarks> load_eval_landmarks(const Layout& layout, const std::vector<std::string>& ids) {
  require(layout.landmarks(), "eval landmarks (run prepare-data)");
  std::map<std::string, Landmarks> by_id;
  std::istringstream in(read_file(layout.landmarks()));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, field;
    std::getline(row, id, ',');
    std::vector<double> v;
    while (std::getline(row, field, ',')) v.push_back(std::stod(field));
    if (v.size() % 2 != 0) throw std::runtime_error("odd landmark coordinate count for " + id);
    Landmarks l;
    for (std::size_t k = 0; k < v.size(); k += 2) l.push_back({v[k], v[k + 1]});
    by_id[id] = std::move(l);
  }
  std::vector<Landmarks> out;
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw MissingArtifact("no landmarks for eval id " + id);
    out.push_back(it->second);
  }
  return out;
}

void cmd_prepare_data(const RunConfig& cfg) {
  CommandScope scope(cfg, "prepare-data");
  const Layout& L = scope.layout;
  Stopwatch sw("prepare-data");
  const int size = static_cast<int>(cfg.get_int("data.image_size"));
  const auto corpus_size = static_cast<std::size_t>(cfg.get_int("data.corpus_size"));
  const auto eval_size = static_cast<std::size_t>(cfg.get_int("data.eval_size"));
  const auto train_size = static_cast<std::size_t>(cfg.get_int("data.train_size"));
  const auto codec_size = static_cast<std::size_t>(cfg.get_int("data.codec_size"));
  if (eval_size < 2 || eval_size >= corpus_size) throw ConfigError("data.eval_size must be in [2, corpus_size)");
  const std::size_t pool_size = corpus_size - eval_size;
  if (train_size > pool_size || codec_size > pool_size) {
    throw ConfigError("subset size exceeds the " + std::to_string(pool_size) + " non-eval corpus images");
  }
  const DegradationRanges ranges = degradation_ranges(cfg);
  const std::uint64_t seed = cfg.seed();
  const std::uint64_t face_seed = derive_seed(seed, "data.faces");
  const std::uint64_t degrade_seed = derive_seed(seed, "degrade");

  fs::create_directories(L.hq_dir());
  fs::create_directories(L.lq_dir());
  fs::create_directories(L.root / "manifests");

  // Eval ids: a seeded draw from the corpus; everything else is the pool.
  DatasetManifest corpus{Split::kTrain, seed, {}};
  for (std::size_t i = 0; i < corpus_size; ++i) corpus.entries.push_back({padded_id(i), "../data/hq/" + padded_id(i) + ".png"});
  DatasetManifest eval = sample_training_subset(corpus, eval_size, derive_seed(seed, "data.eval"));
  eval.split = Split::kTest;
  std::set<std::string> eval_ids;
  for (const auto& e : eval.entries) eval_ids.insert(e.id);
  DatasetManifest pool{Split::kTrain, seed, {}};
  for (const auto& e : corpus.entries)
    if (!eval_ids.count(e.id)) pool.entries.push_back(e);

  std::ostringstream landmarks;
  landmarks << "id,coords\n";
  for (std::size_t i = 0; i < corpus_size; ++i) {
    const std::string id = padded_id(i);
    const ToyFace face = render_toy_face(size, face_seed, i);
    const Image hq = quantize8(face.image);
    write_png(L.hq_dir() / (id + ".png"), hq);
    const bool is_eval = eval_ids.count(id) != 0;
    DegradationParams p;
    if (is_eval) {
      p = ranges.midpoint(derive_seed(degrade_seed, i));
    } else {
      Rng rng(derive_seed(degrade_seed, i));
      p = ranges.sample(rng);
    }
    write_png(L.lq_dir() / (id + ".png"), quantize8(degrade(hq, p)));
    if (is_eval) {
      landmarks << id;
      for (const auto& pt : face.landmarks) landmarks << ',' << num(pt.x) << ',' << num(pt.y);
      landmarks << '\n';
    }
  }
  write_manifest(L.manifest("corpus"), corpus);
  write_manifest(L.manifest("eval"), eval);
  write_manifest(L.manifest("pool"), pool);
  write_manifest(L.manifest("train"), sample_training_subset(pool, train_size, derive_seed(seed, "data.train")));
  write_manifest(L.manifest("codec"), sample_training_subset(pool, codec_size, derive_seed(seed, "data.codec")));
  write_file_atomic(L.landmarks(), landmarks.str());
}

// ---------------------------------------------------------------- checkpoints

codec::Codec load_codec(const RunConfig& cfg, const Layout& layout) {
  const fs::path p = layout.checkpoint("codec");
  require(p, "codec checkpoint (run train --stage codec)");
  codec::Codec c(codec_config(cfg));
  NamedArrayContainer::load(p).load_parameters(c.parameters());
  for (auto* q : c.parameters()) q->trainable = false;
  return c;
}

finetune::Restorer load_prior(const RunConfig& cfg, const Layout& layout) {
  const fs::path p = layout.checkpoint("prior");
  require(p, "prior checkpoint (run train --stage prior)");
  finetune::Restorer r(restorer_config(cfg));
  NamedArrayContainer::load(p).load_parameters(r.parameters());
  for (auto* q : r.parameters()) q->trainable = false;
  return r;
}

adapter::AlignmentAdapter load_stage1(const RunConfig& cfg, const Layout& layout) {
  const fs::path p = layout.checkpoint("stage1");
  require(p, "stage-1 checkpoint (run train --stage 1)");
  adapter::AlignmentAdapter a(adapter_config(cfg));
  NamedArrayContainer::load(p).load_parameters(a.parameters());
  a.set_trainable(false);
  return a;
}

void prepare_stage2_model(finetune::Restorer& model, const RunConfig& cfg) {
  const std::string prompt = cfg.get("stage2.prompt");
  if (cfg.get_bool("stage2.prune")) {
    model.prune(model.precompute_conditioning(prompt));
  } else {
    model.set_prompt(prompt);
  }
  finetune::attach_lora_to_selection(model, lora_selector(cfg.get("stage2.lora_target")),
                                     static_cast<int>(cfg.get_int("stage2.lora_rank")),
                                     cfg.get_double("stage2.lora_alpha"), derive_seed(cfg.seed(), "init.lora"));
}

namespace {

void save_stage2(const fs::path& path, const finetune::Restorer& model, const RunConfig& cfg) {
  NamedArrayContainer extra;
  if (model.pruned()) {
    const auto& c = *model.conditioning();
    extra.add_bytes("conditioning.prompt_text", c.prompt_text);
    extra.add_f32("conditioning.prompt_embedding", {static_cast<std::uint32_t>(c.prompt_embedding.size())},
                  c.prompt_embedding);
    extra.add_f32("conditioning.timestep_embedding", {static_cast<std::uint32_t>(c.timestep_embedding.size())},
                  c.timestep_embedding);
    extra.add_u64("conditioning.checksum", c.checksum);
  }
  save_params(path, model.parameters(), cfg, std::move(extra));
}

}  // namespace

finetune::Restorer load_stage2(const RunConfig& cfg, const Layout& layout) {
  const fs::path p = layout.checkpoint("stage2");
  require(p, "stage-2 checkpoint (run train --stage 2)");
  const auto ckpt = NamedArrayContainer::load(p);
  finetune::Restorer model(restorer_config(cfg));
  finetune::attach_lora_to_selection(model, lora_selector(cfg.get("stage2.lora_target")),
                                     static_cast<int>(cfg.get_int("stage2.lora_rank")),
                                     cfg.get_double("stage2.lora_alpha"), derive_seed(cfg.seed(), "init.lora"));
  if (ckpt.contains("conditioning.checksum")) {
    finetune::PrecomputedConditioning c;
    c.prompt_text = ckpt.get_bytes("conditioning.prompt_text");
    c.prompt_embedding = ckpt.get("conditioning.prompt_embedding").f32;
    c.timestep_embedding = ckpt.get("conditioning.timestep_embedding").f32;
    c.checksum = ckpt.get_u64("conditioning.checksum");
    model.prune(c);
  } else {
    model.set_prompt(cfg.get("stage2.prompt"));
  }
  ckpt.load_parameters(model.parameters());
  for (auto* q : model.parameters()) q->trainable = false;
  return model;
}

// ---------------------------------------------------------------- train

void cmd_train(const RunConfig& cfg, const std::string& stage) {
  if (stage != "codec" && stage != "prior" && stage != "1" && stage != "2") {
    throw ConfigError("train stage must be codec, prior, 1 or 2, got '" + stage + "'");
  }
  CommandScope scope(cfg, "train-" + stage);
  const Layout& L = scope.layout;
  Stopwatch sw("train " + stage);
  const int scale = static_cast<int>(cfg.get_int("data.scale_factor"));

  if (stage == "codec") {
    const PairSet set = load_pairs(L, "codec");
    codec::Codec c(codec_config(cfg));
    std::string log = "epoch,loss\n";
    codec::train_toy_codec(c, set.hq, [&](int e, double loss) {
      log += std::to_string(e) + "," + num(loss) + "\n";
      std::fprintf(stderr, "[codec] epoch %d loss %.6g\n", e, loss);
    });
    write_file_atomic(L.log("codec"), log);
    save_params(L.checkpoint("codec"), std::as_const(c).parameters(), cfg);
    return;
  }

  if (stage == "prior") {
    const codec::Codec c = load_codec(cfg, L);
    const PairSet set = load_pairs(L, "codec");
    finetune::Restorer model(restorer_config(cfg));
    std::string log = "step,loss\n";
    const auto result = finetune::pretrain_toy_restorer(model, encode_all(c, set.hq), prior_schedule(cfg),
                                                        [&](int s, double loss) {
                                                          log += std::to_string(s) + "," + num(loss) + "\n";
                                                        });
    std::fprintf(stderr, "[prior] clean latent mse %.6g\n", result.clean_mse);
    write_file_atomic(L.log("prior"), log);
    save_params(L.checkpoint("prior"), std::as_const(model).parameters(), cfg);
    return;
  }

  if (stage == "1") {
    const codec::Codec c = load_codec(cfg, L);
    load_prior(cfg, L);  // ordering contract: codec -> prior -> 1 -> 2
    const PairSet set = load_pairs(L, "train");
    adapter::AlignmentAdapter a(adapter_config(cfg));
    std::string log = "epoch,loss\n";
    adapter::train_stage1(a, latent_pairs(set, scale, c), stage1_schedule(cfg), [&](int e, double loss) {
      log += std::to_string(e) + "," + num(loss) + "\n";
      if (e % 10 == 9) std::fprintf(stderr, "[stage1] epoch %d loss %.6g\n", e, loss);
    });
    write_file_atomic(L.log("stage1"), log);
    save_params(L.checkpoint("stage1"), std::as_const(a).parameters(), cfg);
    return;
  }

  const codec::Codec c = load_codec(cfg, L);
  const adapter::AlignmentAdapter a = load_stage1(cfg, L);
  const PairSet set = load_pairs(L, "train");
  const Providers providers;
  auto out = run_stage2(cfg, L, set, c, a, providers);
  write_file_atomic(L.log("stage2"), stage2_log_csv(out.result));
  save_stage2(L.checkpoint("stage2"), out.model, cfg);
}

// ---------------------------------------------------------------- evaluate

std::vector<Image> restore_all(const std::vector<Image>& lq, int scale_factor, const codec::Codec& codec,
                               const adapter::AlignmentAdapter* adapter, const finetune::Restorer& model) {
  std::vector<Image> out;
  out.reserve(lq.size());
  for (const auto& img : lq) {
    out.push_back(finetune::restore(finetune::restorer_input(img, scale_factor, codec, adapter), model, codec));
  }
  return out;
}

metrics::MetricsReport evaluate_images(const std::vector<std::string>& ids, const std::vector<Image>& restored,
                                       const std::vector<Image>& reference, const std::vector<Landmarks>& landmarks,
                                       const Providers& providers) {
  if (ids.size() != restored.size() || ids.size() != reference.size() || ids.size() != landmarks.size()) {
    throw std::invalid_argument("evaluate_images: ids, images and landmarks differ in count");
  }
  metrics::MetricsReport report;
  report.restored_count = restored.size();
  report.reference_count = reference.size();
  const Eigen::Index dim = ids.empty() ? 0 : providers.identity.embed(reference.front()).size();
  metrics::FeatureSet fr{Eigen::MatrixXd(static_cast<Eigen::Index>(ids.size()), dim), "restored"};
  metrics::FeatureSet fg{Eigen::MatrixXd(static_cast<Eigen::Index>(ids.size()), dim), "reference"};
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto er = providers.identity.embed(restored[i]);
    const auto eg = providers.identity.embed(reference[i]);
    fr.rows.row(static_cast<Eigen::Index>(i)) = er.transpose();
    fg.rows.row(static_cast<Eigen::Index>(i)) = eg.transpose();
    const Landmarks found = metrics::locate_landmarks(restored[i], reference[i], landmarks[i]);
    report.rows.push_back({ids[i], metrics::psnr(restored[i], reference[i]), metrics::ssim(restored[i], reference[i]),
                           metrics::identity_degree(er, eg), metrics::landmark_distance(found, landmarks[i])});
  }
  report.fid = ids.size() >= 2 ? metrics::fid(fr, fg) : 0.0;
  return report;
}

EvaluationSummary cmd_evaluate(const RunConfig& cfg) {
  CommandScope scope(cfg, "evaluate");
  const Layout& L = scope.layout;
  Stopwatch sw("evaluate");
  const codec::Codec c = load_codec(cfg, L);
  const adapter::AlignmentAdapter a = load_stage1(cfg, L);
  const finetune::Restorer model = load_stage2(cfg, L);
  const PairSet eval = load_pairs(L, "eval");
  const auto landmarks = load_eval_landmarks(L, eval.ids);
  const int scale = static_cast<int>(cfg.get_int("data.scale_factor"));
  const Providers providers;
  const bool align = cfg.get_bool("stage2.align");

  EvaluationSummary s;
  const auto restored = restore_all(eval.lq, scale, c, align ? &a : nullptr, model);
  s.restored = evaluate_images(eval.ids, restored, eval.hq, landmarks, providers);
  if (cfg.get_bool("eval.no_adapter")) {
    s.no_adapter = evaluate_images(eval.ids, restore_all(eval.lq, scale, c, nullptr, model), eval.hq, landmarks, providers);
  }
  s.upsampled = evaluate_images(eval.ids, upsample_all(eval.lq, scale), eval.hq, landmarks, providers);

  const fs::path dir = L.reports();
  write_report(dir, "restored", s.restored);
  if (cfg.get_bool("eval.no_adapter")) write_report(dir, "no_adapter", s.no_adapter);
  write_report(dir, "upsampled_lq", s.upsampled);

  std::string table = "variant,psnr,ssim,deg,lmd,fid\n";
  auto add = [&](const std::string& name, const metrics::MetricsReport& r) {
    table += name + "," + metrics::format_psnr(r.mean_psnr()) + "," + num(r.mean_ssim()) + "," + num(r.mean_deg()) +
             "," + num(r.mean_lmd()) + "," + num(r.fid) + "\n";
  };
  add("restored", s.restored);
  if (cfg.get_bool("eval.no_adapter")) add("no_adapter", s.no_adapter);
  add("upsampled_lq", s.upsampled);
  write_file_atomic(dir / "comparison.csv", table);

  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(std::max<std::int64_t>(0, cfg.get_int("eval.save_images"))),
                                          eval.size());
  if (keep > 0) fs::create_directories(dir / "images");
  for (std::size_t i = 0; i < keep; ++i) write_png(dir / "images" / (eval.ids[i] + ".png"), restored[i]);
  std::fprintf(stderr, "[evaluate] psnr restored %s no-adapter %s upsampled %s\n",
               metrics::format_psnr(s.restored.mean_psnr()).c_str(),
               cfg.get_bool("eval.no_adapter") ? metrics::format_psnr(s.no_adapter.mean_psnr()).c_str() : "-",
               metrics::format_psnr(s.upsampled.mean_psnr()).c_str());
  return s;
}

// ---------------------------------------------------------------- ablate

void ExperimentManifest::validate() const {
  std::set<std::string> seen;
  for (const auto& r : runs) {
    if (r.id.empty()) throw ConfigError("experiment run with an empty id");
    if (r.id.find_first_of(",\"\n/") != std::string::npos) throw ConfigError("run id '" + r.id + "' has bad characters");
    if (!seen.insert(r.id).second) throw ConfigError("duplicate run id '" + r.id + "'");
  }
}

ExperimentManifest ExperimentManifest::parse(const std::string& text) {
  ExperimentManifest m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream row(line);
    ExperimentRun r;
    if (!(row >> r.id)) continue;
    std::string kv;
    while (row >> kv) r.overrides.push_back(kv);
    m.runs.push_back(std::move(r));
  }
  m.validate();
  return m;
}

ExperimentManifest ExperimentManifest::loss_grid() {
  return {{{"loss1_res", {"loss.lambda_id=0", "loss.lambda_fs=0"}},
           {"loss2_id_cos", {"loss.lambda_fs=0", "loss.id_variant=cosine"}},
           {"loss3_id_l2", {"loss.lambda_fs=0", "loss.id_variant=l2"}},
           {"loss4_fs_l2", {"loss.lambda_id=0", "loss.fs_variant=l2"}},
           {"loss5_fs_cos", {"loss.lambda_id=0", "loss.fs_variant=cosine"}},
           {"loss6_id_fs_cos", {"loss.id_variant=cosine", "loss.fs_variant=cosine"}}}};
}

ExperimentManifest ExperimentManifest::architecture_grid() {
  return {{{"arch1_full", {"stage2.align=false", "stage2.prune=false", "stage2.lora_target=all"}},
           {"arch2_attn", {"stage2.align=false", "stage2.prune=false", "stage2.lora_target=attn"}},
           {"arch3_conv", {"stage2.align=false", "stage2.prune=false", "stage2.lora_target=conv"}},
           {"arch4_pruned", {"stage2.align=false", "stage2.prune=true", "stage2.lora_target=conv"}},
           {"arch5_aligned", {"stage2.align=true", "stage2.prune=true", "stage2.lora_target=conv"}}}};
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "run_id,status,psnr,ssim,deg,lmd,fid,lpips,total_params,trainable_params,error\n";
  for (const auto& r : rows) {
    std::string err = r.error;
    std::replace_if(err.begin(), err.end(), [](char ch) { return ch == ',' || ch == '\n' || ch == '"'; }, ' ');
    out += r.id + "," + (r.ok ? "ok" : "failed") + "," + (r.ok ? metrics::format_psnr(r.psnr) : "") + "," +
           (r.ok ? num(r.ssim) : "") + "," + (r.ok ? num(r.deg) : "") + "," + (r.ok ? num(r.lmd) : "") + "," +
           (r.ok ? num(r.fid) : "") + "," + (r.ok ? num(r.lpips) : "") + "," +
           (r.ok ? std::to_string(r.total_params) : "") + "," + (r.ok ? std::to_string(r.trainable_params) : "") +
           "," + err + "\n";
  }
  return out;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const ExperimentManifest& grid, const std::string& table_name) {
  grid.validate();
  CommandScope scope(cfg, "ablate-" + table_name);
  const Layout& L = scope.layout;
  Stopwatch sw("ablate " + table_name);
  std::vector<AblationRow> rows;
  if (grid.runs.empty()) {
    write_file_atomic(L.reports() / (table_name + ".csv"), ablation_csv(rows));
    return rows;
  }
  const codec::Codec c = load_codec(cfg, L);
  const adapter::AlignmentAdapter a = load_stage1(cfg, L);
  const PairSet train = load_pairs(L, "train");
  const PairSet eval = load_pairs(L, "eval");
  const auto landmarks = load_eval_landmarks(L, eval.ids);
  const int scale = static_cast<int>(cfg.get_int("data.scale_factor"));
  const Providers providers;

  for (const auto& run : grid.runs) {
    AblationRow row;
    row.id = run.id;
    try {
      RunConfig rc = cfg;
      rc.merge_overrides(run.overrides);
      const fs::path dir = L.root / "ablate" / run.id;
      write_file_atomic(dir / "resolved.cfg", rc.serialize());
      auto out = run_stage2(rc, L, train, c, a, providers);
      row.total_params = out.model.parameter_count();
      row.trainable_params = out.model.trainable_parameter_count();
      for (auto* p : out.model.parameters()) p->trainable = false;
      const auto restored = restore_all(eval.lq, scale, c, rc.get_bool("stage2.align") ? &a : nullptr, out.model);
      const auto report = evaluate_images(eval.ids, restored, eval.hq, landmarks, providers);
      write_file_atomic(dir / "stage2_loss.csv", stage2_log_csv(out.result));
      write_report(dir, "metrics", report);
      row.psnr = report.mean_psnr();
      row.ssim = report.mean_ssim();
      row.deg = report.mean_deg();
      row.lmd = report.mean_lmd();
      row.fid = report.fid;
      row.lpips = mean_perceptual(restored, eval.hq, providers);
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
      std::fprintf(stderr, "[ablate] run %s failed: %s\n", run.id.c_str(), e.what());
    }
    rows.push_back(row);
    write_file_atomic(L.reports() / (table_name + ".csv"), ablation_csv(rows));
  }
  return rows;
}

// ---------------------------------------------------------------- sweep

SweepResult cmd_sweep_trainsize(const RunConfig& cfg, const std::vector<int>& sizes) {
  CommandScope scope(cfg, "sweep-trainsize");
  const Layout& L = scope.layout;
  Stopwatch sw("sweep-trainsize");
  require(L.manifest("pool"), "pool manifest (run prepare-data)");
  const DatasetManifest pool = read_manifest(L.manifest("pool"));
  for (int n : sizes) {
    if (n < 1 || static_cast<std::size_t>(n) > pool.size()) {
      throw ConfigError("sweep size " + std::to_string(n) + " outside [1, " + std::to_string(pool.size()) + "]");
    }
  }
  const codec::Codec c = load_codec(cfg, L);
  const adapter::AlignmentAdapter a = load_stage1(cfg, L);
  const PairSet eval = load_pairs(L, "eval");
  const int scale = static_cast<int>(cfg.get_int("data.scale_factor"));
  const Providers providers;
  const bool align = cfg.get_bool("stage2.align");

  SweepResult result;
  for (int n : sizes) {
    // Same stream as the train manifest, so subsets are nested and the
    // train_size run sees exactly the training set.
    const PairSet train = load_pairs(L, sample_training_subset(pool, static_cast<std::size_t>(n),
                                                               derive_seed(cfg.seed(), "data.train")));
    auto out = run_stage2(cfg, L, train, c, a, providers);
    for (auto* p : out.model.parameters()) p->trainable = false;
    const auto restored = restore_all(eval.lq, scale, c, align ? &a : nullptr, out.model);
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (std::size_t i = 0; i < restored.size(); ++i) {
      psnr_sum += metrics::psnr(restored[i], eval.hq[i]);
      ssim_sum += metrics::ssim(restored[i], eval.hq[i]);
    }
    const double m = static_cast<double>(restored.size());
    result.rows.push_back({n, psnr_sum / m, ssim_sum / m, mean_perceptual(restored, eval.hq, providers)});
    std::fprintf(stderr, "[sweep] size %d psnr %.4f\n", n, psnr_sum / m);
  }

  std::string table = "size,psnr,ssim,lpips\n";
  for (const auto& r : result.rows)
    table += std::to_string(r.size) + "," + metrics::format_psnr(r.psnr) + "," + num(r.ssim) + "," + num(r.lpips) + "\n";
  const auto largest = std::max_element(result.rows.begin(), result.rows.end(),
                                        [](const SweepRow& x, const SweepRow& y) { return x.size < y.size; });
  const auto at600 = std::find_if(result.rows.begin(), result.rows.end(), [](const SweepRow& r) { return r.size == 600; });
  nlohmann::ordered_json summary;
  summary["sizes"] = sizes;
  if (at600 != result.rows.end() && largest != result.rows.end()) {
    result.has_plateau_check = true;
    result.plateau = std::abs(largest->psnr - at600->psnr) <= 0.02 * std::abs(largest->psnr);
    summary["plateau_600_within_2pct"] = result.plateau;
  } else {
    summary["plateau_600_within_2pct"] = nullptr;
  }
  write_file_atomic(L.reports() / "sweep_trainsize.csv", table);
  write_file_atomic(L.reports() / "sweep_trainsize.json", summary.dump(2) + "\n");

  Series ps{"psnr", {}, {}}, lp{"lpips", {}, {}};
  for (const auto& r : result.rows) {
    ps.x.push_back(r.size);
    ps.y.push_back(r.psnr);
    lp.x.push_back(r.size);
    lp.y.push_back(r.lpips);
  }
  write_png(L.reports() / "sweep_psnr.png", line_plot({ps}));
  write_png(L.reports() / "sweep_lpips.png", line_plot({lp}));
  return result;
}

// ---------------------------------------------------------------- diagnose

Compactness corpus_compactness(int n, int image_size, std::uint64_t seed, const Providers& providers) {
  const losses::LayoutProvider layout(providers.stack);
  const auto faces = generate_toy_faces(n, image_size, derive_seed(seed, "diagnose.faces"));
  const auto noise = generate_noise_images(n, image_size, derive_seed(seed, "diagnose.noise"));
  const Eigen::Index dim = layout.embed(faces.front()).size();
  metrics::FeatureSet f{Eigen::MatrixXd(n, dim), "faces"}, z{Eigen::MatrixXd(n, dim), "noise"};
  metrics::FeatureSet both{Eigen::MatrixXd(2 * n, dim), "faces+noise"};
  std::vector<int> labels(static_cast<std::size_t>(2 * n), 0);
  for (int i = 0; i < n; ++i) {
    f.rows.row(i) = layout.embed(faces[static_cast<std::size_t>(i)]).transpose();
    z.rows.row(i) = layout.embed(noise[static_cast<std::size_t>(i)]).transpose();
    both.rows.row(i) = f.rows.row(i);
    both.rows.row(n + i) = z.rows.row(i);
    labels[static_cast<std::size_t>(n + i)] = 1;
  }
  return {metrics::intra_class_distance(f), metrics::intra_class_distance(z), metrics::silhouette(both, labels)};
}

LatentDiagnostics cmd_diagnose_latents(const RunConfig& cfg) {
  CommandScope scope(cfg, "diagnose-latents");
  const Layout& L = scope.layout;
  Stopwatch sw("diagnose-latents");
  const codec::Codec c = load_codec(cfg, L);
  adapter::AlignmentAdapter a = load_stage1(cfg, L);
  const PairSet eval = load_pairs(L, "eval");
  const int scale = static_cast<int>(cfg.get_int("data.scale_factor"));
  const auto pairs = latent_pairs(eval, scale, c);

  LatentDiagnostics d;
  std::vector<double> lq_gaps, al_gaps;
  a.codebook().reset_usage();
  std::string per_image = "id,lq_gap,aligned_gap\n";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto trace = a.forward_trace(pairs[i].lq, true);
    lq_gaps.push_back(mean_l1(pairs[i].lq, pairs[i].hq));
    al_gaps.push_back(mean_l1(trace.aligned(), pairs[i].hq));
    per_image += eval.ids[i] + "," + num(lq_gaps.back()) + "," + num(al_gaps.back()) + "\n";
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  d.lq_gap_mean = mean(lq_gaps);
  d.lq_gap_p50 = percentile(lq_gaps, 0.5);
  d.lq_gap_p90 = percentile(lq_gaps, 0.9);
  d.aligned_gap_mean = mean(al_gaps);
  d.aligned_gap_p50 = percentile(al_gaps, 0.5);
  d.aligned_gap_p90 = percentile(al_gaps, 0.9);
  d.usage = a.codebook().usage_counts();
  d.utilization = a.codebook().utilization();

  const Providers providers;
  const auto comp = corpus_compactness(static_cast<int>(cfg.get_int("diagnose.corpus_size")),
                                       static_cast<int>(cfg.get_int("data.image_size")), cfg.seed(), providers);
  d.face_intra = comp.face_intra;
  d.noise_intra = comp.noise_intra;
  d.silhouette = comp.silhouette;

  nlohmann::ordered_json j;
  j["lq_gap"] = {{"mean", d.lq_gap_mean}, {"p50", d.lq_gap_p50}, {"p90", d.lq_gap_p90}};
  j["aligned_gap"] = {{"mean", d.aligned_gap_mean}, {"p50", d.aligned_gap_p50}, {"p90", d.aligned_gap_p90}};
  j["codebook_utilization"] = d.utilization;
  j["face_intra_class_distance"] = d.face_intra;
  j["noise_intra_class_distance"] = d.noise_intra;
  j["face_vs_noise_silhouette"] = d.silhouette;
  const fs::path dir = L.reports();
  write_file_atomic(dir / "diagnose.json", j.dump(2) + "\n");
  write_file_atomic(dir / "diagnose_gaps.csv", per_image);
  std::string usage = "entry,count\n";
  std::vector<double> counts;
  for (std::size_t k = 0; k < d.usage.size(); ++k) {
    usage += std::to_string(k) + "," + std::to_string(d.usage[k]) + "\n";
    counts.push_back(static_cast<double>(d.usage[k]));
  }
  write_file_atomic(dir / "codebook_usage.csv", usage);
  write_png(dir / "codebook_usage.png", bar_plot(counts));
  return d;
}

// ---------------------------------------------------------------- plot

void cmd_plot(const fs::path& csv, const std::string& x, const std::vector<std::string>& y, const fs::path& out) {
  std::istringstream in(read_file(csv));
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(csv.string() + " is empty");
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string col;
    while (std::getline(h, col, ',')) header.push_back(col);
  }
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("column '" + name + "' not in " + csv.string());
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t xi = column(x);
  std::vector<Series> series;
  std::vector<std::size_t> yi;
  for (const auto& name : y) {
    yi.push_back(column(name));
    series.push_back({name, {}, {}});
  }
  auto parse = [](const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    try {
      return std::stod(s);
    } catch (const std::exception&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream r(line);
    std::string cell;
    while (std::getline(r, cell, ',')) cells.push_back(cell);
    cells.resize(header.size());
    for (std::size_t k = 0; k < series.size(); ++k) {
      series[k].x.push_back(parse(cells[xi]));
      series[k].y.push_back(parse(cells[yi[k]]));
    }
  }
  write_png(out, line_plot(series));
}

}  // namespace lafr::harness
