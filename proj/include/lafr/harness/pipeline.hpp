// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lafr/adapter/alignment.hpp"
#include "lafr/codec/codec.hpp"
#include "lafr/data/degradation.hpp"
#include "lafr/data/manifest.hpp"
#include "lafr/finetune/restorer.hpp"
#include "lafr/harness/config.hpp"
#include "lafr/losses/losses.hpp"
#include "lafr/metrics/metrics.hpp"

namespace lafr::harness {

/// A command's prerequisite file is absent.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Where every command reads and writes under the output directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path hq_dir() const { return root / "data" / "hq"; }
  std::filesystem::path lq_dir() const { return root / "data" / "lq"; }
  std::filesystem::path manifest(const std::string& name) const { return root / "manifests" / (name + ".txt"); }
  std::filesystem::path landmarks() const { return root / "manifests" / "eval_landmarks.csv"; }
  std::filesystem::path checkpoint(const std::string& name) const { return root / "checkpoints" / (name + ".lafr"); }
  std::filesystem::path log(const std::string& name) const { return root / "logs" / (name + ".csv"); }
  std::filesystem::path resolved(const std::string& command) const { return root / "resolved" / (command + ".cfg"); }
  std::filesystem::path reports() const { return root / "reports"; }
};

// Config -> module settings.
DegradationRanges degradation_ranges(const RunConfig& cfg);
codec::CodecConfig codec_config(const RunConfig& cfg);
adapter::AdapterConfig adapter_config(const RunConfig& cfg);
adapter::Stage1Schedule stage1_schedule(const RunConfig& cfg);
finetune::RestorerConfig restorer_config(const RunConfig& cfg);
finetune::PriorSchedule prior_schedule(const RunConfig& cfg);
finetune::Stage2Schedule stage2_schedule(const RunConfig& cfg);
losses::LossWeights loss_weights(const RunConfig& cfg);
losses::EmbeddingDistance embedding_distance(const std::string& variant);
/// "conv", "attn" or "all".
finetune::ParamSelector lora_selector(const std::string& target);

/// Fixed loss/metric networks shared by every run.
struct Providers {
  losses::FeatureStack stack;
  losses::IdentityProvider identity{stack};
  losses::StructureProvider structure;
  Providers() = default;
  Providers(const Providers&) = delete;
  Providers& operator=(const Providers&) = delete;
};

/// HQ/LQ images of one manifest, in manifest order.
struct PairSet {
  std::vector<std::string> ids;
  std::vector<Image> hq;
  std::vector<Image> lq;
  std::size_t size() const { return ids.size(); }
};
PairSet load_pairs(const Layout& layout, const std::string& manifest_name);
PairSet load_pairs(const Layout& layout, const DatasetManifest& manifest);
std::vector<Landmarks> load_eval_landmarks(const Layout& layout, const std::vector<std::string>& ids);

// Checkpoints. Loaders throw MissingArtifact naming the file.
codec::Codec load_codec(const RunConfig& cfg, const Layout& layout);
finetune::Restorer load_prior(const RunConfig& cfg, const Layout& layout);
adapter::AlignmentAdapter load_stage1(const RunConfig& cfg, const Layout& layout);
finetune::Restorer load_stage2(const RunConfig& cfg, const Layout& layout);

/// Prior weights -> stage-2 model: prompt set or pruned into precomputed
/// conditioning, base frozen, LoRA attached to the configured target.
void prepare_stage2_model(finetune::Restorer& model, const RunConfig& cfg);

/// Per-image metrics plus identity-embedding FID against the references.
metrics::MetricsReport evaluate_images(const std::vector<std::string>& ids, const std::vector<Image>& restored,
                                       const std::vector<Image>& reference, const std::vector<Landmarks>& landmarks,
                                       const Providers& providers);

/// (upsampled LQ latent, HQ latent) per pair.
std::vector<adapter::LatentPair> latent_pairs(const PairSet& pairs, int scale, const codec::Codec& codec);

std::vector<Image> restore_all(const std::vector<Image>& lq, int scale_factor, const codec::Codec& codec,
                               const adapter::AlignmentAdapter* adapter, const finetune::Restorer& model);

// Commands. Each takes the directory lock and writes a resolved-config
// snapshot before doing anything else.
void cmd_prepare_data(const RunConfig& cfg);
/// stage: "codec", "prior", "1" or "2".
void cmd_train(const RunConfig& cfg, const std::string& stage);

struct EvaluationSummary {
  metrics::MetricsReport restored;
  metrics::MetricsReport no_adapter;  // empty when eval.no_adapter is off
  metrics::MetricsReport upsampled;
};
EvaluationSummary cmd_evaluate(const RunConfig& cfg);

struct ExperimentRun {
  std::string id;
  std::vector<std::string> overrides;  // key=value
};
struct ExperimentManifest {
  std::vector<ExperimentRun> runs;
  /// Throws on duplicate or empty run ids.
  void validate() const;
  /// One run per line: `run_id key=value ...`; `#` starts a comment.
  static ExperimentManifest parse(const std::string& text);
  static ExperimentManifest loss_grid();
  static ExperimentManifest architecture_grid();
};

struct AblationRow {
  std::string id;
  bool ok = false;
  std::string error;
  double psnr = 0.0, ssim = 0.0, deg = 0.0, lmd = 0.0, fid = 0.0, lpips = 0.0;
  std::size_t total_params = 0, trainable_params = 0;
};
std::string ablation_csv(const std::vector<AblationRow>& rows);
/// Stage 2 + evaluation per grid row on top of the base run's codec, prior
/// and stage-1 checkpoints. A failing row is recorded and the grid goes on.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const ExperimentManifest& grid,
                                    const std::string& table_name = "ablation");

struct SweepRow {
  int size = 0;
  double psnr = 0.0, ssim = 0.0, lpips = 0.0;
};
struct SweepResult {
  std::vector<SweepRow> rows;
  bool has_plateau_check = false;
  bool plateau = false;  // 600-image PSNR within 2% of the largest run's
};
SweepResult cmd_sweep_trainsize(const RunConfig& cfg, const std::vector<int>& sizes);

struct LatentDiagnostics {
  double lq_gap_mean = 0.0, lq_gap_p50 = 0.0, lq_gap_p90 = 0.0;
  double aligned_gap_mean = 0.0, aligned_gap_p50 = 0.0, aligned_gap_p90 = 0.0;
  std::vector<std::uint64_t> usage;
  double utilization = 0.0;
  double face_intra = 0.0, noise_intra = 0.0, silhouette = 0.0;
};
LatentDiagnostics cmd_diagnose_latents(const RunConfig& cfg);

/// Line plot of columns `y` against column `x` of a CSV file.
void cmd_plot(const std::filesystem::path& csv, const std::string& x, const std::vector<std::string>& y,
              const std::filesystem::path& out);

/// Face-vs-noise compactness under the layout provider.
struct Compactness {
  double face_intra = 0.0;
  double noise_intra = 0.0;
  double silhouette = 0.0;
};
Compactness corpus_compactness(int n, int image_size, std::uint64_t seed, const Providers& providers);

}  // namespace lafr::harness
