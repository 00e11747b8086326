// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include <malloc.h>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lafr/harness/config.hpp"
#include "lafr/harness/pipeline.hpp"

using namespace lafr::harness;

int main(int argc, char** argv) {
  // Training allocates and frees large activation buffers every step; keep
  // them on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);

  CLI::App app{"lafr: desk-scale latent-alignment face restoration"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> sets;
  std::string output_dir;
  std::string seed;
  app.add_option("-c,--config", config_file, "config file of `dotted.key = value` lines");
  app.add_option("-s,--set", sets, "override, key=value (repeatable)");
  app.add_option("-o,--output-dir", output_dir, "output directory (same as --set output_dir=...)");
  app.add_option("--seed", seed, "global seed (same as --set seed=...)");

  auto* prepare = app.add_subcommand("prepare-data", "render corpus, degrade, write manifests");

  std::string stage;
  auto* train = app.add_subcommand("train", "train one stage");
  train->add_option("--stage", stage, "codec | prior | 1 | 2")->required()->check(CLI::IsMember({"codec", "prior", "1", "2"}));

  auto* evaluate = app.add_subcommand("evaluate", "metrics reports for the stage-2 model and baselines");

  std::string grid = "loss";
  std::string table;
  auto* ablate = app.add_subcommand("ablate", "stage-2 grid over loss or architecture settings");
  ablate->add_option("--grid", grid, "loss | arch | path to a manifest file");
  ablate->add_option("--name", table, "table name (default: grid name)");

  std::string sizes_text;
  auto* sweep = app.add_subcommand("sweep-trainsize", "stage-2 metrics against training-set size");
  sweep->add_option("--sizes", sizes_text, "comma list (default sweep.sizes)");

  auto* diagnose = app.add_subcommand("diagnose-latents", "latent gap, codebook usage and compactness statistics");

  std::string csv, x = "step", out;
  std::vector<std::string> ys;
  auto* plot = app.add_subcommand("plot", "line plot of CSV columns");
  plot->add_option("--csv", csv)->required()->check(CLI::ExistingFile);
  plot->add_option("--x", x);
  plot->add_option("--y", ys)->required();
  plot->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (plot->parsed()) {
      cmd_plot(csv, x, ys, out);
      return 0;
    }
    RunConfig cfg;
    if (!config_file.empty()) cfg.merge_file(config_file);
    cfg.merge_environment();
    cfg.merge_overrides(sets);
    if (!output_dir.empty()) cfg.set("output_dir", output_dir);
    if (!seed.empty()) cfg.set("seed", seed);

    if (prepare->parsed()) {
      cmd_prepare_data(cfg);
    } else if (train->parsed()) {
      cmd_train(cfg, stage);
    } else if (evaluate->parsed()) {
      cmd_evaluate(cfg);
    } else if (ablate->parsed()) {
      ExperimentManifest m;
      if (grid == "loss") {
        m = ExperimentManifest::loss_grid();
      } else if (grid == "arch") {
        m = ExperimentManifest::architecture_grid();
      } else {
        m = ExperimentManifest::parse(read_file(grid));
      }
      if (table.empty()) table = (grid == "loss" || grid == "arch") ? "ablation_" + grid : "ablation";
      cmd_ablate(cfg, m, table);
    } else if (sweep->parsed()) {
      if (!sizes_text.empty()) cfg.set("sweep.sizes", sizes_text);
      cmd_sweep_trainsize(cfg, cfg.get_int_list("sweep.sizes"));
    } else if (diagnose->parsed()) {
      const auto d = cmd_diagnose_latents(cfg);
      std::printf("lq gap %.6f aligned gap %.6f utilization %.4f face intra %.6f noise intra %.6f silhouette %.6f\n",
                  d.lq_gap_mean, d.aligned_gap_mean, d.utilization, d.face_intra, d.noise_intra, d.silhouette);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "lafr: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
