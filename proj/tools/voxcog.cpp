// Copyright 2026 The VoxCog Toolkit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// voxcog: synth | pretrain | crossval | evaluate | report
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration or validation
// failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "voxcog/commands.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct GlobalOptions {
  std::string config;
  int jobs = 1;
  std::optional<std::uint64_t> seed;
};

voxcog::RunConfig resolve(const GlobalOptions& g) {
  voxcog::RunConfig cfg = g.config.empty() ? voxcog::RunConfig{} : voxcog::load_run_config(g.config);
  if (g.seed) {
    cfg.train.seed = *g.seed;
    cfg.corpus.seed = *g.seed;
  }
  cfg.train.jobs = g.jobs;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialect-initialized speech classifiers for cognitive impairment screening"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--jobs", g.jobs, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "Overrides train.seed and corpus.seed");

  std::string out, manifest, init, models, mode;
  std::optional<int> k;
  std::optional<std::string> report_out;
  std::vector<std::string> runs;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  synth->add_option("--out", out, "Output directory")->required();

  auto* pretrain = app.add_subcommand("pretrain", "Dialect pretraining");
  pretrain->add_option("--manifest", manifest, "JSONL manifest with dialect fields")->required();
  pretrain->add_option("--out", out, "Checkpoint path")->required();

  auto* crossval = app.add_subcommand("crossval", "Cross-validated finetuning");
  crossval->add_option("--manifest", manifest, "JSONL manifest")->required();
  crossval->add_option("--init", init, "Pretrained checkpoint, or 'none' for the baseline arm")->required();
  crossval->add_option("--k", k, "Number of folds (overrides config k)");
  crossval->add_option("--out", out, "Output directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Score fold models on a manifest");
  evaluate->add_option("--models", models, "Directory of .vxcg checkpoints")->required();
  evaluate->add_option("--manifest", manifest, "JSONL manifest")->required();
  evaluate->add_option("--mode", mode, "fold_average or fold_ensemble (overrides config eval_mode)");
  evaluate->add_option("--out", out, "Report JSON path")->required();

  auto* report = app.add_subcommand("report", "Baseline vs transfer comparison across runs");
  report->add_option("--runs", runs, "crossval output directories")->required()->expected(1, -1);
  report->add_option("--out", report_out, "Comparison JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (report->parsed()) {
      std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
      voxcog::cmd_report(dirs, report_out ? std::optional<std::filesystem::path>(*report_out) : std::nullopt,
                         std::cout);
      return 0;
    }
    voxcog::RunConfig cfg = resolve(g);
    if (k) cfg.k = *k;
    if (!mode.empty()) cfg.eval_mode = mode;
    cfg.validate();
    std::cout << "config digest: " << voxcog::config_digest(cfg) << "\n";

    if (synth->parsed()) {
      voxcog::cmd_synth(cfg, out, std::cout);
    } else if (pretrain->parsed()) {
      voxcog::cmd_pretrain(cfg, manifest, out, std::cout);
    } else if (crossval->parsed()) {
      std::optional<std::filesystem::path> ckpt;
      if (init != "none") ckpt = init;
      voxcog::cmd_crossval(cfg, manifest, ckpt, out, std::cout);
    } else if (evaluate->parsed()) {
      voxcog::cmd_evaluate(cfg, models, manifest, cfg.eval_mode, out, std::cout);
    }
    return 0;
  } catch (const voxcog::ConfigError& e) {
    std::cerr << "voxcog: configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "voxcog: error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
