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

// Command implementations behind the `voxcog` tool. Each writes only under
// its output path and reports progress to `log`.

#pragma once

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "voxcog/checkpoint.hpp"
#include "voxcog/config.hpp"
#include "voxcog/dataset.hpp"
#include "voxcog/evaluator.hpp"
#include "voxcog/synth.hpp"
#include "voxcog/trainer.hpp"

namespace voxcog {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_file(path, j.dump(2) + "\n"); }

inline std::string bytes_digest(const std::string& bytes) {
  return hex64(StableHasher().bytes(bytes.data(), bytes.size()).digest());
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create directory " + dir.string() + (ec ? ": " + ec.message() : ""));
  }
}

inline void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

struct SynthSummary {
  CorpusPaths paths;
  std::string digest;
};

// Corpus digest covers the manifests and every WAVE file, in plan order.
inline SynthSummary cmd_synth(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  ensure_dir(out);
  SynthSummary s;
  s.paths = generate_corpus(cfg.corpus, out, cfg.train.jobs);
  StableHasher h;
  for (const auto& p : {s.paths.pretrain_manifest, s.paths.downstream_manifest}) {
    h.add(std::string_view(bytes_digest(read_file(p))));
  }
  for (const auto& subj : plan_corpus(cfg.corpus)) {
    for (int u = 0; u < cfg.corpus.utterances_per_subject; ++u) {
      h.add(std::string_view(bytes_digest(read_file(out / utterance_file(subj, u)))));
    }
  }
  s.digest = hex64(h.digest());
  write_json(out / "corpus.json", {{"config_digest", config_digest(cfg)},
                                   {"corpus_digest", s.digest},
                                   {"pretrain_subjects", s.paths.pretrain_subjects},
                                   {"downstream_subjects", s.paths.downstream_subjects},
                                   {"utterances", s.paths.utterances}});
  log << "pretrain subjects: " << s.paths.pretrain_subjects << "\n"
      << "downstream subjects: " << s.paths.downstream_subjects << "\n"
      << "utterances: " << s.paths.utterances << "\n"
      << "corpus digest: " << s.digest << "\n";
  return s;
}

struct PretrainSummary {
  PretrainReport report;
  std::string checkpoint_digest;
};

// Writes the checkpoint plus <out>.json with the held-out accuracy trace.
inline PretrainSummary cmd_pretrain(const RunConfig& cfg, const fs::path& manifest, const fs::path& out,
                                    std::ostream& log) {
  cfg.validate();
  const auto subjects = load_manifest(manifest);
  for (const auto& s : subjects) {
    if (!s.dialect || s.dialect->empty()) {
      throw ConfigError(manifest.string() + ": record '" + s.subject_id + "' has no dialect field");
    }
  }
  ensure_parent(out);
  PretrainSummary summary;
  ModelF model = pretrain_dialect(subjects, cfg.train, cfg.model, &summary.report, cfg.features, cfg.segments);
  model.provenance.run_digest = config_digest(cfg);
  const std::string bytes = encode_checkpoint(model);
  write_file(out, bytes);
  summary.checkpoint_digest = bytes_digest(bytes);
  nlohmann::json rep = to_json(summary.report);
  rep["config_digest"] = config_digest(cfg);
  rep["checkpoint_digest"] = summary.checkpoint_digest;
  write_json(fs::path(out.string() + ".json"), rep);
  log << "dialects: " << summary.report.dialects.size() << "\n"
      << "best epoch: " << summary.report.best_epoch << "\n"
      << "held-out segment accuracy: " << summary.report.best_accuracy << "\n"
      << "checkpoint digest: " << summary.checkpoint_digest << "\n";
  return summary;
}

inline std::string fold_checkpoint_name(int fold) { return "fold_" + std::to_string(fold) + ".vxcg"; }

// Writes fold_<i>.vxcg per fold and crossval.json with the fold splits,
// selection grids, per-fold validation metrics and their means.
inline nlohmann::json cmd_crossval(const RunConfig& cfg, const fs::path& manifest,
                                   const std::optional<fs::path>& init, const fs::path& out,
                                   std::ostream& log) {
  cfg.validate();
  const auto subjects = load_manifest(manifest);
  std::optional<ModelF> pretrained;
  std::string init_digest = "none";
  if (init) {
    const std::string bytes = read_file(*init);
    pretrained = decode_checkpoint(bytes, &cfg.features);
    if (pretrained->stage() != Stage::kPretrain) {
      throw ConfigError("--init checkpoint has stage '" + to_string(pretrained->stage()) +
                        "', expected 'pretrain'");
    }
    init_digest = bytes_digest(bytes);
  }
  ensure_dir(out);
  const SegmentDataset data(subjects, class_names_of(subjects), false, cfg.segments, cfg.features,
                            cfg.train.jobs);
  const std::string digest = config_digest(cfg);
  const auto folds = stratified_kfold(data.subjects(), cfg.k, cfg.train.seed);

  nlohmann::json fold_json = nlohmann::json::array();
  double acc = 0.0, f1 = 0.0, uar = 0.0;
  for (const auto& fold : folds) {
    FinetuneResult r = finetune(pretrained ? &*pretrained : nullptr, fold, data, cfg.train, cfg.model,
                                cfg.train.seed + static_cast<std::uint64_t>(fold.fold_id));
    r.model.provenance.run_digest = digest;
    const std::string name = fold_checkpoint_name(fold.fold_id);
    const std::string bytes = encode_checkpoint(r.model);
    write_file(out / name, bytes);
    fold_json.push_back({{"fold_id", fold.fold_id},
                         {"train_subjects", fold.train_subjects},
                         {"val_subjects", fold.val_subjects},
                         {"selection", selection_json(r)},
                         {"val_metrics", to_json(r.val_report)},
                         {"checkpoint", name},
                         {"checkpoint_digest", bytes_digest(bytes)}});
    acc += r.val_report.accuracy;
    f1 += r.val_report.macro_f1;
    uar += r.val_report.uar;
    log << "fold " << fold.fold_id << ": lr " << r.best_lr << " epoch " << r.best_epoch
        << " val macro-F1 " << r.val_report.macro_f1 << "\n";
  }
  const double k = static_cast<double>(folds.size());
  nlohmann::json summary = {{"arm", init ? "transfer" : "baseline"},
                            {"init_digest", init_digest},
                            {"seed", cfg.train.seed},
                            {"k", cfg.k},
                            {"classes", data.classes()},
                            {"config_digest", digest},
                            {"folds", fold_json},
                            {"mean", {{"accuracy", acc / k}, {"macro_f1", f1 / k}, {"uar", uar / k}}}};
  write_json(out / "crossval.json", summary);
  log << "mean val macro-F1: " << f1 / k << "  accuracy: " << acc / k << "\n";
  return summary;
}

inline std::vector<fs::path> model_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("models directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".vxcg") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .vxcg checkpoints in " + dir.string());
  return files;
}

inline MetricsReport cmd_evaluate(const RunConfig& cfg, const fs::path& models_dir, const fs::path& manifest,
                                  const std::string& mode_name, const fs::path& out, std::ostream& log) {
  cfg.validate();
  const EvalMode mode = eval_mode_from_string(mode_name);
  std::vector<ModelF> models;
  for (const auto& f : model_files(models_dir)) models.push_back(load_checkpoint(f, &cfg.features));
  const auto subjects = load_manifest(manifest);
  const SegmentDataset data(subjects, class_names_of(subjects), false, cfg.segments, cfg.features,
                            cfg.train.jobs);
  MetricsReport rep = evaluate(models, data, mode, cfg.train.jobs);
  ensure_parent(out);
  write_json(out, to_json(rep));
  log << "mode: " << rep.mode << "  subjects: " << rep.n_subjects << "  macro-F1: " << rep.macro_f1
      << "  accuracy: " << rep.accuracy << "  UAR: " << rep.uar << "\n";
  return rep;
}

namespace detail {

inline std::string num(const nlohmann::json& v) { return v.dump(); }

}  // namespace detail

// Paired baseline-vs-transfer comparison over crossval run directories.
// The text table is rendered from the JSON document, so both carry the same
// numbers.
inline nlohmann::json cmd_report(const std::vector<fs::path>& runs, const std::optional<fs::path>& out,
                                 std::ostream& text) {
  if (runs.empty()) throw ConfigError("report: no run directories given");
  std::map<std::string, std::map<std::uint64_t, nlohmann::json>> by_arm;
  nlohmann::json run_list = nlohmann::json::array();
  for (const auto& dir : runs) {
    const fs::path file = dir / "crossval.json";
    if (!fs::is_regular_file(file)) throw IoError("run not found: " + file.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(file));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(file.string() + ": " + e.what());
    }
    const std::string arm = j.at("arm").get<std::string>();
    const auto seed = j.at("seed").get<std::uint64_t>();
    if (by_arm[arm].count(seed)) {
      throw ConfigError("report: two " + arm + " runs with seed " + std::to_string(seed));
    }
    run_list.push_back({{"run", dir.string()}, {"arm", arm}, {"seed", seed},
                        {"config_digest", j.at("config_digest")}});
    by_arm[arm][seed] = {{"run", dir.string()},
                         {"macro_f1", j.at("mean").at("macro_f1")},
                         {"accuracy", j.at("mean").at("accuracy")}};
  }

  nlohmann::json doc;
  nlohmann::json arms = nlohmann::json::object();
  for (const auto& [arm, seeds] : by_arm) {
    double f1 = 0.0, acc = 0.0;
    for (const auto& [seed, row] : seeds) {
      f1 += row.at("macro_f1").get<double>();
      acc += row.at("accuracy").get<double>();
    }
    const double n = static_cast<double>(seeds.size());
    arms[arm] = {{"n_runs", seeds.size()}, {"mean_macro_f1", f1 / n}, {"mean_accuracy", acc / n}};
  }
  doc["arms"] = arms;
  doc["runs"] = run_list;

  std::set<std::uint64_t> all_seeds;
  for (const auto& [arm, seeds] : by_arm) {
    for (const auto& [seed, row] : seeds) all_seeds.insert(seed);
  }
  nlohmann::json rows = nlohmann::json::array();
  int wins = 0, paired = 0;
  for (auto seed : all_seeds) {
    nlohmann::json row = {{"seed", seed}};
    for (const auto& [arm, seeds] : by_arm) {
      const auto it = seeds.find(seed);
      row[arm] = it == seeds.end() ? nlohmann::json() : nlohmann::json{{"macro_f1", it->second.at("macro_f1")},
                                                                        {"accuracy", it->second.at("accuracy")}};
    }
    if (row.contains("baseline") && row.contains("transfer") && !row["baseline"].is_null() &&
        !row["transfer"].is_null()) {
      const double d = row["transfer"]["macro_f1"].get<double>() - row["baseline"]["macro_f1"].get<double>();
      row["delta_macro_f1"] = d;
      ++paired;
      if (d > 0.0) ++wins;
    }
    rows.push_back(row);
  }
  doc["per_seed"] = rows;
  doc["paired_seeds"] = paired;
  doc["transfer_wins"] = wins;
  if (arms.contains("baseline") && arms.contains("transfer")) {
    doc["delta_mean_macro_f1"] =
        arms["transfer"]["mean_macro_f1"].get<double>() - arms["baseline"]["mean_macro_f1"].get<double>();
  }

  text << "arm        runs  mean macro-F1  mean accuracy\n";
  for (const auto& [arm, a] : doc["arms"].items()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%-10s %4d", arm.c_str(), a["n_runs"].get<int>());
    text << buf << "  " << detail::num(a["mean_macro_f1"]) << "  " << detail::num(a["mean_accuracy"]) << "\n";
  }
  text << "\nseed  arm        macro-F1  accuracy\n";
  for (const auto& row : doc["per_seed"]) {
    for (const auto& [arm, v] : row.items()) {
      if (arm == "seed" || arm == "delta_macro_f1" || v.is_null()) continue;
      text << detail::num(row["seed"]) << "  " << arm << "  " << detail::num(v["macro_f1"]) << "  "
           << detail::num(v["accuracy"]) << "\n";
    }
    if (row.contains("delta_macro_f1")) {
      text << detail::num(row["seed"]) << "  delta macro-F1 (transfer - baseline)  "
           << detail::num(row["delta_macro_f1"]) << "\n";
    }
  }
  if (doc.contains("delta_mean_macro_f1")) {
    text << "\ntransfer wins " << wins << " of " << paired << " paired seeds; mean delta macro-F1 "
         << detail::num(doc["delta_mean_macro_f1"]) << "\n";
  }
  if (out) {
    ensure_parent(*out);
    write_json(*out, doc);
  }
  return doc;
}

}  // namespace voxcog
