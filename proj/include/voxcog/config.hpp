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

// Run configuration document. Every section is optional; missing keys take
// defaults and unknown keys are rejected. The digest covers everything that
// can change results (not `jobs`).

#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "voxcog/checkpoint.hpp"
#include "voxcog/common.hpp"
#include "voxcog/evaluator.hpp"
#include "voxcog/synth.hpp"
#include "voxcog/trainer.hpp"

namespace voxcog {

struct RunConfig {
  ModelConfig model;
  FeatureConfig features;
  SegmentConfig segments;
  TrainConfig train;
  CorpusSpec corpus;
  int k = 3;
  std::string eval_mode = "fold_ensemble";

  void validate() const {
    model.validate();
    features.validate();
    segments.validate();
    train.validate();
    corpus.validate();
    if (k < 2) throw ConfigError("k must be >= 2 (got " + std::to_string(k) + ")");
    eval_mode_from_string(eval_mode);
    if (model.n_mels != features.n_mels) {
      throw ConfigError("model.n_mels (" + std::to_string(model.n_mels) + ") differs from features.n_mels (" +
                        std::to_string(features.n_mels) + ")");
    }
    if (corpus.sample_rate_hz != features.sample_rate_hz) {
      throw ConfigError("corpus.sample_rate_hz differs from features.sample_rate_hz");
    }
  }
};

inline nlohmann::json to_json(const SegmentConfig& s) {
  return {{"window_s", s.window_s}, {"step_s", s.step_s}, {"min_s", s.min_s}};
}

inline nlohmann::json to_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }

inline nlohmann::json to_json(const AugmentSpec& a) {
  return {{"p_gaussian", a.p_gaussian},
          {"gaussian_snr_db", to_json(a.gaussian_snr_db)},
          {"p_background", a.p_background},
          {"background_snr_db", to_json(a.background_snr_db)},
          {"background_pool", a.background_pool},
          {"p_stretch", a.p_stretch},
          {"stretch_rate", to_json(a.stretch_rate)},
          {"p_invert", a.p_invert}};
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"max_epochs", t.max_epochs},
          {"lr_grid", t.lr_grid},
          {"pretrain_lr", t.pretrain_lr},
          {"holdout_fraction", t.holdout_fraction},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"augment", to_json(t.augment)}};
}

inline nlohmann::json to_json(const ImpairmentEffect& e) {
  return {{"rate_multiplier", e.rate_multiplier},
          {"vowel_lengthening", e.vowel_lengthening},
          {"pause_probability", e.pause_probability},
          {"pause_min_s", e.pause_min_s},
          {"pause_max_s", e.pause_max_s}};
}

inline nlohmann::json to_json(const CorpusSpec& c) {
  return {{"n_dialects", c.n_dialects},
          {"pretrain_subjects_per_dialect", c.pretrain_subjects_per_dialect},
          {"downstream_subjects_per_cell", c.downstream_subjects_per_cell},
          {"utterances_per_subject", c.utterances_per_subject},
          {"min_duration_s", c.min_duration_s},
          {"max_duration_s", c.max_duration_s},
          {"sample_rate_hz", c.sample_rate_hz},
          {"seed", c.seed},
          {"jitter", c.jitter},
          {"impairment", to_json(c.impairment)}};
}

inline nlohmann::json to_json(const RunConfig& r) {
  return {{"model", to_json(r.model)},   {"features", to_json(r.features)},
          {"segments", to_json(r.segments)}, {"train", to_json(r.train)},
          {"corpus", to_json(r.corpus)}, {"k", r.k},
          {"eval_mode", r.eval_mode}};
}

namespace detail {

// Rejects keys of `j` that the defaults document `known` does not have.
inline void check_keys(const nlohmann::json& j, const nlohmann::json& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

inline Range range_from_json(const nlohmann::json& j, const Range& def) {
  if (j.is_null()) return def;
  if (!j.is_array() || j.size() != 2) throw ConfigError("expected a [lo, hi] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

inline AugmentSpec augment_from_json(const nlohmann::json& j) {
  AugmentSpec a;
  detail::check_keys(j, to_json(a), "train.augment");
  a.p_gaussian = j.value("p_gaussian", a.p_gaussian);
  a.gaussian_snr_db = detail::range_from_json(j.value("gaussian_snr_db", nlohmann::json()), a.gaussian_snr_db);
  a.p_background = j.value("p_background", a.p_background);
  a.background_snr_db =
      detail::range_from_json(j.value("background_snr_db", nlohmann::json()), a.background_snr_db);
  a.background_pool = j.value("background_pool", a.background_pool);
  a.p_stretch = j.value("p_stretch", a.p_stretch);
  a.stretch_rate = detail::range_from_json(j.value("stretch_rate", nlohmann::json()), a.stretch_rate);
  a.p_invert = j.value("p_invert", a.p_invert);
  return a;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  detail::check_keys(j, to_json(t), "train");
  t.max_epochs = j.value("max_epochs", t.max_epochs);
  t.lr_grid = j.value("lr_grid", t.lr_grid);
  t.pretrain_lr = j.value("pretrain_lr", t.pretrain_lr);
  t.holdout_fraction = j.value("holdout_fraction", t.holdout_fraction);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.seed = j.value("seed", t.seed);
  if (j.contains("augment")) t.augment = augment_from_json(j.at("augment"));
  return t;
}

inline CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  CorpusSpec c;
  detail::check_keys(j, to_json(c), "corpus");
  c.n_dialects = j.value("n_dialects", c.n_dialects);
  c.pretrain_subjects_per_dialect = j.value("pretrain_subjects_per_dialect", c.pretrain_subjects_per_dialect);
  c.downstream_subjects_per_cell = j.value("downstream_subjects_per_cell", c.downstream_subjects_per_cell);
  c.utterances_per_subject = j.value("utterances_per_subject", c.utterances_per_subject);
  c.min_duration_s = j.value("min_duration_s", c.min_duration_s);
  c.max_duration_s = j.value("max_duration_s", c.max_duration_s);
  c.sample_rate_hz = j.value("sample_rate_hz", c.sample_rate_hz);
  c.seed = j.value("seed", c.seed);
  c.jitter = j.value("jitter", c.jitter);
  if (j.contains("impairment")) {
    const auto& e = j.at("impairment");
    detail::check_keys(e, to_json(c.impairment), "corpus.impairment");
    auto& m = c.impairment;
    m.rate_multiplier = e.value("rate_multiplier", m.rate_multiplier);
    m.vowel_lengthening = e.value("vowel_lengthening", m.vowel_lengthening);
    m.pause_probability = e.value("pause_probability", m.pause_probability);
    m.pause_min_s = e.value("pause_min_s", m.pause_min_s);
    m.pause_max_s = e.value("pause_max_s", m.pause_max_s);
  }
  return c;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig r;
  detail::check_keys(j, to_json(r), "config");
  try {
    if (j.contains("model")) {
      detail::check_keys(j.at("model"), to_json(r.model), "model");
      r.model = model_config_from_json(j.at("model"));
    }
    if (j.contains("features")) {
      detail::check_keys(j.at("features"), to_json(r.features), "features");
      r.features = feature_config_from_json(j.at("features"));
    }
    if (j.contains("segments")) {
      const auto& s = j.at("segments");
      detail::check_keys(s, to_json(r.segments), "segments");
      r.segments.window_s = s.value("window_s", r.segments.window_s);
      r.segments.step_s = s.value("step_s", r.segments.step_s);
      r.segments.min_s = s.value("min_s", r.segments.min_s);
    }
    if (j.contains("train")) r.train = train_config_from_json(j.at("train"));
    if (j.contains("corpus")) r.corpus = corpus_spec_from_json(j.at("corpus"));
    r.k = j.value("k", r.k);
    r.eval_mode = j.value("eval_mode", r.eval_mode);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return r;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

// 16 hex digits over the canonical (sorted-key, compact) JSON.
inline std::string config_digest(const RunConfig& r) {
  return hex64(StableHasher().add(std::string_view(to_json(r).dump())).digest());
}

}  // namespace voxcog
