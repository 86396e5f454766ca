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

// Two-stage training: dialect pretraining of the whole network, then
// per-fold finetuning (from a pretrained checkpoint or from scratch) with
// learning-rate / epoch selection on subject-level validation macro-F1.

#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "voxcog/augment.hpp"
#include "voxcog/common.hpp"
#include "voxcog/dataset.hpp"
#include "voxcog/evaluator.hpp"
#include "voxcog/model.hpp"
#include "voxcog/optim.hpp"

namespace voxcog {

inline constexpr int kMaxEpochs = 10;

struct TrainConfig {
  int max_epochs = kMaxEpochs;
  std::vector<double> lr_grid{0.0001, 0.0002, 0.0005, 0.001, 0.002};
  double pretrain_lr = 0.0005;
  double holdout_fraction = 0.1;
  int batch_size = 16;
  std::uint64_t seed = 0;
  AugmentSpec augment;
  int jobs = 1;

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    if (max_epochs < 1 || max_epochs > kMaxEpochs) {
      throw ConfigError("train config: max_epochs must lie in [1, " + std::to_string(kMaxEpochs) + "]");
    }
    if (lr_grid.empty()) throw ConfigError("train config: lr_grid must not be empty");
    for (double lr : lr_grid) {
      if (!(lr > 0.0)) throw ConfigError("train config: learning rates must be positive");
    }
    if (!(pretrain_lr > 0.0)) throw ConfigError("train config: pretrain_lr must be positive");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
      throw ConfigError("train config: holdout_fraction must lie in (0, 1)");
    }
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (jobs < 1) throw ConfigError("train config: jobs must be >= 1");
    augment.validate();
  }
};

struct FoldSplit {
  int fold_id = 0;
  std::vector<std::string> train_subjects;
  std::vector<std::string> val_subjects;

  bool operator==(const FoldSplit&) const = default;
};

// Within each class (sorted by name), subject ids are sorted, shuffled with
// the seeded generator and dealt round-robin to folds; the deal position
// carries over between classes so fold sizes stay balanced.
inline std::vector<FoldSplit> stratified_kfold(
    const std::vector<SubjectRecord>& subjects, int k, std::uint64_t seed,
    const std::function<std::string(const SubjectRecord&)>& class_of = {}) {
  if (k < 2) throw ConfigError("stratified_kfold: k must be >= 2 (got " + std::to_string(k) + ")");
  auto cls = class_of ? class_of : [](const SubjectRecord& s) { return s.label; };
  std::map<std::string, std::vector<std::string>> by_class;
  for (const auto& s : subjects) by_class[cls(s)].push_back(s.subject_id);

  std::vector<FoldSplit> folds(k);
  for (int f = 0; f < k; ++f) folds[f].fold_id = f;
  Rng rng(seed);
  std::size_t deal = 0;
  for (auto& [name, ids] : by_class) {
    if (static_cast<int>(ids.size()) < k) {
      throw ConfigError("stratified_kfold: class '" + name + "' has " + std::to_string(ids.size()) +
                        " subjects, fewer than k=" + std::to_string(k));
    }
    std::sort(ids.begin(), ids.end());
    rng.shuffle(ids);
    for (const auto& id : ids) folds[deal++ % k].val_subjects.push_back(id);
  }
  for (auto& f : folds) {
    std::sort(f.val_subjects.begin(), f.val_subjects.end());
    const std::set<std::string> val(f.val_subjects.begin(), f.val_subjects.end());
    for (const auto& s : subjects) {
      if (!val.count(s.subject_id)) f.train_subjects.push_back(s.subject_id);
    }
    std::sort(f.train_subjects.begin(), f.train_subjects.end());
  }
  return folds;
}

struct EpochRecord {
  double lr = 0.0;
  int epoch = 0;
  double metric = 0.0;
  double train_loss = 0.0;
};

inline nlohmann::json to_json(const EpochRecord& e) {
  return {{"lr", e.lr}, {"epoch", e.epoch}, {"metric", e.metric}, {"train_loss", e.train_loss}};
}

namespace detail {

inline std::vector<std::size_t> items_for(const SegmentDataset& data,
                                          const std::vector<std::size_t>& subjects) {
  std::vector<std::size_t> items;
  for (std::size_t s : subjects) {
    const auto& its = data.items_of_subject(s);
    items.insert(items.end(), its.begin(), its.end());
  }
  return items;
}

inline std::vector<std::size_t> subject_indices(const SegmentDataset& data,
                                                const std::vector<std::string>& ids) {
  std::vector<std::size_t> out;
  for (const auto& id : ids) out.push_back(data.subject_index(id));
  return out;
}

inline std::vector<Waveform> load_pool(const AugmentSpec& spec) {
  std::vector<Waveform> pool;
  for (const auto& p : spec.background_pool) pool.push_back(load_recording(p));
  static std::once_flag warned;
  if (pool.empty() && spec.p_background > 0.0) {
    std::call_once(warned, [] { log_warning("background_pool is empty; background-noise augmentation disabled"); });
  }
  return pool;
}

// Subjects of the validation set must never contribute training segments.
inline void assert_no_leakage(const SegmentDataset& data, const std::vector<std::size_t>& train_items,
                              const std::vector<std::size_t>& val_subjects) {
  const std::set<std::size_t> val(val_subjects.begin(), val_subjects.end());
  for (std::size_t i : train_items) {
    if (val.count(data.items()[i].subject)) {
      throw Error("leakage: validation subject '" +
                  data.subjects()[data.items()[i].subject].subject_id + "' in a training batch");
    }
  }
}

}  // namespace detail

// One epoch of minibatch Adam over `items` with per-segment augmentation.
// Per-example gradients are reduced in example order, so results do not
// depend on `jobs`. Returns the mean training loss.
inline double train_epoch(ModelF& model, nn::Adam<float>& opt, const SegmentDataset& data,
                          std::vector<std::size_t> items, const TrainConfig& cfg, double lr,
                          int epoch, std::uint64_t seed, std::span<const Waveform> pool) {
  Rng order(derive_seed(seed, 0x5348554646ULL + static_cast<std::uint64_t>(epoch)));
  std::sort(items.begin(), items.end());
  order.shuffle(items);
  auto params = model.param_ptrs();
  const bool augment = !cfg.augment.is_noop();
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < items.size(); start += cfg.batch_size) {
    const std::size_t n = std::min<std::size_t>(cfg.batch_size, items.size() - start);
    std::vector<std::vector<nn::Tensor<float>>> per_example(n);
    std::vector<double> losses(n);
    parallel_for(n, cfg.jobs, [&](std::size_t i) {
      const std::size_t item = items[start + i];
      nn::Tensor<float> feats;
      const nn::Tensor<float>* x = nullptr;
      if (augment) {
        const Segment aug = apply_augmentations(data.segment(item), cfg.augment, pool, seed, epoch);
        feats = data.features_of(aug);
        x = &feats;
      } else {
        x = &data.clean_features(item);
      }
      nn::Binder<float> bind;
      const auto loss = nn::softmax_cross_entropy(model.forward(bind, *x), data.items()[item].label);
      nn::backward(loss);
      auto& g = per_example[i];
      for (const auto* p : params) g.push_back(nn::Tensor<float>::Zero(p->value.rows(), p->value.cols()));
      bind.accumulate(g);
      losses[i] = loss.value()(0, 0);
    });
    std::vector<nn::Tensor<float>> grads;
    for (const auto* p : params) grads.push_back(nn::Tensor<float>::Zero(p->value.rows(), p->value.cols()));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < grads.size(); ++j) grads[j] += per_example[i][j];
      loss_sum += losses[i];
    }
    for (auto& g : grads) g /= static_cast<float>(n);
    opt.step(params, grads, lr);
  }
  return items.empty() ? 0.0 : loss_sum / static_cast<double>(items.size());
}

struct PretrainReport {
  std::vector<std::string> dialects;
  std::vector<std::string> holdout_subjects;
  std::vector<double> holdout_accuracy;  // per epoch
  int best_epoch = 0;
  double best_accuracy = 0.0;
};

inline nlohmann::json to_json(const PretrainReport& r) {
  return {{"dialects", r.dialects},
          {"holdout_subjects", r.holdout_subjects},
          {"holdout_accuracy", r.holdout_accuracy},
          {"best_epoch", r.best_epoch},
          {"best_accuracy", r.best_accuracy}};
}

inline double segment_accuracy(const ModelF& model, const SegmentDataset& data,
                               const std::vector<std::size_t>& items, int jobs) {
  if (items.empty()) return 0.0;
  std::vector<int> correct(items.size(), 0);
  parallel_for(items.size(), jobs, [&](std::size_t i) {
    const auto logits = model.logits(data.clean_features(items[i]));
    const auto p = nn::softmax<double>(logits.cast<double>());
    correct[i] = argmax_lowest(std::span<const double>(p.data(), p.size())) ==
                 data.items()[items[i]].label;
  });
  return static_cast<double>(std::accumulate(correct.begin(), correct.end(), 0)) /
         static_cast<double>(items.size());
}

// Trains the full network on segment-level dialect classification at
// cfg.pretrain_lr. A stratified, seeded ~holdout_fraction of subjects is held
// out; the epoch with the best held-out segment accuracy is returned
// (earliest on ties).
inline ModelF pretrain_dialect(const std::vector<SubjectRecord>& subjects, const TrainConfig& cfg,
                               ModelConfig model_cfg, PretrainReport* report = nullptr,
                               const FeatureConfig& features = {},
                               const SegmentConfig& segments = {}) {
  cfg.validate();
  for (const auto& s : subjects) {
    if (!s.dialect || s.dialect->empty()) {
      throw ConfigError("pretrain: subject '" + s.subject_id + "' has no dialect label");
    }
  }
  const auto dialects = class_names_of(subjects, true);
  if (dialects.size() < 2) {
    throw ConfigError("pretrain: need at least 2 dialect classes, found " +
                      std::to_string(dialects.size()));
  }
  model_cfg.n_classes = static_cast<int>(dialects.size());

  // Per-dialect holdout of max(1, round(fraction * n)) subjects, keeping at
  // least one training subject per dialect.
  std::map<std::string, std::vector<std::string>> by_dialect;
  for (const auto& s : subjects) by_dialect[*s.dialect].push_back(s.subject_id);
  Rng rng(derive_seed(cfg.seed, 0x484f4c444f5554ULL));
  std::set<std::string> holdout;
  for (auto& [d, ids] : by_dialect) {
    std::sort(ids.begin(), ids.end());
    rng.shuffle(ids);
    if (ids.size() < 2) continue;
    const auto take = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(cfg.holdout_fraction * ids.size())), 1, ids.size() - 1);
    holdout.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take));
  }

  const SegmentDataset data(subjects, dialects, true, segments, features, cfg.jobs);
  std::vector<std::size_t> train_subj, hold_subj;
  for (std::size_t s = 0; s < data.subjects().size(); ++s) {
    (holdout.count(data.subjects()[s].subject_id) ? hold_subj : train_subj).push_back(s);
  }
  const auto train_items = detail::items_for(data, train_subj);
  const auto hold_items = detail::items_for(data, hold_subj);
  if (train_items.empty()) throw ConfigError("pretrain: no training segments");
  detail::assert_no_leakage(data, train_items, hold_subj);

  const auto pool = detail::load_pool(cfg.augment);
  ModelF model = ModelF::build(model_cfg, cfg.seed);
  model.class_names = dialects;
  model.features = features;
  model.provenance.seed = cfg.seed;
  model.provenance.lr = cfg.pretrain_lr;
  nn::Adam<float> opt(model.param_ptrs());

  PretrainReport rep;
  rep.dialects = dialects;
  rep.holdout_subjects.assign(holdout.begin(), holdout.end());
  std::optional<ModelF> best;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    train_epoch(model, opt, data, train_items, cfg, cfg.pretrain_lr, epoch, cfg.seed, pool);
    const double acc = segment_accuracy(model, data, hold_items, cfg.jobs);
    rep.holdout_accuracy.push_back(acc);
    if (!best || acc > rep.best_accuracy) {
      rep.best_accuracy = acc;
      rep.best_epoch = epoch;
      best = model;
      best->provenance.epoch = epoch;
    }
  }
  if (report) *report = rep;
  return *best;
}

struct FinetuneResult {
  ModelF model;
  std::vector<EpochRecord> grid;  // every (lr, epoch, metric) evaluated
  double best_lr = 0.0;
  int best_epoch = 0;
  double best_metric = 0.0;
  MetricsReport val_report;
};

inline nlohmann::json selection_json(const FinetuneResult& r) {
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& e : r.grid) grid.push_back(to_json(e));
  return {{"grid", grid},
          {"best", {{"lr", r.best_lr}, {"epoch", r.best_epoch}, {"metric", r.best_metric}}}};
}

// Finetunes on the fold's training subjects for every learning rate in the
// grid and keeps the (lr, epoch) snapshot with the best subject-level val
// macro-F1; ties go to the lower lr, then the earlier epoch. With
// `pretrained` the transfer initialization and finetune freeze policy are
// used; without it a fresh model trains all parameters.
inline FinetuneResult finetune(const ModelF* pretrained, const FoldSplit& fold,
                               const SegmentDataset& data, const TrainConfig& cfg,
                               ModelConfig model_cfg, std::uint64_t seed) {
  cfg.validate();
  if (fold.train_subjects.empty() || fold.val_subjects.empty()) {
    throw ConfigError("finetune: fold " + std::to_string(fold.fold_id) +
                      " has an empty train or validation subject set");
  }
  const auto& classes = data.classes();
  const auto train_subj = detail::subject_indices(data, fold.train_subjects);
  const auto val_subj = detail::subject_indices(data, fold.val_subjects);
  const auto train_items = detail::items_for(data, train_subj);
  detail::assert_no_leakage(data, train_items, val_subj);
  const auto pool = detail::load_pool(cfg.augment);

  std::vector<double> grid = cfg.lr_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  FinetuneResult result;
  bool have_best = false;
  for (double lr : grid) {
    ModelF model;
    if (pretrained != nullptr) {
      model = transfer_init(*pretrained, static_cast<int>(classes.size()), seed, classes);
      if (!(model.features == data.extractor().config())) {
        throw ConfigError("finetune: checkpoint feature geometry differs from the run's");
      }
    } else {
      model_cfg.n_classes = static_cast<int>(classes.size());
      model = ModelF::build(model_cfg, seed);
      model.class_names = classes;
      model.features = data.extractor().config();
      model.provenance.seed = seed;
    }
    model.provenance.stage = Stage::kFinetune;
    model.provenance.lr = lr;
    nn::Adam<float> opt(model.param_ptrs());
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
      const double loss = train_epoch(model, opt, data, train_items, cfg, lr, epoch, seed, pool);
      auto preds = predict_subjects(model, data, val_subj, cfg.jobs);
      MetricsReport rep = metrics_from_predictions(std::move(preds), classes);
      result.grid.push_back({lr, epoch, rep.macro_f1, loss});
      if (!have_best || rep.macro_f1 > result.best_metric) {
        have_best = true;
        result.best_metric = rep.macro_f1;
        result.best_lr = lr;
        result.best_epoch = epoch;
        result.model = model;
        result.model.provenance.epoch = epoch;
        result.val_report = std::move(rep);
      }
    }
  }
  return result;
}

struct CrossValResult {
  std::vector<FoldSplit> folds;
  std::vector<FinetuneResult> fold_results;
  double mean_accuracy = 0.0;
  double mean_macro_f1 = 0.0;
  double mean_uar = 0.0;
};

// stratified_kfold + finetune per fold with seed + fold_id.
inline CrossValResult run_crossval(const SegmentDataset& data, int k, const TrainConfig& cfg,
                                   const ModelConfig& model_cfg, const ModelF* init) {
  CrossValResult out;
  out.folds = stratified_kfold(data.subjects(), k, cfg.seed);
  for (const auto& fold : out.folds) {
    out.fold_results.push_back(
        finetune(init, fold, data, cfg, model_cfg, cfg.seed + static_cast<std::uint64_t>(fold.fold_id)));
    const auto& r = out.fold_results.back().val_report;
    out.mean_accuracy += r.accuracy / k;
    out.mean_macro_f1 += r.macro_f1 / k;
    out.mean_uar += r.uar / k;
  }
  return out;
}

}  // namespace voxcog
