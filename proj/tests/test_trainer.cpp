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

#include <gtest/gtest.h>

#include <map>
#include <set>

#include "test_util.hpp"
#include "voxcog/checkpoint.hpp"
#include "voxcog/trainer.hpp"

namespace voxcog {
namespace {

using testing::TempDir;
using testing::TinyCorpus;

const SegmentConfig kShortWindows = TinyCorpus::kWindows;

ModelConfig small_model() {
  ModelConfig c;
  c.d_model = 16;
  c.n_blocks = 1;
  c.n_heads = 2;
  c.ffn_mult = 2;
  c.lora_rank = 4;
  return c;
}

TrainConfig quick_train(std::vector<double> grid = {1e-3}, int epochs = 1) {
  TrainConfig t;
  t.lr_grid = std::move(grid);
  t.max_epochs = epochs;
  t.batch_size = 4;
  t.seed = 5;
  t.augment = AugmentSpec::none();
  return t;
}

std::vector<SubjectRecord> records(const std::map<std::string, int>& per_class) {
  std::vector<SubjectRecord> out;
  for (const auto& [cls, n] : per_class) {
    for (int i = 0; i < n; ++i) out.push_back({cls + "_" + std::to_string(i), cls, {"x.wav"}, {}, {}});
  }
  return out;
}

TEST(KFold, FourPerClassFourFoldsGivesOneEachPerFold) {
  const auto subjects = records({{"AD", 4}, {"HC", 4}});
  const auto folds = stratified_kfold(subjects, 4, 11);
  ASSERT_EQ(folds.size(), 4u);
  for (const auto& f : folds) {
    ASSERT_EQ(f.val_subjects.size(), 2u);
    EXPECT_EQ(f.val_subjects[0].substr(0, 2), "AD");
    EXPECT_EQ(f.val_subjects[1].substr(0, 2), "HC");
    EXPECT_EQ(f.train_subjects.size(), 6u);
  }
}

TEST(KFold, PartitionAndBalanceProperties) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(4));
    std::map<std::string, int> sizes;
    const int n_classes = 2 + static_cast<int>(rng.below(3));
    for (int c = 0; c < n_classes; ++c) sizes["c" + std::to_string(c)] = k + static_cast<int>(rng.below(9));
    const auto subjects = records(sizes);
    const auto folds = stratified_kfold(subjects, k, trial);
    ASSERT_EQ(stratified_kfold(subjects, k, trial), folds);
    std::multiset<std::string> all_val;
    for (const auto& f : folds) {
      all_val.insert(f.val_subjects.begin(), f.val_subjects.end());
      std::set<std::string> val(f.val_subjects.begin(), f.val_subjects.end());
      for (const auto& t : f.train_subjects) ASSERT_FALSE(val.count(t));
      ASSERT_EQ(f.train_subjects.size() + f.val_subjects.size(), subjects.size());
      // Per-class val counts are floor or ceil of n_c / k.
      for (const auto& [cls, n] : sizes) {
        const auto cnt = std::count_if(f.val_subjects.begin(), f.val_subjects.end(),
                                       [&](const std::string& s) { return s.rfind(cls + "_", 0) == 0; });
        ASSERT_GE(cnt, n / k);
        ASSERT_LE(cnt, (n + k - 1) / k);
      }
    }
    ASSERT_EQ(all_val.size(), subjects.size());
    for (const auto& s : subjects) ASSERT_EQ(all_val.count(s.subject_id), 1u);
  }
}

TEST(KFold, Errors) {
  EXPECT_THROW(stratified_kfold(records({{"AD", 2}, {"HC", 5}}), 3, 1), ConfigError);
  EXPECT_THROW(stratified_kfold(records({{"AD", 5}, {"HC", 5}}), 1, 1), ConfigError);
  EXPECT_NE(stratified_kfold(records({{"AD", 9}, {"HC", 9}}), 3, 1),
            stratified_kfold(records({{"AD", 9}, {"HC", 9}}), 3, 2));
}

TEST(TrainConfig, Validation) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.max_epochs = 11;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.lr_grid.clear();
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.max_epochs = 0;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Leakage, ValidationSubjectInTrainingItemsThrows) {
  TinyCorpus corpus(3, {"HC", "IMP"}, false);
  const SegmentDataset data = corpus.dataset();
  const auto items = detail::items_for(data, {0, 1, 3});
  EXPECT_NO_THROW(detail::assert_no_leakage(data, items, {2, 4}));
  EXPECT_THROW(detail::assert_no_leakage(data, items, {3}), Error);
}

TEST(Finetune, SingleCandidateReturnedUnconditionally) {
  TinyCorpus corpus(3, {"HC", "IMP"}, false);
  const SegmentDataset data = corpus.dataset();
  const auto folds = stratified_kfold(data.subjects(), 3, 1);
  const FinetuneResult r = finetune(nullptr, folds[0], data, quick_train(), small_model(), 9);
  ASSERT_EQ(r.grid.size(), 1u);
  EXPECT_EQ(r.best_lr, 1e-3);
  EXPECT_EQ(r.best_epoch, 1);
  EXPECT_EQ(r.best_metric, r.grid[0].metric);
  EXPECT_EQ(r.model.provenance.epoch, 1);
  EXPECT_EQ(r.model.stage(), Stage::kFinetune);
  EXPECT_EQ(r.val_report.n_subjects, folds[0].val_subjects.size());
}

// Learning rates far too small to move any prediction tie on every
// (lr, epoch): the lowest lr and the first epoch win.
TEST(Finetune, TiesGoToLowerLrThenEarlierEpoch) {
  TinyCorpus corpus(3, {"HC", "IMP"}, false);
  const SegmentDataset data = corpus.dataset();
  const auto folds = stratified_kfold(data.subjects(), 3, 1);
  const FinetuneResult r =
      finetune(nullptr, folds[1], data, quick_train({3e-12, 1e-12, 2e-12, 1e-12}, 2), small_model(), 2);
  ASSERT_EQ(r.grid.size(), 6u);
  for (const auto& e : r.grid) ASSERT_EQ(e.metric, r.grid[0].metric);
  EXPECT_EQ(r.grid[0].lr, 1e-12);
  EXPECT_EQ(r.best_lr, 1e-12);
  EXPECT_EQ(r.best_epoch, 1);
}

TEST(Finetune, ReportedMetricMatchesCleanReevaluation) {
  TinyCorpus corpus(3, {"HC", "IMP"}, false);
  const SegmentDataset data = corpus.dataset();
  const auto folds = stratified_kfold(data.subjects(), 3, 4);
  TrainConfig cfg = quick_train({1e-3}, 2);
  cfg.augment = AugmentSpec{};
  cfg.augment.p_gaussian = cfg.augment.p_invert = cfg.augment.p_stretch = 1.0;
  const FinetuneResult r = finetune(nullptr, folds[2], data, cfg, small_model(), 3);
  std::vector<std::size_t> val;
  for (const auto& id : folds[2].val_subjects) val.push_back(data.subject_index(id));
  const MetricsReport again = metrics_from_predictions(predict_subjects(r.model, data, val), data.classes());
  EXPECT_EQ(again.macro_f1, r.best_metric);
  EXPECT_EQ(again.accuracy, r.val_report.accuracy);
}

TEST(Finetune, TransferArmTrainsOnlyAdaptersAndHead) {
  TinyCorpus corpus(3, {"HC", "IMP"}, false);
  const SegmentDataset data = corpus.dataset();
  const auto folds = stratified_kfold(data.subjects(), 3, 1);
  ModelF pre = ModelF::build(small_model(), 1);
  const FinetuneResult r = finetune(&pre, folds[0], data, quick_train(), small_model(), 4);
  for (const auto& p : pre.params()) {
    const auto& q = r.model.param(p.name);
    const bool same = std::memcmp(p.value.data(), q.value.data(), 4 * p.value.size()) == 0;
    if (is_lora_param(p.name) || is_pointwise_param(p.name) || is_head_param(p.name)) continue;
    EXPECT_TRUE(same) << p.name;
  }
  EXPECT_NE(r.model.param("pointwise.weight").value, pre.param("pointwise.weight").value);

  ModelF wrong = ModelF::build(small_model(), 1);
  wrong.features.hop_length = 80;
  EXPECT_THROW(finetune(&wrong, folds[0], data, quick_train(), small_model(), 4), ConfigError);
  FoldSplit empty = folds[0];
  empty.val_subjects.clear();
  EXPECT_THROW(finetune(nullptr, empty, data, quick_train(), small_model(), 4), ConfigError);
}

TEST(Finetune, DeterministicAndIndependentOfJobs) {
  TinyCorpus corpus(3, {"HC", "IMP"}, false);
  const SegmentDataset data = corpus.dataset();
  const auto folds = stratified_kfold(data.subjects(), 3, 1);
  TrainConfig cfg = quick_train({1e-3}, 2);
  cfg.augment = AugmentSpec{};
  const auto a = finetune(nullptr, folds[0], data, cfg, small_model(), 8);
  cfg.jobs = 3;
  const auto b = finetune(nullptr, folds[0], data, cfg, small_model(), 8);
  EXPECT_EQ(encode_checkpoint(a.model), encode_checkpoint(b.model));
  EXPECT_EQ(selection_json(a).dump(), selection_json(b).dump());
}

TEST(CrossVal, EverySubjectScoredOnce) {
  TinyCorpus corpus(5, {"HC", "IMP"}, false);
  std::vector<SubjectRecord> nine(corpus.subjects().begin(), corpus.subjects().begin() + 9);
  const SegmentDataset data(nine, class_names_of(nine, false), false, kShortWindows);
  const CrossValResult cv = run_crossval(data, 3, quick_train(), small_model(), nullptr);
  ASSERT_EQ(cv.fold_results.size(), 3u);
  std::multiset<std::string> scored;
  double mean_f1 = 0.0, mean_acc = 0.0;
  for (std::size_t f = 0; f < 3; ++f) {
    for (const auto& p : cv.fold_results[f].val_report.predictions) scored.insert(p.subject_id);
    EXPECT_EQ(cv.fold_results[f].model.provenance.seed, 5u + f);
    mean_f1 += cv.fold_results[f].val_report.macro_f1;
    mean_acc += cv.fold_results[f].val_report.accuracy;
  }
  EXPECT_EQ(scored.size(), 9u);
  for (const auto& s : nine) EXPECT_EQ(scored.count(s.subject_id), 1u);
  EXPECT_NEAR(cv.mean_macro_f1, mean_f1 / 3, 1e-15);
  EXPECT_NEAR(cv.mean_accuracy, mean_acc / 3, 1e-15);
}

TEST(Pretrain, Errors) {
  TinyCorpus one(3, {"d0"}, true);
  EXPECT_THROW(pretrain_dialect(one.subjects(), quick_train(), small_model(), nullptr, {}, kShortWindows),
               ConfigError);
  TinyCorpus two(3, {"d0", "d1"}, true);
  auto subjects = two.subjects();
  subjects[2].dialect.reset();
  EXPECT_THROW(pretrain_dialect(subjects, quick_train(), small_model(), nullptr, {}, kShortWindows),
               ConfigError);
}

TEST(Pretrain, HoldoutSelectionAndDeterminism) {
  TinyCorpus corpus(4, {"d0", "d1", "d2"}, true);
  TrainConfig cfg = quick_train({1e-3}, 3);
  PretrainReport rep;
  const ModelF a = pretrain_dialect(corpus.subjects(), cfg, small_model(), &rep, {}, kShortWindows);
  const ModelF b = pretrain_dialect(corpus.subjects(), cfg, small_model(), nullptr, {}, kShortWindows);
  EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
  EXPECT_EQ(a.stage(), Stage::kPretrain);
  EXPECT_EQ(a.config().n_classes, 3);
  EXPECT_EQ(a.class_names, (std::vector<std::string>{"d0", "d1", "d2"}));
  EXPECT_EQ(a.provenance.lr, cfg.pretrain_lr);
  // round(0.1 * 4) = 0 is raised to one held-out subject per dialect.
  ASSERT_EQ(rep.holdout_subjects.size(), 3u);
  std::set<std::string> dialects;
  for (const auto& s : rep.holdout_subjects) dialects.insert(s.substr(0, 2));
  EXPECT_EQ(dialects.size(), 3u);
  ASSERT_EQ(rep.holdout_accuracy.size(), 3u);
  const auto best = std::max_element(rep.holdout_accuracy.begin(), rep.holdout_accuracy.end());
  EXPECT_EQ(rep.best_epoch, 1 + (best - rep.holdout_accuracy.begin()));
  EXPECT_EQ(a.provenance.epoch, rep.best_epoch);
}

}  // namespace
}  // namespace voxcog
