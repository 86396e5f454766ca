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

// Subject-level scoring: segment aggregation, fold ensembling, confusion
// matrices, accuracy / macro-F1 / UAR.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "voxcog/common.hpp"
#include "voxcog/dataset.hpp"
#include "voxcog/model.hpp"

namespace voxcog {

using Probs = std::vector<double>;

// Index of the largest entry; ties go to the lowest index.
inline int argmax_lowest(std::span<const double> p) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(p.size()); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best;
}

namespace detail {

inline Probs mean_renormalized(std::span<const Probs> vectors, const char* what) {
  if (vectors.empty()) throw EvaluationError(std::string(what) + ": no probability vectors");
  const std::size_t c = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != c) {
      throw EvaluationError(std::string(what) + ": length mismatch (" + std::to_string(v.size()) +
                            " vs " + std::to_string(c) + ")");
    }
  }
  // Each coordinate is summed in ascending order, so the result is bitwise
  // independent of the order of `vectors`.
  Probs out(c, 0.0);
  std::vector<double> column(vectors.size());
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t k = 0; k < vectors.size(); ++k) column[k] = vectors[k][i];
    std::sort(column.begin(), column.end());
    out[i] = std::accumulate(column.begin(), column.end(), 0.0) / static_cast<double>(vectors.size());
  }
  std::vector<double> sorted = out;
  std::sort(sorted.begin(), sorted.end());
  const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  // Inputs that already sum to 1 up to rounding are left alone, which keeps
  // the mean of a single vector equal to that vector.
  if (total > 0.0 && std::abs(total - 1.0) > 1e-12) {
    for (double& x : out) x /= total;
  }
  return out;
}

}  // namespace detail

// Elementwise mean of segment probability vectors, renormalized to sum 1.
inline Probs aggregate_subject(std::span<const Probs> segment_probs) {
  if (segment_probs.empty()) {
    throw EvaluationError("aggregate_subject: subject has no usable segments");
  }
  return detail::mean_renormalized(segment_probs, "aggregate_subject");
}

// Elementwise mean over fold models' subject probabilities, renormalized.
inline Probs ensemble_folds(std::span<const Probs> per_fold_probs) {
  return detail::mean_renormalized(per_fold_probs, "ensemble_folds");
}

struct PredictionRecord {
  std::string subject_id;
  Probs probs;
  int predicted = 0;
  int true_label = 0;
};

using ConfusionMatrix = std::vector<std::vector<double>>;

// Rows are true classes, columns predicted classes.
inline ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels,
                                        int n_classes) {
  if (preds.size() != labels.size()) {
    throw EvaluationError("confusion_matrix: predictions and labels differ in length");
  }
  ConfusionMatrix cm(n_classes, std::vector<double>(n_classes, 0.0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= n_classes || labels[i] < 0 || labels[i] >= n_classes) {
      throw EvaluationError("confusion_matrix: class index out of range at position " +
                            std::to_string(i));
    }
    cm[labels[i]][preds[i]] += 1.0;
  }
  return cm;
}

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double support = 0.0;
};

struct MetricsReport {
  std::string mode = "single_model";
  std::vector<std::string> classes;
  double n_subjects = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double uar = 0.0;
  std::vector<ClassScores> per_class;
  ConfusionMatrix confusion;
  std::vector<PredictionRecord> predictions;
  std::vector<MetricsReport> per_model;
  nlohmann::json run = nlohmann::json::object();
};

// Accuracy, per-class precision/recall/F1, macro-F1 and UAR from a
// confusion matrix. A zero denominator contributes 0.
inline MetricsReport metrics(const ConfusionMatrix& cm) {
  const std::size_t c = cm.size();
  double total = 0.0, trace = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    if (cm[i].size() != c) throw EvaluationError("metrics: confusion matrix is not square");
    for (std::size_t j = 0; j < c; ++j) total += cm[i][j];
    trace += cm[i][i];
  }
  if (c == 0 || total <= 0.0) throw EvaluationError("metrics: empty confusion matrix");
  MetricsReport r;
  r.confusion = cm;
  r.n_subjects = total;
  r.accuracy = trace / total;
  r.per_class.resize(c);
  double f1_sum = 0.0, recall_sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm[k][j];
      col += cm[j][k];
    }
    ClassScores& s = r.per_class[k];
    s.support = row;
    s.recall = row > 0.0 ? cm[k][k] / row : 0.0;
    s.precision = col > 0.0 ? cm[k][k] / col : 0.0;
    const double pr = s.precision + s.recall;
    s.f1 = pr > 0.0 ? 2.0 * s.precision * s.recall / pr : 0.0;
    f1_sum += s.f1;
    recall_sum += s.recall;
  }
  r.macro_f1 = f1_sum / static_cast<double>(c);
  r.uar = recall_sum / static_cast<double>(c);
  return r;
}

inline MetricsReport metrics_from_predictions(std::vector<PredictionRecord> preds,
                                              const std::vector<std::string>& classes) {
  std::vector<int> p, l;
  for (const auto& r : preds) {
    p.push_back(r.predicted);
    l.push_back(r.true_label);
  }
  MetricsReport rep = metrics(confusion_matrix(p, l, static_cast<int>(classes.size())));
  rep.classes = classes;
  rep.predictions = std::move(preds);
  return rep;
}

// Subject-level probabilities for the given dataset subjects (all subjects
// when `subjects` is empty), ordered by subject id.
inline std::vector<PredictionRecord> predict_subjects(const ModelF& model,
                                                      const SegmentDataset& data,
                                                      std::vector<std::size_t> subjects = {},
                                                      int jobs = 1) {
  if (subjects.empty()) {
    subjects.resize(data.subjects().size());
    std::iota(subjects.begin(), subjects.end(), std::size_t{0});
  }
  std::sort(subjects.begin(), subjects.end(), [&](std::size_t a, std::size_t b) {
    return data.subjects()[a].subject_id < data.subjects()[b].subject_id;
  });
  std::vector<std::size_t> items;
  for (std::size_t s : subjects) {
    const auto& its = data.items_of_subject(s);
    if (its.empty()) {
      throw EvaluationError("subject '" + data.subjects()[s].subject_id +
                            "' has no usable segments");
    }
    items.insert(items.end(), its.begin(), its.end());
  }
  std::vector<Probs> seg_probs(data.items().size());
  parallel_for(items.size(), jobs, [&](std::size_t i) {
    const std::size_t item = items[i];
    const auto logits = model.logits(data.clean_features(item));
    const auto p = nn::softmax<double>(logits.cast<double>());
    seg_probs[item].assign(p.data(), p.data() + p.size());
  });
  std::vector<PredictionRecord> out;
  for (std::size_t s : subjects) {
    std::vector<Probs> probs;
    for (std::size_t item : data.items_of_subject(s)) probs.push_back(seg_probs[item]);
    PredictionRecord rec;
    rec.subject_id = data.subjects()[s].subject_id;
    rec.probs = aggregate_subject(probs);
    rec.predicted = argmax_lowest(rec.probs);
    rec.true_label = data.items()[data.items_of_subject(s).front()].label;
    out.push_back(std::move(rec));
  }
  return out;
}

enum class EvalMode { kFoldAverage, kFoldEnsemble };

inline std::string to_string(EvalMode m) {
  return m == EvalMode::kFoldAverage ? "fold_average" : "fold_ensemble";
}

inline EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "fold_average") return EvalMode::kFoldAverage;
  if (s == "fold_ensemble") return EvalMode::kFoldEnsemble;
  throw ConfigError("unknown evaluation mode '" + s + "' (valid: fold_average, fold_ensemble)");
}

inline void check_compatible(const std::vector<ModelF>& models) {
  if (models.empty()) throw ConfigError("evaluate: no models");
  for (const auto& m : models) {
    if (!(m.config() == models.front().config()) || !(m.features == models.front().features)) {
      throw ConfigError("evaluate: models disagree in configuration or feature geometry");
    }
    if (m.class_names != models.front().class_names) {
      throw ConfigError("evaluate: models disagree in class names");
    }
  }
}

// fold_average: one report per model, then the arithmetic mean of every
// metric (the confusion matrix is averaged elementwise). fold_ensemble:
// subject probabilities are averaged across models, then scored once. With a
// single model both modes produce the same report.
inline MetricsReport evaluate(const std::vector<ModelF>& models, const SegmentDataset& data,
                              EvalMode mode, int jobs = 1) {
  check_compatible(models);
  const auto& classes = models.front().class_names;
  if (data.classes() != classes) {
    for (const auto& s : data.subjects()) class_index(classes, s.label);
  }
  std::vector<std::vector<PredictionRecord>> per_model;
  for (const auto& m : models) per_model.push_back(predict_subjects(m, data, {}, jobs));
  // Dataset labels index into data.classes(); remap to the model's order.
  for (auto& preds : per_model) {
    for (auto& p : preds) p.true_label = class_index(classes, data.classes()[p.true_label]);
  }

  MetricsReport out;
  if (models.size() == 1) {
    out = metrics_from_predictions(per_model.front(), classes);
    out.mode = "single_model";
  } else if (mode == EvalMode::kFoldEnsemble) {
    std::vector<PredictionRecord> merged = per_model.front();
    for (std::size_t s = 0; s < merged.size(); ++s) {
      std::vector<Probs> probs;
      for (const auto& preds : per_model) probs.push_back(preds[s].probs);
      merged[s].probs = ensemble_folds(probs);
      merged[s].predicted = argmax_lowest(merged[s].probs);
    }
    out = metrics_from_predictions(std::move(merged), classes);
    out.mode = "fold_ensemble";
  } else {
    std::vector<MetricsReport> reports;
    for (auto& preds : per_model) reports.push_back(metrics_from_predictions(preds, classes));
    const double k = static_cast<double>(reports.size());
    out.classes = classes;
    out.n_subjects = reports.front().n_subjects;
    const std::size_t c = classes.size();
    out.per_class.assign(c, {});
    out.confusion.assign(c, std::vector<double>(c, 0.0));
    for (const auto& r : reports) {
      out.accuracy += r.accuracy / k;
      out.macro_f1 += r.macro_f1 / k;
      out.uar += r.uar / k;
      for (std::size_t i = 0; i < c; ++i) {
        out.per_class[i].precision += r.per_class[i].precision / k;
        out.per_class[i].recall += r.per_class[i].recall / k;
        out.per_class[i].f1 += r.per_class[i].f1 / k;
        out.per_class[i].support = r.per_class[i].support;
        for (std::size_t j = 0; j < c; ++j) out.confusion[i][j] += r.confusion[i][j] / k;
      }
    }
    out.per_model = std::move(reports);
    out.mode = "fold_average";
  }
  std::vector<std::uint64_t> seeds;
  for (const auto& m : models) seeds.push_back(m.provenance.seed);
  out.run["n_models"] = models.size();
  out.run["seeds"] = seeds;
  out.run["config_digest"] = models.front().provenance.run_digest;
  return out;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["mode"] = r.mode;
  j["classes"] = r.classes;
  j["n_subjects"] = r.n_subjects;
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  j["uar"] = r.uar;
  j["confusion_matrix"] = r.confusion;
  nlohmann::json pc = nlohmann::json::array();
  for (std::size_t i = 0; i < r.per_class.size(); ++i) {
    pc.push_back({{"class", i < r.classes.size() ? r.classes[i] : std::to_string(i)},
                  {"precision", r.per_class[i].precision},
                  {"recall", r.per_class[i].recall},
                  {"f1", r.per_class[i].f1},
                  {"support", r.per_class[i].support}});
  }
  j["per_class"] = pc;
  nlohmann::json preds = nlohmann::json::array();
  for (const auto& p : r.predictions) {
    preds.push_back({{"subject_id", p.subject_id},
                     {"probs", p.probs},
                     {"predicted", p.predicted},
                     {"true_label", p.true_label}});
  }
  j["predictions"] = preds;
  nlohmann::json pm = nlohmann::json::array();
  for (const auto& m : r.per_model) pm.push_back(to_json(m));
  j["per_model"] = pm;
  j["run"] = r.run;
  return j;
}

}  // namespace voxcog
