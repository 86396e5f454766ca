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

// Subject manifests (JSON lines) and the segment-level dataset built from
// them.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "voxcog/audio.hpp"
#include "voxcog/common.hpp"
#include "voxcog/frontend.hpp"
#include "voxcog/nn.hpp"

namespace voxcog {

struct SubjectRecord {
  std::string subject_id;
  std::string label;
  std::vector<std::string> recordings;
  std::optional<std::string> dialect;
  std::optional<std::string> split;

  bool operator==(const SubjectRecord&) const = default;
};

inline nlohmann::json to_json(const SubjectRecord& r) {
  nlohmann::json j = {{"subject_id", r.subject_id}, {"label", r.label}, {"recordings", r.recordings}};
  if (r.dialect) j["dialect"] = *r.dialect;
  if (r.split) j["split"] = *r.split;
  return j;
}

// Parses one manifest line. `where` prefixes error messages.
inline SubjectRecord subject_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  SubjectRecord r;
  try {
    r.subject_id = j.at("subject_id").get<std::string>();
    r.label = j.at("label").get<std::string>();
    r.recordings = j.at("recordings").get<std::vector<std::string>>();
    if (j.contains("dialect") && !j.at("dialect").is_null()) r.dialect = j.at("dialect").get<std::string>();
    if (j.contains("split") && !j.at("split").is_null()) r.split = j.at("split").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  if (r.subject_id.empty()) throw ConfigError(where + ": empty subject_id");
  if (r.recordings.empty()) throw ConfigError(where + ": subject '" + r.subject_id + "' has no recordings");
  return r;
}

// Relative recording paths are resolved against the manifest's directory.
inline std::vector<SubjectRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest not found: " + path.string());
  const auto base = path.parent_path();
  std::vector<SubjectRecord> out;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
    SubjectRecord r = subject_from_json(j, where);
    if (!seen.insert(r.subject_id).second) {
      throw ConfigError(where + ": duplicate subject_id '" + r.subject_id + "'");
    }
    for (auto& rec : r.recordings) {
      const std::filesystem::path p(rec);
      if (p.is_relative()) rec = (base / p).lexically_normal().string();
    }
    out.push_back(std::move(r));
  }
  return out;
}

// Writes paths as given; callers pass manifest-relative paths.
inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<SubjectRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// Class names in sorted order; the index order used everywhere.
inline std::vector<std::string> class_names_of(const std::vector<SubjectRecord>& subjects,
                                               bool use_dialect = false) {
  std::set<std::string> names;
  for (const auto& s : subjects) {
    if (use_dialect) {
      if (!s.dialect) throw ConfigError("subject '" + s.subject_id + "' has no dialect label");
      names.insert(*s.dialect);
    } else {
      names.insert(s.label);
    }
  }
  return {names.begin(), names.end()};
}

inline int class_index(const std::vector<std::string>& classes, const std::string& name) {
  const auto it = std::find(classes.begin(), classes.end(), name);
  if (it == classes.end()) throw EvaluationError("unknown label '" + name + "'");
  return static_cast<int>(it - classes.begin());
}

// Runs f(i) for i in [0, n) on up to `jobs` threads. Callers must make f's
// effects independent of scheduling.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  const std::size_t workers = std::min<std::size_t>(std::max(jobs, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Segment index over a set of subjects. Recordings are loaded once; segment
// samples are materialized on demand, and clean features are memoized.
class SegmentDataset {
 public:
  struct Item {
    std::size_t subject = 0;  // index into subjects()
    std::size_t recording = 0;
    std::size_t start = 0;  // in samples
    int segment_index = 0;
    int label = 0;
  };

  SegmentDataset(std::vector<SubjectRecord> subjects, std::vector<std::string> classes,
                 bool use_dialect, SegmentConfig seg = {}, FeatureConfig features = {},
                 int jobs = 1)
      : subjects_(std::move(subjects)),
        classes_(std::move(classes)),
        seg_(seg),
        extractor_(features) {
    seg_.validate();
    std::vector<std::pair<std::size_t, std::string>> paths;
    for (std::size_t s = 0; s < subjects_.size(); ++s) {
      for (const auto& p : subjects_[s].recordings) paths.emplace_back(s, p);
    }
    recordings_.resize(paths.size());
    recording_ids_.resize(paths.size());
    parallel_for(paths.size(), jobs, [&](std::size_t i) {
      recordings_[i] = load_recording(paths[i].second, features.sample_rate_hz);
    });
    subject_items_.resize(subjects_.size());
    for (std::size_t r = 0; r < paths.size(); ++r) {
      const std::size_t s = paths[r].first;
      const auto& subj = subjects_[s];
      recording_ids_[r] = std::filesystem::path(paths[r].second).filename().string();
      const std::string& name = use_dialect ? subj.dialect.value() : subj.label;
      const int label = class_index(classes_, name);
      const auto starts = window_starts(recordings_[r].size(), seg_, recordings_[r].sample_rate_hz);
      for (std::size_t i = 0; i < starts.size(); ++i) {
        subject_items_[s].push_back(items_.size());
        items_.push_back({s, r, starts[i], static_cast<int>(i), label});
      }
    }
    cache_.resize(items_.size());
    cache_flags_ = std::vector<std::once_flag>(items_.size());
  }

  SegmentDataset(const SegmentDataset&) = delete;
  SegmentDataset& operator=(const SegmentDataset&) = delete;

  const std::vector<SubjectRecord>& subjects() const { return subjects_; }
  const std::vector<std::string>& classes() const { return classes_; }
  const std::vector<Item>& items() const { return items_; }
  const std::vector<std::size_t>& items_of_subject(std::size_t s) const { return subject_items_[s]; }
  const LogMelExtractor& extractor() const { return extractor_; }
  const SegmentConfig& segment_config() const { return seg_; }

  std::size_t subject_index(const std::string& id) const {
    for (std::size_t s = 0; s < subjects_.size(); ++s) {
      if (subjects_[s].subject_id == id) return s;
    }
    throw ConfigError("subject '" + id + "' not in dataset");
  }

  Segment segment(std::size_t item) const {
    const Item& it = items_[item];
    const Waveform& w = recordings_[it.recording];
    const auto window = static_cast<std::size_t>(std::llround(seg_.window_s * w.sample_rate_hz));
    Segment seg;
    seg.subject_id = subjects_[it.subject].subject_id;
    seg.recording_id = recording_ids_[it.recording];
    seg.start_s = static_cast<double>(it.start) / w.sample_rate_hz;
    seg.label = it.label;
    seg.segment_index = it.segment_index;
    seg.sample_rate_hz = w.sample_rate_hz;
    seg.samples.assign(window, 0.0f);
    const std::size_t take = std::min(window, w.size() - it.start);
    std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(it.start), take, seg.samples.begin());
    return seg;
  }

  // Clean (unaugmented) features as a [n_mels, T] tensor; thread-safe.
  const nn::Tensor<float>& clean_features(std::size_t item) const {
    std::call_once(cache_flags_[item], [&] {
      cache_[item] = features_of(segment(item));
    });
    return cache_[item];
  }

  nn::Tensor<float> features_of(const Segment& seg) const {
    const FeatureMatrix f = extractor_(seg);
    nn::Tensor<float> t(f.n_mels, f.n_frames);
    std::copy(f.values.begin(), f.values.end(), t.data());
    return t;
  }

 private:
  std::vector<SubjectRecord> subjects_;
  std::vector<std::string> classes_;
  SegmentConfig seg_;
  LogMelExtractor extractor_;
  std::vector<Waveform> recordings_;
  std::vector<std::string> recording_ids_;
  std::vector<Item> items_;
  std::vector<std::vector<std::size_t>> subject_items_;
  mutable std::vector<nn::Tensor<float>> cache_;
  mutable std::vector<std::once_flag> cache_flags_;
};

}  // namespace voxcog
