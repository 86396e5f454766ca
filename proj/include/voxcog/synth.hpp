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

// Parametric speech-like corpus. Dialect is a formant / pitch / tempo
// profile; impairment slows articulation, lengthens vowels and inserts
// pauses. The two factors are crossed in balanced cells.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "voxcog/audio.hpp"
#include "voxcog/common.hpp"
#include "voxcog/dataset.hpp"

namespace voxcog {

inline constexpr int kMaxDialects = 16;
inline constexpr double kMinUtteranceSeconds = 3.0;

struct DialectProfile {
  int dialect_id = 0;
  double f0_base = 120.0;
  double f1 = 500.0;
  double f2 = 1500.0;
  double syllable_rate = 4.0;
  double vowel_duration_base = 0.14;

  bool operator==(const DialectProfile&) const = default;
};

struct ImpairmentEffect {
  double rate_multiplier = 0.7;
  double vowel_lengthening = 1.4;
  double pause_probability = 0.15;
  double pause_min_s = 0.3;
  double pause_max_s = 1.0;

  bool operator==(const ImpairmentEffect&) const = default;
};

struct CorpusSpec {
  int n_dialects = 4;
  int pretrain_subjects_per_dialect = 12;
  int downstream_subjects_per_cell = 8;
  int utterances_per_subject = 2;
  double min_duration_s = 30.0;
  double max_duration_s = 60.0;
  int sample_rate_hz = kSampleRate;
  std::uint64_t seed = 0;
  double jitter = 0.05;
  ImpairmentEffect impairment;

  bool operator==(const CorpusSpec&) const = default;

  void validate() const {
    if (n_dialects < 1 || n_dialects > kMaxDialects) {
      throw ConfigError("corpus: n_dialects must lie in [1, " + std::to_string(kMaxDialects) + "]");
    }
    if (pretrain_subjects_per_dialect < 1 || downstream_subjects_per_cell < 1 ||
        utterances_per_subject < 1) {
      throw ConfigError("corpus: subject and utterance counts must be positive");
    }
    if (!(min_duration_s >= kMinUtteranceSeconds) || !(max_duration_s >= min_duration_s)) {
      throw ConfigError("corpus: need 3 <= min_duration_s <= max_duration_s");
    }
    if (sample_rate_hz < 8000) throw ConfigError("corpus: sample_rate_hz must be >= 8000");
    if (!(jitter >= 0.0 && jitter < 0.5)) throw ConfigError("corpus: jitter must lie in [0, 0.5)");
    const auto& e = impairment;
    if (!(e.rate_multiplier > 0.0 && e.rate_multiplier < 1.0)) {
      throw ConfigError("corpus: impairment rate_multiplier must lie in (0, 1)");
    }
    if (!(e.vowel_lengthening > 1.0)) throw ConfigError("corpus: vowel_lengthening must be > 1");
    if (!(e.pause_probability >= 0.0 && e.pause_probability <= 1.0) ||
        !(e.pause_min_s >= 0.0 && e.pause_max_s >= e.pause_min_s)) {
      throw ConfigError("corpus: invalid pause parameters");
    }
  }
};

inline std::string dialect_name(int id) { return "dialect_" + std::to_string(id); }

// Dialect-level table. Rates and pitch are spread by the golden-ratio
// sequence; formant offsets take the sign pattern id % 4 and a magnitude
// tier 200, 150, 100, 50 Hz chosen by id / 4, so any two dialects differ by
// at least 50 Hz in some formant.
inline DialectProfile dialect_base(int dialect_id) {
  if (dialect_id < 0 || dialect_id >= kMaxDialects) {
    throw ConfigError("dialect_id out of range: " + std::to_string(dialect_id));
  }
  constexpr double phi = 0.6180339887498949;
  const auto frac = [](double x) { return x - std::floor(x); };
  DialectProfile p;
  p.dialect_id = dialect_id;
  p.syllable_rate = 3.5 + 1.5 * frac(0.25 + phi * dialect_id);
  p.f0_base = 90.0 + 130.0 * frac(0.6 + phi * (dialect_id + 3));
  const double mag = 200.0 - 50.0 * (dialect_id / 4);
  const int pattern = dialect_id % 4;
  p.f1 = 500.0 + ((pattern & 1) ? -mag : mag);
  p.f2 = 1500.0 + ((pattern & 2) ? -mag : mag);
  p.vowel_duration_base = 0.55 / p.syllable_rate;
  return p;
}

// Dialect parameters with +-jitter multiplicative per-subject variation.
inline DialectProfile make_profile(int dialect_id, std::uint64_t subject_seed, double jitter = 0.05) {
  DialectProfile p = dialect_base(dialect_id);
  Rng rng(subject_seed);
  const auto j = [&](double v) { return v * (1.0 + rng.uniform(-jitter, jitter)); };
  p.f0_base = j(p.f0_base);
  p.f1 = j(p.f1);
  p.f2 = j(p.f2);
  p.syllable_rate = j(p.syllable_rate);
  p.vowel_duration_base = j(p.vowel_duration_base);
  return p;
}

inline nlohmann::json to_json(const DialectProfile& p) {
  return {{"dialect_id", p.dialect_id}, {"f0_base", p.f0_base},         {"f1", p.f1},
          {"f2", p.f2},                 {"syllable_rate", p.syllable_rate},
          {"vowel_duration_base", p.vowel_duration_base}};
}

namespace detail {

// Two-pole resonator with unit gain at DC.
class Resonator {
 public:
  Resonator(double freq, double bandwidth, double sample_rate) {
    const double r = std::exp(-std::numbers::pi * bandwidth / sample_rate);
    b1_ = 2.0 * r * std::cos(2.0 * std::numbers::pi * freq / sample_rate);
    b2_ = -r * r;
    gain_ = 1.0 - b1_ - b2_;
  }
  double operator()(double x) {
    const double y = gain_ * x + b1_ * y1_ + b2_ * y2_;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double b1_ = 0.0, b2_ = 0.0, gain_ = 1.0, y1_ = 0.0, y2_ = 0.0;
};

}  // namespace detail

struct SyllableEvent {
  double onset_s = 0.0;
  double vowel_s = 0.0;
};

// Syllable timeline: onsets every 1/rate seconds (+-5% per syllable), with
// impairment-driven pauses at boundaries.
inline std::vector<SyllableEvent> syllable_timeline(const DialectProfile& profile, bool impaired,
                                                    double duration_s, Rng& rng,
                                                    const ImpairmentEffect& effect = {}) {
  const double rate = profile.syllable_rate * (impaired ? effect.rate_multiplier : 1.0);
  const double period = 1.0 / rate;
  const double vowel = std::min(profile.vowel_duration_base * (impaired ? effect.vowel_lengthening : 1.0),
                                0.85 * period);
  std::vector<SyllableEvent> out;
  double t = 0.1;
  while (t + vowel < duration_s - 0.05) {
    out.push_back({t, vowel * rng.uniform(0.95, 1.05)});
    t += period * rng.uniform(0.95, 1.05);
    if (impaired && rng.bernoulli(effect.pause_probability)) {
      t += rng.uniform(effect.pause_min_s, effect.pause_max_s);
    }
  }
  return out;
}

// Glottal pulse train (declining f0, +-2% period jitter, light aspiration
// noise) through F1 and F2 resonators, gated by Hann syllable envelopes,
// plus a low noise floor. Peak-normalized to 0.9.
inline Waveform synth_utterance(const DialectProfile& profile, bool impaired, double duration_s,
                                std::uint64_t seed, int sample_rate = kSampleRate,
                                const ImpairmentEffect& effect = {}) {
  if (!(duration_s >= kMinUtteranceSeconds)) {
    throw ConfigError("synth_utterance: duration must be >= 3 s (got " + std::to_string(duration_s) + ")");
  }
  if (!(profile.f1 > 0.0 && profile.f1 < profile.f2 && profile.f2 < sample_rate / 2.0)) {
    throw ConfigError("synth_utterance: need 0 < F1 < F2 < Nyquist");
  }
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  const double sr = sample_rate;
  Rng rng(seed);
  const auto events = syllable_timeline(profile, impaired, duration_s, rng, effect);

  std::vector<double> env(n, 0.0);
  for (const auto& e : events) {
    const auto a = static_cast<std::size_t>(e.onset_s * sr);
    const auto len = static_cast<std::size_t>(e.vowel_s * sr);
    const double amp = rng.uniform(0.8, 1.0);
    for (std::size_t i = 0; i < len && a + i < n; ++i) {
      env[a + i] = amp * 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (len - 1)));
    }
  }

  detail::Resonator r1(profile.f1, 80.0, sr);
  detail::Resonator r2(profile.f2, 120.0, sr);
  std::vector<double> y(n);
  double next_pulse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = i / sr;
    double x = 0.0;
    if (t >= next_pulse) {
      x = 1.0;
      const double f0 = profile.f0_base * (1.05 - 0.15 * t / duration_s);
      next_pulse += (1.0 / f0) * rng.uniform(0.98, 1.02);
    }
    x += 0.05 * rng.normal();
    y[i] = r2(r1(x * env[i]));
  }
  double peak = 0.0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  const double floor_sd = 1e-3 * std::max(peak, 1e-9);
  peak = 0.0;
  for (double& v : y) {
    v += floor_sd * rng.normal();
    peak = std::max(peak, std::abs(v));
  }
  Waveform w;
  w.sample_rate_hz = sample_rate;
  w.samples.resize(n);
  const double g = peak > 0.0 ? 0.9 / peak : 0.0;
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = static_cast<float>(y[i] * g);
  return w;
}

// Articulation rate from the amplitude envelope: 10 ms RMS frames smoothed
// over 50 ms, peaks above 30% of the maximum at least 100 ms apart; rate is
// the reciprocal of the median inter-peak interval, so pauses do not count.
inline double envelope_syllable_rate(std::span<const float> x, int sample_rate) {
  const std::size_t hop = sample_rate / 100;
  if (x.size() < 4 * hop) return 0.0;
  const std::size_t frames = x.size() / hop;
  std::vector<double> rms(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double s = 0.0;
    for (std::size_t i = f * hop; i < (f + 1) * hop; ++i) s += double(x[i]) * x[i];
    rms[f] = std::sqrt(s / hop);
  }
  std::vector<double> sm(frames, 0.0);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t a = f >= 2 ? f - 2 : 0, b = std::min(frames, f + 3);
    for (std::size_t k = a; k < b; ++k) sm[f] += rms[k];
    sm[f] /= static_cast<double>(b - a);
  }
  const double top = *std::max_element(sm.begin(), sm.end());
  if (top <= 0.0) return 0.0;
  std::vector<std::size_t> peaks;
  for (std::size_t f = 1; f + 1 < frames; ++f) {
    if (sm[f] < 0.3 * top || sm[f] < sm[f - 1] || sm[f] <= sm[f + 1]) continue;
    if (!peaks.empty() && f - peaks.back() < 10) {
      if (sm[f] > sm[peaks.back()]) peaks.back() = f;
      continue;
    }
    peaks.push_back(f);
  }
  if (peaks.size() < 2) return 0.0;
  std::vector<double> gaps;
  for (std::size_t i = 1; i < peaks.size(); ++i) gaps.push_back(double(peaks[i] - peaks[i - 1]) / 100.0);
  std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
  double med = gaps[gaps.size() / 2];
  if (gaps.size() % 2 == 0) {
    med = 0.5 * (med + *std::max_element(gaps.begin(), gaps.begin() + gaps.size() / 2));
  }
  return 1.0 / med;
}

struct SubjectPlan {
  std::string subject_id;
  std::string pool;  // "pretrain" or "downstream"
  int dialect_id = 0;
  bool impaired = false;
  std::uint64_t subject_seed = 0;
  DialectProfile profile;
};

inline std::uint64_t subject_seed_of(const CorpusSpec& spec, const std::string& subject_id) {
  return derive_seed(spec.seed, StableHasher().add(std::string_view(subject_id)).digest());
}

inline std::string class_label(bool impaired) { return impaired ? "IMP" : "HC"; }

// Every subject of the corpus, pretrain pool first, in a fixed order.
inline std::vector<SubjectPlan> plan_corpus(const CorpusSpec& spec) {
  spec.validate();
  std::vector<SubjectPlan> out;
  auto add = [&](std::string id, std::string pool, int d, bool impaired) {
    SubjectPlan p{std::move(id), std::move(pool), d, impaired, 0, {}};
    p.subject_seed = subject_seed_of(spec, p.subject_id);
    p.profile = make_profile(d, p.subject_seed, spec.jitter);
    out.push_back(std::move(p));
  };
  char buf[64];
  for (int d = 0; d < spec.n_dialects; ++d) {
    for (int i = 0; i < spec.pretrain_subjects_per_dialect; ++i) {
      std::snprintf(buf, sizeof buf, "pre_d%02d_s%03d", d, i);
      add(buf, "pretrain", d, false);
    }
  }
  for (int c = 0; c < 2; ++c) {
    for (int d = 0; d < spec.n_dialects; ++d) {
      for (int i = 0; i < spec.downstream_subjects_per_cell; ++i) {
        std::snprintf(buf, sizeof buf, "ds_%s_d%02d_s%03d", class_label(c == 1).c_str(), d, i);
        add(buf, "downstream", d, c == 1);
      }
    }
  }
  return out;
}

inline double utterance_duration(const CorpusSpec& spec, const SubjectPlan& s, int utterance) {
  Rng rng(derive_seed(s.subject_seed, 0x4455520000ULL + static_cast<std::uint64_t>(utterance)));
  return rng.uniform(spec.min_duration_s, spec.max_duration_s);
}

// Regenerates one utterance from (spec, subject, index) alone.
inline Waveform render_utterance(const CorpusSpec& spec, const SubjectPlan& s, int utterance) {
  return synth_utterance(s.profile, s.impaired, utterance_duration(spec, s, utterance),
                         derive_seed(s.subject_seed, static_cast<std::uint64_t>(utterance)),
                         spec.sample_rate_hz, spec.impairment);
}

inline std::string utterance_file(const SubjectPlan& s, int utterance) {
  return s.pool + "/" + s.subject_id + "_u" + std::to_string(utterance) + ".wav";
}

struct CorpusPaths {
  std::filesystem::path pretrain_manifest;
  std::filesystem::path downstream_manifest;
  std::filesystem::path profiles;
  std::size_t pretrain_subjects = 0;
  std::size_t downstream_subjects = 0;
  std::size_t utterances = 0;
};

// Writes <out>/{pretrain,downstream}/*.wav, pretrain.jsonl (labels are
// dialect names), downstream.jsonl (HC / IMP with dialect fields) and
// profiles.json with the ground-truth parameters.
inline CorpusPaths generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir,
                                   int jobs = 1) {
  const auto plan = plan_corpus(spec);
  std::error_code ec;
  for (const char* sub : {"pretrain", "downstream"}) {
    std::filesystem::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  std::vector<std::pair<std::size_t, int>> jobs_list;
  for (std::size_t s = 0; s < plan.size(); ++s) {
    for (int u = 0; u < spec.utterances_per_subject; ++u) jobs_list.emplace_back(s, u);
  }
  parallel_for(jobs_list.size(), jobs, [&](std::size_t j) {
    const auto [s, u] = jobs_list[j];
    save_wav_pcm16(out_dir / utterance_file(plan[s], u), render_utterance(spec, plan[s], u));
  });

  std::vector<SubjectRecord> pre, down;
  nlohmann::json profiles = nlohmann::json::array();
  for (const auto& s : plan) {
    SubjectRecord r;
    r.subject_id = s.subject_id;
    r.dialect = dialect_name(s.dialect_id);
    r.label = s.pool == "pretrain" ? *r.dialect : class_label(s.impaired);
    for (int u = 0; u < spec.utterances_per_subject; ++u) r.recordings.push_back(utterance_file(s, u));
    (s.pool == "pretrain" ? pre : down).push_back(r);
    nlohmann::json p = to_json(s.profile);
    p["subject_id"] = s.subject_id;
    p["pool"] = s.pool;
    p["impaired"] = s.impaired;
    profiles.push_back(p);
  }
  nlohmann::json dialects = nlohmann::json::array();
  for (int d = 0; d < spec.n_dialects; ++d) {
    nlohmann::json row = to_json(dialect_base(d));
    row["name"] = dialect_name(d);
    dialects.push_back(row);
  }

  CorpusPaths paths{out_dir / "pretrain.jsonl", out_dir / "downstream.jsonl", out_dir / "profiles.json",
                    pre.size(), down.size(), jobs_list.size()};
  write_manifest(paths.pretrain_manifest, pre);
  write_manifest(paths.downstream_manifest, down);
  std::ofstream pf(paths.profiles, std::ios::trunc);
  if (!pf) throw IoError("cannot write " + paths.profiles.string());
  pf << nlohmann::json{{"dialects", dialects}, {"subjects", profiles}}.dump(2) << '\n';
  if (!pf) throw IoError("write failed: " + paths.profiles.string());
  return paths;
}

}  // namespace voxcog
