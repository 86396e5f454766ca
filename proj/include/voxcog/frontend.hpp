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

// Segmentation and log-mel featurization of 16 kHz mono recordings.

#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "voxcog/audio.hpp"
#include "voxcog/common.hpp"

namespace voxcog {

struct Segment {
  std::string subject_id;
  std::string recording_id;
  double start_s = 0.0;
  std::vector<float> samples;
  int label = 0;
  int segment_index = 0;
  int sample_rate_hz = kSampleRate;
};

struct SegmentConfig {
  double window_s = 15.0;
  double step_s = 5.0;
  double min_s = 3.0;

  void validate() const {
    if (!(step_s > 0.0) || !(window_s > step_s)) {
      throw ConfigError("segmentation requires window_s > step_s > 0");
    }
    if (!(min_s >= 0.0) || min_s > window_s) {
      throw ConfigError("segmentation requires 0 <= min_s <= window_s");
    }
  }
};

// Window start offsets, in samples, for a recording of `n` samples.
//
//   n < min               -> no windows
//   min <= n < window     -> one window at 0 (caller zero-pads)
//   otherwise             -> 0, step, 2*step, ... while start + window <= n,
//                            plus an end-aligned window at n - window if the
//                            regular windows stop short of n.
inline std::vector<std::size_t> window_starts(std::size_t n, const SegmentConfig& cfg,
                                              int sample_rate_hz = kSampleRate) {
  cfg.validate();
  const auto window = static_cast<std::size_t>(std::llround(cfg.window_s * sample_rate_hz));
  const auto step = static_cast<std::size_t>(std::llround(cfg.step_s * sample_rate_hz));
  const auto min_len = static_cast<std::size_t>(std::llround(cfg.min_s * sample_rate_hz));
  std::vector<std::size_t> starts;
  if (n < min_len || n == 0) return starts;
  if (n < window) {
    starts.push_back(0);
    return starts;
  }
  std::size_t s = 0;
  for (; s + window <= n; s += step) starts.push_back(s);
  if (starts.back() + window < n) starts.push_back(n - window);
  return starts;
}

inline std::vector<Segment> segment_recording(const Waveform& w, const SegmentConfig& cfg,
                                              const std::string& subject_id = {},
                                              const std::string& recording_id = {},
                                              int label = 0) {
  const auto window = static_cast<std::size_t>(std::llround(cfg.window_s * w.sample_rate_hz));
  std::vector<Segment> out;
  const auto starts = window_starts(w.samples.size(), cfg, w.sample_rate_hz);
  out.reserve(starts.size());
  for (std::size_t i = 0; i < starts.size(); ++i) {
    Segment seg;
    seg.subject_id = subject_id;
    seg.recording_id = recording_id;
    seg.start_s = static_cast<double>(starts[i]) / w.sample_rate_hz;
    seg.label = label;
    seg.segment_index = static_cast<int>(i);
    seg.sample_rate_hz = w.sample_rate_hz;
    seg.samples.assign(window, 0.0f);
    const std::size_t take = std::min(window, w.samples.size() - starts[i]);
    std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(starts[i]), take,
                seg.samples.begin());
    out.push_back(std::move(seg));
  }
  return out;
}

struct FeatureConfig {
  int sample_rate_hz = kSampleRate;
  int frame_length = 400;
  int hop_length = 160;
  int n_fft = 512;
  int n_mels = 80;
  double f_min = 0.0;
  double f_max = 8000.0;
  double log_floor = 1e-6;
  bool normalize = true;

  bool operator==(const FeatureConfig&) const = default;

  void validate() const {
    if (sample_rate_hz <= 0 || frame_length <= 0 || hop_length <= 0 || n_mels <= 0) {
      throw ConfigError("feature config: sizes must be positive");
    }
    if (n_fft < frame_length || (n_fft & (n_fft - 1)) != 0) {
      throw ConfigError("feature config: n_fft must be a power of two >= frame_length");
    }
    if (!(f_min >= 0.0) || !(f_max > f_min) || f_max > sample_rate_hz / 2.0) {
      throw ConfigError("feature config: need 0 <= f_min < f_max <= Nyquist");
    }
  }

  int frames_for(std::size_t n_samples) const {
    if (n_samples < static_cast<std::size_t>(frame_length)) return 0;
    return 1 + static_cast<int>((n_samples - frame_length) / hop_length);
  }
};

// Mel-by-frame matrix, row-major: values[m * n_frames + t].
struct FeatureMatrix {
  int n_mels = 0;
  int n_frames = 0;
  std::vector<float> values;

  float at(int mel, int frame) const {
    return values[static_cast<std::size_t>(mel) * n_frames + frame];
  }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular HTK-mel filter bank over the n_fft/2+1 power bins. Each filter
// is stored as a contiguous run of nonzero weights starting at `first_bin`.
class MelFilterBank {
 public:
  explicit MelFilterBank(const FeatureConfig& cfg) {
    const int n_bins = cfg.n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(cfg.f_min);
    const double mel_hi = hz_to_mel(cfg.f_max);
    std::vector<double> edges(cfg.n_mels + 2);
    for (int i = 0; i < cfg.n_mels + 2; ++i) {
      edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));
    }
    filters_.resize(cfg.n_mels);
    centers_.resize(cfg.n_mels);
    for (int m = 0; m < cfg.n_mels; ++m) {
      const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
      centers_[m] = center;
      Filter& f = filters_[m];
      for (int k = 0; k < n_bins; ++k) {
        const double hz = static_cast<double>(k) * cfg.sample_rate_hz / cfg.n_fft;
        double w = 0.0;
        if (hz > left && hz <= center) {
          w = (hz - left) / (center - left);
        } else if (hz > center && hz < right) {
          w = (right - hz) / (right - center);
        }
        if (w > 0.0) {
          if (f.weights.empty()) f.first_bin = k;
          // Fill any gap so the run stays contiguous.
          while (f.first_bin + static_cast<int>(f.weights.size()) < k) f.weights.push_back(0.0f);
          f.weights.push_back(static_cast<float>(w));
        }
      }
    }
  }

  int size() const { return static_cast<int>(filters_.size()); }
  double center_hz(int m) const { return centers_[m]; }

  float apply(int m, std::span<const float> power) const {
    const Filter& f = filters_[m];
    float acc = 0.0f;
    for (std::size_t i = 0; i < f.weights.size(); ++i) acc += f.weights[i] * power[f.first_bin + i];
    return acc;
  }

 private:
  struct Filter {
    int first_bin = 0;
    std::vector<float> weights;
  };
  std::vector<Filter> filters_;
  std::vector<double> centers_;
};

namespace detail {

// Planning is not thread-safe in FFTW; execution on distinct buffers is.
class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    std::lock_guard<std::mutex> lock(planner_mutex());
    float* in = fftwf_alloc_real(n);
    fftwf_complex* out = fftwf_alloc_complex(n / 2 + 1);
    plan_ = fftwf_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    fftwf_free(in);
    fftwf_free(out);
  }
  ~RealFft() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftwf_destroy_plan(plan_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const { return n_; }
  void execute(float* in, fftwf_complex* out) const { fftwf_execute_dft_r2c(plan_, in, out); }

  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

 private:
  int n_;
  fftwf_plan plan_;
};

struct FftwFree {
  void operator()(void* p) const { fftwf_free(p); }
};

}  // namespace detail

// Stateless-by-contract log-mel extractor; holds only precomputed tables.
class LogMelExtractor {
 public:
  explicit LogMelExtractor(FeatureConfig cfg = {}) : cfg_(cfg), bank_((cfg.validate(), cfg)) {
    fft_ = std::make_shared<detail::RealFft>(cfg_.n_fft);
    window_.resize(cfg_.frame_length);
    for (int i = 0; i < cfg_.frame_length; ++i) {
      window_[i] = static_cast<float>(
          0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / cfg_.frame_length));
    }
  }

  const FeatureConfig& config() const { return cfg_; }
  const MelFilterBank& filter_bank() const { return bank_; }

  FeatureMatrix operator()(std::span<const float> samples) const {
    const int n_frames = cfg_.frames_for(samples.size());
    const int n_bins = cfg_.n_fft / 2 + 1;
    FeatureMatrix out;
    out.n_mels = cfg_.n_mels;
    out.n_frames = n_frames;
    out.values.assign(static_cast<std::size_t>(n_frames) * cfg_.n_mels, 0.0f);

    std::unique_ptr<float, detail::FftwFree> in(fftwf_alloc_real(cfg_.n_fft));
    std::unique_ptr<fftwf_complex, detail::FftwFree> spec(fftwf_alloc_complex(n_bins));
    std::vector<float> power(n_bins);
    for (int t = 0; t < n_frames; ++t) {
      const float* frame = samples.data() + static_cast<std::size_t>(t) * cfg_.hop_length;
      float* buf = in.get();
      for (int i = 0; i < cfg_.frame_length; ++i) buf[i] = frame[i] * window_[i];
      std::fill(buf + cfg_.frame_length, buf + cfg_.n_fft, 0.0f);
      fft_->execute(buf, spec.get());
      for (int k = 0; k < n_bins; ++k) {
        const float re = spec.get()[k][0], im = spec.get()[k][1];
        power[k] = re * re + im * im;
      }
      for (int m = 0; m < cfg_.n_mels; ++m) {
        const double e = bank_.apply(m, power);
        out.values[static_cast<std::size_t>(m) * n_frames + t] =
            static_cast<float>(std::log(e + cfg_.log_floor));
      }
    }
    if (cfg_.normalize) normalize(out);
    return out;
  }

  FeatureMatrix operator()(const Segment& seg) const {
    if (seg.sample_rate_hz != cfg_.sample_rate_hz) {
      throw ConfigError("log_mel: segment rate " + std::to_string(seg.sample_rate_hz) +
                        " differs from feature rate " + std::to_string(cfg_.sample_rate_hz));
    }
    return (*this)(seg.samples);
  }

  // Per-matrix mean/variance normalization; division is skipped when the
  // standard deviation is below 1e-8.
  static void normalize(FeatureMatrix& f) {
    if (f.values.empty()) return;
    double mean = 0.0;
    for (float v : f.values) mean += v;
    mean /= static_cast<double>(f.values.size());
    double var = 0.0;
    for (float v : f.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(f.values.size());
    const double sd = std::sqrt(var);
    const double scale = sd < 1e-8 ? 1.0 : 1.0 / sd;
    for (float& v : f.values) v = static_cast<float>((v - mean) * scale);
  }

 private:
  FeatureConfig cfg_;
  MelFilterBank bank_;
  std::shared_ptr<detail::RealFft> fft_;
  std::vector<float> window_;
};

inline FeatureMatrix log_mel(const Segment& seg, const FeatureConfig& cfg = {}) {
  return LogMelExtractor(cfg)(seg);
}

}  // namespace voxcog
