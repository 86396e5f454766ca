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

// Waveform-level training augmentations: additive Gaussian noise, background
// noise mixing, speed-change time stretching and polarity inversion.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "voxcog/audio.hpp"
#include "voxcog/common.hpp"
#include "voxcog/frontend.hpp"

namespace voxcog {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

struct AugmentSpec {
  double p_gaussian = 0.5;
  Range gaussian_snr_db{5.0, 30.0};
  double p_background = 0.5;
  Range background_snr_db{3.0, 15.0};
  std::vector<std::string> background_pool;
  double p_stretch = 0.5;
  Range stretch_rate{0.9, 1.1};
  double p_invert = 0.5;

  bool operator==(const AugmentSpec&) const = default;

  static AugmentSpec none() {
    AugmentSpec s;
    s.p_gaussian = s.p_background = s.p_stretch = s.p_invert = 0.0;
    return s;
  }

  bool is_noop() const {
    return p_gaussian == 0.0 && p_background == 0.0 && p_stretch == 0.0 && p_invert == 0.0;
  }

  void validate() const {
    for (double p : {p_gaussian, p_background, p_stretch, p_invert}) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augment: probabilities must lie in [0, 1]");
    }
    for (const Range& r : {gaussian_snr_db, background_snr_db, stretch_rate}) {
      if (!(r.lo <= r.hi)) throw ConfigError("augment: range low exceeds high");
    }
    if (stretch_rate.lo < 0.5 || stretch_rate.hi > 2.0) {
      throw ConfigError("augment: stretch rate range must lie within [0.5, 2.0]");
    }
  }
};

// Scales `noise` so that 10*log10(P(signal) / P(scaled noise)) == snr_db,
// using the realized power of `noise`. Returns zeros for a silent noise input.
inline std::vector<float> scale_noise_to_snr(std::span<const float> signal,
                                             std::span<const float> noise, double snr_db) {
  const double ps = mean_power(signal);
  const double pn = mean_power(noise);
  std::vector<float> out(noise.size(), 0.0f);
  if (pn <= 0.0) return out;
  const double gain = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
  for (std::size_t i = 0; i < noise.size(); ++i) out[i] = static_cast<float>(gain * noise[i]);
  return out;
}

namespace detail {

inline Waveform add_clipped(const Waveform& w, std::span<const float> noise) {
  Waveform out{std::vector<float>(w.samples.size()), w.sample_rate_hz};
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    out.samples[i] = std::clamp(w.samples[i] + noise[i], -1.0f, 1.0f);
  }
  return out;
}

}  // namespace detail

inline std::vector<float> gaussian_noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> out(n);
  for (float& v : out) v = static_cast<float>(rng.normal());
  return out;
}

inline Waveform add_gaussian_noise(const Waveform& w, double snr_db, std::uint64_t seed) {
  if (mean_power(w.samples) <= 0.0) return w;
  const auto noise = gaussian_noise(w.samples.size(), seed);
  return detail::add_clipped(w, scale_noise_to_snr(w.samples, noise, snr_db));
}

// Noise aligned to `n` samples: tiled (sample i = noise[i mod len]) when the
// noise is shorter, otherwise a slice at a seeded random offset.
inline std::vector<float> fit_noise(std::span<const float> noise, std::size_t n,
                                    std::uint64_t seed) {
  if (noise.empty()) throw ConfigError("mix_background: empty noise waveform");
  std::vector<float> out(n);
  if (noise.size() < n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = noise[i % noise.size()];
  } else {
    Rng rng(seed);
    const std::size_t offset =
        noise.size() == n ? 0 : static_cast<std::size_t>(rng.below(noise.size() - n + 1));
    std::copy_n(noise.begin() + static_cast<std::ptrdiff_t>(offset), n, out.begin());
  }
  return out;
}

inline Waveform mix_background(const Waveform& w, const Waveform& noise, double snr_db,
                               std::uint64_t seed) {
  if (mean_power(w.samples) <= 0.0) return w;
  const auto fitted = fit_noise(noise.samples, w.samples.size(), seed);
  return detail::add_clipped(w, scale_noise_to_snr(w.samples, fitted, snr_db));
}

// Speed change by linear interpolation; the sample rate field is kept, so all
// frequencies scale by `rate`. Output length is round(N / rate).
inline Waveform time_stretch(const Waveform& w, double rate) {
  if (!(rate >= 0.5 && rate <= 2.0)) {
    throw ConfigError("time_stretch: rate " + std::to_string(rate) + " outside [0.5, 2.0]");
  }
  if (rate == 1.0) return w;
  const auto out_len =
      static_cast<std::size_t>(std::llround(static_cast<double>(w.samples.size()) / rate));
  return Waveform{detail::interpolate(w.samples, out_len, rate), w.sample_rate_hz};
}

inline Waveform invert_polarity(const Waveform& w) {
  Waveform out = w;
  for (float& v : out.samples) v = -v;
  return out;
}

// Stable 64-bit seed for one (segment, epoch) draw.
inline std::uint64_t segment_seed(std::uint64_t global_seed, const std::string& subject_id,
                                  const std::string& recording_id, int segment_index,
                                  int epoch) {
  return StableHasher()
      .add(global_seed)
      .add(subject_id)
      .add(recording_id)
      .add(static_cast<std::uint64_t>(segment_index))
      .add(static_cast<std::uint64_t>(epoch))
      .digest();
}

// Applies gaussian -> background -> stretch -> invert, each with its own
// probability, then restores the original segment length. A pure function
// of its arguments.
inline Segment apply_augmentations(const Segment& seg, const AugmentSpec& spec,
                                   std::span<const Waveform> background_pool,
                                   std::uint64_t global_seed, int epoch) {
  if (spec.is_noop()) return seg;
  const std::uint64_t seed =
      segment_seed(global_seed, seg.subject_id, seg.recording_id, seg.segment_index, epoch);
  Rng draw(seed);
  Waveform w{seg.samples, seg.sample_rate_hz};
  const std::size_t length = seg.samples.size();

  if (draw.bernoulli(spec.p_gaussian)) {
    const double snr = draw.uniform(spec.gaussian_snr_db.lo, spec.gaussian_snr_db.hi);
    w = add_gaussian_noise(w, snr, derive_seed(seed, 1));
  }
  if (!background_pool.empty() && draw.bernoulli(spec.p_background)) {
    const auto& noise = background_pool[draw.below(background_pool.size())];
    const double snr = draw.uniform(spec.background_snr_db.lo, spec.background_snr_db.hi);
    w = mix_background(w, noise, snr, derive_seed(seed, 2));
  }
  if (draw.bernoulli(spec.p_stretch)) {
    w = time_stretch(w, draw.uniform(spec.stretch_rate.lo, spec.stretch_rate.hi));
  }
  if (draw.bernoulli(spec.p_invert)) w = invert_polarity(w);

  Segment out = seg;
  out.samples = std::move(w.samples);
  out.samples.resize(length, 0.0f);
  return out;
}

}  // namespace voxcog
