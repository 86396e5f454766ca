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

#include <cstring>

#include "oracles.hpp"
#include "test_util.hpp"
#include "voxcog/augment.hpp"

namespace voxcog {
namespace {

using testing::bit_equal;
using testing::power;
using testing::realized_snr;

TEST(GaussianNoise, ZeroDbGivesUnitNoisePower) {
  // Unit-power square wave of amplitude 1: clipping would bias the check, so
  // the noise is measured before clipping via scale_noise_to_snr.
  std::vector<float> sig(20000);
  for (std::size_t i = 0; i < sig.size(); ++i) sig[i] = (i / 50) % 2 ? 1.0f : -1.0f;
  const auto scaled = scale_noise_to_snr(sig, gaussian_noise(sig.size(), 3), 0.0);
  EXPECT_NEAR(power(scaled), 1.0, 1e-6);
}

TEST(GaussianNoise, ZeroSignalUnchanged) {
  const Waveform z{std::vector<float>(1000, 0.0f), 16000};
  EXPECT_EQ(add_gaussian_noise(z, 10.0, 1), z);
}

TEST(GaussianNoise, RealizedSnrWithinHalfDb) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Waveform w = testing::random_wave(16000, 100 + seed, 0.05);
    const double snr = 5.0 + seed * 1.25;
    EXPECT_NEAR(realized_snr(w, add_gaussian_noise(w, snr, seed)), snr, 0.5);
  }
  const Waveform w = testing::sine(300.0, 1.0, 16000, 0.1);
  EXPECT_NEAR(realized_snr(w, add_gaussian_noise(w, 20.0, 9)), 20.0, 0.5);
}

TEST(Background, EqualLengthZeroDbUnitPowersIsPlainSum) {
  std::vector<float> a(4000), b(4000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = (i % 2) ? 0.5f : -0.5f;
    b[i] = ((i / 3) % 2) ? 0.5f : -0.5f;
  }
  const Waveform w{a, 16000}, n{b, 16000};
  const Waveform out = mix_background(w, n, 0.0, 7);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(out.samples[i], a[i] + b[i], 1e-6);
}

TEST(Background, ShortNoiseIsTiledByModulo) {
  const Waveform noise = testing::random_wave(16000, 5);
  const auto fitted = fit_noise(noise.samples, 240000, 1);
  for (std::size_t i = 0; i < fitted.size(); ++i) ASSERT_EQ(fitted[i], noise.samples[i % 16000]);
}

TEST(Background, LongNoiseSliceIsSeeded) {
  const Waveform noise = testing::random_wave(50000, 6);
  const auto a = fit_noise(noise.samples, 1000, 42);
  const auto b = fit_noise(noise.samples, 1000, 42);
  EXPECT_EQ(a, b);
  const auto it = std::search(noise.samples.begin(), noise.samples.end(), a.begin(), a.end());
  EXPECT_NE(it, noise.samples.end());
  EXPECT_THROW(fit_noise({}, 10, 1), ConfigError);
}

TEST(Background, RealizedSnrWithinHalfDb) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Waveform w = testing::random_wave(20000, 200 + seed, 0.05);
    const Waveform noise = testing::random_wave(7000 + 3000 * seed, 300 + seed, 0.3);
    const double snr = 3.0 + 0.6 * seed;
    EXPECT_NEAR(realized_snr(w, mix_background(w, noise, snr, seed)), snr, 0.5);
  }
}

TEST(TimeStretch, IdentityAndLength) {
  const Waveform w = testing::random_wave(160000, 8);
  EXPECT_TRUE(bit_equal(time_stretch(w, 1.0).samples, w.samples));
  EXPECT_EQ(time_stretch(w, 1.25).size(), 128000u);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto n = static_cast<std::size_t>(1 + rng.below(50000));
    const double rate = rng.uniform(0.5, 2.0);
    const Waveform x{std::vector<float>(n, 0.1f), 16000};
    ASSERT_EQ(time_stretch(x, rate).size(), static_cast<std::size_t>(std::llround(n / rate)));
  }
  EXPECT_THROW(time_stretch(w, 0.4), ConfigError);
  EXPECT_THROW(time_stretch(w, 2.1), ConfigError);
}

TEST(TimeStretch, SpeedChangeScalesFrequency) {
  const Waveform w = testing::sine(440.0, 2.0, 16000);
  const Waveform s = time_stretch(w, 1.1);
  EXPECT_EQ(s.sample_rate_hz, 16000);
  EXPECT_NEAR(testing::fft_peak_hz(s.samples, 16000), 484.0, 2.0);
}

TEST(Polarity, NegationAndInvolution) {
  const Waveform w{{0.5f, -0.25f}, 16000};
  EXPECT_EQ(invert_polarity(w).samples, (std::vector<float>{-0.5f, 0.25f}));
  const Waveform r = testing::random_wave(5000, 9);
  EXPECT_TRUE(bit_equal(invert_polarity(invert_polarity(r)).samples, r.samples));
  const Waveform z{std::vector<float>(10, 0.0f), 16000};
  for (float v : invert_polarity(z).samples) EXPECT_EQ(v, 0.0f);
}

Segment segment_of(const Waveform& w) {
  Segment s;
  s.subject_id = "subj";
  s.recording_id = "rec.wav";
  s.segment_index = 3;
  s.sample_rate_hz = w.sample_rate_hz;
  s.samples = w.samples;
  return s;
}

TEST(ApplyAugmentations, NoOpSpecLeavesSegment) {
  const Segment s = segment_of(testing::random_wave(48000, 10));
  EXPECT_TRUE(bit_equal(apply_augmentations(s, AugmentSpec::none(), {}, 1, 1).samples, s.samples));
}

TEST(ApplyAugmentations, InvertOnly) {
  AugmentSpec spec = AugmentSpec::none();
  spec.p_invert = 1.0;
  const Segment s = segment_of(testing::random_wave(48000, 11));
  EXPECT_TRUE(bit_equal(apply_augmentations(s, spec, {}, 5, 2).samples,
                        invert_polarity(Waveform{s.samples, 16000}).samples));
}

TEST(ApplyAugmentations, DeterministicAndFixedLength) {
  AugmentSpec spec;
  spec.p_gaussian = spec.p_background = spec.p_stretch = spec.p_invert = 0.7;
  const std::vector<Waveform> pool{testing::random_wave(9000, 12), testing::random_wave(70000, 13)};
  const Segment s = segment_of(testing::random_wave(48000, 14));
  int changed = 0;
  for (int epoch = 0; epoch < 30; ++epoch) {
    const Segment a = apply_augmentations(s, spec, pool, 77, epoch);
    const Segment b = apply_augmentations(s, spec, pool, 77, epoch);
    ASSERT_TRUE(bit_equal(a.samples, b.samples));
    ASSERT_EQ(a.samples.size(), s.samples.size());
    changed += !bit_equal(a.samples, s.samples);
  }
  EXPECT_GT(changed, 20);
  // Every element of the seed tuple matters.
  Segment t = s;
  t.segment_index = 4;
  EXPECT_NE(segment_seed(77, "subj", "rec.wav", 3, 1), segment_seed(77, "subj", "rec.wav", 4, 1));
  EXPECT_NE(segment_seed(77, "subj", "rec.wav", 3, 1), segment_seed(78, "subj", "rec.wav", 3, 1));
  EXPECT_NE(segment_seed(77, "subj", "rec.wav", 3, 1), segment_seed(77, "subk", "rec.wav", 3, 1));
  EXPECT_NE(segment_seed(77, "subj", "rec.wav", 3, 1), segment_seed(77, "subj", "red.wav", 3, 1));
  EXPECT_NE(segment_seed(77, "subj", "rec.wav", 3, 1), segment_seed(77, "subj", "rec.wav", 3, 2));
}

TEST(ApplyAugmentations, EmptyPoolSkipsBackground) {
  AugmentSpec spec = AugmentSpec::none();
  spec.p_background = 1.0;
  const Segment s = segment_of(testing::random_wave(8000, 15));
  EXPECT_TRUE(bit_equal(apply_augmentations(s, spec, {}, 1, 1).samples, s.samples));
}

TEST(AugmentSpec, Validation) {
  AugmentSpec s;
  EXPECT_NO_THROW(s.validate());
  s.p_invert = 1.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.gaussian_snr_db = {30, 5};
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.stretch_rate = {0.0, 1.1};
  EXPECT_THROW(s.validate(), ConfigError);
}

}  // namespace
}  // namespace voxcog
