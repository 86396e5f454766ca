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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "voxcog/common.hpp"

namespace voxcog {

// Mono waveform. Amplitudes are nominally in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate_hz = kSampleRate;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
  std::size_t size() const { return samples.size(); }
  bool operator==(const Waveform&) const = default;
};

inline double mean_power(std::span<const float> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return acc / static_cast<double>(x.size());
}

namespace detail {

// Linear interpolation of `in` at output index i mapped to source position
// i * step. Positions past the last sample hold the last sample.
inline std::vector<float> interpolate(std::span<const float> in,
                                      std::size_t out_len, double step) {
  std::vector<float> out(out_len);
  if (in.empty()) return out;
  const std::size_t last = in.size() - 1;
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto lo = static_cast<std::size_t>(pos);
    if (lo >= last) {
      out[i] = in[last];
      continue;
    }
    const double frac = pos - static_cast<double>(lo);
    out[i] = static_cast<float>(in[lo] + frac * (static_cast<double>(in[lo + 1]) - in[lo]));
  }
  return out;
}

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

// Linear-interpolation resampling; output length round(N * target / source).
inline Waveform resample(const Waveform& w, int target_hz) {
  if (target_hz <= 0) throw ConfigError("resample: target rate must be positive");
  if (w.sample_rate_hz <= 0) throw ConfigError("resample: source rate must be positive");
  if (target_hz == w.sample_rate_hz) return w;
  const auto out_len = static_cast<std::size_t>(std::llround(
      static_cast<double>(w.samples.size()) * target_hz / w.sample_rate_hz));
  const double step = static_cast<double>(w.sample_rate_hz) / target_hz;
  return Waveform{detail::interpolate(w.samples, out_len, step), target_hz};
}

// Reads RIFF/WAVE with 16-bit integer or 32-bit float PCM, 1 or 2 channels.
// Stereo is averaged to mono and the result is resampled to `target_hz`.
inline Waveform load_recording(const std::filesystem::path& path,
                               int target_hz = kSampleRate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("file not found: " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("not a RIFF/WAVE file: " + path.string());
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  bool have_fmt = false;

  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    const std::uint32_t len = detail::read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = buf.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || avail < 16) throw FormatError("truncated fmt chunk: " + path.string());
      format = detail::read_u16(buf.data() + body);
      channels = detail::read_u16(buf.data() + body + 2);
      rate = detail::read_u32(buf.data() + body + 4);
      bits = detail::read_u16(buf.data() + body + 14);
      if (format == 0xFFFE && len >= 26 && avail >= 26) {
        format = detail::read_u16(buf.data() + body + 24);  // sub-format GUID head
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = buf.data() + body;
      data_len = std::min<std::size_t>(len, avail);
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt || data == nullptr) throw FormatError("missing fmt or data chunk: " + path.string());
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    throw FormatError("unsupported encoding (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits): " + path.string());
  }
  if (channels < 1 || channels > 2) {
    throw FormatError("unsupported channel count " + std::to_string(channels) + ": " +
                      path.string());
  }
  if (rate == 0) throw FormatError("zero sample rate: " + path.string());

  const std::size_t bytes_per = bits / 8;
  const std::size_t frames = data_len / (bytes_per * channels);
  if (frames == 0) throw FormatError("empty audio: " + path.string());

  Waveform w;
  w.sample_rate_hz = static_cast<int>(rate);
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes_per;
      if (pcm16) {
        acc += static_cast<std::int16_t>(detail::read_u16(p)) / 32768.0;
      } else {
        float v;
        const std::uint32_t u = detail::read_u32(p);
        std::memcpy(&v, &u, 4);
        acc += v;
      }
    }
    w.samples[i] = static_cast<float>(std::clamp(acc / channels, -1.0, 1.0));
  }
  return resample(w, target_hz);
}

// Mono PCM16 encoder. Samples are clipped to [-1, 1] and rounded.
inline std::string encode_wav_pcm16(const Waveform& w) {
  std::string out;
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  out.reserve(44 + 2 * n);
  out += "RIFF";
  detail::put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, 2 * n);
  for (float s : w.samples) {
    const double c = std::clamp(static_cast<double>(s), -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::lround(std::min(c * 32768.0, 32767.0)));
    detail::put_u16(out, static_cast<std::uint16_t>(q));
  }
  return out;
}

inline void save_wav_pcm16(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string bytes = encode_wav_pcm16(w);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace voxcog
