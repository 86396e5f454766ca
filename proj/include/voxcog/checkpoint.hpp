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

// VXCG checkpoint container. All integers and floats are little-endian.
//
//   offset  size  field
//   0       4     magic "VXCG"
//   4       4     u32 format version (kCheckpointVersion)
//   8       8     u64 metadata length M
//   16      M     metadata, compact JSON with sorted keys
//   16+M    4     u32 tensor count N
//   ...           N directory entries:
//                   u32 name length, name bytes,
//                   u32 rank, rank x u32 dims,
//                   u64 byte offset (relative to the blob area), u64 byte size
//   ...           blob area: float32 tensors, contiguous, in directory order

#pragma once

#include <nlohmann/json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "voxcog/common.hpp"
#include "voxcog/model.hpp"

namespace voxcog {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public FormatError {
 public:
  enum class Kind { kBadMagic, kVersion, kTruncated, kMetadata, kShape, kGeometry, kIo };

  CheckpointError(Kind kind, std::string message, std::string tensor = {})
      : FormatError(std::move(message)), kind_(kind), tensor_(std::move(tensor)) {}

  Kind kind() const { return kind_; }
  // Name of the offending tensor, empty when the error is not tensor-specific.
  const std::string& tensor() const { return tensor_; }

 private:
  Kind kind_;
  std::string tensor_;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"n_blocks", c.n_blocks},
          {"n_heads", c.n_heads},
          {"ffn_mult", c.ffn_mult},
          {"lora_rank", c.lora_rank},
          {"lora_alpha", c.lora_alpha},
          {"n_mels", c.n_mels},
          {"n_classes", c.n_classes},
          {"frontend_kernel", c.frontend_kernel},
          {"frontend_stride", c.frontend_stride},
          {"frontend_padding", c.frontend_padding}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_blocks = j.value("n_blocks", c.n_blocks);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.lora_rank = j.value("lora_rank", c.lora_rank);
  c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
  c.n_mels = j.value("n_mels", c.n_mels);
  c.n_classes = j.value("n_classes", c.n_classes);
  c.frontend_kernel = j.value("frontend_kernel", c.frontend_kernel);
  c.frontend_stride = j.value("frontend_stride", c.frontend_stride);
  c.frontend_padding = j.value("frontend_padding", c.frontend_padding);
  return c;
}

inline nlohmann::json to_json(const FeatureConfig& f) {
  return {{"sample_rate_hz", f.sample_rate_hz}, {"frame_length", f.frame_length},
          {"hop_length", f.hop_length},         {"n_fft", f.n_fft},
          {"n_mels", f.n_mels},                 {"f_min", f.f_min},
          {"f_max", f.f_max},                   {"log_floor", f.log_floor},
          {"normalize", f.normalize}};
}

inline FeatureConfig feature_config_from_json(const nlohmann::json& j) {
  FeatureConfig f;
  f.sample_rate_hz = j.value("sample_rate_hz", f.sample_rate_hz);
  f.frame_length = j.value("frame_length", f.frame_length);
  f.hop_length = j.value("hop_length", f.hop_length);
  f.n_fft = j.value("n_fft", f.n_fft);
  f.n_mels = j.value("n_mels", f.n_mels);
  f.f_min = j.value("f_min", f.f_min);
  f.f_max = j.value("f_max", f.f_max);
  f.log_floor = j.value("log_floor", f.log_floor);
  f.normalize = j.value("normalize", f.normalize);
  return f;
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t pos = 0) : bytes_(bytes), pos_(pos) {}

  bool can_read(std::size_t n) const { return pos_ <= bytes_.size() && bytes_.size() - pos_ >= n; }

  std::uint64_t uint(int width, const char* what) {
    if (!can_read(width)) {
      throw CheckpointError(CheckpointError::Kind::kTruncated,
                            std::string("checkpoint truncated while reading ") + what);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += width;
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    if (!can_read(n)) {
      throw CheckpointError(CheckpointError::Kind::kTruncated,
                            std::string("checkpoint truncated while reading ") + what);
    }
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_;
};

}  // namespace detail

inline nlohmann::json checkpoint_metadata(const ModelF& m) {
  return {{"model", to_json(m.config())},
          {"features", to_json(m.features)},
          {"classes", m.class_names},
          {"provenance",
           {{"stage", to_string(m.provenance.stage)},
            {"seed", m.provenance.seed},
            {"epoch", m.provenance.epoch},
            {"lr", m.provenance.lr},
            {"run_digest", m.provenance.run_digest}}}};
}

inline std::string encode_checkpoint(const ModelF& m) {
  std::string out = "VXCG";
  detail::put_u32(out, kCheckpointVersion);
  const std::string meta = checkpoint_metadata(m).dump();
  detail::put_u64(out, meta.size());
  out += meta;
  detail::put_u32(out, static_cast<std::uint32_t>(m.params().size()));
  std::uint64_t offset = 0;
  for (const auto& p : m.params()) {
    detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put_u32(out, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    const std::uint64_t nbytes = static_cast<std::uint64_t>(p.value.size()) * 4;
    detail::put_u64(out, offset);
    detail::put_u64(out, nbytes);
    offset += nbytes;
  }
  for (const auto& p : m.params()) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      std::uint32_t u;
      const float f = p.value.data()[i];
      std::memcpy(&u, &f, 4);
      detail::put_u32(out, u);
    }
  }
  return out;
}

// Decodes a checkpoint. When `expected_features` is given, a feature
// geometry that differs from the checkpoint's raises kGeometry.
inline ModelF decode_checkpoint(const std::string& bytes,
                                const FeatureConfig* expected_features = nullptr) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < 4 || bytes.compare(0, 4, "VXCG") != 0) {
    throw CheckpointError(Kind::kBadMagic, "bad magic: not a VXCG checkpoint");
  }
  detail::Reader r(bytes, 4);
  const auto version = r.uint(4, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersion, "checkpoint version " + std::to_string(version) +
                                              " unsupported (expected " +
                                              std::to_string(kCheckpointVersion) + ")");
  }
  const auto meta_len = r.uint(8, "metadata length");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.str(meta_len, "metadata"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kMetadata, std::string("malformed metadata: ") + e.what());
  }

  ModelF m;
  try {
    m = ModelF::skeleton(model_config_from_json(meta.at("model")));
    m.features = feature_config_from_json(meta.at("features"));
    m.class_names = meta.at("classes").get<std::vector<std::string>>();
    const auto& prov = meta.at("provenance");
    m.provenance.stage = stage_from_string(prov.at("stage").get<std::string>());
    m.provenance.seed = prov.at("seed").get<std::uint64_t>();
    m.provenance.epoch = prov.at("epoch").get<int>();
    m.provenance.lr = prov.at("lr").get<double>();
    m.provenance.run_digest = prov.at("run_digest").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kMetadata, std::string("incomplete metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::kMetadata, std::string("invalid model config: ") + e.what());
  }
  if (m.features.n_mels != m.config().n_mels) {
    throw CheckpointError(Kind::kGeometry, "checkpoint feature n_mels " +
                                               std::to_string(m.features.n_mels) +
                                               " disagrees with model n_mels " +
                                               std::to_string(m.config().n_mels));
  }
  if (expected_features != nullptr && !(*expected_features == m.features)) {
    throw CheckpointError(Kind::kGeometry,
                          "feature geometry mismatch: checkpoint has n_mels=" +
                              std::to_string(m.features.n_mels) + ", hop=" +
                              std::to_string(m.features.hop_length) + "; run expects n_mels=" +
                              std::to_string(expected_features->n_mels) + ", hop=" +
                              std::to_string(expected_features->hop_length));
  }

  const auto count = r.uint(4, "tensor count");
  if (count != m.params().size()) {
    throw CheckpointError(Kind::kShape, "checkpoint holds " + std::to_string(count) +
                                            " tensors, config implies " +
                                            std::to_string(m.params().size()));
  }
  struct Entry {
    std::uint64_t offset, size;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    auto& p = m.params()[i];
    const auto name_len = r.uint(4, "tensor name length");
    const std::string name = r.str(name_len, "tensor name");
    if (name != p.name) {
      throw CheckpointError(Kind::kShape,
                            "tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                                p.name + "'",
                            name);
    }
    const auto rank = r.uint(4, "tensor rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.uint(4, "tensor dims"));
    if (shape != p.shape) {
      throw CheckpointError(Kind::kShape, "tensor '" + name + "' shape disagrees with config", name);
    }
    entries.push_back({r.uint(8, "tensor offset"), r.uint(8, "tensor size")});
    if (entries.back().size != static_cast<std::uint64_t>(p.value.size()) * 4) {
      throw CheckpointError(Kind::kShape, "tensor '" + name + "' byte size disagrees with shape",
                            name);
    }
  }
  const std::size_t blob_start = r.pos();
  const std::uint64_t available = bytes.size() - blob_start;
  std::uint64_t expected_offset = 0;
  for (std::size_t i = 0; i < count; ++i) {
    auto& p = m.params()[i];
    const Entry& e = entries[i];
    if (e.offset != expected_offset) {
      throw CheckpointError(Kind::kShape,
                            "tensor '" + p.name + "' offset overlaps or leaves a gap", p.name);
    }
    if (e.offset + e.size > available) {
      throw CheckpointError(Kind::kTruncated,
                            "checkpoint truncated inside tensor '" + p.name + "'", p.name);
    }
    const char* src = bytes.data() + blob_start + e.offset;
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) {
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[4 * k + b])) << (8 * b);
      }
      std::memcpy(&p.value.data()[k], &u, 4);
    }
    expected_offset += e.size;
  }
  if (expected_offset != available) {
    throw CheckpointError(Kind::kShape, "trailing bytes after last tensor");
  }
  m.apply_freeze(m.provenance.stage);
  return m;
}

inline void save_checkpoint(const ModelF& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw CheckpointError(CheckpointError::Kind::kIo, "cannot write checkpoint " + path.string());
  }
  const std::string bytes = encode_checkpoint(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "write failed: " + path.string());
}

inline ModelF load_checkpoint(const std::filesystem::path& path,
                              const FeatureConfig* expected_features = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint not found: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, expected_features);
}

}  // namespace voxcog
