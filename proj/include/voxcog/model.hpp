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

// The classifier network:
//
//   log-mel [n_mels, T]
//     -> two strided conv layers (kernel 3, stride 2, padding 1, GELU)
//     -> sinusoidal positions
//     -> pre-LN transformer blocks, LoRA on the query and value projections
//     -> point-wise conv + ReLU
//     -> temporal mean pooling
//     -> DNN head (linear, ReLU, linear) -> logits

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "voxcog/common.hpp"
#include "voxcog/frontend.hpp"
#include "voxcog/lora.hpp"
#include "voxcog/nn.hpp"

namespace voxcog {

struct ModelConfig {
  int d_model = 64;
  int n_blocks = 2;
  int n_heads = 4;
  int ffn_mult = 4;
  int lora_rank = 8;
  double lora_alpha = 16.0;
  int n_mels = 80;
  int n_classes = 2;
  int frontend_kernel = 3;
  int frontend_stride = 2;
  int frontend_padding = 1;

  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    if (d_model <= 0 || n_blocks < 0 || n_heads <= 0 || ffn_mult <= 0 || n_mels <= 0) {
      throw ConfigError("model config: sizes must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("model config: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (lora_rank <= 0 || !(lora_alpha > 0.0)) {
      throw ConfigError("model config: lora_rank and lora_alpha must be positive");
    }
    if (n_classes < 2) throw ConfigError("model config: n_classes must be >= 2");
    if (frontend_kernel <= 0 || frontend_stride <= 0 || frontend_padding < 0) {
      throw ConfigError("model config: invalid frontend geometry");
    }
  }

  // Encoder sequence length for an input of `frames` feature frames.
  long encoder_frames(long frames) const {
    long t = frames;
    for (int i = 0; i < 2; ++i) {
      t = nn::conv_output_length(t, frontend_kernel, frontend_stride, frontend_padding);
    }
    return t;
  }
};

enum class Stage { kPretrain, kFinetune };

inline std::string to_string(Stage s) { return s == Stage::kPretrain ? "pretrain" : "finetune"; }

inline Stage stage_from_string(const std::string& s) {
  if (s == "pretrain") return Stage::kPretrain;
  if (s == "finetune") return Stage::kFinetune;
  throw FormatError("unknown stage '" + s + "'");
}

struct Provenance {
  Stage stage = Stage::kPretrain;
  std::uint64_t seed = 0;
  int epoch = 0;
  double lr = 0.0;
  std::string run_digest;

  bool operator==(const Provenance&) const = default;
};

// Parameter roles. Names are the public contract for freeze policies and
// checkpoints.
inline bool is_lora_param(const std::string& name) {
  return name.find(".lora_A") != std::string::npos || name.find(".lora_B") != std::string::npos;
}
inline bool is_pointwise_param(const std::string& name) { return name.rfind("pointwise.", 0) == 0; }
inline bool is_head_param(const std::string& name) { return name.rfind("head.", 0) == 0; }

template <class T>
class Model {
 public:
  using Param = nn::Parameter<T>;
  using Tensor = nn::Tensor<T>;
  using Var = nn::Var<T>;

  struct Linear {
    std::size_t w = 0, b = 0;
  };
  struct LoraLinear {
    std::size_t w = 0, b = 0, a = 0, bm = 0;
  };
  struct Norm {
    std::size_t gain = 0, bias = 0;
  };
  struct Block {
    Norm ln1, ln2;
    LoraLinear q, v;
    std::size_t k = 0;  // key projection carries no bias: softmax is blind to it
    Linear out, fc1, fc2;
  };

  struct ForwardOptions {
    bool use_adapters = true;
  };

  Model() = default;

  static Model build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    m.layout();
    Rng rng(seed);
    for (auto& p : m.params_) m.init_param(p, rng);
    m.apply_freeze(Stage::kPretrain);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  std::vector<Param*> param_ptrs() {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  Param& param(const std::string& name) { return params_.at(index_of(name)); }
  const Param& param(const std::string& name) const { return params_.at(index_of(name)); }
  bool has_param(const std::string& name) const { return names_.count(name) != 0; }

  std::size_t index_of(const std::string& name) const {
    auto it = names_.find(name);
    if (it == names_.end()) throw ShapeError("no parameter named '" + name + "'");
    return it->second;
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& p : params_) {
      if (p.trainable) out.push_back(p.name);
    }
    return out;
  }

  Stage stage() const { return provenance.stage; }

  // pretrain: everything trains. finetune: frontend and encoder base weights
  // are frozen; LoRA A/B, point-wise conv and head train.
  void apply_freeze(Stage stage) {
    provenance.stage = stage;
    for (auto& p : params_) {
      p.trainable = stage == Stage::kPretrain || is_lora_param(p.name) ||
                    is_pointwise_param(p.name) || is_head_param(p.name);
    }
  }

  nn::LoRAAdapter<T> adapter(const LoraLinear& l) {
    return {&params_[l.a], &params_[l.bm], cfg_.lora_rank, static_cast<T>(cfg_.lora_alpha)};
  }

  // Replaces the head with a freshly initialized one of `n_classes` outputs.
  void reset_head(int n_classes, std::uint64_t seed) {
    if (n_classes < 2) throw ConfigError("head needs at least 2 classes");
    cfg_.n_classes = n_classes;
    const int d = cfg_.d_model;
    Rng rng(seed);
    auto reshape = [&](std::size_t idx, std::vector<int> shape) {
      Param& p = params_[idx];
      p.shape = std::move(shape);
      const int rows = p.shape.size() == 1 ? 1 : p.shape[0];
      const int cols = p.shape.size() == 1 ? p.shape[0] : p.shape[1];
      p.value.resize(rows, cols);
      p.grad.resize(0, 0);
      init_param(p, rng);
    };
    reshape(head1_.w, {d, d});
    reshape(head1_.b, {d});
    reshape(head2_.w, {n_classes, d});
    reshape(head2_.b, {n_classes});
  }

  // Pooled utterance embedding [1, d_model] (everything before the head).
  Var embed(nn::Binder<T>& bind, const Tensor& features, ForwardOptions opt = {}) const {
    if (features.rows() != cfg_.n_mels) {
      throw ShapeError("feature geometry mismatch: model expects " + std::to_string(cfg_.n_mels) +
                       " mel bins, got " + std::to_string(features.rows()));
    }
    Var x = nn::constant<T>(features.transpose());
    x = frontend(bind, x);
    x = nn::add(x, nn::constant<T>(positional_encoding(x.rows(), cfg_.d_model)));
    for (const Block& blk : blocks_) x = encoder_block(bind, x, blk, opt);
    x = nn::relu(nn::pointwise_conv1d(x, bind(params_[pointwise_.w]), bind(params_[pointwise_.b])));
    return nn::mean_rows(x);
  }

  Var head(nn::Binder<T>& bind, const Var& pooled) const {
    Var h = nn::relu(nn::linear(pooled, bind(params_[head1_.w]), bind(params_[head1_.b])));
    return nn::linear(h, bind(params_[head2_.w]), bind(params_[head2_.b]));
  }

  // features: [n_mels, T] -> logits [1, n_classes].
  Var forward(nn::Binder<T>& bind, const Tensor& features, ForwardOptions opt = {}) const {
    return head(bind, embed(bind, features, opt));
  }

  nn::RowVector<T> logits(const Tensor& features, ForwardOptions opt = {}) const {
    nn::Binder<T> bind;
    return forward(bind, features, opt).value().row(0);
  }

  nn::RowVector<T> logits(const FeatureMatrix& f, ForwardOptions opt = {}) const {
    return logits(feature_tensor(f), opt);
  }

  static Tensor feature_tensor(const FeatureMatrix& f) {
    Tensor t(f.n_mels, f.n_frames);
    for (int m = 0; m < f.n_mels; ++m) {
      for (int i = 0; i < f.n_frames; ++i) t(m, i) = static_cast<T>(f.at(m, i));
    }
    return t;
  }

  // One pre-LN transformer block; exposed for testing.
  Var encoder_block(nn::Binder<T>& bind, const Var& x, const Block& blk,
                    ForwardOptions opt = {}) const {
    const Var a = nn::layer_norm(x, bind(params_[blk.ln1.gain]), bind(params_[blk.ln1.bias]));
    const Var q = projection(bind, a, blk.q, opt.use_adapters);
    const Var k = nn::matmul_nt(a, bind(params_[blk.k]));
    const Var v = projection(bind, a, blk.v, opt.use_adapters);
    const Var att = nn::attention(q, k, v, cfg_.n_heads);
    const Var h = nn::add(x, nn::linear(att, bind(params_[blk.out.w]), bind(params_[blk.out.b])));
    const Var f = nn::layer_norm(h, bind(params_[blk.ln2.gain]), bind(params_[blk.ln2.bias]));
    const Var g = nn::gelu(nn::linear(f, bind(params_[blk.fc1.w]), bind(params_[blk.fc1.b])));
    return nn::add(h, nn::linear(g, bind(params_[blk.fc2.w]), bind(params_[blk.fc2.b])));
  }

  const std::vector<Block>& blocks() const { return blocks_; }

  static Tensor positional_encoding(Eigen::Index frames, int d) {
    Tensor pe(frames, d);
    for (Eigen::Index t = 0; t < frames; ++t) {
      for (int i = 0; i < d; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / d);
        pe(t, i) = static_cast<T>(std::sin(static_cast<double>(t) * freq));
        if (i + 1 < d) pe(t, i + 1) = static_cast<T>(std::cos(static_cast<double>(t) * freq));
      }
    }
    return pe;
  }

  // Same structure and values in another scalar type.
  template <class U>
  Model<U> cast() const {
    Model<U> out;
    out.cfg_ = cfg_;
    out.layout();
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.params_[i].value = params_[i].value.template cast<U>();
      out.params_[i].trainable = params_[i].trainable;
    }
    out.class_names = class_names;
    out.features = features;
    out.provenance = provenance;
    return out;
  }

  // Builds the parameter registry (names, shapes) without initializing
  // values. Used by build() and by checkpoint loading.
  static Model skeleton(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    m.layout();
    return m;
  }

  std::vector<std::string> class_names;
  FeatureConfig features;
  Provenance provenance;

 private:
  template <class U>
  friend class Model;

  std::size_t add_param(const std::string& name, std::vector<int> shape) {
    Param p;
    p.name = name;
    p.shape = shape;
    const int rows = shape.size() == 1 ? 1 : shape[0];
    int cols = 1;
    if (shape.size() == 1) {
      cols = shape[0];
    } else {
      for (std::size_t i = 1; i < shape.size(); ++i) cols *= shape[i];
    }
    p.value = Tensor::Zero(rows, cols);
    p.index = params_.size();
    names_[name] = p.index;
    params_.push_back(std::move(p));
    return params_.back().index;
  }

  Linear add_linear(const std::string& prefix, int out, int in) {
    return {add_param(prefix + ".weight", {out, in}), add_param(prefix + ".bias", {out})};
  }

  LoraLinear add_lora_linear(const std::string& prefix, int out, int in) {
    LoraLinear l;
    l.w = add_param(prefix + ".weight", {out, in});
    l.b = add_param(prefix + ".bias", {out});
    l.a = add_param(prefix + ".lora_A", {cfg_.lora_rank, in});
    l.bm = add_param(prefix + ".lora_B", {out, cfg_.lora_rank});
    return l;
  }

  Norm add_norm(const std::string& prefix, int d) {
    return {add_param(prefix + ".gain", {d}), add_param(prefix + ".bias", {d})};
  }

  void layout() {
    params_.clear();
    names_.clear();
    blocks_.clear();
    const int d = cfg_.d_model, k = cfg_.frontend_kernel;
    conv1_ = {add_param("frontend.conv1.weight", {d, k, cfg_.n_mels}),
              add_param("frontend.conv1.bias", {d})};
    conv2_ = {add_param("frontend.conv2.weight", {d, k, d}), add_param("frontend.conv2.bias", {d})};
    for (int i = 0; i < cfg_.n_blocks; ++i) {
      const std::string p = "blocks." + std::to_string(i);
      Block b;
      b.ln1 = add_norm(p + ".ln1", d);
      b.q = add_lora_linear(p + ".attn.q", d, d);
      b.k = add_param(p + ".attn.k.weight", {d, d});
      b.v = add_lora_linear(p + ".attn.v", d, d);
      b.out = add_linear(p + ".attn.out", d, d);
      b.ln2 = add_norm(p + ".ln2", d);
      b.fc1 = add_linear(p + ".ffn.fc1", cfg_.ffn_mult * d, d);
      b.fc2 = add_linear(p + ".ffn.fc2", d, cfg_.ffn_mult * d);
      blocks_.push_back(b);
    }
    pointwise_ = add_linear("pointwise", d, d);
    head1_ = add_linear("head.fc1", d, d);
    head2_ = add_linear("head.fc2", cfg_.n_classes, d);
  }

  // Weights ~ N(0, 1/fan_in), biases 0, norm gains 1, LoRA A ~ N(0, 0.02^2),
  // LoRA B = 0.
  void init_param(Param& p, Rng& rng) const {
    const std::string& n = p.name;
    auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return n.size() >= s.size() && n.compare(n.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".lora_B") || ends_with(".bias")) {
      p.value.setZero();
    } else if (ends_with(".gain")) {
      p.value.setOnes();
    } else if (ends_with(".lora_A")) {
      for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        p.value.data()[i] = static_cast<T>(rng.normal(0.0, 0.02));
      }
    } else {
      const double sd = 1.0 / std::sqrt(static_cast<double>(p.value.cols()));
      for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        p.value.data()[i] = static_cast<T>(rng.normal(0.0, sd));
      }
    }
  }

  Var frontend(nn::Binder<T>& bind, Var x) const {
    const int k = cfg_.frontend_kernel, s = cfg_.frontend_stride, pad = cfg_.frontend_padding;
    x = nn::gelu(nn::conv1d(x, bind(params_[conv1_.w]), bind(params_[conv1_.b]), k, s, pad));
    return nn::gelu(nn::conv1d(x, bind(params_[conv2_.w]), bind(params_[conv2_.b]), k, s, pad));
  }

  Var projection(nn::Binder<T>& bind, const Var& x, const LoraLinear& l, bool use_adapter) const {
    if (!use_adapter) return nn::linear(x, bind(params_[l.w]), bind(params_[l.b]));
    return nn::lora_linear(x, bind(params_[l.w]), bind(params_[l.b]), bind(params_[l.a]),
                           bind(params_[l.bm]),
                           static_cast<T>(cfg_.lora_alpha / cfg_.lora_rank));
  }

  ModelConfig cfg_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t> names_;
  Linear conv1_, conv2_, pointwise_, head1_, head2_;
  std::vector<Block> blocks_;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

// Softmax class probabilities for one feature matrix, in double precision.
template <class T>
std::vector<double> predict_proba(const Model<T>& m, const FeatureMatrix& f) {
  const auto logits = m.logits(f);
  const auto p = nn::softmax<double>(logits.template cast<double>());
  return {p.data(), p.data() + p.size()};
}

// Pretrained -> downstream initialization: copies frontend, encoder (base and
// LoRA) and point-wise conv, rebuilds the head for `n_classes` with a seeded
// random init, and applies the finetune freeze policy.
inline ModelF transfer_init(const ModelF& pretrained, int n_classes, std::uint64_t seed,
                            std::vector<std::string> class_names = {}) {
  if (pretrained.stage() != Stage::kPretrain) {
    throw ConfigError("transfer_init: checkpoint stage is '" + to_string(pretrained.stage()) +
                      "', expected 'pretrain'");
  }
  ModelF m = pretrained;
  m.reset_head(n_classes, derive_seed(seed, 0x4845414455ULL));
  m.apply_freeze(Stage::kFinetune);
  m.class_names = std::move(class_names);
  m.provenance.seed = seed;
  m.provenance.epoch = 0;
  m.provenance.lr = 0.0;
  return m;
}

// Max relative error between analytic and central-difference gradients of
// the cross-entropy loss over every trainable scalar. Frozen parameters are
// skipped. Denominator: max(|analytic|, |numeric|, 1e-8).
inline double finite_difference_check(ModelD& model, const nn::Tensor<double>& features,
                                      int target, double eps = 1e-4) {
  auto loss_of = [&]() {
    nn::Binder<double> bind;
    const auto logits = model.forward(bind, features);
    return nn::cross_entropy_value<double>(logits.value().row(0), target);
  };
  std::vector<nn::Tensor<double>> grads;
  for (const auto& p : model.params()) grads.push_back(nn::Tensor<double>::Zero(p.value.rows(), p.value.cols()));
  {
    nn::Binder<double> bind;
    const auto loss = nn::softmax_cross_entropy(model.forward(bind, features), target);
    nn::backward(loss);
    bind.accumulate(grads);
  }
  double worst = 0.0;
  for (auto& p : model.params()) {
    if (!p.trainable) continue;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& x = p.value.data()[i];
      const double saved = x;
      x = saved + eps;
      const double up = loss_of();
      x = saved - eps;
      const double down = loss_of();
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = grads[p.index].data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace voxcog
