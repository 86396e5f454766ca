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

#include "voxcog/nn.hpp"

namespace voxcog::nn {

// Low-rank update of a frozen-or-not base weight W0 [d_out, d_in]:
//   delta_W = (alpha / rank) * B . A,  A: [rank, d_in], B: [d_out, rank].
// A is drawn from N(0, 0.02^2) and B starts at zero, so a fresh adapter
// contributes nothing.
template <class T>
struct LoRAAdapter {
  Parameter<T>* A = nullptr;
  Parameter<T>* B = nullptr;
  int rank = 8;
  T alpha = T(16);

  T scaling() const { return alpha / static_cast<T>(rank); }

  Tensor<T> delta() const { return scaling() * (B->value * A->value); }
};

// y = x W0^T + b + (alpha / r) (x A^T) B^T. The adapter path never forms
// delta_W explicitly.
template <class T>
Var<T> lora_linear(const Var<T>& x, const Var<T>& w0, const Var<T>& b, const Var<T>& a,
                   const Var<T>& bmat, T scaling) {
  if (a.cols() != w0.cols() || bmat.rows() != w0.rows() || bmat.cols() != a.rows()) {
    throw ShapeError("lora_linear: adapter dims [" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + "], [" + std::to_string(bmat.rows()) + "x" +
                     std::to_string(bmat.cols()) + "] do not match base [" +
                     std::to_string(w0.rows()) + "x" + std::to_string(w0.cols()) + "]");
  }
  const Var<T> base = linear(x, w0, b);
  const Var<T> low = matmul_nt(matmul_nt(x, a), bmat);
  return add(base, scale(low, scaling));
}

template <class T>
Var<T> lora_linear(Binder<T>& bind, const Var<T>& x, const Parameter<T>& w0,
                   const Parameter<T>& b, const LoRAAdapter<T>& adapter) {
  return lora_linear(x, bind(w0), bind(b), bind(*adapter.A), bind(*adapter.B),
                     adapter.scaling());
}

// Kernel-size-1 convolution over frames. With frames stored as rows of x
// ([T, d_in]) this is a per-frame affine map: out[t] = W x[t] + b.
template <class T>
Var<T> pointwise_conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return linear(x, w, b);
}

}  // namespace voxcog::nn
