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

#include <cmath>
#include <vector>

#include "voxcog/nn.hpp"

namespace voxcog::nn {

// Adam with bias-corrected moments, beta1 = 0.9, beta2 = 0.999, eps = 1e-8,
// no weight decay.
template <class T>
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(const std::vector<Parameter<T>*>& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto* p : params) {
      m_.push_back(Tensor<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Tensor<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  long step_count() const { return t_; }
  const Tensor<T>& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor<T>& second_moment(std::size_t i) const { return v_[i]; }

  // grads[i] pairs with params[i]. Frozen parameters are never touched.
  void step(const std::vector<Parameter<T>*>& params, const std::vector<Tensor<T>>& grads,
            double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<T>& p = *params[i];
      if (!p.trainable) continue;
      const Tensor<T>& g = grads[i];
      m_[i] = T(kBeta1) * m_[i] + T(1.0 - kBeta1) * g;
      v_[i] = T(kBeta2) * v_[i] + T(1.0 - kBeta2) * g.cwiseProduct(g);
      const T step = static_cast<T>(lr / c1);
      const T inv_c2 = static_cast<T>(1.0 / c2);
      p.value.array() -=
          step * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + static_cast<T>(kEps));
    }
  }

  void step(const std::vector<Parameter<T>*>& params, double lr) {
    std::vector<Tensor<T>> grads;
    grads.reserve(params.size());
    for (const auto* p : params) {
      grads.push_back(p->grad.size() == 0 ? Tensor<T>::Zero(p->value.rows(), p->value.cols())
                                          : p->grad);
    }
    step(params, grads, lr);
  }

 private:
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  long t_ = 0;
};

}  // namespace voxcog::nn
