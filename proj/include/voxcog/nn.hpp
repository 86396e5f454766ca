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

// A small dense reverse-mode autodiff core. Every value is a row-major 2-D
// tensor (vectors are 1 x n). Graphs are built eagerly by the free functions
// below and differentiated with backward().

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "voxcog/common.hpp"

namespace voxcog::nn {

template <class T>
using Tensor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Parameter {
  std::string name;
  // Logical shape recorded in checkpoints; its product equals value.size().
  std::vector<int> shape;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  std::size_t index = 0;  // position in the owning registry

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <class T>
struct Node {
  Tensor<T> value;
  const Tensor<T>* ref = nullptr;  // leaves bound to a parameter alias its value
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  const Tensor<T>& val() const { return ref != nullptr ? *ref : value; }
  Tensor<T>& grad_buf() {
    if (grad.size() == 0) grad.setZero(val().rows(), val().cols());
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  const Tensor<T>& value() const { return node_->val(); }
  const Tensor<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
Var<T> constant(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  return Var<T>(std::move(n));
}

// A differentiable leaf that owns its value (used by tests and gradient checks).
template <class T>
Var<T> variable(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = true;
  return Var<T>(std::move(n));
}

// Binds parameters to graph leaves for one forward pass. A parameter used
// several times maps to a single leaf. Frozen parameters become constants.
template <class T>
class Binder {
 public:
  Var<T> operator()(const Parameter<T>& p) {
    auto it = leaves_.find(&p);
    if (it != leaves_.end()) return Var<T>(it->second);
    auto n = std::make_shared<Node<T>>();
    n->ref = &p.value;
    n->requires_grad = p.trainable;
    leaves_.emplace(&p, n);
    order_.push_back(&p);
    return Var<T>(std::move(n));
  }

  // grads[p.index] += dL/dp for every bound trainable parameter.
  void accumulate(std::vector<Tensor<T>>& grads) const {
    for (const Parameter<T>* p : order_) {
      const auto& n = *leaves_.at(p);
      if (!n.requires_grad || n.grad.size() == 0) continue;
      grads[p->index] += n.grad;
    }
  }

  void accumulate_into_parameters() const {
    for (const Parameter<T>* p : order_) {
      const auto& n = *leaves_.at(p);
      if (!n.requires_grad || n.grad.size() == 0) continue;
      auto* mp = const_cast<Parameter<T>*>(p);
      if (mp->grad.size() == 0) mp->zero_grad();
      mp->grad += n.grad;
    }
  }

 private:
  std::unordered_map<const Parameter<T>*, std::shared_ptr<Node<T>>> leaves_;
  std::vector<const Parameter<T>*> order_;
};

namespace detail {

template <class T>
Var<T> make_node(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
                 std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  n->requires_grad = any;
  if (any) {
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

template <class T>
void check_shape(bool ok, const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!ok) {
    throw ShapeError(std::string(op) + ": shape mismatch [" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + "] vs [" + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + "]");
  }
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

}  // namespace detail

// x . w^T, x: [n, k], w: [m, k].
template <class T>
Var<T> matmul_nt(const Var<T>& x, const Var<T>& w) {
  detail::check_shape(x.cols() == w.cols(), "matmul_nt", x.value(), w.value());
  Tensor<T> y(x.rows(), w.rows());
  y.noalias() = x.value() * w.value().transpose();
  auto xp = x.ptr(), wp = w.ptr();
  return detail::make_node<T>(std::move(y), {xp, wp}, [xp, wp](Node<T>& self) {
    if (xp->requires_grad) xp->grad_buf().noalias() += self.grad * wp->val();
    if (wp->requires_grad) wp->grad_buf().noalias() += self.grad.transpose() * xp->val();
  });
}

// x . w^T + b, b: [1, m].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  detail::check_shape(x.cols() == w.cols(), "linear", x.value(), w.value());
  detail::check_shape(b.rows() == 1 && b.cols() == w.rows(), "linear bias", b.value(), w.value());
  Tensor<T> y(x.rows(), w.rows());
  y.noalias() = x.value() * w.value().transpose();
  y.rowwise() += b.value().row(0);
  auto xp = x.ptr(), wp = w.ptr(), bp = b.ptr();
  return detail::make_node<T>(std::move(y), {xp, wp, bp}, [xp, wp, bp](Node<T>& self) {
    if (xp->requires_grad) xp->grad_buf().noalias() += self.grad * wp->val();
    if (wp->requires_grad) wp->grad_buf().noalias() += self.grad.transpose() * xp->val();
    if (bp->requires_grad) bp->grad_buf().row(0) += self.grad.colwise().sum();
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.value(), b.value());
  Tensor<T> y = a.value() + b.value();
  auto ap = a.ptr(), bp = b.ptr();
  return detail::make_node<T>(std::move(y), {ap, bp}, [ap, bp](Node<T>& self) {
    if (ap->requires_grad) ap->grad_buf() += self.grad;
    if (bp->requires_grad) bp->grad_buf() += self.grad;
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> y = a.value() * s;
  auto ap = a.ptr();
  return detail::make_node<T>(std::move(y), {ap}, [ap, s](Node<T>& self) {
    if (ap->requires_grad) ap->grad_buf() += self.grad * s;
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mul", a.value(), b.value());
  Tensor<T> y = a.value().cwiseProduct(b.value());
  auto ap = a.ptr(), bp = b.ptr();
  return detail::make_node<T>(std::move(y), {ap, bp}, [ap, bp](Node<T>& self) {
    if (ap->requires_grad) ap->grad_buf() += self.grad.cwiseProduct(bp->val());
    if (bp->requires_grad) bp->grad_buf() += self.grad.cwiseProduct(ap->val());
  });
}

template <class T>
Var<T> gelu(const Var<T>& a) {
  Tensor<T> y = a.value().unaryExpr([](T v) { return detail::gelu(v); });
  auto ap = a.ptr();
  return detail::make_node<T>(std::move(y), {ap}, [ap](Node<T>& self) {
    if (ap->requires_grad) {
      ap->grad_buf() +=
          self.grad.cwiseProduct(ap->val().unaryExpr([](T v) { return detail::gelu_grad(v); }));
    }
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> y = a.value().cwiseMax(T(0));
  auto ap = a.ptr();
  return detail::make_node<T>(std::move(y), {ap}, [ap](Node<T>& self) {
    if (ap->requires_grad) {
      ap->grad_buf() += self.grad.cwiseProduct(
          ap->val().unaryExpr([](T v) { return v > T(0) ? T(1) : T(0); }));
    }
  });
}

// Row-wise layer normalization with affine gain/bias of shape [1, d].
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const auto n = x.rows(), d = x.cols();
  detail::check_shape(gain.cols() == d && bias.cols() == d, "layer_norm", x.value(), gain.value());
  auto xhat = std::make_shared<Tensor<T>>(n, d);
  auto inv_sd = std::make_shared<std::vector<T>>(n);
  Tensor<T> y(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = x.value().row(i);
    const T mean = row.mean();
    const T var = (row.array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_sd)[i] = is;
    xhat->row(i) = (row.array() - mean) * is;
    y.row(i) = xhat->row(i).cwiseProduct(gain.value().row(0)) + bias.value().row(0);
  }
  auto xp = x.ptr(), gp = gain.ptr(), bp = bias.ptr();
  return detail::make_node<T>(
      std::move(y), {xp, gp, bp}, [xp, gp, bp, xhat, inv_sd, d](Node<T>& self) {
        const Tensor<T>& dy = self.grad;
        if (gp->requires_grad) gp->grad_buf().row(0) += dy.cwiseProduct(*xhat).colwise().sum();
        if (bp->requires_grad) bp->grad_buf().row(0) += dy.colwise().sum();
        if (!xp->requires_grad) return;
        Tensor<T>& dx = xp->grad_buf();
        for (Eigen::Index i = 0; i < dy.rows(); ++i) {
          const RowVector<T> dxhat = dy.row(i).cwiseProduct(gp->val().row(0));
          const T mean_dxhat = dxhat.mean();
          const T mean_dxhat_xhat = dxhat.cwiseProduct(xhat->row(i)).mean();
          dx.row(i).array() += (*inv_sd)[i] * (dxhat.array() - mean_dxhat -
                                               xhat->row(i).array() * mean_dxhat_xhat);
        }
        (void)d;
      });
}

inline Eigen::Index conv_output_length(Eigen::Index t, int kernel, int stride, int pad) {
  const Eigen::Index span = t + 2 * pad - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

// 1-D convolution over time. x: [T, c_in]; w: [c_out, kernel * c_in] with
// column j * c_in + c holding tap j of input channel c; b: [1, c_out].
// Zero padding of `pad` frames on both sides.
template <class T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int kernel, int stride,
              int pad) {
  const Eigen::Index t_in = x.rows(), c_in = x.cols();
  detail::check_shape(w.cols() == kernel * c_in, "conv1d", x.value(), w.value());
  const Eigen::Index t_out = conv_output_length(t_in, kernel, stride, pad);
  if (t_out <= 0) throw ShapeError("conv1d: input too short (" + std::to_string(t_in) + " frames)");

  auto cols = std::make_shared<Tensor<T>>(t_out, kernel * c_in);
  cols->setZero();
  for (Eigen::Index t = 0; t < t_out; ++t) {
    for (int j = 0; j < kernel; ++j) {
      const Eigen::Index src = t * stride + j - pad;
      if (src < 0 || src >= t_in) continue;
      cols->row(t).segment(j * c_in, c_in) = x.value().row(src);
    }
  }
  Tensor<T> y(t_out, w.rows());
  y.noalias() = *cols * w.value().transpose();
  y.rowwise() += b.value().row(0);

  auto xp = x.ptr(), wp = w.ptr(), bp = b.ptr();
  return detail::make_node<T>(
      std::move(y), {xp, wp, bp},
      [xp, wp, bp, cols, kernel, stride, pad, t_in, c_in](Node<T>& self) {
        if (wp->requires_grad) wp->grad_buf().noalias() += self.grad.transpose() * *cols;
        if (bp->requires_grad) bp->grad_buf().row(0) += self.grad.colwise().sum();
        if (!xp->requires_grad) return;
        Tensor<T> dcols(self.grad.rows(), wp->val().cols());
        dcols.noalias() = self.grad * wp->val();
        Tensor<T>& dx = xp->grad_buf();
        for (Eigen::Index t = 0; t < dcols.rows(); ++t) {
          for (int j = 0; j < kernel; ++j) {
            const Eigen::Index src = t * stride + j - pad;
            if (src < 0 || src >= t_in) continue;
            dx.row(src) += dcols.row(t).segment(j * c_in, c_in);
          }
        }
      });
}

// Multi-head scaled dot-product self-attention over projected q, k, v of
// shape [T, d]; heads split d into contiguous column blocks.
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int n_heads) {
  const Eigen::Index t = q.rows(), d = q.cols();
  if (d % n_heads != 0) throw ShapeError("attention: d not divisible by n_heads");
  detail::check_shape(k.rows() == t && k.cols() == d && v.rows() == t && v.cols() == d,
                      "attention", q.value(), k.value());
  const Eigen::Index dh = d / n_heads;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<std::vector<Tensor<T>>>(n_heads);
  Tensor<T> y(t, d);
  for (int h = 0; h < n_heads; ++h) {
    const auto qh = q.value().middleCols(h * dh, dh);
    const auto kh = k.value().middleCols(h * dh, dh);
    const auto vh = v.value().middleCols(h * dh, dh);
    Tensor<T>& p = (*probs)[h];
    p.resize(t, t);
    p.noalias() = qh * kh.transpose();
    p *= inv_scale;
    for (Eigen::Index i = 0; i < t; ++i) {
      auto row = p.row(i);
      const T m = row.maxCoeff();
      row = (row.array() - m).exp();
      row /= row.sum();
    }
    y.middleCols(h * dh, dh).noalias() = p * vh;
  }
  auto qp = q.ptr(), kp = k.ptr(), vp = v.ptr();
  return detail::make_node<T>(
      std::move(y), {qp, kp, vp}, [qp, kp, vp, probs, n_heads, dh, inv_scale](Node<T>& self) {
        for (int h = 0; h < n_heads; ++h) {
          const Tensor<T>& p = (*probs)[h];
          const auto dout = self.grad.middleCols(h * dh, dh);
          if (vp->requires_grad) {
            vp->grad_buf().middleCols(h * dh, dh).noalias() += p.transpose() * dout;
          }
          if (!qp->requires_grad && !kp->requires_grad) continue;
          Tensor<T> dp(p.rows(), p.cols());
          dp.noalias() = dout * vp->val().middleCols(h * dh, dh).transpose();
          const Eigen::Matrix<T, Eigen::Dynamic, 1> dot = dp.cwiseProduct(p).rowwise().sum();
          Tensor<T> ds = p.cwiseProduct(dp.colwise() - dot);
          ds *= inv_scale;
          if (qp->requires_grad) {
            qp->grad_buf().middleCols(h * dh, dh).noalias() +=
                ds * kp->val().middleCols(h * dh, dh);
          }
          if (kp->requires_grad) {
            kp->grad_buf().middleCols(h * dh, dh).noalias() +=
                ds.transpose() * qp->val().middleCols(h * dh, dh);
          }
        }
      });
}

// Mean over rows: [T, d] -> [1, d].
template <class T>
Var<T> mean_rows(const Var<T>& x) {
  const auto n = x.rows();
  Tensor<T> y = x.value().colwise().mean();
  auto xp = x.ptr();
  return detail::make_node<T>(std::move(y), {xp}, [xp, n](Node<T>& self) {
    if (xp->requires_grad) xp->grad_buf().rowwise() += self.grad.row(0) / static_cast<T>(n);
  });
}

template <class T>
Var<T> sum_all(const Var<T>& x) {
  Tensor<T> y(1, 1);
  y(0, 0) = x.value().sum();
  auto xp = x.ptr();
  return detail::make_node<T>(std::move(y), {xp}, [xp](Node<T>& self) {
    if (xp->requires_grad) xp->grad_buf().array() += self.grad(0, 0);
  });
}

template <class T>
RowVector<T> softmax(const Eigen::Ref<const RowVector<T>>& logits) {
  const T m = logits.maxCoeff();
  RowVector<T> e = (logits.array() - m).exp();
  return e / e.sum();
}

// log(sum(exp(logits))) - logits[target], with the max logit subtracted first.
template <class T>
T cross_entropy_value(const Eigen::Ref<const RowVector<T>>& logits, int target) {
  if (target < 0 || target >= logits.cols()) {
    throw ShapeError("softmax_cross_entropy: target " + std::to_string(target) +
                     " out of range for " + std::to_string(logits.cols()) + " classes");
  }
  const T m = logits.maxCoeff();
  const T lse = m + std::log((logits.array() - m).exp().sum());
  return lse - logits(target);
}

// logits: [1, C] -> scalar loss [1, 1].
template <class T>
Var<T> softmax_cross_entropy(const Var<T>& logits, int target) {
  if (logits.rows() != 1) throw ShapeError("softmax_cross_entropy: logits must be [1, C]");
  Tensor<T> y(1, 1);
  y(0, 0) = cross_entropy_value<T>(logits.value().row(0), target);
  auto lp = logits.ptr();
  return detail::make_node<T>(std::move(y), {lp}, [lp, target](Node<T>& self) {
    if (!lp->requires_grad) return;
    RowVector<T> g = softmax<T>(lp->val().row(0));
    g(target) -= T(1);
    lp->grad_buf().row(0) += g * self.grad(0, 0);
  });
}

// Reverse-mode accumulation from a scalar root. Gradients land in each
// node's grad buffer; Binder::accumulate moves them to parameters.
template <class T>
void backward(const Var<T>& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeError("backward: loss must be a scalar, got [" + std::to_string(loss.rows()) +
                     "x" + std::to_string(loss.cols()) + "]");
  }
  if (!loss.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_map<Node<T>*, bool> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{&loss.node(), 0}};
  visited[&loss.node()] = true;
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && !visited[p]) {
        visited[p] = true;
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss.node().grad_buf().setConstant(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

}  // namespace voxcog::nn
