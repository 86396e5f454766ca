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

#include <functional>

#include "voxcog/lora.hpp"
#include "voxcog/nn.hpp"
#include "voxcog/optim.hpp"

namespace voxcog::nn {
namespace {

using TD = Tensor<double>;
using TF = Tensor<float>;

TD random_tensor(Eigen::Index r, Eigen::Index c, Rng& rng, double sd = 1.0) {
  TD t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal(0.0, sd);
  return t;
}

TD mat(std::initializer_list<std::initializer_list<double>> rows) {
  TD t(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) t(i, j++) = v;
    ++i;
  }
  return t;
}

// Central-difference check of d f / d inputs, f returning a scalar Var.
double max_grad_error(const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
                      std::vector<TD> inputs, double eps = 1e-5) {
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(variable<double>(t));
  backward(f(vars));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var<double>> vs;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          TD t = inputs[j];
          if (j == k) t.data()[i] += delta;
          vs.push_back(constant<double>(t));
        }
        return f(vs).value()(0, 0);
      };
      const double numeric = (eval(eps) - eval(-eps)) / (2 * eps);
      const double analytic = vars[k].grad().size() ? vars[k].grad().data()[i] : 0.0;
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

TEST(LoraLinear, HandExample) {
  const auto y = lora_linear(constant<double>(mat({{1, 1}})), constant<double>(TD::Identity(2, 2)),
                             constant<double>(mat({{0, 0}})), constant<double>(mat({{1, 0}})),
                             constant<double>(mat({{1}, {1}})), 1.0);
  EXPECT_EQ(y.value(), mat({{2, 2}}));
}

TEST(LoraLinear, ZeroBEqualsPlainLinearBitwise) {
  Rng rng(1);
  const TF x = random_tensor(7, 16, rng).cast<float>(), w = random_tensor(12, 16, rng).cast<float>();
  const TF b = random_tensor(1, 12, rng).cast<float>(), a = random_tensor(4, 16, rng, 0.02).cast<float>();
  const auto plain = linear(constant<float>(x), constant<float>(w), constant<float>(b));
  const auto lora = lora_linear(constant<float>(x), constant<float>(w), constant<float>(b), constant<float>(a),
                                constant<float>(TF::Zero(12, 4)), 2.0f);
  EXPECT_TRUE(plain.value() == lora.value());
}

TEST(LoraLinear, FullRankAdapterAddsWeight) {
  Rng rng(2);
  const TD x = random_tensor(5, 3, rng), w0 = random_tensor(4, 3, rng), wp = random_tensor(4, 3, rng);
  const TD b = random_tensor(1, 4, rng);
  const auto y = lora_linear(constant<double>(x), constant<double>(w0), constant<double>(b),
                             constant<double>(TD::Identity(3, 3)), constant<double>(wp), 3.0 / 3.0);
  const TD expect = (x * (w0 + wp).transpose()).rowwise() + b.row(0);
  EXPECT_LT((y.value() - expect).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(lora_linear(constant<double>(x), constant<double>(w0), constant<double>(b),
                           constant<double>(TD::Identity(2, 2)), constant<double>(wp), 1.0),
               ShapeError);
}

TEST(PointwiseConv, HandExampleAndIdentity) {
  // Frames are rows: the [d, T] example [[1,2],[3,4]] is x^T here.
  const TD x = mat({{1, 2}, {3, 4}}).transpose();
  const auto y = pointwise_conv1d(constant<double>(x), constant<double>(mat({{1, 1}, {0, 1}})),
                                  constant<double>(mat({{0, 0}})));
  EXPECT_EQ(y.value().transpose(), mat({{4, 6}, {3, 4}}));
  Rng rng(3);
  const TD r = random_tensor(9, 5, rng);
  EXPECT_EQ(pointwise_conv1d(constant<double>(r), constant<double>(TD::Identity(5, 5)),
                             constant<double>(TD::Zero(1, 5)))
                .value(),
            r);
}

TEST(CrossEntropy, HandValues) {
  auto ce = [](std::initializer_list<double> l, int t) {
    RowVector<double> r(static_cast<Eigen::Index>(l.size()));
    Eigen::Index i = 0;
    for (double v : l) r(i++) = v;
    return cross_entropy_value<double>(r, t);
  };
  EXPECT_NEAR(ce({0, 0}, 0), std::log(2.0), 1e-12);
  EXPECT_LT(ce({100, 0}, 0), 1e-6);
  EXPECT_NEAR(ce({1, 0}, 0), 0.313262, 1e-6);
  EXPECT_NEAR(ce({1, 0}, 0), std::log1p(std::exp(-1.0)), 1e-12);
  EXPECT_GE(ce({1000, -1000, 3}, 1), 0.0);
  EXPECT_TRUE(std::isfinite(ce({1000, -1000, 3}, 1)));
  EXPECT_THROW(ce({1, 2}, 2), ShapeError);
  EXPECT_THROW(ce({1, 2}, -1), ShapeError);
}

TEST(Softmax, SumsToOneAndPositive) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const TD l = random_tensor(1, 2 + i % 5, rng, 20.0);
    const RowVector<double> p = softmax<double>(l.row(0));
    EXPECT_NEAR(p.sum(), 1.0, 1e-6);
    EXPECT_GT(p.minCoeff(), 0.0);
  }
}

TEST(Backward, SumAndSquare) {
  auto x = variable<double>(TD::Constant(3, 4, 0.7));
  backward(sum_all(x));
  EXPECT_EQ(x.grad(), TD::Ones(3, 4));
  auto s = variable<double>(TD::Constant(1, 1, 3.0));
  backward(mul(s, s));
  EXPECT_EQ(s.grad()(0, 0), 6.0);
  EXPECT_THROW(backward(variable<double>(TD::Ones(2, 1))), ShapeError);
}

TEST(Backward, FrozenParameterGetsNoGradient) {
  Parameter<double> w{"w", {1, 2}, mat({{1, 2}}), {}, false, 0};
  Parameter<double> u{"u", {1, 2}, mat({{3, 4}}), {}, true, 1};
  Binder<double> bind;
  backward(sum_all(add(mul(bind(w), bind(w)), mul(bind(u), bind(u)))));
  std::vector<TD> grads{TD::Zero(1, 2), TD::Zero(1, 2)};
  bind.accumulate(grads);
  EXPECT_EQ(grads[0], TD::Zero(1, 2));
  EXPECT_EQ(grads[1], mat({{6, 8}}));
}

TEST(Gradients, OpsMatchFiniteDifferences) {
  Rng rng(5);
  const TD x = random_tensor(6, 4, rng), w = random_tensor(3, 4, rng), b = random_tensor(1, 3, rng);
  const TD proj = random_tensor(6, 3, rng);
  auto dot = [&](const Var<double>& v, const TD& p) { return sum_all(mul(v, constant<double>(p))); };

  EXPECT_LT(max_grad_error([&](auto& v) { return dot(linear(v[0], v[1], v[2]), proj); }, {x, w, b}), 1e-6);
  const TD pg = random_tensor(6, 4, rng);
  EXPECT_LT(max_grad_error([&](auto& v) { return dot(gelu(v[0]), pg); }, {x}), 1e-6);
  EXPECT_LT(max_grad_error([&](auto& v) { return dot(relu(v[0]), x); }, {x + TD::Constant(6, 4, 0.05)}),
            1e-6);
  const TD g = random_tensor(1, 4, rng), bb = random_tensor(1, 4, rng), p4 = random_tensor(6, 4, rng);
  EXPECT_LT(max_grad_error([&](auto& v) { return dot(layer_norm(v[0], v[1], v[2]), p4); }, {x, g, bb}),
            1e-5);
  EXPECT_LT(max_grad_error([&](auto& v) { return dot(mean_rows(v[0]), g); }, {x}), 1e-6);
  const TD a = random_tensor(2, 4, rng), bm = random_tensor(3, 2, rng);
  EXPECT_LT(max_grad_error([&](auto& v) { return dot(lora_linear(v[0], v[1], v[2], v[3], v[4], 4.0), proj); },
                           {x, w, b, a, bm}),
            1e-6);
  EXPECT_LT(max_grad_error(
                [&](auto& v) {
                  return softmax_cross_entropy(linear(mean_rows(v[0]), v[1], v[2]), 2);
                },
                {x, w, b}),
            1e-6);
}

TEST(Gradients, ConvAndAttentionMatchFiniteDifferences) {
  Rng rng(6);
  const TD x = random_tensor(9, 3, rng), w = random_tensor(4, 3 * 3, rng), b = random_tensor(1, 4, rng);
  const TD p = random_tensor(5, 4, rng);
  EXPECT_LT(max_grad_error(
                [&](auto& v) { return sum_all(mul(conv1d(v[0], v[1], v[2], 3, 2, 1), constant<double>(p))); },
                {x, w, b}),
            1e-6);
  const TD q = random_tensor(5, 8, rng), k = random_tensor(5, 8, rng), val = random_tensor(5, 8, rng);
  const TD pa = random_tensor(5, 8, rng);
  EXPECT_LT(max_grad_error(
                [&](auto& v) { return sum_all(mul(attention(v[0], v[1], v[2], 2), constant<double>(pa))); },
                {q, k, val}),
            1e-6);
}

TEST(Conv1d, ShapeAndHandValues) {
  EXPECT_EQ(conv_output_length(1498, 3, 2, 1), 749);
  EXPECT_EQ(conv_output_length(749, 3, 2, 1), 375);
  // One channel, kernel [1, 2, 3], stride 1, pad 1 over [1, 1, 1].
  const auto y = conv1d(constant<double>(TD::Ones(3, 1)), constant<double>(mat({{1, 2, 3}})),
                        constant<double>(mat({{0.5}})), 3, 1, 1);
  EXPECT_EQ(y.value(), mat({{5.5}, {6.5}, {3.5}}));
}

TEST(Attention, SingleFrameIsValuePath) {
  Rng rng(7);
  const TD q = random_tensor(1, 8, rng), k = random_tensor(1, 8, rng), v = random_tensor(1, 8, rng);
  EXPECT_LT((attention(constant<double>(q), constant<double>(k), constant<double>(v), 4).value() - v)
                .cwiseAbs()
                .maxCoeff(),
            1e-15);
}

TEST(Attention, PermutationEquivariant) {
  Rng rng(8);
  const TD q = random_tensor(6, 8, rng), k = random_tensor(6, 8, rng), v = random_tensor(6, 8, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 3, 0, 5, 1, 4, 2;
  const TD a = attention(constant<double>(q), constant<double>(k), constant<double>(v), 2).value();
  const TD b = attention(constant<double>(TD(perm * q)), constant<double>(TD(perm * k)),
                         constant<double>(TD(perm * v)), 2)
                   .value();
  EXPECT_LT((TD(perm * a) - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Adam, ZeroGradientKeepsValue) {
  Parameter<float> p{"p", {2}, TF::Constant(1, 2, 0.5f), {}, true, 0};
  Adam<float> opt({&p});
  opt.step({&p}, {TF::Zero(1, 2)}, 1e-3);
  EXPECT_EQ(p.value, TF::Constant(1, 2, 0.5f));
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(Adam, FirstStepMovesByLr) {
  Parameter<double> p{"p", {1}, TD::Zero(1, 1), {}, true, 0};
  Adam<double> opt({&p});
  opt.step({&p}, {TD::Ones(1, 1)}, 1e-3);
  // m_hat = 1, v_hat = 1: delta = -lr * 1 / (1 + 1e-8).
  EXPECT_NEAR(p.value(0, 0), -1e-3 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, MatchesReferenceRecurrence) {
  Parameter<double> p{"p", {1}, TD::Constant(1, 1, 0.3), {}, true, 0};
  Adam<double> opt({&p});
  double x = 0.3, m = 0.0, v = 0.0;
  const double g_seq[] = {0.5, -1.0, 2.0, 0.1, 0.0, -0.3};
  for (int t = 1; t <= 6; ++t) {
    const double g = g_seq[t - 1];
    opt.step({&p}, {TD::Constant(1, 1, g)}, 0.01);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    ASSERT_NEAR(p.value(0, 0), x, 1e-14);
  }
}

TEST(Adam, FrozenAndTwinParameters) {
  Parameter<float> a{"a", {3}, TF::Constant(1, 3, 1.0f), {}, true, 0};
  Parameter<float> b{"b", {3}, TF::Constant(1, 3, 1.0f), {}, true, 1};
  Parameter<float> c{"c", {3}, TF::Constant(1, 3, 1.0f), {}, false, 2};
  Adam<float> opt({&a, &b, &c});
  Rng rng(9);
  for (int i = 0; i < 5; ++i) {
    const TF g = random_tensor(1, 3, rng).cast<float>();
    opt.step({&a, &b, &c}, {g, g, g}, 1e-2);
  }
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(c.value, TF::Constant(1, 3, 1.0f));
  EXPECT_EQ(opt.step_count(), 5);
}

}  // namespace
}  // namespace voxcog::nn
