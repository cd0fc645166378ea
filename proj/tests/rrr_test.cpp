// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cdep/rrr.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"

namespace cdep {
namespace {

using testing::batched;
using testing::random_mask;
using testing::random_tensor;
using testing::randomize_biases;
using testing::to_vector;

Network dense_net(std::uint64_t seed) {
  return Network({6}, {Linear{6, 5}, ReLU{}, Linear{5, 4}, ReLU{}, Linear{4, 3}}, seed);
}

TEST(RrrTest, ZeroLambdaIsPlainCrossEntropy) {
  std::mt19937_64 gen(1);
  Network net = dense_net(1);
  randomize_biases(net, gen);
  const Tensor x = random_tensor({4, 6}, gen);
  const std::vector<std::size_t> y{0, 2, 1, 1};
  const auto params = net.trainable_parameters();
  const LossReport r = rrr_loss(net, x, y, random_mask({6}, gen), 0.0);
  const Tensor ce = cross_entropy(forward(net, x), y);
  EXPECT_EQ(r.total_value, ce.item());
  const auto g1 = grad(r.total, params);
  const auto g2 = grad(ce, params);
  for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(to_vector(g1[i]), to_vector(g2[i]));
}

TEST(RrrTest, EmptyAnnotationGivesZeroPenalty) {
  std::mt19937_64 gen(2);
  Network net = dense_net(2);
  const Tensor x = random_tensor({3, 6}, gen);
  const LossReport r =
      rrr_loss(net, x, std::vector<std::size_t>{0, 1, 2}, Tensor::zeros({6}), 10.0);
  EXPECT_EQ(r.explanation_error, 0.0);
  EXPECT_EQ(r.total_value, r.prediction_error);
}

// For logits z = Wx + b: d/dx sum_c log p_c = sum_c W_c - C * sum_c p_c W_c.
TEST(RrrTest, SingleLayerInputGradientMatchesClosedForm) {
  Network net({2}, {Linear{2, 3}}, 0);
  net.layers()[0].weight = Tensor({3, 2}, {1, -1, 0.5, 2, -3, 0.25});
  net.layers()[0].bias = Tensor({3}, {0.1, -0.2, 0.3});
  const Tensor x({1, 2}, {0.4, -0.7});
  const auto z = to_vector(forward(net, x));
  double zmax = std::max({z[0], z[1], z[2]});
  double s = 0.0;
  for (double v : z) s += std::exp(v - zmax);
  const auto w = to_vector(net.layers()[0].weight);
  double expected = 0.0;
  for (std::size_t j = 0; j < 2; ++j) {
    double gj = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double p = std::exp(z[c] - zmax) / s;
      gj += w[c * 2 + j] - 3.0 * p * w[c * 2 + j];
    }
    expected += gj * gj;
  }
  const LossReport r = rrr_loss(net, x, std::vector<std::size_t>{0}, Tensor::ones({2}), 1.0);
  EXPECT_NEAR(r.explanation_error, expected, 1e-12);
}

TEST(RrrTest, ConvolutionIsOutOfScope) {
  const Network net({1, 4, 4}, {Conv2D{1, 2, 3}, Flatten{}, Linear{8, 2}}, 0);
  try {
    rrr_loss(net, Tensor({1, 1, 4, 4}), std::vector<std::size_t>{0}, Tensor::ones({1, 4, 4}),
             1.0);
    FAIL() << "expected UnsupportedOpError";
  } catch (const UnsupportedOpError& e) {
    EXPECT_EQ(e.kind(), OpKind::kConv2d);
  }
}

// The penalty's weight gradient runs through a second-order path.
TEST(RrrTest, PenaltyGradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(3);
  Network net = dense_net(3);
  randomize_biases(net, gen);
  const Tensor x = random_tensor({3, 6}, gen);
  const std::vector<std::size_t> y{1, 0, 2};
  const Tensor m = random_mask({6}, gen);
  const auto params = net.trainable_parameters();
  auto penalty = [&]() { return rrr_loss(net, x, y, m, 1.0); };
  // Isolate the penalty term: total - prediction error.
  const LossReport r = penalty();
  const auto g_total = grad(r.total, params);
  const auto g_pred = grad(cross_entropy(forward(net, x), y), params);
  std::size_t checked = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor param = params[p];
    for (std::size_t i = 0; i < param.numel(); ++i) {
      const double orig = param[i];
      auto eval_at = [&](double v) {
        param.mutable_data()[i] = v;
        const double out = penalty().explanation_error;
        param.mutable_data()[i] = orig;
        return out;
      };
      const double h = 1e-5;
      const double f0 = eval_at(orig);
      const double fp = eval_at(orig + h);
      const double fm = eval_at(orig - h);
      if (std::fabs((fp - f0) - (f0 - fm)) / h > 1e-3 * std::max(1.0, std::fabs(fp - f0) / h)) {
        continue;
      }
      const double central = (fp - fm) / (2 * h);
      const double a = g_total[p][i] - g_pred[p][i];
      EXPECT_LE(std::fabs(central - a) / std::max({std::fabs(central), std::fabs(a), 1e-4}), 1e-3)
          << "param " << p << " index " << i;
      ++checked;
    }
  }
  EXPECT_GT(checked, 40u);
}

TEST(RrrTest, PeakMemoryExceedsCdepOnTheSameNet) {
  std::mt19937_64 gen(4);
  Network net = build_mlp({1, 28, 28}, {50, 30}, 10, 4);
  const Tensor x = random_tensor({64, 1, 28, 28}, gen, 0.0, 1.0);
  std::vector<std::size_t> y(64);
  for (std::size_t i = 0; i < 64; ++i) y[i] = i % 10;
  const Tensor mask = random_mask({64, 1, 28, 28}, gen, 0.05);
  const auto params = net.trainable_parameters();

  auto peak_of = [&](auto&& step) {
    memory::reset_peak();
    const std::size_t base = memory::current_bytes();
    step();
    return memory::peak_bytes() - base;
  };
  const std::size_t rrr = peak_of([&]() { backward(rrr_loss(net, x, y, mask, 1.0).total); });
  LossOptions opts;
  opts.lambda = 1.0;
  const std::size_t cdep = peak_of([&]() {
    ExplanationTarget t;
    t.group.mask = mask;
    backward(cdep_loss(net, x, y, {t}, opts).total);
  });
  EXPECT_GT(rrr, cdep);
}

TEST(RrrTest, ValueIsTheSameWithoutTracking) {
  std::mt19937_64 rng(9);
  const Network net = build_mlp({6}, {5, 4}, 3, 2);
  const Tensor x = testing::random_tensor({4, 6}, rng);
  const Tensor mask = testing::random_mask({6}, rng);
  const std::vector<std::size_t> y = {0, 1, 2, 1};
  const LossReport tracked = rrr_loss(net, x, y, mask, 3.0);
  NoGradGuard no_grad;
  const LossReport plain = rrr_loss(net, x, y, mask, 3.0);
  EXPECT_GT(plain.explanation_error, 0.0);
  EXPECT_EQ(plain.total_value, tracked.total_value);
  EXPECT_FALSE(plain.total.requires_grad());
}

}  // namespace
}  // namespace cdep
