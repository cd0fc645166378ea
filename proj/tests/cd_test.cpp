// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cdep/cd.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"

namespace cdep {
namespace {

using testing::batched;
using testing::max_abs_diff;
using testing::random_mask;
using testing::random_network;
using testing::random_tensor;
using testing::randomize_biases;
using testing::to_vector;

double max_completeness_error(const Network& net, const Tensor& x, const CDLogits& cd) {
  return max_abs_diff(to_vector(add(cd.beta, cd.gamma)), to_vector(forward(net, x)));
}

TEST(CdTest, LinearBiasSplitHandExample) {
  Network net({2}, {Linear{2, 2}}, 0);
  net.layers()[0].weight = Tensor({2, 2}, {1, 2, 3, 4});
  net.layers()[0].bias = Tensor({2}, {1, 1});
  const Tensor x({1, 2}, {1, 1});
  const CDLogits cd = cd_forward(net, x, {Tensor({2}, {1, 0})});
  // The split guard shifts shares by O(kCdEpsilon).
  const double tol = 1e-11;
  EXPECT_NEAR(cd.beta[0], 4.0 / 3.0, tol);
  EXPECT_NEAR(cd.beta[1], 24.0 / 7.0, tol);
  EXPECT_NEAR(cd.gamma[0], 2.0 + 2.0 / 3.0, tol);
  EXPECT_NEAR(cd.gamma[1], 4.0 + 4.0 / 7.0, tol);
  EXPECT_NEAR(cd.beta[0] + cd.gamma[0], 4.0, 1e-15);
  EXPECT_NEAR(cd.beta[1] + cd.gamma[1], 8.0, 1e-15);
}

TEST(CdTest, ReluRuleHandExample) {
  const Network net({2}, {ReLU{}}, 0);
  CDState s{Tensor({1, 2}, {-1, 2}), Tensor({1, 2}, {0, -1}), Tensor({1}, {0.5})};
  const CDState out = cd_layer(net.layers()[0], s);
  EXPECT_EQ(to_vector(out.beta), (std::vector<double>{0, 2}));
  EXPECT_EQ(to_vector(out.gamma), (std::vector<double>{0, -1}));
}

TEST(CdTest, MaxPoolRoutesBothComponentsThroughTotalArgmax) {
  const Network net({1, 2, 2}, {MaxPool2D{2}}, 0);
  // Totals are [1, 2, 0, 3]: argmax at index 3 although beta alone peaks at 0.
  const Tensor beta({1, 1, 2, 2}, {5, 1, 0, -1});
  const Tensor gamma({1, 1, 2, 2}, {-4, 1, 0, 4});
  const CDState out = cd_layer(net.layers()[0], {beta, gamma, Tensor({1}, {0.5})});
  EXPECT_EQ(out.beta.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(out.beta.item(), -1.0);
  EXPECT_EQ(out.gamma.item(), 4.0);
}

TEST(CdTest, EvalDropoutIsIdentityOnBothComponents) {
  const Network net({3}, {Dropout{0.4}}, 0);
  const CDState s{Tensor({1, 3}, {1, 2, 3}), Tensor({1, 3}, {-1, 0, 5}), Tensor({1}, {0.3})};
  const CDState out = cd_layer(net.layers()[0], s);
  EXPECT_EQ(to_vector(out.beta), to_vector(s.beta));
  EXPECT_EQ(to_vector(out.gamma), to_vector(s.gamma));
}

TEST(CdTest, TrainDropoutAppliesTheSameMaskToBothComponents) {
  Network net({5}, {Linear{5, 6}, ReLU{}, Dropout{0.5}, Linear{6, 2}}, 4);
  std::mt19937_64 gen(4);
  randomize_biases(net, gen);
  const Tensor x = random_tensor({3, 5}, gen);
  Rng rng = make_rng(1, Stream::kDropout);
  const DropoutMasks masks = sample_dropout_masks(net, 3, rng);
  const CDLogits cd = cd_forward(net, x, {random_mask({5}, gen)}, &masks);
  EXPECT_LE(max_abs_diff(to_vector(add(cd.beta, cd.gamma)), to_vector(forward(net, x, &masks))),
            1e-12);
}

TEST(CdTest, InputSplitIsExact) {
  std::mt19937_64 gen(3);
  const Tensor x = random_tensor({4, 2, 3, 3}, gen);
  const Tensor m = random_mask({2, 3, 3}, gen);
  const CDState s = cd_input(x, {m});
  EXPECT_EQ(to_vector(add(s.beta, s.gamma)), to_vector(x));
  EXPECT_EQ(s.coverage.shape(), (Shape{4}));
}

TEST(CdTest, MaskShapeMismatchIsRejected) {
  const Network net({3}, {Linear{3, 2}}, 0);
  EXPECT_THROW(cd_forward(net, Tensor({2, 3}), {Tensor({4})}), ShapeError);
  EXPECT_THROW(cd_forward(net, Tensor({2, 4}), {Tensor({4})}), ShapeError);
}

TEST(CdTest, CompletenessAndExactEndpointsOnRandomNetworks) {
  std::mt19937_64 gen(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Network net = random_network(gen, trial);
    randomize_biases(net, gen);
    const Tensor x = random_tensor(batched(3, net.input_shape()), gen);
    const Tensor empty = Tensor::zeros(net.input_shape());
    const Tensor full = Tensor::ones(net.input_shape());
    const FeatureGroup group = trial % 3 == 0
                                   ? FeatureGroup{random_mask(x.shape(), gen)}
                                   : FeatureGroup{random_mask(net.input_shape(), gen)};
    worst = std::max(worst, max_completeness_error(net, x, cd_forward(net, x, group)));

    const Tensor logits = forward(net, x);
    const CDLogits e = cd_forward(net, x, {empty});
    for (double v : e.beta.data()) ASSERT_EQ(v, 0.0) << "trial " << trial;
    EXPECT_LE(max_abs_diff(to_vector(e.gamma), to_vector(logits)), 1e-12);
    const CDLogits f = cd_forward(net, x, {full});
    for (double v : f.gamma.data()) ASSERT_EQ(v, 0.0) << "trial " << trial;
    EXPECT_LE(max_abs_diff(to_vector(f.beta), to_vector(logits)), 1e-12);
  }
  EXPECT_LE(worst, 1e-8);
}

TEST(CdTest, PerSampleGroupsMatchSharedGroup) {
  std::mt19937_64 gen(8);
  Network net = random_network(gen, 0);
  randomize_biases(net, gen);
  const Tensor x = random_tensor(batched(4, net.input_shape()), gen);
  const Tensor m = random_mask(net.input_shape(), gen);
  const CDLogits shared = cd_forward(net, x, {m});
  const CDLogits per = cd_forward(net, x, {broadcast_to(m, x.shape())});
  EXPECT_EQ(to_vector(shared.beta), to_vector(per.beta));
  EXPECT_EQ(to_vector(shared.gamma), to_vector(per.gamma));
}

// Gradient of sum(|beta_logits|) against central differences. Points where
// the one-sided differences disagree sit next to a kink and are skipped.
TEST(CdTest, BetaLogitsAreDifferentiableInTheWeights) {
  std::mt19937_64 gen(99);
  std::size_t checked = 0;
  std::size_t total = 0;
  for (int variant = 0; variant < 4; ++variant) {
    Network net = random_network(gen, variant);
    randomize_biases(net, gen);
    const Tensor x = random_tensor(batched(2, net.input_shape()), gen);
    const FeatureGroup group{random_mask(net.input_shape(), gen)};
    auto objective = [&]() { return sum_all(abs(cd_forward(net, x, group).beta)); };
    const auto params = net.trainable_parameters();
    const GradientMap g = backward(objective());
    for (std::size_t p = 0; p < params.size(); ++p) {
      const Tensor analytic = g[params[p]];
      const std::size_t stride = std::max<std::size_t>(1, params[p].numel() / 6);
      for (std::size_t i = 0; i < params[p].numel(); i += stride) {
        Tensor param = params[p];
        const double orig = param[i];
        const double h = 1e-5;
        auto eval_at = [&](double v) {
          NoGradGuard no_grad;
          param.mutable_data()[i] = v;
          const double out = objective().item();
          param.mutable_data()[i] = orig;
          return out;
        };
        const double f0 = eval_at(orig);
        const double fp = eval_at(orig + h);
        const double fm = eval_at(orig - h);
        const double fwd = (fp - f0) / h;
        const double bwd = (f0 - fm) / h;
        ++total;
        if (std::fabs(fwd - bwd) > 1e-4 * std::max(1.0, std::fabs(fwd))) continue;
        const double central = (fp - fm) / (2 * h);
        const double denom = std::max({std::fabs(central), std::fabs(analytic[i]), 1e-4});
        EXPECT_LE(std::fabs(central - analytic[i]) / denom, 1e-4)
            << "variant " << variant << " param " << p << " index " << i;
        ++checked;
      }
    }
  }
  EXPECT_GE(checked, total * 8 / 10);
}

TEST(CdTest, FrozenPrefixZeroCachesTheInputSplit) {
  std::mt19937_64 gen(5);
  const Network net = random_network(gen, 1);
  const Tensor x = random_tensor(batched(2, net.input_shape()), gen);
  const Tensor m = random_mask(net.input_shape(), gen);
  const CDState cached = cd_frozen_prefix(net, x, {m});
  EXPECT_EQ(to_vector(cached.beta), to_vector(mul(x, m)));
  EXPECT_EQ(to_vector(cached.gamma), to_vector(mul(x, add_scalar(neg(m), 1.0))));
}

TEST(CdTest, CachedBoundaryMatchesFullPassOnMnistCnn) {
  std::mt19937_64 gen(6);
  Network net = build_mnist_cnn(1, 6);
  randomize_biases(net, gen);
  net.set_frozen_prefix(7);
  const Tensor x = random_tensor({3, 1, 28, 28}, gen, 0.0, 1.0);
  const FeatureGroup group{random_mask({1, 28, 28}, gen, 0.2)};
  const CDLogits full = cd_forward(net, x, group);
  const CDState cache = cd_frozen_prefix(net, x, group);
  EXPECT_FALSE(cache.beta.requires_grad());
  net.trainable_parameters();
  const CDLogits resumed = cd_from_boundary(net, cache);
  EXPECT_LE(max_abs_diff(to_vector(full.beta), to_vector(resumed.beta)), 1e-10);
  EXPECT_LE(max_abs_diff(to_vector(full.gamma), to_vector(resumed.gamma)), 1e-10);
  EXPECT_TRUE(resumed.beta.requires_grad());
}

}  // namespace
}  // namespace cdep
