// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cdep/metrics.hpp"
#include "test_util.hpp"

namespace cdep {
namespace {

// Twice the number of correctly ordered pairs plus ties, over 2 * P * N.
double brute_force_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& pos) {
  long twice = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (pos[j]) continue;
      ++pairs;
      twice += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
    }
  }
  return static_cast<double>(twice) / static_cast<double>(2 * pairs);
}

Tensor binary_logits(const std::vector<double>& positive_margin) {
  std::vector<double> v;
  for (double m : positive_margin) {
    v.push_back(0.0);
    v.push_back(m);
  }
  return Tensor({positive_margin.size(), 2}, std::move(v));
}

TEST(MetricsTest, AucHandCases) {
  const std::vector<double> s = {0.9, 0.8, 0.4, 0.7, 0.3, 0.1};
  const std::vector<std::uint8_t> p = {1, 1, 1, 0, 0, 0};
  EXPECT_EQ(auc(s, p), 8.0 / 9.0);
  EXPECT_EQ(auc(std::vector<double>{3, 4, 1, 2}, std::vector<std::uint8_t>{1, 1, 0, 0}), 1.0);
  EXPECT_EQ(auc(std::vector<double>(6, 0.2), p), 0.5);
  EXPECT_THROW(auc(s, std::vector<std::uint8_t>(6, 1)), MetricError);
  EXPECT_THROW(auc(s, std::vector<std::uint8_t>(6, 0)), MetricError);
}

TEST(MetricsTest, AucMatchesBruteForceExactly) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 20;
    std::vector<double> s(n);
    std::vector<std::uint8_t> p(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 6) * 0.25;  // coarse grid forces ties
      p[i] = rng() % 2;
    }
    p[0] = 1;
    p[1] = 0;
    ASSERT_EQ(auc(s, p), brute_force_auc(s, p)) << "trial " << trial;
  }
}

TEST(MetricsTest, AccuracyAndF1) {
  const std::vector<std::size_t> labels = {1, 1, 0, 0, 1};
  const std::vector<std::size_t> pred = {1, 0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(accuracy(pred, labels), 0.6);
  // tp 2, fp 1, fn 1.
  EXPECT_DOUBLE_EQ(f1_score(pred, labels, 1), 4.0 / 6.0);
  // Class 0: tp 1, fp 1, fn 1.
  EXPECT_DOUBLE_EQ(f1_score(pred, labels, 0), 0.5);
  EXPECT_EQ(f1_score(labels, labels, 1), 1.0);
  EXPECT_THROW(accuracy(pred, std::vector<std::size_t>{1}), MetricError);
}

TEST(MetricsTest, PerfectSeparation) {
  const Tensor logits = binary_logits({2.0, 1.5, -1.0, -3.0});
  const std::vector<std::size_t> labels = {1, 1, 0, 0};
  const EvalReport r = evaluate_logits(logits, labels, 1);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(*r.auc, 1.0);
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_THROW(evaluate_logits(logits, std::vector<std::size_t>(4, 1), 1), MetricError);
  EXPECT_FALSE(evaluate_logits(logits, std::vector<std::size_t>(4, 1), 1, {}, {}, false).auc);
}

TEST(MetricsTest, GroupWrongfulConvictionRate) {
  // Group 0: negatives at margins 1, 2, -1 -> 2 of 3 predicted positive.
  // Group 1: negatives at -1, -2 -> 0 of 2. Group 2 is empty.
  const Tensor logits = binary_logits({1, 2, -1, 3, -1, -2, 4});
  const std::vector<std::size_t> labels = {0, 0, 0, 1, 0, 0, 1};
  const std::vector<std::size_t> groups = {0, 0, 0, 0, 1, 1, 1};
  const EvalReport r = evaluate_logits(logits, labels, 1, groups, {"black", "white", "other"});
  ASSERT_EQ(r.groups.size(), 2u);
  EXPECT_EQ(r.omitted_groups, 1u);
  EXPECT_DOUBLE_EQ(r.groups.at("black").wcr, 2.0 / 3.0);
  EXPECT_EQ(r.groups.at("black").n, 4u);
  EXPECT_EQ(r.groups.at("white").wcr, 0.0);
  EXPECT_EQ(r.groups.at("black").n + r.groups.at("white").n, r.n);

  // Strictly monotone transforms of the logits keep every decision.
  for (auto f : {+[](double x) { return 3.0 * x + 1.0; }, +[](double x) { return std::exp(x); },
                 +[](double x) { return x * x * x; }}) {
    std::vector<double> v(logits.data().begin(), logits.data().end());
    for (double& x : v) x = f(x);
    const EvalReport t =
        evaluate_logits(Tensor(logits.shape(), v), labels, 1, groups, {"black", "white", "other"});
    EXPECT_EQ(t.groups.at("black").wcr, r.groups.at("black").wcr);
    EXPECT_EQ(t.groups.at("white").wcr, r.groups.at("white").wcr);
  }
}

TEST(MetricsTest, EvaluateNetworkMatchesLogits) {
  std::mt19937_64 rng(3);
  const Network net = build_mlp({5}, {7}, 3, 11);
  LabeledDataset d;
  d.inputs = testing::random_tensor({300, 5}, rng);
  for (std::size_t i = 0; i < 300; ++i) d.labels.push_back(i % 3);
  d.n_classes = 3;
  const EvalReport r = evaluate(net, d, 2, true, 64);
  const EvalReport direct = evaluate_logits(forward(net, d.inputs), d.labels, 2);
  EXPECT_EQ(r.accuracy, direct.accuracy);
  EXPECT_NEAR(*r.auc, *direct.auc, 1e-12);
  EXPECT_NEAR(r.loss, direct.loss, 1e-12);
  const auto j = to_json(r);
  EXPECT_EQ(j.at("n"), 300);
  EXPECT_TRUE(j.at("groups").empty());
}

}  // namespace
}  // namespace cdep
