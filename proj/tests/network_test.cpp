// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cdep/network.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "cdep/container.hpp"
#include "test_util.hpp"

namespace cdep {
namespace {

using testing::random_tensor;
using testing::to_vector;

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TEST(NetworkTest, MnistCnnParameterCountFromShapeArithmetic) {
  const Network net = build_mnist_cnn(1, 7);
  const std::size_t expected = 20 * (1 * 25) + 20 + 50 * (20 * 25) + 50 + (50 * 4 * 4) * 256 +
                               256 + 256 * 10 + 10;
  EXPECT_EQ(expected, 233196u);
  EXPECT_EQ(net.parameter_count(), expected);
  ASSERT_EQ(net.size(), 10u);
  EXPECT_EQ(layer_name(net.layers()[0].spec), "Conv2D(1,20,5)");
  EXPECT_EQ(layer_name(net.layers()[7].spec), "Linear(800,256)");
  EXPECT_EQ(layer_name(net.layers()[8].spec), "ReLU");
  EXPECT_EQ(net.output_shape(), (Shape{10}));
}

TEST(NetworkTest, MnistCnnZeroImageGivesFiniteLogits) {
  for (std::size_t c : {1u, 3u}) {
    const Network net = build_mnist_cnn(c, 3);
    const Tensor logits = forward(net, Tensor({1, c, 28, 28}));
    EXPECT_EQ(logits.shape(), (Shape{1, 10}));
    for (double v : logits.data()) EXPECT_TRUE(std::isfinite(v));
  }
  EXPECT_THROW(build_mnist_cnn(2, 0), std::invalid_argument);
}

TEST(NetworkTest, CompasMlpLayout) {
  const Network net = build_compas_mlp(13, 1);
  EXPECT_EQ(net.parameter_count(), 13u * 5 + 5 + 5 * 5 + 5 + 5 * 2 + 2);
  EXPECT_EQ(net.parameter_count(), 112u);
  std::vector<std::string> names;
  for (const Layer& l : net.layers()) names.push_back(layer_name(l.spec));
  EXPECT_EQ(names, (std::vector<std::string>{"Linear(13,5)", "ReLU", "Dropout(0.1)",
                                             "Linear(5,5)", "ReLU", "Dropout(0.1)",
                                             "Linear(5,2)"}));
}

TEST(NetworkTest, EvalForwardIsDeterministicAndTrainForwardIsSeeded) {
  const Network net = build_compas_mlp(13, 1);
  std::mt19937_64 gen(5);
  const Tensor x = random_tensor({8, 13}, gen);
  Rng a = make_rng(9, Stream::kDropout);
  EXPECT_EQ(to_vector(forward(net, x, Mode::kEval, a)), to_vector(forward(net, x)));
  EXPECT_EQ(to_vector(forward(net, x)), to_vector(forward(net, x)));

  Rng r1 = make_rng(9, Stream::kDropout);
  Rng r2 = make_rng(9, Stream::kDropout);
  EXPECT_EQ(to_vector(forward(net, x, Mode::kTrain, r1)),
            to_vector(forward(net, x, Mode::kTrain, r2)));
}

TEST(NetworkTest, IdentityLinearPassesInputThrough) {
  Network net({3}, {Linear{3, 3}}, 0);
  net.layers()[0].weight = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor x({2, 3}, {1, -2, 3, 0.5, 0, -7});
  EXPECT_EQ(to_vector(forward(net, x)), to_vector(x));
}

TEST(NetworkTest, InvertedDropoutPreservesMeanActivation) {
  const Network net({4}, {Dropout{0.1}}, 0);
  const Tensor x({1, 4}, {0.3, 1.0, -2.0, 5.0});
  std::vector<double> mean(4, 0.0);
  const int trials = 10000;
  for (int s = 0; s < trials; ++s) {
    Rng rng = make_rng(static_cast<std::uint64_t>(s), Stream::kDropout);
    const Tensor y = forward(net, x, Mode::kTrain, rng);
    for (std::size_t i = 0; i < 4; ++i) mean[i] += y[i] / trials;
  }
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(mean[i], x[i], 0.02 * std::fabs(x[i])) << "feature " << i;
  }
}

TEST(NetworkTest, BuildRejectsShapesThatDoNotCompose) {
  EXPECT_THROW(Network({3}, {Linear{4, 2}}, 0), ShapeError);
  EXPECT_THROW(Network({1, 5, 5}, {MaxPool2D{2}}, 0), ShapeError);
  EXPECT_THROW(Network({1, 4, 4}, {Conv2D{2, 3, 3}}, 0), ShapeError);
  EXPECT_THROW(Network({4}, {Dropout{1.0}}, 0), ShapeError);
  EXPECT_THROW(Network({4}, {Dropout{-0.1}}, 0), ShapeError);
  const Network net({3}, {Linear{3, 2}}, 0);
  EXPECT_THROW(forward(net, Tensor({2, 4})), ShapeError);
}

TEST(NetworkTest, InitializationIsSeededAndScaled) {
  const Network a = build_mnist_cnn(1, 11);
  const Network b = build_mnist_cnn(1, 11);
  const Network c = build_mnist_cnn(1, 12);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(to_vector(pa[i]), to_vector(pb[i]));
  EXPECT_NE(to_vector(pa[0]), to_vector(c.parameters()[0]));

  // He bound for Conv(1,20,5) (followed by ReLU), Glorot for the last layer.
  const double he = std::sqrt(6.0 / 25.0);
  const double glorot = std::sqrt(6.0 / (256.0 + 10.0));
  double max0 = 0.0;
  for (double v : pa[0].data()) max0 = std::max(max0, std::fabs(v));
  EXPECT_LE(max0, he);
  EXPECT_GT(max0, 0.9 * he);
  double max_last = 0.0;
  for (double v : pa[6].data()) max_last = std::max(max_last, std::fabs(v));
  EXPECT_LE(max_last, glorot);
  EXPECT_GT(max_last, 0.9 * glorot);
}

TEST(NetworkTest, FrozenPrefixExcludesLeadingParameters) {
  Network net = build_mnist_cnn(1, 2);
  EXPECT_EQ(net.trainable_parameters().size(), 8u);
  net.set_frozen_prefix(7);
  const auto params = net.trainable_parameters();
  EXPECT_EQ(params.size(), 4u);
  EXPECT_FALSE(net.layers()[0].weight.requires_grad());
  EXPECT_TRUE(net.layers()[7].weight.requires_grad());
  EXPECT_THROW(net.set_frozen_prefix(11), std::invalid_argument);
}

TEST(NetworkTest, CheckpointRoundTripIsBitExact) {
  Network net = build_mnist_cnn(3, 21);
  net.set_frozen_prefix(4);
  const std::string path = temp_path("cdep_network_test.ckpt");
  save_checkpoint(net, path, R"({"note":"x"})");
  std::string extra;
  const Network back = load_checkpoint(path, &extra);
  EXPECT_EQ(extra, R"({"note":"x"})");
  EXPECT_EQ(back.frozen_prefix(), 4u);
  EXPECT_EQ(back.input_shape(), net.input_shape());
  const auto pa = net.parameters();
  const auto pb = back.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].shape(), pb[i].shape());
    EXPECT_EQ(to_vector(pa[i]), to_vector(pb[i]));
  }
  std::remove(path.c_str());
}

TEST(NetworkTest, CheckpointRejectsForeignFiles) {
  const std::string path = temp_path("cdep_network_test.bad");
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("not a checkpoint", f);
    std::fclose(f);
  }
  EXPECT_THROW(load_checkpoint(path), IoError);
  std::remove(path.c_str());
}

}  // namespace
}  // namespace cdep
