// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "cdep/config.hpp"
#include "cdep/optim.hpp"

namespace cdep {
namespace {

TEST(OptimizerTest, AdamHandSteps) {
  // Constant gradient 0.5: the bias-corrected moments are 0.5 and 0.25 at
  // every step, so each step moves by lr * 0.5 / (0.5 + eps).
  Tensor p = Tensor::scalar(1.0);
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  Optimizer opt(cfg, {p});
  const double move = 0.1 * 0.5 / (0.5 + 1e-8);
  opt.step({Tensor::scalar(0.5)});
  EXPECT_NEAR(p.item(), 1.0 - move, 1e-15);
  opt.step({Tensor::scalar(0.5)});
  EXPECT_NEAR(p.item(), 1.0 - 2.0 * move, 1e-15);
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(OptimizerTest, SgdMomentumWithWeightDecayHandSteps) {
  Tensor p = Tensor::scalar(1.0);
  OptimizerConfig cfg;
  cfg.kind = "sgd";
  cfg.lr = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.1;
  Optimizer opt(cfg, {p});
  // g = 0.1 * 1 -> m = 0.1 -> p = 0.99.
  opt.step({Tensor::scalar(0.0)});
  EXPECT_DOUBLE_EQ(p.item(), 0.99);
  // g = 0.099 -> m = 0.09 + 0.099 = 0.189 -> p = 0.99 - 0.0189.
  opt.step({Tensor::scalar(0.0)});
  EXPECT_NEAR(p.item(), 0.9711, 1e-15);
}

TEST(OptimizerTest, RejectsBadSettings) {
  Tensor p = Tensor::scalar(1.0);
  OptimizerConfig cfg;
  cfg.kind = "rmsprop";
  EXPECT_THROW(Optimizer(cfg, {p}), std::invalid_argument);
  cfg = {};
  cfg.lr = 0.0;
  EXPECT_THROW(Optimizer(cfg, {p}), std::invalid_argument);
  cfg = {};
  cfg.momentum = 1.0;
  EXPECT_THROW(Optimizer(cfg, {p}), std::invalid_argument);
  Optimizer ok(OptimizerConfig{}, {p});
  EXPECT_THROW(ok.step({}), std::invalid_argument);
  EXPECT_THROW(ok.step({Tensor::zeros({2})}), ShapeError);
}

TEST(ConfigTest, ParsesSectionsAndComments) {
  const KeyValues kv = parse_config_text(
      "# comment\n"
      "[experiment]\n"
      "dataset = compas   # trailing\n"
      "  lambda=2.5\n"
      "\n"
      "[optimizer]\n"
      "lr = 0.05\n");
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv.at("experiment.dataset"), "compas");
  EXPECT_EQ(kv.at("experiment.lambda"), "2.5");
  EXPECT_EQ(kv.at("optimizer.lr"), "0.05");
}

TEST(ConfigTest, MalformedFilesAreErrors) {
  EXPECT_THROW(parse_config_text("[experiment]\nbogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("lambda = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[experiment\nlambda = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[experiment]\nlambda\n"), ConfigError);
  EXPECT_THROW(read_config_file("/nonexistent/config.ini"), ConfigError);
}

TEST(ConfigTest, DatasetDefaults) {
  const ExperimentConfig decoy = resolve_config({}, {});
  EXPECT_EQ(decoy.dataset, DatasetKind::kDecoyMnist);
  EXPECT_EQ(decoy.optimizer.kind, "adam");
  EXPECT_EQ(decoy.optimizer.weight_decay, 1e-3);
  EXPECT_EQ(decoy.train_subsample, 10000u);
  EXPECT_EQ(decoy.batch_size, 64u);
  EXPECT_FALSE(decoy.seed);

  const ExperimentConfig compas = resolve_config({{"experiment.dataset", "compas"}}, {});
  EXPECT_EQ(compas.optimizer.kind, "sgd");
  EXPECT_EQ(compas.optimizer.lr, 0.01);
  EXPECT_EQ(compas.optimizer.momentum, 0.9);
  EXPECT_EQ(compas.early_stop_patience, 10u);
  EXPECT_EQ(compas.model, "mlp");
  EXPECT_EQ(compas.train_subsample, 0u);
}

TEST(ConfigTest, OverridesBeatFileBeatDefaults) {
  const KeyValues file = {{"experiment.dataset", "color_mnist"}, {"optimizer.lr", "0.5"},
                          {"experiment.lambda", "3"}};
  const ExperimentConfig c = resolve_config(file, {{"experiment.lambda", "7"}});
  EXPECT_EQ(c.dataset, DatasetKind::kColorMnist);
  EXPECT_EQ(c.optimizer.lr, 0.5);
  EXPECT_EQ(c.lambda, 7.0);
  EXPECT_EQ(c.optimizer.weight_decay, 1e-3);
  // The dataset chosen by an override selects the defaults.
  const ExperimentConfig o = resolve_config(file, {{"experiment.dataset", "compas"}});
  EXPECT_EQ(o.optimizer.kind, "sgd");
  EXPECT_EQ(o.optimizer.lr, 0.5);
}

TEST(ConfigTest, InvalidValuesAreErrors) {
  const std::vector<KeyValues> bad = {
      {{"experiment.dataset", "cifar"}},
      {{"experiment.method", "lime"}},
      {{"experiment.lambda", "-1"}},
      {{"experiment.lambda", "1e"}},
      {{"experiment.lambda", "nan"}},
      {{"experiment.seed", "-3"}},
      {{"experiment.epochs", "0"}},
      {{"experiment.mlp_hidden", "64,,32"}},
      {{"optimizer.kind", "rmsprop"}},
      {{"optimizer.momentum", "1"}},
      {{"cdep.score_mode", "abs"}},
      {{"cdep.boost_margin", "0"}},
      {{"training.class_weights", "inverse"}},
      {{"nosuch.key", "1"}},
      {{"experiment.method", "rrr"}, {"experiment.dataset", "color_mnist"}},
      {{"experiment.method", "rrr"}},  // cnn
      {{"experiment.method", "rrr"}, {"experiment.model", "mlp"}, {"cdep.frozen_prefix", "2"}},
      {{"experiment.dataset", "compas"}, {"experiment.model", "cnn"}},
  };
  for (const KeyValues& kv : bad) {
    EXPECT_THROW(resolve_config({}, kv), ConfigError) << kv.begin()->first << "=" << kv.begin()->second;
  }
  EXPECT_NO_THROW(resolve_config({}, {{"experiment.method", "rrr"}, {"experiment.model", "mlp"}}));
}

TEST(ConfigTest, KeyValueViewRoundTrips) {
  const ExperimentConfig c = resolve_config(
      {{"experiment.dataset", "compas"},
       {"experiment.method", "cdep"},
       {"experiment.lambda", "0.1"},
       {"experiment.seed", "18446744073709551615"},
       {"cdep.score_mode", "share"},
       {"training.class_weights", "balanced"},
       {"optimizer.lr", "0.30000000000000004"}},
      {});
  const KeyValues kv = to_key_values(c);
  EXPECT_EQ(to_key_values(resolve_config(kv, {})), kv);
  EXPECT_EQ(*c.seed, 18446744073709551615ULL);
  EXPECT_EQ(c.optimizer.lr, 0.30000000000000004);
  for (const auto& [k, v] : kv) {
    bool known = false;
    for (const auto& [sk, d] : config_schema()) known = known || sk == k;
    EXPECT_TRUE(known) << k;
  }
  EXPECT_EQ(to_json(c).at("experiment.dataset"), "compas");
}

}  // namespace
}  // namespace cdep
