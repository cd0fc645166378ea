// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cdep/experiment.hpp"

namespace cdep {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cdep_harness_test_" + name);
  fs::remove_all(p);
  return p;
}

// Ten classes, each a bright 6x6 block at a class-specific place plus noise.
LabeledDataset blocks(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(0.0, 0.2);
  std::vector<double> px(n * 784);
  LabeledDataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % 10;
    d.labels.push_back(k);
    const std::size_t r0 = 5 + (k / 5) * 10;
    const std::size_t c0 = 1 + (k % 5) * 5;
    for (std::size_t j = 0; j < 784; ++j) {
      const std::size_t r = j / 28, c = j % 28;
      const bool on = r >= r0 && r < r0 + 6 && c >= c0 && c < c0 + 6;
      px[i * 784 + j] = on ? 0.9 : noise(rng);
    }
  }
  d.inputs = Tensor({n, 1, 28, 28}, std::move(px));
  d.n_classes = 10;
  return d;
}

PreparedData synthetic_decoy(std::uint64_t seed) {
  PreparedData d;
  d.train = make_decoy_mnist(blocks(200, seed), Phase::kTrain, seed);
  d.val = make_decoy_mnist(blocks(100, seed + 1), Phase::kTest, seed + 1);
  d.test = make_decoy_mnist(blocks(100, seed + 2), Phase::kTest, seed + 2);
  return d;
}

ExperimentConfig mlp_config(const std::string& out, Method method, double lambda) {
  ExperimentConfig c = resolve_config({{"experiment.model", "mlp"},
                                       {"experiment.mlp_hidden", "16"},
                                       {"experiment.epochs", "3"},
                                       {"experiment.batch_size", "32"},
                                       {"experiment.seed", "4"}},
                                      {});
  c.method = method;
  c.lambda = lambda;
  c.out_dir = scratch(out).string();
  return c;
}

std::vector<double> parameters_of(const fs::path& ckpt) {
  std::vector<double> out;
  for (const Tensor& t : load_checkpoint(ckpt.string()).parameters()) {
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return out;
}

bool have_mnist() {
  const fs::path dir = fs::path(data_root()) / "mnist";
  return fs::exists(dir / "train-images-idx3-ubyte") && fs::exists(dir / "t10k-images-idx3-ubyte");
}

TEST(HarnessTest, SameSeedGivesIdenticalFiles) {
  const PreparedData d = synthetic_decoy(1);
  const ExperimentConfig a = mlp_config("det_a", Method::kCdep, 10.0);
  ExperimentConfig b = a;
  b.out_dir = scratch("det_b").string();
  train(a, &d);
  train(b, &d);
  const std::string csv = slurp(fs::path(a.out_dir) / "metrics.csv");
  EXPECT_EQ(csv, slurp(fs::path(b.out_dir) / "metrics.csv"));
  EXPECT_EQ(parameters_of(fs::path(a.out_dir) / "best.ckpt"),
            parameters_of(fs::path(b.out_dir) / "best.ckpt"));
  // Header plus train, val and test rows per epoch.
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 3);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "epoch,split,accuracy,auc,f1,wcr_black,wcr_white,pred_err,expl_err");

  const nlohmann::json m = nlohmann::json::parse(slurp(fs::path(a.out_dir) / "manifest.json"));
  EXPECT_EQ(m.at("config").at("experiment.seed"), "4");
  EXPECT_EQ(m.at("epochs").size(), 3u);
  EXPECT_GT(m.at("epochs")[0].at("peak_bytes").get<std::size_t>(), 0u);
  EXPECT_TRUE(m.at("epochs")[0].contains("seconds"));
  EXPECT_EQ(m.at("design").at("cd_epsilon"), 1e-12);
  EXPECT_EQ(m.at("test").at("accuracy"), m.at("epochs")[m.at("best_epoch").get<int>() - 1]
                                             .at("test")
                                             .at("accuracy"));
}

TEST(HarnessTest, ZeroLambdaCdepRunEqualsVanillaRun) {
  const PreparedData d = synthetic_decoy(2);
  const ExperimentConfig v = mlp_config("zero_v", Method::kVanilla, 0.0);
  const ExperimentConfig c = mlp_config("zero_c", Method::kCdep, 0.0);
  const RunResult rv = train(v, &d);
  const RunResult rc = train(c, &d);
  const std::vector<double> pv = parameters_of(fs::path(v.out_dir) / "best.ckpt");
  const std::vector<double> pc = parameters_of(fs::path(c.out_dir) / "best.ckpt");
  ASSERT_EQ(pv.size(), pc.size());
  EXPECT_EQ(std::memcmp(pv.data(), pc.data(), pv.size() * sizeof(double)), 0);
  for (std::size_t e = 0; e < rv.epochs.size(); ++e) {
    EXPECT_EQ(rv.epochs[e].pred_err, rc.epochs[e].pred_err);
    EXPECT_EQ(rv.epochs[e].test.loss, rc.epochs[e].test.loss);
    EXPECT_EQ(rv.epochs[e].expl_err, 0.0);
    EXPECT_GT(rc.epochs[e].expl_err, 0.0);
  }
}

TEST(HarnessTest, CdepSuppressesTheDecoyPatch) {
  const PreparedData d = synthetic_decoy(3);
  const RunResult v = train(mlp_config("decoy_v", Method::kCdep, 0.0), &d);
  const RunResult c = train(mlp_config("decoy_c", Method::kCdep, 100.0), &d);
  EXPECT_LT(c.epochs.back().expl_err, 0.25 * v.epochs.back().expl_err);
  EXPECT_LT(c.epochs.back().expl_err, c.epochs.front().expl_err);
}

TEST(HarnessTest, EarlyStoppingHaltsAfterPatienceEpochsWithoutGain) {
  const PreparedData d = synthetic_decoy(4);
  // With a vanishing step size the validation loss never changes, so the
  // first epoch is the only improvement.
  ExperimentConfig c = mlp_config("stop_frozen", Method::kVanilla, 0.0);
  c.optimizer.lr = 1e-300;
  c.epochs = 10;
  c.early_stop_patience = 2;
  const RunResult r = train(c, &d);
  EXPECT_EQ(r.epochs.size(), 3u);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.best_epoch, 1u);

  // Against a replay of the rule on a learning run.
  c = mlp_config("stop_live", Method::kCdep, 1000.0);
  c.optimizer.lr = 0.05;
  c.epochs = 12;
  c.early_stop_patience = 1;
  const RunResult live = train(c, &d);
  double best = INFINITY;
  std::size_t since = 0, expected = c.epochs;
  for (std::size_t e = 0; e < live.epochs.size(); ++e) {
    if (live.epochs[e].val.loss < best) {
      best = live.epochs[e].val.loss;
      since = 0;
    } else if (++since >= c.early_stop_patience) {
      expected = e + 1;
      break;
    }
  }
  EXPECT_EQ(live.epochs.size(), expected);
  EXPECT_EQ(live.stopped_early, expected < c.epochs);
}

TEST(HarnessTest, BalancedWeightsOnBalancedDataChangeNothing) {
  const PreparedData d = synthetic_decoy(5);  // labels cycle through all classes
  const ExperimentConfig plain = mlp_config("w_plain", Method::kCdep, 5.0);
  ExperimentConfig weighted = plain;
  weighted.balanced_class_weights = true;
  weighted.out_dir = scratch("w_bal").string();
  train(plain, &d);
  train(weighted, &d);
  EXPECT_EQ(slurp(fs::path(plain.out_dir) / "metrics.csv"),
            slurp(fs::path(weighted.out_dir) / "metrics.csv"));
}

TEST(HarnessTest, NonFiniteLossAbortsWithTheStep) {
  const PreparedData d = synthetic_decoy(6);
  ExperimentConfig c = mlp_config("nan", Method::kVanilla, 0.0);
  c.optimizer = {};
  c.optimizer.kind = "sgd";
  c.optimizer.lr = 1e250;
  try {
    train(c, &d);
    FAIL() << "expected NanLossError";
  } catch (const NanLossError& e) {
    EXPECT_GE(e.step(), 2u);
    EXPECT_NE(std::string(e.what()).find("step " + std::to_string(e.step())), std::string::npos);
  }
}

TEST(HarnessTest, FrozenPrefixKeepsLeadingLayersFixed) {
  const PreparedData d = synthetic_decoy(7);
  ExperimentConfig c = mlp_config("frozen", Method::kCdep, 10.0);
  c.frozen_prefix = 2;
  train(c, &d);
  const Network init = build_model(c, d.train, *c.seed);
  const Network trained = load_checkpoint((fs::path(c.out_dir) / "best.ckpt").string());
  EXPECT_EQ(trained.frozen_prefix(), 2u);
  // Flatten, Linear | ReLU, Linear.
  const auto a = init.layers()[1].weight.data();
  const auto b = trained.layers()[1].weight.data();
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  const auto la = init.layers()[3].weight.data();
  const auto lb = trained.layers()[3].weight.data();
  EXPECT_FALSE(std::equal(la.begin(), la.end(), lb.begin()));
}

TEST(HarnessTest, SweepSelectsByValidationAccuracyWithTiesToSmallerLambda) {
  ExperimentConfig c = mlp_config("sweep", Method::kCdep, 0.0);
  c.epochs = 1;
  EXPECT_THROW(sweep(c, {}), ConfigError);
  EXPECT_THROW(sweep(c, {0.05}), ConfigError);
  EXPECT_THROW(sweep(c, {20000.0}), ConfigError);
  if (!have_mnist()) GTEST_SKIP() << "MNIST not available";
  c.train_subsample = 256;
  c.val_subsample = 128;
  c.test_subsample = 128;
  const std::vector<double> grid = {10.0, 0.0, 1.0};
  const SweepResult s = sweep(c, grid);
  ASSERT_EQ(s.runs.size(), 3u);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double a = s.runs[i].best_val.accuracy;
    const double b = s.runs[s.best].best_val.accuracy;
    EXPECT_TRUE(a < b || (a == b && grid[i] >= grid[s.best])) << i;
  }
  const std::string csv = slurp(fs::path(c.out_dir) / "sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(sweep(c, grid).best, s.best);
  EXPECT_EQ(sweep(c, {0.0}).best, 0u);
}

TEST(HarnessTest, CheckpointEvalReproducesLoggedTestMetrics) {
  if (!have_mnist()) GTEST_SKIP() << "MNIST not available";
  ExperimentConfig c = mlp_config("eval", Method::kCdep, 10.0);
  c.train_subsample = 300;
  c.val_subsample = 100;
  c.test_subsample = 200;
  c.epochs = 2;
  const RunResult r = train(c);
  const EvalReport e = eval_checkpoint((fs::path(c.out_dir) / "best.ckpt").string());
  EXPECT_EQ(e.n, 200u);
  EXPECT_EQ(e.accuracy, r.best_test.accuracy);
  EXPECT_EQ(e.loss, r.best_test.loss);

  // The second preparation reads the cache written by the first.
  const PreparedData a = prepare_data(c);
  const PreparedData b = prepare_data(c, false);
  ASSERT_EQ(a.cache_files.size(), 3u);
  ASSERT_EQ(a.train.inputs.numel(), b.train.inputs.numel());
  EXPECT_EQ(std::memcmp(a.train.inputs.data().data(), b.train.inputs.data().data(),
                        a.train.inputs.numel() * sizeof(double)),
            0);
  EXPECT_EQ(a.test.labels, b.test.labels);
}

TEST(HarnessTest, BenchReportsEveryMethod) {
  if (!have_mnist()) GTEST_SKIP() << "MNIST not available";
  ExperimentConfig c = mlp_config("bench", Method::kCdep, 1.0);
  c.mlp_hidden = {16, 16};
  c.train_subsample = 64;
  c.batch_size = 16;
  const BenchResult b = bench(c, 3);
  ASSERT_EQ(b.rows.size(), 4u + 6u);
  EXPECT_EQ(b.rows[3].method, "rrr");
  EXPECT_GT(b.time_ratio, 0.0);
  EXPECT_EQ(b.frozen_prefix, 3u);  // through the first hidden Linear
  ASSERT_EQ(b.overhead_bytes.size(), 3u);
  EXPECT_GT(b.overhead_bytes[0], 0.0);
  EXPECT_LE(std::fabs(b.overhead_slope), 0.01 * b.overhead_bytes[0]);
  EXPECT_TRUE(fs::exists(fs::path(c.out_dir) / "bench.csv"));
}

TEST(HarnessTest, MissingDataIsADataError) {
  ExperimentConfig c = mlp_config("missing", Method::kVanilla, 0.0);
  c.data_root = scratch("empty_root").string();
  EXPECT_THROW(train(c), DataError);
  c = resolve_config({{"experiment.dataset", "compas"}, {"data.compas_csv", "/nonexistent.csv"},
                      {"experiment.seed", "1"}},
                     {});
  EXPECT_THROW(prepare_data(c), DataError);
  c.seed.reset();
  EXPECT_THROW(train(c), ConfigError);
}

}  // namespace
}  // namespace cdep
