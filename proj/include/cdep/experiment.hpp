// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end runs: data preparation, training with per-epoch evaluation,
// lambda sweeps, checkpoint evaluation and the time/memory benchmark. Every
// run writes into its own directory.

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdep/config.hpp"
#include "cdep/data.hpp"
#include "cdep/metrics.hpp"
#include "cdep/network.hpp"
#include "json.hpp"

namespace cdep {

inline constexpr const char* kVersion = "0.1.0";

// Validation rows taken from the end of the MNIST train file.
inline constexpr std::size_t kMnistValidationRows = 6000;

class NanLossError : public std::runtime_error {
 public:
  NanLossError(std::size_t step, double value);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct PreparedData {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
  std::vector<double> pixel_distribution;  // color_mnist only
  std::vector<std::size_t> race_columns;   // compas only
  std::vector<std::string> cache_files;    // empty when built in memory only
};

// Builds the three splits for c.dataset. With `use_cache`, splits are read
// from (or written to) <data root>/cache, keyed by every value that affects
// their content. Throws DataError when raw files are missing.
PreparedData prepare_data(const ExperimentConfig& c, bool use_cache = true);

// Model named by c.model for the given data.
Network build_model(const ExperimentConfig& c, const LabeledDataset& train, std::uint64_t seed);

// Values fixed in code that a re-run depends on.
nlohmann::json design_values(const ExperimentConfig& c);

struct EpochRecord {
  std::size_t epoch = 0;
  double pred_err = 0.0;  // means over training batches
  double expl_err = 0.0;
  double seconds = 0.0;
  std::size_t peak_bytes = 0;
  EvalReport val;
  EvalReport test;
};

struct RunResult {
  std::size_t n_classes = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  EvalReport best_val;
  EvalReport best_test;
  nlohmann::json manifest;
};

// Trains per c and writes manifest.json, metrics.csv and best.ckpt into
// c.out_dir. Requires c.seed. `data` may be passed to skip preparation.
// Throws NanLossError on a non-finite loss.
RunResult train(const ExperimentConfig& c, const PreparedData* data = nullptr);

// One CSV line per (epoch, split).
std::string metrics_csv(const RunResult& r);

struct SweepResult {
  std::vector<double> lambdas;
  std::vector<RunResult> runs;
  std::size_t best = 0;  // index into lambdas
};

// Trains one run per lambda under <c.out_dir>/lambda_<i>, selects by best
// validation accuracy (ties go to the smaller lambda) and writes sweep.csv
// and sweep.json. Nonzero lambdas must lie in [0.1, 1e4].
SweepResult sweep(const ExperimentConfig& c, const std::vector<double>& lambdas);

// Rebuilds the test split recorded in a checkpoint and evaluates it.
// `data_root` overrides the root stored in the checkpoint when nonempty.
EvalReport eval_checkpoint(const std::string& checkpoint_path, const std::string& data_root = "");

struct BenchRow {
  std::string method;  // vanilla, cdep, cdep_frozen, rrr
  std::size_t batches = 0;
  double seconds_per_step = 0.0;
  double seconds_per_epoch = 0.0;
  std::size_t peak_bytes = 0;  // engine allocator high-water above the idle baseline
};

struct BenchResult {
  std::vector<BenchRow> rows;
  double time_ratio = 0.0;             // cdep / vanilla seconds per step
  double frozen_ratio = 0.0;           // cdep_frozen / cdep seconds per step
  std::vector<double> overhead_bytes;  // cdep minus vanilla peak, per batch count
  double overhead_slope = 0.0;         // least-squares bytes per extra batch
  std::size_t frozen_prefix = 0;
};

// Times `steps` training steps per method on c's data and measures peak
// memory over 1, 2 and 3 consecutive batches. Writes bench.csv and
// bench.json into c.out_dir.
BenchResult bench(const ExperimentConfig& c, std::size_t steps = 20);

}  // namespace cdep
