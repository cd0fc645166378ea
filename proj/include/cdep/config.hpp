// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration. Sources are layered: built-in defaults, then a
// sectioned key=value file, then command-line overrides. Keys are written
// "section.key"; unknown keys are errors.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdep/data.hpp"
#include "cdep/objective.hpp"
#include "cdep/optim.hpp"
#include "json.hpp"

namespace cdep {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetKind { kDecoyMnist, kColorMnist, kCompas };
enum class Method { kVanilla, kCdep, kRrr };

std::string dataset_name(DatasetKind d);
std::string method_name(Method m);

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::kDecoyMnist;
  Method method = Method::kVanilla;
  std::string model = "cnn";               // "cnn" or "mlp" (MNIST variants)
  std::vector<std::size_t> mlp_hidden = {256, 128};
  double lambda = 0.0;
  std::optional<std::uint64_t> seed;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer;

  std::string data_root;                   // empty: environment or home cache
  std::string compas_csv;                  // empty: <root>/compas/compas-scores-two-years.csv
  std::size_t train_subsample = 10000;     // 0: all
  std::size_t val_subsample = 2000;        // 0: all
  std::size_t test_subsample = 0;          // 0: all

  ScoreMode score_mode = ScoreMode::kRawLogit;
  std::size_t k_pixels = 1;
  double boost_margin = 1.0;
  std::size_t frozen_prefix = 0;

  DecoyOptions decoy;
  std::size_t early_stop_patience = 0;     // 0: off
  bool balanced_class_weights = false;
  std::string init_checkpoint;            // empty: fresh initialization

  std::string out_dir = "runs/latest";
};

using KeyValues = std::map<std::string, std::string>;

// Dataset-specific defaults as key=value pairs, applied beneath the file.
KeyValues dataset_defaults(DatasetKind d);

// Parses "[section]" headers and "key = value" lines; '#' starts a comment.
KeyValues parse_config_text(const std::string& text);
KeyValues read_config_file(const std::string& path);

// Resolves layered sources: defaults for the chosen dataset, then `file`,
// then `overrides`. Validates every value.
ExperimentConfig resolve_config(const KeyValues& file, const KeyValues& overrides);

// Every recognized key with a one-line description, for usage text.
const std::vector<std::pair<std::string, std::string>>& config_schema();

nlohmann::json to_json(const ExperimentConfig& c);
// Key=value view of a resolved config; resolve_config(to_key_values(c), {})
// reproduces c.
KeyValues to_key_values(const ExperimentConfig& c);

}  // namespace cdep
