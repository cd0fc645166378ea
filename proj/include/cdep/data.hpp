// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Datasets: MNIST IDX files, the colored and decoy MNIST variants, and the
// COMPAS recidivism table.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdep/tensor.hpp"
#include "json.hpp"

namespace cdep {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Phase { kTrain, kTest };

struct LabeledDataset {
  Tensor inputs;                     // [N, ...]
  std::vector<std::size_t> labels;   // in [0, n_classes)
  std::size_t n_classes = 0;
  Tensor bias_masks;                 // optional, same shape as inputs
  std::string split;                 // "train", "val" or "test"
  // Optional per-sample group id (index into group_names).
  std::vector<std::size_t> groups;
  std::vector<std::string> group_names;
  std::vector<std::string> feature_names;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  // Rows in the given order.
  LabeledDataset subset(std::span<const std::size_t> rows) const;
  // First n rows.
  LabeledDataset head(std::size_t n) const;
  // Rows [start, start + n).
  LabeledDataset range(std::size_t start, std::size_t n) const;
};

// Stacks the selected rows of a [N, ...] tensor.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows);

// Dataset root: the override if nonempty, else $CDEP_DATA_ROOT, else
// $HOME/.cache/cdep.
std::string data_root(const std::string& override_root = "");

// ---------------------------------------------------------------------------
// MNIST

// Images become [N, 1, rows, cols] reals in [0, 1].
LabeledDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);

// Class-to-color table of RGB triples in [0, 1].
using Palette = std::vector<std::array<double, 3>>;
Palette default_palette();

// Tints every digit with its class color (test phase: 1 - color per channel),
// scaled by the original intensity. Output is [N, 3, H, W].
LabeledDataset make_color_mnist(const LabeledDataset& gray, const Palette& palette, Phase phase);

struct DecoyOptions {
  std::size_t patch = 4;
  double shade_low = 0.25;   // shade for class 0
  double shade_span = 0.5;   // class c gets low + span * c / 9
};

// Paints a patch x patch square in a uniformly random corner. Train phase
// uses the shade of the true class, test phase that of a uniformly random
// other class. bias_masks marks the painted pixels.
LabeledDataset make_decoy_mnist(const LabeledDataset& gray, Phase phase, std::uint64_t seed,
                                const DecoyOptions& opts = {});

// Per-location probability of a nonzero pixel (any channel), normalized to
// sum to 1. Returns H*W values.
std::vector<double> pixel_distribution(const LabeledDataset& data);

// ---------------------------------------------------------------------------
// COMPAS

// Logical field -> CSV column name.
using FieldMap = std::map<std::string, std::string>;
FieldMap default_compas_fields();

struct CompasReport {
  std::size_t rows = 0;          // data rows in the file
  std::size_t unparseable = 0;   // rows with malformed or non-numeric fields
  std::size_t screened_out = 0;  // removed by the screening/missing-outcome filter
  std::size_t kept_all_races = 0;
  std::size_t kept = 0;          // black and white defendants only
};

struct CompasSplits {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
  CompasReport report;
  std::vector<std::size_t> race_columns;  // feature columns of the race one-hot
};

// Charge description keyword rule: Drugs, Driving, Violence, Robbery, Other.
std::string charge_category(const std::string& description);
// "<25", "25-45" or ">45".
std::string age_band(int age);

// Reads the ProPublica two-year file, filters, one-hot encodes, and splits
// 80/10/10 with a seeded permutation. Labels: 1 = reoffended within two years.
CompasSplits load_compas(const std::string& csv_path, std::uint64_t seed,
                         const FieldMap& fields = default_compas_fields());

// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

// ---------------------------------------------------------------------------
// Files

// Dataset cache in the checkpoint container format.
void save_dataset(const LabeledDataset& data, const std::string& path,
                  const nlohmann::json& extra = nlohmann::json::object());
LabeledDataset load_dataset(const std::string& path, nlohmann::json* extra = nullptr);

// Mask file: one JSON header line {"shape": [...], "count": N}, then one line
// per mask with run lengths alternating 0-runs and 1-runs, starting with 0s.
void write_mask_file(const std::string& path, const Tensor& masks);
Tensor read_mask_file(const std::string& path);

}  // namespace cdep
