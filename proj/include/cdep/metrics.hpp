// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Classification metrics: accuracy, rank AUC, F1, and per-group wrongful
// conviction rate (share of true negatives predicted positive).

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdep/data.hpp"
#include "cdep/network.hpp"
#include "json.hpp"

namespace cdep {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels);

// Mann-Whitney statistic: fraction of (positive, negative) pairs ordered
// correctly, ties counting one half. Throws MetricError without both classes.
double auc(std::span<const double> scores, std::span<const std::uint8_t> positive);

// F1 of one class; 0 when it is never predicted and never present.
double f1_score(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                std::size_t positive_class);

struct GroupStats {
  std::size_t n = 0;
  std::size_t false_positive = 0;
  std::size_t true_negative = 0;
  double wcr = 0.0;  // FP / (FP + TN)
};

struct EvalReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  std::optional<double> auc;
  double f1 = 0.0;
  std::size_t positive_class = 1;
  double loss = 0.0;  // mean cross-entropy
  std::map<std::string, GroupStats> groups;
  // Groups skipped for lack of samples or of true negatives.
  std::size_t omitted_groups = 0;
};

// Argmax of each row of [N, C] logits.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

// Metrics from precomputed logits. Group statistics need groups and names;
// auc_required makes a single-class set an error instead of leaving auc empty.
EvalReport evaluate_logits(const Tensor& logits, std::span<const std::size_t> labels,
                           std::size_t positive_class,
                           std::span<const std::size_t> groups = {},
                           const std::vector<std::string>& group_names = {},
                           bool auc_required = true);

// Eval-mode forward in batches, without gradient tracking.
Tensor predict_logits(const Network& net, const Tensor& inputs, std::size_t batch_size = 256);

EvalReport evaluate(const Network& net, const LabeledDataset& data, std::size_t positive_class = 1,
                    bool auc_required = true, std::size_t batch_size = 256);

nlohmann::json to_json(const EvalReport& r);

}  // namespace cdep
