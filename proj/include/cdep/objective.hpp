// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objective: class-weighted cross-entropy plus lambda times an L1
// explanation error between CD importance scores and declared targets.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdep/cd.hpp"
#include "cdep/network.hpp"
#include "cdep/random.hpp"
#include "cdep/tensor.hpp"

namespace cdep {

enum class TargetMode { kSuppress, kBoost, kMatch };

// How beta logits are turned into importance scores before the L1 distance.
//   kRawLogit: the beta logits themselves; suppress target 0.
//   kSoftmax:  softmax(beta); suppress target is the uniform vector.
//   kShare:    sigmoid(beta - gamma) per class, the share of each logit owed
//              to the group; suppress target 0.
enum class ScoreMode { kRawLogit, kSoftmax, kShare };

std::string score_mode_name(ScoreMode mode);
ScoreMode parse_score_mode(const std::string& name);

struct ExplanationTarget {
  FeatureGroup group;
  TargetMode mode = TargetMode::kSuppress;
  double margin = 1.0;         // boost only, must be > 0
  std::vector<double> match;   // match only, one value per class
  std::optional<std::size_t> class_index;  // unset: all classes
};

struct LossReport {
  Tensor total;  // tracked when the inputs are
  double prediction_error = 0.0;
  double explanation_error = 0.0;
  double total_value = 0.0;
};

struct LossOptions {
  double lambda = 0.0;
  ScoreMode score_mode = ScoreMode::kRawLogit;
  // Per-class weights for the cross-entropy; empty means unweighted.
  std::vector<double> class_weights;
  // Dropout masks shared by the prediction pass and every CD pass.
  const DropoutMasks* dropout = nullptr;
};

// Sum_i w_{y_i} * -log softmax(logits)_i,y_i / Sum_i w_{y_i}.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                     const std::vector<double>& class_weights = {});

// Per-sample explanation error of one target given its beta (and gamma)
// logits, shape [N].
Tensor explanation_error(const CDLogits& cd, const ExplanationTarget& target,
                         ScoreMode mode);

// Full objective. The explanation error is averaged over samples and
// targets. With lambda == 0 the returned total is the cross-entropy tensor
// itself and the explanation error is evaluated untracked, for reporting.
LossReport cdep_loss(const Network& net, const Tensor& x, std::span<const std::size_t> labels,
                     const std::vector<ExplanationTarget>& targets, const LossOptions& opts);

// Same objective resumed at the frozen boundary: `boundary_x` is the
// standard activation entering layer net.frozen_prefix() and `states[t]` the
// cached CD state of targets[t] there.
LossReport cdep_loss_from_boundary(const Network& net, const Tensor& boundary_x,
                                   std::span<const std::size_t> labels,
                                   const std::vector<ExplanationTarget>& targets,
                                   const std::vector<CDState>& states,
                                   const LossOptions& opts);

// One suppress target per distinct mask; each mask is [N, ...] over the
// batch (rows may be empty).
std::vector<ExplanationTarget> make_suppress_targets(const Tensor& masks);

// k single-location groups drawn from `distribution` (H*W probabilities,
// row-major) over an input of shape [C, H, W]; each group covers all
// channels at its location.
std::vector<ExplanationTarget> sample_pixel_targets(std::span<const double> distribution,
                                                    const Shape& input_shape, std::size_t k,
                                                    Rng& rng);

// Boost target over the given feature columns of a flat input.
ExplanationTarget make_boost_target(const std::vector<std::size_t>& columns,
                                    std::size_t n_features, double margin);

}  // namespace cdep
