// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Contextual decomposition: every activation h is carried as h = beta + gamma,
// where beta is the part attributable to a group of input features and gamma
// the rest. All rules are built from tracked tensor ops, so the CD logits can
// be differentiated with respect to the network parameters.

#pragma once

#include <cstddef>

#include "cdep/network.hpp"
#include "cdep/tensor.hpp"

namespace cdep {

// Linear/Conv bias split denominator guard.
inline constexpr double kCdEpsilon = 1e-12;

// 0/1 mask over input features. Either the per-sample input shape (the same
// group for every sample in a batch) or the full batched shape.
struct FeatureGroup {
  Tensor mask;

  static FeatureGroup empty(const Shape& shape) { return {Tensor::zeros(shape)}; }
  static FeatureGroup full(const Shape& shape) { return {Tensor::ones(shape)}; }
};

struct CDState {
  Tensor beta;
  Tensor gamma;
  // Per-sample fraction of input features inside the group, shape [N]. When
  // both the group and its complement contribute nothing to a unit, its bias
  // is split in this ratio; this keeps beta exactly zero for an empty group
  // and gamma exactly zero for a full one.
  Tensor coverage;
};

struct CDLogits {
  Tensor beta;
  Tensor gamma;
};

// beta0 = mask * x, gamma0 = (1 - mask) * x.
CDState cd_input(const Tensor& x, const FeatureGroup& group);

// Applies one layer's CD rule. `dropout_mask` (if defined) is applied to both
// components of a Dropout layer; otherwise Dropout is the identity.
CDState cd_layer(const Layer& layer, const CDState& state, const Tensor* dropout_mask = nullptr);

// Runs layers [from, to).
CDState cd_range(const Network& net, CDState state, std::size_t from, std::size_t to,
                 const DropoutMasks* masks = nullptr);

CDLogits cd_forward(const Network& net, const Tensor& x, const FeatureGroup& group,
                    const DropoutMasks* masks = nullptr);

// State at the frozen/trainable boundary, computed without gradient tracking.
// Eval-mode semantics for any Dropout inside the prefix.
CDState cd_frozen_prefix(const Network& net, const Tensor& x, const FeatureGroup& group);

// Finishes a CD pass from a state cached at the frozen boundary.
CDLogits cd_from_boundary(const Network& net, const CDState& boundary,
                          const DropoutMasks* masks = nullptr);

}  // namespace cdep
