// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Input-gradient penalty baseline: cross-entropy plus lambda times the
// squared norm of the annotated part of d(sum_c log p_c)/dx, trained by
// differentiating through that input gradient.

#pragma once

#include <span>

#include "cdep/network.hpp"
#include "cdep/objective.hpp"

namespace cdep {

// `masks` is 1 where a feature should be irrelevant; either the per-sample
// input shape or the batched shape. The penalty is summed over the batch.
// Networks with a Conv2D layer raise UnsupportedOpError(kConv2d).
LossReport rrr_loss(const Network& net, const Tensor& x, std::span<const std::size_t> labels,
                    const Tensor& masks, double lambda,
                    const std::vector<double>& class_weights = {},
                    const DropoutMasks* dropout = nullptr);

}  // namespace cdep
