// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "cdep/tensor.hpp"

namespace cdep {
namespace detail {

// Returns one gradient per input; entries for inputs with needs[i] == false
// may be left undefined.
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad,
                                                     const std::vector<bool>& needs)>;

struct Node {
  OpKind kind = OpKind::kLeaf;
  std::vector<Tensor> inputs;
  BackwardFn backward;
  bool differentiable = true;
};

struct TensorImpl {
  Shape shape;
  std::shared_ptr<Buffer> buffer;
  bool requires_grad = false;
  std::uint64_t seq = 0;  // creation order of tracked tensors
  std::unique_ptr<Node> node;
};

std::uint64_t next_seq();

Tensor make_result(OpKind kind, Shape shape, Buffer values, std::vector<Tensor> inputs,
                   BackwardFn backward, bool differentiable = true);

}  // namespace detail

struct TensorAccess {
  static detail::TensorImpl* impl(const Tensor& t) { return t.impl_.get(); }
};

}  // namespace cdep
