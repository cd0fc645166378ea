// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// First-order optimizers updating parameter tensors in place. Weight decay
// is the L2 form: decay * param is added to the gradient before the update.

#pragma once

#include <string>
#include <vector>

#include "cdep/tensor.hpp"

namespace cdep {

struct OptimizerConfig {
  std::string kind = "adam";  // "adam" or "sgd"
  double lr = 1e-3;
  double momentum = 0.0;      // sgd only
  double weight_decay = 0.0;
  double beta1 = 0.9;         // adam only
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Optimizer {
 public:
  // Throws std::invalid_argument for an unknown kind or bad hyperparameters.
  Optimizer(const OptimizerConfig& cfg, std::vector<Tensor> params);

  // One gradient per parameter, same shapes.
  void step(const std::vector<Tensor>& grads);
  std::size_t steps() const { return t_; }
  const std::vector<Tensor>& parameters() const { return params_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

}  // namespace cdep
