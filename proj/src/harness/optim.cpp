// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cdep/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace cdep {

Optimizer::Optimizer(const OptimizerConfig& cfg, std::vector<Tensor> params)
    : cfg_(cfg), params_(std::move(params)) {
  if (cfg_.kind != "adam" && cfg_.kind != "sgd") {
    throw std::invalid_argument("unknown optimizer '" + cfg_.kind + "' (adam, sgd)");
  }
  if (!(cfg_.lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (cfg_.weight_decay < 0.0) throw std::invalid_argument("weight decay must be >= 0");
  if (cfg_.momentum < 0.0 || cfg_.momentum >= 1.0) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    if (cfg_.kind == "adam") v_.emplace_back(p.numel(), 0.0);
  }
}

void Optimizer::step(const std::vector<Tensor>& grads) {
  if (grads.size() != params_.size()) {
    throw std::invalid_argument("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params_.size()) + " parameters");
  }
  ++t_;
  const bool adam = cfg_.kind == "adam";
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].mutable_data();
    const auto g = grads[i].data();
    if (g.size() != p.size()) throw ShapeError("optimizer: gradient shape mismatch");
    auto& m = m_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j] + cfg_.weight_decay * p[j];
      if (adam) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * gj * gj;
        p[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v_[i][j] / bc2) + cfg_.eps);
      } else {
        m[j] = cfg_.momentum * m[j] + gj;
        p[j] -= cfg_.lr * m[j];
      }
    }
  }
}

}  // namespace cdep
