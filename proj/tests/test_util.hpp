// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the unit tests: random tensors and a central
// finite-difference oracle that only ever calls the forward path.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "cdep/network.hpp"
#include "cdep/tensor.hpp"

namespace cdep::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(shape, std::move(v));
}

// Same, but every entry keeps at least `gap` away from zero.
inline Tensor random_away_from_zero(const Shape& shape, std::mt19937_64& rng,
                                    double gap = 1e-2) {
  std::uniform_real_distribution<double> mag(gap, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor(shape, std::move(v));
}

inline Tensor with_value(const Tensor& t, std::size_t i, double value) {
  Tensor c = t.clone();
  c.mutable_data()[i] = value;
  return c;
}

// Central differences of a scalar function of one tensor argument.
inline std::vector<double> numeric_gradient(const std::function<double(const Tensor&)>& f,
                                            const Tensor& at, double h = 1e-5) {
  std::vector<double> g(at.numel());
  for (std::size_t i = 0; i < at.numel(); ++i) {
    const double x = at[i];
    g[i] = (f(with_value(at, i, x + h)) - f(with_value(at, i, x - h))) / (2.0 * h);
  }
  return g;
}

// Largest entrywise |a-b| / max(|a|, |b|, floor).
inline double max_rel_error(std::span<const double> a, std::span<const double> b,
                            double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), floor});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

inline std::vector<double> to_vector(const Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

// Small random architecture drawn from all six layer kinds. Even `variant`s
// are convolutional ([C,8,8] inputs), odd ones dense.
inline Network random_network(std::mt19937_64& rng, int variant) {
  std::uniform_int_distribution<std::size_t> width(2, 6);
  const std::uint64_t seed = rng();
  if (variant % 2 == 0) {
    const std::size_t c = width(rng) % 3 + 1;
    const std::size_t c1 = width(rng);
    const std::size_t c2 = width(rng);
    const std::size_t hidden = width(rng);
    Network net({c, 8, 8},
                {Conv2D{c, c1, 3}, ReLU{}, Conv2D{c1, c2, 3}, ReLU{}, MaxPool2D{2}, Dropout{0.2},
                 Flatten{}, Linear{c2 * 4, hidden}, ReLU{}, Linear{hidden, 3}},
                seed);
    return net;
  }
  const std::size_t in = width(rng) + 2;
  const std::size_t h1 = width(rng);
  const std::size_t h2 = width(rng);
  return Network({in},
                 {Linear{in, h1}, ReLU{}, Dropout{0.3}, Linear{h1, h2}, ReLU{}, Linear{h2, 4}},
                 seed);
}

// Random nonzero biases so the bias split is exercised.
inline void randomize_biases(Network& net, std::mt19937_64& rng) {
  for (Layer& l : net.layers()) {
    if (l.bias.defined()) l.bias = random_tensor(l.bias.shape(), rng, -0.5, 0.5);
  }
}

inline Tensor random_mask(const Shape& shape, std::mt19937_64& rng, double p = 0.5) {
  std::bernoulli_distribution in(p);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = in(rng) ? 1.0 : 0.0;
  return Tensor(shape, std::move(v));
}

inline Shape batched(std::size_t n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

}  // namespace cdep::testing
