// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cdep/cd.hpp"

#include <memory>
#include <variant>

namespace cdep {

namespace {

// Adds the bias to (lb, lg) in proportion to |lb| and |lg|. The coverage
// fraction h breaks the tie when both are zero.
CDState split_bias(const Tensor& lb, const Tensor& lg, const Tensor& bias,
                   const Tensor& coverage) {
  const Tensor rest = add_scalar(neg(coverage), 1.0);
  return {bias_share(lb, lg, bias, coverage, kCdEpsilon),
          bias_share(lg, lb, bias, rest, kCdEpsilon), coverage};
}

}  // namespace

CDState cd_input(const Tensor& x, const FeatureGroup& group) {
  if (x.dim() == 0) throw ShapeError("cd_input: input needs a batch axis");
  const std::size_t n = x.size(0);
  Shape sample(x.shape().begin() + 1, x.shape().end());
  const Tensor& m = group.mask;
  if (m.shape() != sample && m.shape() != x.shape()) {
    throw ShapeError("feature group mask " + shape_str(m.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  CDState s;
  s.beta = mul(x, m);
  s.gamma = mul(x, add_scalar(neg(m), 1.0));
  std::vector<double> cov(n);
  const auto md = m.data();
  const std::size_t per = shape_numel(sample);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = m.shape() == sample ? 0 : i * per;
    double c = 0.0;
    for (std::size_t j = 0; j < per; ++j) c += md[off + j];
    cov[i] = per ? c / static_cast<double>(per) : 0.0;
  }
  s.coverage = Tensor({n}, std::move(cov));
  return s;
}

CDState cd_layer(const Layer& layer, const CDState& s, const Tensor* dropout_mask) {
  if (std::holds_alternative<Linear>(layer.spec)) {
    return split_bias(apply_linear(layer, s.beta, false), apply_linear(layer, s.gamma, false),
                      layer.bias, s.coverage);
  }
  if (std::holds_alternative<Conv2D>(layer.spec)) {
    return split_bias(apply_conv(layer, s.beta, false), apply_conv(layer, s.gamma, false),
                      layer.bias, s.coverage);
  }
  if (std::holds_alternative<ReLU>(layer.spec)) {
    Tensor rb = relu(s.beta);
    Tensor rg = sub(relu(add(s.beta, s.gamma)), rb);
    return {rb, rg, s.coverage};
  }
  if (const auto* p = std::get_if<MaxPool2D>(&layer.spec)) {
    std::shared_ptr<const std::vector<std::size_t>> idx;
    {
      NoGradGuard no_grad;
      idx = std::make_shared<const std::vector<std::size_t>>(
          max_pool_indices(add(s.beta, s.gamma), p->k));
    }
    const Shape& in = s.beta.shape();
    const Shape out{in[0], in[1], in[2] / p->k, in[3] / p->k};
    return {gather(s.beta, idx, out), gather(s.gamma, idx, out), s.coverage};
  }
  if (std::holds_alternative<Dropout>(layer.spec)) {
    if (dropout_mask && dropout_mask->defined()) {
      return {mul(s.beta, *dropout_mask), mul(s.gamma, *dropout_mask), s.coverage};
    }
    return s;
  }
  // Flatten
  Shape out{s.beta.size(0)};
  out.insert(out.end(), layer.out_shape.begin(), layer.out_shape.end());
  return {reshape(s.beta, out), reshape(s.gamma, out), s.coverage};
}

CDState cd_range(const Network& net, CDState state, std::size_t from, std::size_t to,
                 const DropoutMasks* masks) {
  for (std::size_t i = from; i < to; ++i) {
    const Tensor* m = masks ? &(*masks)[i] : nullptr;
    state = cd_layer(net.layers()[i], state, m);
  }
  return state;
}

CDLogits cd_forward(const Network& net, const Tensor& x, const FeatureGroup& group,
                    const DropoutMasks* masks) {
  Shape expect{x.dim() ? x.size(0) : 0};
  expect.insert(expect.end(), net.input_shape().begin(), net.input_shape().end());
  if (x.shape() != expect) {
    throw ShapeError("cd_forward: input " + shape_str(x.shape()) + " does not match " +
                     shape_str(expect));
  }
  CDState s = cd_range(net, cd_input(x, group), 0, net.size(), masks);
  return {s.beta, s.gamma};
}

CDState cd_frozen_prefix(const Network& net, const Tensor& x, const FeatureGroup& group) {
  NoGradGuard no_grad;
  return cd_range(net, cd_input(x, group), 0, net.frozen_prefix());
}

CDLogits cd_from_boundary(const Network& net, const CDState& boundary,
                          const DropoutMasks* masks) {
  CDState s = cd_range(net, boundary, net.frozen_prefix(), net.size(), masks);
  return {s.beta, s.gamma};
}

}  // namespace cdep
