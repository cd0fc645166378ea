// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cdep/rrr.hpp"

#include <stdexcept>
#include <variant>

namespace cdep {

LossReport rrr_loss(const Network& net, const Tensor& x, std::span<const std::size_t> labels,
                    const Tensor& masks, double lambda,
                    const std::vector<double>& class_weights, const DropoutMasks* dropout) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  for (const Layer& l : net.layers()) {
    if (std::holds_alternative<Conv2D>(l.spec)) throw UnsupportedOpError(OpKind::kConv2d);
  }
  Shape sample(x.shape().begin() + 1, x.shape().end());
  if (masks.shape() != sample && masks.shape() != x.shape()) {
    throw ShapeError("annotation mask " + shape_str(masks.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  // The penalty is itself an input gradient, so the forward pass is recorded
  // even inside a NoGradGuard; the result is detached again in that case.
  const bool tracking = grad_enabled();
  EnableGradGuard enable(true);
  Tensor input = x.detach();
  input.set_requires_grad(true);
  const Tensor logits = forward(net, input, dropout);
  const Tensor pred = cross_entropy(logits, labels, class_weights);
  const Tensor log_probs = sum_all(log_softmax(logits));
  const bool penalize = lambda > 0.0;
  const Tensor gx = grad(log_probs, {input}, /*create_graph=*/penalize)[0];
  const Tensor expl = sum_all(square(mul(gx, masks)));

  LossReport r;
  r.prediction_error = pred.item();
  r.explanation_error = expl.item();
  r.total = penalize ? add(pred, mul_scalar(expl, lambda)) : pred;
  if (!tracking) r.total = r.total.detach();
  r.total_value = r.total.item();
  return r;
}

}  // namespace cdep
