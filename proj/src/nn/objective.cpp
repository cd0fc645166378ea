// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cdep/objective.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <stdexcept>

namespace cdep {

namespace {

Tensor scores_of(const CDLogits& cd, ScoreMode mode) {
  switch (mode) {
    case ScoreMode::kRawLogit:
      return cd.beta;
    case ScoreMode::kSoftmax:
      return softmax(cd.beta);
    case ScoreMode::kShare: {
      const std::size_t n = cd.beta.size(0);
      const std::size_t c = cd.beta.size(1);
      const Tensor pair = concat({reshape(cd.beta, {n, c, 1}), reshape(cd.gamma, {n, c, 1})}, 2);
      return reshape(slice(softmax(pair), 2, 0, 1), {n, c});
    }
  }
  throw std::logic_error("unknown score mode");
}

void validate(const ExplanationTarget& t, std::size_t n_classes) {
  if (t.mode == TargetMode::kBoost && !(t.margin > 0.0)) {
    throw std::invalid_argument("boost target needs margin > 0, got " + std::to_string(t.margin));
  }
  if (t.mode == TargetMode::kMatch && t.match.size() != n_classes) {
    throw std::invalid_argument("match target has " + std::to_string(t.match.size()) +
                                " values for " + std::to_string(n_classes) + " classes");
  }
  if (t.class_index && *t.class_index >= n_classes) {
    throw std::invalid_argument("target class " + std::to_string(*t.class_index) +
                                " out of range");
  }
}

void check_mask(const Tensor& mask, const Shape& input_shape) {
  Shape sample(input_shape.begin() + 1, input_shape.end());
  if (mask.shape() != sample && mask.shape() != input_shape) {
    throw ShapeError("target mask " + shape_str(mask.shape()) + " does not match input " +
                     shape_str(input_shape));
  }
}

// Explanation error summed over samples and targets, divided by N * T.
Tensor mean_explanation(const Network& net, const std::vector<ExplanationTarget>& targets,
                        const std::vector<CDState>& starts, std::size_t from,
                        std::size_t n, const LossOptions& opts) {
  Tensor acc = Tensor::scalar(0.0);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    CDState s = cd_range(net, starts[t], from, net.size(), opts.dropout);
    acc = add(acc, sum_all(explanation_error({s.beta, s.gamma}, targets[t], opts.score_mode)));
  }
  return mul_scalar(acc, 1.0 / static_cast<double>(n * targets.size()));
}

LossReport assemble(const Tensor& pred, const std::function<Tensor()>& expl_fn,
                    bool has_targets, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  LossReport r;
  r.prediction_error = pred.item();
  if (!has_targets) {
    r.total = pred;
  } else if (lambda == 0.0) {
    NoGradGuard no_grad;
    r.explanation_error = expl_fn().item();
    r.total = pred;
  } else {
    const Tensor expl = expl_fn();
    r.explanation_error = expl.item();
    r.total = add(pred, mul_scalar(expl, lambda));
  }
  r.total_value = r.total.item();
  return r;
}

}  // namespace

std::string score_mode_name(ScoreMode mode) {
  switch (mode) {
    case ScoreMode::kRawLogit: return "raw";
    case ScoreMode::kSoftmax: return "softmax";
    case ScoreMode::kShare: return "share";
  }
  return "unknown";
}

ScoreMode parse_score_mode(const std::string& name) {
  if (name == "raw") return ScoreMode::kRawLogit;
  if (name == "softmax") return ScoreMode::kSoftmax;
  if (name == "share") return ScoreMode::kShare;
  throw std::invalid_argument("unknown score mode '" + name + "' (raw, softmax, share)");
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                     const std::vector<double>& class_weights) {
  if (logits.dim() != 2 || logits.size(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.size(0);
  const std::size_t c = logits.size(1);
  auto idx = std::make_shared<std::vector<std::size_t>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " out of range");
    }
    (*idx)[i] = i * c + labels[i];
  }
  const Tensor nll = neg(gather(log_softmax(logits), idx, {n}));
  const bool uniform =
      class_weights.empty() ||
      std::all_of(class_weights.begin(), class_weights.end(),
                  [&](double w) { return w == class_weights.front(); });
  if (uniform) return mean_all(nll);
  if (class_weights.size() != c) {
    throw std::invalid_argument("class_weights has " + std::to_string(class_weights.size()) +
                                " entries for " + std::to_string(c) + " classes");
  }
  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = class_weights[labels[i]];
    total += w[i];
  }
  return mul_scalar(sum_all(mul(nll, Tensor({n}, std::move(w)))), 1.0 / total);
}

Tensor explanation_error(const CDLogits& cd, const ExplanationTarget& target, ScoreMode mode) {
  const std::size_t c = cd.beta.size(1);
  validate(target, c);
  Tensor scores = target.mode == TargetMode::kBoost ? cd.beta : scores_of(cd, mode);
  if (target.class_index) scores = slice(scores, 1, *target.class_index, 1);
  const std::size_t width = scores.size(1);
  switch (target.mode) {
    case TargetMode::kSuppress: {
      if (mode == ScoreMode::kSoftmax) {
        return l1_norm(add_scalar(scores, -1.0 / static_cast<double>(c)), 1);
      }
      return l1_norm(scores, 1);
    }
    case TargetMode::kMatch: {
      std::vector<double> m = target.match;
      if (target.class_index) m = {target.match[*target.class_index]};
      return l1_norm(sub(scores, Tensor({width}, std::move(m))), 1);
    }
    case TargetMode::kBoost:
      return sum(relu(add_scalar(neg(abs(scores)), target.margin)), {1});
  }
  throw std::logic_error("unknown target mode");
}

LossReport cdep_loss(const Network& net, const Tensor& x, std::span<const std::size_t> labels,
                     const std::vector<ExplanationTarget>& targets, const LossOptions& opts) {
  const Tensor logits = forward(net, x, opts.dropout);
  const Tensor pred = cross_entropy(logits, labels, opts.class_weights);
  for (const auto& t : targets) check_mask(t.group.mask, x.shape());
  return assemble(
      pred,
      [&]() {
        std::vector<CDState> starts;
        starts.reserve(targets.size());
        for (const auto& t : targets) starts.push_back(cd_input(x, t.group));
        return mean_explanation(net, targets, starts, 0, x.size(0), opts);
      },
      !targets.empty(), opts.lambda);
}

LossReport cdep_loss_from_boundary(const Network& net, const Tensor& boundary_x,
                                   std::span<const std::size_t> labels,
                                   const std::vector<ExplanationTarget>& targets,
                                   const std::vector<CDState>& states,
                                   const LossOptions& opts) {
  if (states.size() != targets.size()) {
    throw std::invalid_argument("one cached state per target required");
  }
  const Tensor logits =
      forward_range(net, boundary_x, net.frozen_prefix(), net.size(), opts.dropout);
  const Tensor pred = cross_entropy(logits, labels, opts.class_weights);
  return assemble(
      pred,
      [&]() {
        return mean_explanation(net, targets, states, net.frozen_prefix(), boundary_x.size(0),
                                opts);
      },
      !targets.empty(), opts.lambda);
}

std::vector<ExplanationTarget> make_suppress_targets(const Tensor& masks) {
  ExplanationTarget t;
  t.group.mask = masks;
  t.mode = TargetMode::kSuppress;
  return {t};
}

std::vector<ExplanationTarget> sample_pixel_targets(std::span<const double> distribution,
                                                    const Shape& input_shape, std::size_t k,
                                                    Rng& rng) {
  if (input_shape.size() != 3) {
    throw ShapeError("pixel targets need a [C,H,W] input, got " + shape_str(input_shape));
  }
  const std::size_t hw = input_shape[1] * input_shape[2];
  if (distribution.size() != hw) {
    throw std::invalid_argument("pixel distribution has " + std::to_string(distribution.size()) +
                                " entries for " + std::to_string(hw) + " locations");
  }
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  std::vector<double> cdf(hw);
  double acc = 0.0;
  for (std::size_t i = 0; i < hw; ++i) {
    if (distribution[i] < 0.0) throw std::invalid_argument("negative pixel probability");
    acc += distribution[i];
    cdf[i] = acc;
  }
  if (!(acc > 0.0)) throw std::invalid_argument("pixel distribution has no mass");
  std::vector<ExplanationTarget> out;
  out.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double u = uniform01(rng) * acc;
    std::size_t loc = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) -
                                               cdf.begin());
    loc = std::min(loc, hw - 1);
    while (distribution[loc] == 0.0 && loc > 0) --loc;
    std::vector<double> m(shape_numel(input_shape), 0.0);
    for (std::size_t ch = 0; ch < input_shape[0]; ++ch) m[ch * hw + loc] = 1.0;
    ExplanationTarget t;
    t.group.mask = Tensor(input_shape, std::move(m));
    out.push_back(std::move(t));
  }
  return out;
}

ExplanationTarget make_boost_target(const std::vector<std::size_t>& columns,
                                    std::size_t n_features, double margin) {
  if (columns.empty()) throw std::invalid_argument("boost target needs at least one column");
  if (!(margin > 0.0)) {
    throw std::invalid_argument("boost target needs margin > 0, got " + std::to_string(margin));
  }
  std::vector<double> m(n_features, 0.0);
  for (std::size_t c : columns) {
    if (c >= n_features) throw std::invalid_argument("boost column out of range");
    m[c] = 1.0;
  }
  ExplanationTarget t;
  t.group.mask = Tensor({n_features}, std::move(m));
  t.mode = TargetMode::kBoost;
  t.margin = margin;
  return t;
}

}  // namespace cdep
