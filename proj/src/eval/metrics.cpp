// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cdep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cdep {

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels) {
  if (predicted.size() != labels.size()) throw MetricError("accuracy: length mismatch");
  if (labels.empty()) throw MetricError("accuracy of an empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw MetricError("auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks (1-based) over tie blocks.
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        pos_rank_sum += rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("auc undefined: only one class present");
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double f1_score(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                std::size_t positive_class) {
  if (predicted.size() != labels.size()) throw MetricError("f1: length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predicted[i] == positive_class;
    const bool t = labels[i] == positive_class;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  if (logits.dim() != 2) throw MetricError("argmax_rows needs [N, C] logits");
  const std::size_t n = logits.size(0);
  const std::size_t c = logits.size(1);
  const auto v = logits.data();
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = v.subspan(i * c, c);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

EvalReport evaluate_logits(const Tensor& logits, std::span<const std::size_t> labels,
                           std::size_t positive_class, std::span<const std::size_t> groups,
                           const std::vector<std::string>& group_names, bool auc_required) {
  if (logits.dim() != 2 || logits.size(0) != labels.size()) {
    throw MetricError("evaluate: logits " + shape_str(logits.shape()) + " vs " +
                      std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw MetricError("evaluate on an empty dataset");
  const std::size_t n = labels.size();
  const std::size_t c = logits.size(1);
  if (positive_class >= c) throw MetricError("positive class out of range");
  EvalReport r;
  r.n = n;
  r.positive_class = positive_class;
  const auto pred = argmax_rows(logits);
  r.accuracy = accuracy(pred, labels);
  r.f1 = f1_score(pred, labels, positive_class);

  // Softmax probability of the positive class, plus mean cross-entropy.
  std::vector<double> score(n);
  std::vector<std::uint8_t> pos(n);
  double loss = 0.0;
  const auto v = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = v.subspan(i * c, c);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double x : row) z += std::exp(x - m);
    score[i] = std::exp(row[positive_class] - m) / z;
    loss += std::log(z) + m - row[labels[i]];
    pos[i] = labels[i] == positive_class;
  }
  r.loss = loss / static_cast<double>(n);
  const auto n_pos = static_cast<std::size_t>(std::count(pos.begin(), pos.end(), 1));
  if (n_pos > 0 && n_pos < n) {
    r.auc = auc(score, pos);
  } else if (auc_required) {
    throw MetricError("auc undefined: only one class present");
  }

  if (!groups.empty()) {
    if (groups.size() != n) throw MetricError("evaluate: group ids length mismatch");
    std::vector<GroupStats> stats(group_names.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (groups[i] >= stats.size()) throw MetricError("group id out of range");
      GroupStats& g = stats[groups[i]];
      ++g.n;
      if (labels[i] != positive_class) {
        if (pred[i] == positive_class) {
          ++g.false_positive;
        } else {
          ++g.true_negative;
        }
      }
    }
    for (std::size_t k = 0; k < stats.size(); ++k) {
      GroupStats& g = stats[k];
      const std::size_t negatives = g.false_positive + g.true_negative;
      if (negatives == 0) {
        ++r.omitted_groups;
        continue;
      }
      g.wcr = static_cast<double>(g.false_positive) / static_cast<double>(negatives);
      r.groups[group_names[k]] = g;
    }
  }
  return r;
}

Tensor predict_logits(const Network& net, const Tensor& inputs, std::size_t batch_size) {
  if (batch_size == 0) throw MetricError("batch size must be positive");
  NoGradGuard no_grad;
  const std::size_t n = inputs.size(0);
  std::vector<Tensor> parts;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t len = std::min(batch_size, n - start);
    std::vector<std::size_t> rows(len);
    std::iota(rows.begin(), rows.end(), start);
    parts.push_back(forward(net, gather_rows(inputs, rows)));
  }
  if (parts.size() == 1) return parts.front();
  return concat(parts, 0);
}

EvalReport evaluate(const Network& net, const LabeledDataset& data, std::size_t positive_class,
                    bool auc_required, std::size_t batch_size) {
  if (data.size() == 0) throw MetricError("evaluate on an empty dataset");
  const Tensor logits = predict_logits(net, data.inputs, batch_size);
  return evaluate_logits(logits, data.labels, positive_class, data.groups, data.group_names,
                         auc_required);
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = {{"n", r.n},
                      {"accuracy", r.accuracy},
                      {"f1", r.f1},
                      {"positive_class", r.positive_class},
                      {"loss", r.loss},
                      {"omitted_groups", r.omitted_groups}};
  j["auc"] = r.auc ? nlohmann::json(*r.auc) : nlohmann::json(nullptr);
  nlohmann::json g = nlohmann::json::object();
  for (const auto& [name, s] : r.groups) {
    g[name] = {{"n", s.n},
               {"false_positive", s.false_positive},
               {"true_negative", s.true_negative},
               {"wcr", s.wcr}};
  }
  j["groups"] = g;
  return j;
}

}  // namespace cdep
