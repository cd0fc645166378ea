// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cdep/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "tensor_internal.hpp"

namespace cdep {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kMulScalar: return "mul_scalar";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kGather: return "gather";
    case OpKind::kScatterAdd: return "scatter_add";
    case OpKind::kRelu: return "relu";
    case OpKind::kAbs: return "abs";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kSum: return "sum";
    case OpKind::kBroadcastTo: return "broadcast_to";
    case OpKind::kSumTo: return "sum_to";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kSliceScatter: return "slice_scatter";
    case OpKind::kBiasShare: return "bias_share";
  }
  return "unknown";
}

UnsupportedOpError::UnsupportedOpError(OpKind kind)
    : std::runtime_error("op '" + std::string(op_name(kind)) +
                         "' has no differentiable backward rule"),
      kind_(kind) {}

namespace memory {
namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

std::size_t current_bytes() { return g_current.load(); }
std::size_t peak_bytes() { return g_peak.load(); }
void reset_peak() { g_peak.store(g_current.load()); }

void note_alloc(std::size_t bytes) {
  const std::size_t now = g_current.fetch_add(bytes) + bytes;
  std::size_t peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}

void note_free(std::size_t bytes) { g_current.fetch_sub(bytes); }

}  // namespace memory

namespace {

thread_local bool t_grad_enabled = true;
std::atomic<std::uint64_t> g_seq{1};

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

EnableGradGuard::EnableGradGuard(bool enabled) : previous_(t_grad_enabled) {
  t_grad_enabled = enabled;
}
EnableGradGuard::~EnableGradGuard() { t_grad_enabled = previous_; }

std::uint64_t detail::next_seq() { return g_seq.fetch_add(1); }

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape) : Tensor(from_buffer(shape, Buffer(shape_numel(shape), 0.0))) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : Tensor(from_buffer(std::move(shape), Buffer(values.begin(), values.end()))) {}

Tensor Tensor::from_buffer(Shape shape, Buffer values) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->buffer = std::make_shared<Buffer>(std::move(values));
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_buffer(Shape{}, Buffer{value}); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return from_buffer(std::move(shape), Buffer(n, value));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("shape() on an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::numel() const { return impl_ ? impl_->buffer->size() : 0; }

std::span<const double> Tensor::data() const {
  if (!impl_) throw std::logic_error("data() on an undefined tensor");
  return {impl_->buffer->data(), impl_->buffer->size()};
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() needs a single-element tensor, got " +
                     shape_str(shape()));
  }
  return (*impl_->buffer)[0];
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw std::logic_error("mutable_data() on an undefined tensor");
  if (impl_->node) {
    throw std::logic_error("in-place update of a non-leaf tensor");
  }
  if (impl_->buffer.use_count() > 1) {
    impl_->buffer = std::make_shared<Buffer>(*impl_->buffer);
  }
  return {impl_->buffer->data(), impl_->buffer->size()};
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::is_leaf() const { return impl_ && !impl_->node; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!impl_) throw std::logic_error("set_requires_grad on an undefined tensor");
  if (impl_->node) {
    throw std::logic_error("set_requires_grad is only valid on leaf tensors");
  }
  impl_->requires_grad = value;
  if (value && impl_->seq == 0) impl_->seq = detail::next_seq();
  return *this;
}

Tensor Tensor::detach() const {
  if (!impl_) return {};
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->buffer = impl_->buffer;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  return from_buffer(impl_->shape, Buffer(*impl_->buffer));
}

Tensor detail::make_result(OpKind kind, Shape shape, Buffer values,
                           std::vector<Tensor> inputs, BackwardFn backward,
                           bool differentiable) {
  Tensor out = Tensor::from_buffer(std::move(shape), std::move(values));
  if (!t_grad_enabled) return out;
  const bool tracked = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
  if (!tracked) return out;
  auto& impl = *TensorAccess::impl(out);
  impl.requires_grad = true;
  impl.seq = next_seq();
  impl.node = std::make_unique<Node>();
  impl.node->kind = kind;
  impl.node->inputs = std::move(inputs);
  impl.node->backward = std::move(backward);
  impl.node->differentiable = differentiable;
  return out;
}

// ---------------------------------------------------------------------------
// Reverse mode

Tensor GradientMap::operator[](const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return it->second.second;
}

bool GradientMap::contains(const Tensor& t) const {
  return grads_.count(t.id()) != 0;
}

class Backprop {
 public:
  static GradientMap run(const Tensor& loss, const std::vector<Tensor>* wrt,
                         bool create_graph);
};

GradientMap Backprop::run(const Tensor& loss, const std::vector<Tensor>* wrt,
                          bool create_graph) {
  using detail::TensorImpl;
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  GradientMap result;
  if (!loss.requires_grad()) return result;

  // Reachable tracked tensors. Handles are kept so ids stay valid.
  std::vector<Tensor> order;
  std::unordered_map<const TensorImpl*, std::size_t> index;
  std::vector<Tensor> stack{loss};
  index.emplace(loss.id(), 0);
  order.push_back(loss);
  while (!stack.empty()) {
    Tensor t = std::move(stack.back());
    stack.pop_back();
    const auto* impl = TensorAccess::impl(t);
    if (!impl->node) continue;
    for (const Tensor& in : impl->node->inputs) {
      if (!in.requires_grad()) continue;
      if (index.emplace(in.id(), order.size()).second) {
        order.push_back(in);
        stack.push_back(in);
      }
    }
  }
  std::sort(order.begin(), order.end(), [](const Tensor& a, const Tensor& b) {
    return TensorAccess::impl(a)->seq < TensorAccess::impl(b)->seq;
  });

  std::unordered_map<const TensorImpl*, bool> is_target;
  if (wrt) {
    for (const Tensor& t : *wrt) {
      if (t.defined()) is_target[t.id()] = true;
    }
  } else {
    for (const Tensor& t : order) {
      if (t.is_leaf()) is_target[t.id()] = true;
    }
  }

  // A tensor is needed when some target lies upstream of it. Inputs always
  // carry a smaller sequence number than their consumers.
  std::unordered_map<const TensorImpl*, bool> needed;
  for (const Tensor& t : order) {
    const auto* impl = TensorAccess::impl(t);
    bool need = is_target.count(t.id()) != 0;
    if (!need && impl->node) {
      for (const Tensor& in : impl->node->inputs) {
        auto it = needed.find(in.id());
        if (it != needed.end() && it->second) {
          need = true;
          break;
        }
      }
    }
    needed[t.id()] = need;
  }

  EnableGradGuard mode(create_graph);
  std::unordered_map<const TensorImpl*, Tensor> grads;
  grads.emplace(loss.id(), Tensor::ones(loss.shape()));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Tensor& t = *it;
    if (!needed[t.id()]) continue;
    auto g_it = grads.find(t.id());
    if (g_it == grads.end()) continue;
    Tensor g = g_it->second;
    if (is_target.count(t.id())) result.grads_[t.id()] = {t, g};
    grads.erase(g_it);

    const auto* impl = TensorAccess::impl(t);
    if (!impl->node) continue;
    const detail::Node& node = *impl->node;
    std::vector<bool> needs(node.inputs.size());
    bool any = false;
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const Tensor& in = node.inputs[i];
      needs[i] = in.requires_grad() && needed[in.id()];
      any = any || needs[i];
    }
    if (!any) continue;
    if (create_graph && !node.differentiable) throw UnsupportedOpError(node.kind);
    std::vector<Tensor> input_grads = node.backward(g, needs);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (!needs[i] || !input_grads[i].defined()) continue;
      const Tensor& in = node.inputs[i];
      if (input_grads[i].shape() != in.shape()) {
        throw std::logic_error("backward of '" + std::string(op_name(node.kind)) +
                               "' produced gradient shape " +
                               shape_str(input_grads[i].shape()) + " for input " +
                               shape_str(in.shape()));
      }
      auto [slot, inserted] = grads.try_emplace(in.id(), input_grads[i]);
      if (!inserted) slot->second = add(slot->second, input_grads[i]);
    }
  }
  return result;
}

GradientMap backward(const Tensor& loss) {
  return Backprop::run(loss, nullptr, false);
}

GradientMap backward_as_graph(const Tensor& loss) {
  return Backprop::run(loss, nullptr, true);
}

std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& wrt,
                         bool create_graph) {
  GradientMap map = Backprop::run(loss, &wrt, create_graph);
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Tensor& t : wrt) out.push_back(map[t]);
  return out;
}

}  // namespace cdep
