// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense f64 tensors with a reverse-mode autodiff tape.
//
// A Tensor is a cheap handle to an immutable buffer plus, when gradient
// tracking is active, the graph node that produced it. Every backward rule
// is written in terms of the public ops below, so running a rule with
// tracking enabled yields a differentiable gradient (double backprop). The
// one exception is conv2d, whose backward is a raw kernel.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cdep {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kAddScalar,
  kMulScalar,
  kMatmul,
  kTranspose,
  kConv2d,
  kGather,
  kScatterAdd,
  kRelu,
  kAbs,
  kLog,
  kExp,
  kSum,
  kBroadcastTo,
  kSumTo,
  kSoftmax,
  kLogSoftmax,
  kReshape,
  kConcat,
  kSlice,
  kSliceScatter,
  kBiasShare,
};

std::string_view op_name(OpKind kind);

// Raised when a gradient graph is requested through an op whose backward
// rule is not itself differentiable.
class UnsupportedOpError : public std::runtime_error {
 public:
  explicit UnsupportedOpError(OpKind kind);
  OpKind kind() const { return kind_; }

 private:
  OpKind kind_;
};

namespace memory {

// Bytes currently held by tensor buffers, and the high-water mark since the
// last reset_peak().
std::size_t current_bytes();
std::size_t peak_bytes();
void reset_peak();

void note_alloc(std::size_t bytes);
void note_free(std::size_t bytes);

template <class T>
struct CountingAllocator {
  using value_type = T;
  CountingAllocator() = default;
  template <class U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    note_alloc(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    note_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }
  template <class U>
  bool operator==(const CountingAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace memory

using Buffer = std::vector<double, memory::CountingAllocator<double>>;

namespace detail {
struct TensorImpl;
struct Node;
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> values);
  static Tensor from_buffer(Shape shape, Buffer values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const;

  std::span<const double> data() const;
  double operator[](std::size_t i) const { return data()[i]; }
  // Only valid on scalars (any shape with one element).
  double item() const;

  // Copy-on-write access for in-place updates of untracked or leaf tensors.
  std::span<double> mutable_data();

  bool requires_grad() const;
  // Marks a leaf as a gradient target. Throws on non-leaf tensors.
  Tensor& set_requires_grad(bool value = true);
  bool is_leaf() const;
  // Same buffer, no graph history.
  Tensor detach() const;
  // Deep copy of the values, no graph history.
  Tensor clone() const;

  const detail::TensorImpl* id() const { return impl_.get(); }

 private:
  friend struct TensorAccess;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Thread-local switch for graph recording.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class EnableGradGuard {
 public:
  explicit EnableGradGuard(bool enabled);
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

// ---------------------------------------------------------------------------
// Ops. Binary elementwise ops broadcast numpy-style (right-aligned).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
// a / (b + eps), eps added unconditionally.
Tensor div_eps(const Tensor& a, const Tensor& b, double eps);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);

// 2-D only: [m,k] x [k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// x: [N,C,H,W], w: [O,C,k,k] -> [N,O,H-k+1,W-k+1]. Valid padding, stride 1.
Tensor conv2d(const Tensor& x, const Tensor& w);

// Flat input index of the maximum in each k x k window (stride k) of an
// [N,C,H,W] tensor; ties go to the lowest linear index. H and W must be
// multiples of k.
std::vector<std::size_t> max_pool_indices(const Tensor& x, std::size_t k);
Tensor max_pool2d(const Tensor& x, std::size_t k);

// out.flat[i] = a.flat[indices[i]]
Tensor gather(const Tensor& a, std::shared_ptr<const std::vector<std::size_t>> indices,
              Shape out_shape);
// out.flat[indices[i]] += a.flat[i], out zero-initialized with out_shape.
Tensor scatter_add(const Tensor& a,
                   std::shared_ptr<const std::vector<std::size_t>> indices,
                   Shape out_shape);
// 1-D tensor of the entries where mask is nonzero (mask has a's shape).
Tensor masked_select(const Tensor& a, std::span<const std::uint8_t> mask);

Tensor sum(const Tensor& a, std::vector<std::size_t> axes, bool keepdim = false);
Tensor sum_all(const Tensor& a);
Tensor mean(const Tensor& a, std::vector<std::size_t> axes, bool keepdim = false);
Tensor mean_all(const Tensor& a);
// Sum of |a| along one axis.
Tensor l1_norm(const Tensor& a, std::size_t axis, bool keepdim = false);

Tensor broadcast_to(const Tensor& a, const Shape& shape);
// Reduces a broadcast result back to `shape`.
Tensor sum_to(const Tensor& a, const Shape& shape);

// own + bias * (|own| + eps*h) / (|own| + |other| + eps) for own, other of
// shape [N, C, ...], bias [C] broadcast over the trailing axes, and a
// per-sample weight h [N] treated as a constant. Raw backward.
Tensor bias_share(const Tensor& own, const Tensor& other, const Tensor& bias, const Tensor& h,
                  double eps);

Tensor softmax(const Tensor& a);      // over the last axis
Tensor log_softmax(const Tensor& a);  // over the last axis

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
// Zero tensor of `shape` with `a` written at [start, start+len) along axis.
Tensor slice_scatter(const Tensor& a, const Shape& shape, std::size_t axis,
                     std::size_t start);

// ---------------------------------------------------------------------------
// Reverse mode.

class GradientMap {
 public:
  // Gradient for `t`; zeros of t's shape when t was unreachable.
  Tensor operator[](const Tensor& t) const;
  bool contains(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Backprop;
  std::unordered_map<const detail::TensorImpl*, std::pair<Tensor, Tensor>> grads_;
};

// Gradients of a scalar loss with respect to every leaf that requires grad.
GradientMap backward(const Tensor& loss);
// Same, but the returned gradients carry their own graph so they can be
// differentiated again.
GradientMap backward_as_graph(const Tensor& loss);
// Gradients of a scalar with respect to specific tensors (leaf or not).
std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& wrt,
                         bool create_graph = false);

}  // namespace cdep
