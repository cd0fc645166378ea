// Copyright 2026 The CDEP Authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "cdep/tensor.hpp"
#include "tensor_internal.hpp"

namespace cdep {

using detail::make_result;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    const std::size_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const std::size_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                       shape_str(b) + " do not broadcast");
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Row-major strides of `in` laid against `out` (right-aligned); broadcast
// dimensions get stride 0.
std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
  const std::size_t nd = out.size();
  std::vector<std::size_t> strides(nd, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = nd - 1 - k;
    strides[o] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

// Calls fn(out_flat, a_flat, b_flat) for every element of `out`, walking the
// innermost axis in a tight loop.
template <class F>
void for_each_pair(const Shape& out, const std::vector<std::size_t>& sa,
                   const std::vector<std::size_t>& sb, F&& fn) {
  const std::size_t total = shape_numel(out);
  if (total == 0) return;
  if (out.empty()) {
    fn(0, 0, 0);
    return;
  }
  const std::size_t nd = out.size();
  const std::size_t inner = out[nd - 1];
  const std::size_t ia_step = sa[nd - 1];
  const std::size_t ib_step = sb[nd - 1];
  std::vector<std::size_t> idx(nd, 0);
  std::size_t base_a = 0;
  std::size_t base_b = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) {
      fn(o + j, base_a + j * ia_step, base_b + j * ib_step);
    }
    for (std::size_t d = nd - 1; d-- > 0;) {
      ++idx[d];
      base_a += sa[d];
      base_b += sb[d];
      if (idx[d] < out[d]) break;
      base_a -= sa[d] * idx[d];
      base_b -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
}

template <class F>
Buffer binary_kernel(const Tensor& a, const Tensor& b, const Shape& out, F f) {
  Buffer dst(shape_numel(out));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = f(pa[i], pb[i]);
  } else if (b.numel() == 1 && a.shape() == out) {
    const double vb = pb[0];
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = f(pa[i], vb);
  } else if (a.numel() == 1 && b.shape() == out) {
    const double va = pa[0];
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = f(va, pb[i]);
  } else {
    for_each_pair(out, aligned_strides(a.shape(), out), aligned_strides(b.shape(), out),
                  [&](std::size_t o, std::size_t ia, std::size_t ib) {
                    dst[o] = f(pa[ia], pb[ib]);
                  });
  }
  return dst;
}

template <class F>
Buffer unary_kernel(const Tensor& a, F f) {
  Buffer dst(a.numel());
  const double* pa = a.data().data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = f(pa[i]);
  return dst;
}

Shape right_align(const Shape& shape, std::size_t nd) {
  Shape out(nd - shape.size(), 1);
  out.insert(out.end(), shape.begin(), shape.end());
  return out;
}

bool broadcastable_to(const Shape& from, const Shape& to) {
  if (from.size() > to.size()) return false;
  const Shape aligned = right_align(from, to.size());
  for (std::size_t i = 0; i < to.size(); ++i) {
    if (aligned[i] != 1 && aligned[i] != to[i]) return false;
  }
  return true;
}

Buffer raw_broadcast(const Tensor& a, const Shape& out) {
  Buffer dst(shape_numel(out));
  const double* pa = a.data().data();
  const std::vector<std::size_t> zero(out.size(), 0);
  for_each_pair(out, aligned_strides(a.shape(), out), zero,
                [&](std::size_t o, std::size_t ia, std::size_t) { dst[o] = pa[ia]; });
  return dst;
}

// Sums `a` down to `target` (target broadcasts to a's shape).
Buffer raw_sum_to(const Tensor& a, const Shape& target) {
  Buffer dst(shape_numel(target), 0.0);
  const double* pa = a.data().data();
  const std::vector<std::size_t> zero(a.shape().size(), 0);
  const auto st = aligned_strides(target, a.shape());
  for_each_pair(a.shape(), st, zero,
                [&](std::size_t o, std::size_t it, std::size_t) { dst[it] += pa[o]; });
  return dst;
}

Tensor step_mask(const Tensor& a) {
  return Tensor::from_buffer(a.shape(), unary_kernel(a, [](double v) { return v > 0.0 ? 1.0 : 0.0; }));
}

Tensor sign_mask(const Tensor& a) {
  return Tensor::from_buffer(a.shape(), unary_kernel(a, [](double v) {
                  return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                }));
}

void check_axis(const Tensor& a, std::size_t axis, std::string_view op) {
  if (axis >= a.dim()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(a.shape()));
  }
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape(), "add");
  Buffer v = binary_kernel(a, b, out, [](double x, double y) { return x + y; });
  return make_result(OpKind::kAdd, out, std::move(v), {a, b},
                     [sa = a.shape(), sb = b.shape()](const Tensor& g,
                                                      const std::vector<bool>& needs) {
                       return std::vector<Tensor>{needs[0] ? sum_to(g, sa) : Tensor(),
                                                  needs[1] ? sum_to(g, sb) : Tensor()};
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape(), "sub");
  Buffer v = binary_kernel(a, b, out, [](double x, double y) { return x - y; });
  return make_result(OpKind::kSub, out, std::move(v), {a, b},
                     [sa = a.shape(), sb = b.shape()](const Tensor& g,
                                                      const std::vector<bool>& needs) {
                       return std::vector<Tensor>{
                           needs[0] ? sum_to(g, sa) : Tensor(),
                           needs[1] ? sum_to(neg(g), sb) : Tensor()};
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape(), "mul");
  Buffer v = binary_kernel(a, b, out, [](double x, double y) { return x * y; });
  return make_result(OpKind::kMul, out, std::move(v), {a, b},
                     [a, b](const Tensor& g, const std::vector<bool>& needs) {
                       return std::vector<Tensor>{
                           needs[0] ? sum_to(mul(g, b), a.shape()) : Tensor(),
                           needs[1] ? sum_to(mul(g, a), b.shape()) : Tensor()};
                     });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape(), "div");
  Buffer v = binary_kernel(a, b, out, [](double x, double y) { return x / y; });
  return make_result(OpKind::kDiv, out, std::move(v), {a, b},
                     [a, b](const Tensor& g, const std::vector<bool>& needs) {
                       Tensor ga, gb;
                       if (needs[0]) ga = sum_to(div(g, b), a.shape());
                       if (needs[1]) {
                         gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape());
                       }
                       return std::vector<Tensor>{ga, gb};
                     });
}

Tensor div_eps(const Tensor& a, const Tensor& b, double eps) {
  return div(a, add_scalar(b, eps));
}

Tensor add_scalar(const Tensor& a, double s) {
  Buffer v = unary_kernel(a, [s](double x) { return x + s; });
  return make_result(OpKind::kAddScalar, a.shape(), std::move(v), {a},
                     [](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{g};
                     });
}

Tensor mul_scalar(const Tensor& a, double s) {
  Buffer v = unary_kernel(a, [s](double x) { return x * s; });
  return make_result(OpKind::kMulScalar, a.shape(), std::move(v), {a},
                     [s](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{mul_scalar(g, s)};
                     });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor relu(const Tensor& a) {
  Buffer v = unary_kernel(a, [](double x) { return x > 0.0 ? x : 0.0; });
  return make_result(OpKind::kRelu, a.shape(), std::move(v), {a},
                     [a](const Tensor& g, const std::vector<bool>&) {
                       // Subgradient 0 at the kink.
                       return std::vector<Tensor>{mul(g, step_mask(a))};
                     });
}

Tensor abs(const Tensor& a) {
  Buffer v = unary_kernel(a, [](double x) { return std::fabs(x); });
  return make_result(OpKind::kAbs, a.shape(), std::move(v), {a},
                     [a](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{mul(g, sign_mask(a))};
                     });
}

Tensor log(const Tensor& a) {
  Buffer v = unary_kernel(a, [](double x) { return std::log(x); });
  return make_result(OpKind::kLog, a.shape(), std::move(v), {a},
                     [a](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{div(g, a)};
                     });
}

Tensor exp(const Tensor& a) {
  Buffer v = unary_kernel(a, [](double x) { return std::exp(x); });
  return make_result(OpKind::kExp, a.shape(), std::move(v), {a},
                     [a](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{mul(g, exp(a))};
                     });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
    throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not compatible");
  }
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  Buffer v(m * n);
  MutMap out(v.data(), m, n);
  if (k == 0) {
    out.setZero();
  } else {
    out.noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  }
  return make_result(OpKind::kMatmul, {m, n}, std::move(v), {a, b},
                     [a, b](const Tensor& g, const std::vector<bool>& needs) {
                       return std::vector<Tensor>{
                           needs[0] ? matmul(g, transpose(b)) : Tensor(),
                           needs[1] ? matmul(transpose(a), g) : Tensor()};
                     });
}

Tensor transpose(const Tensor& a) {
  if (a.dim() != 2) {
    throw ShapeError("transpose: expected a 2-D tensor, got " + shape_str(a.shape()));
  }
  const std::size_t m = a.size(0), n = a.size(1);
  Buffer v(m * n);
  MutMap(v.data(), n, m) = ConstMap(a.data().data(), m, n).transpose();
  return make_result(OpKind::kTranspose, {n, m}, std::move(v), {a},
                     [](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{transpose(g)};
                     });
}

namespace {

// cols[(c*k + ki)*k + kj, oh*ow_n + ow] = x[c, oh+ki, ow+kj]
void im2col(const double* x, std::size_t c_in, std::size_t h, std::size_t w,
            std::size_t k, double* cols) {
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = cols + ((c * k + ki) * k + kj) * oh * ow;
        const double* src = x + c * h * w + ki * w + kj;
        for (std::size_t i = 0; i < oh; ++i) {
          std::copy(src + i * w, src + i * w + ow, row + i * ow);
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t c_in, std::size_t h, std::size_t w,
                std::size_t k, double* x) {
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = cols + ((c * k + ki) * k + kj) * oh * ow;
        double* dst = x + c * h * w + ki * w + kj;
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) dst[i * w + j] += row[i * ow + j];
        }
      }
    }
  }
}

struct ConvDims {
  std::size_t n, c, h, w, o, k, oh, ow;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws) {
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1] || ws[2] != ws[3] ||
      xs[2] < ws[2] || xs[3] < ws[3]) {
    throw ShapeError("conv2d: input " + shape_str(xs) + " and weight " + shape_str(ws) +
                     " are not compatible");
  }
  return {xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], xs[2] - ws[2] + 1, xs[3] - ws[2] + 1};
}

}  // namespace

namespace {

// Samples per im2col block; bounds the scratch matrix at a few tens of MB.
constexpr std::size_t kConvBlock = 64;

// Columns of samples [n0, n0 + nb) side by side: cols[patch, nb * pix].
void im2col_block(const double* x, const ConvDims& d, std::size_t n0, std::size_t nb,
                  std::vector<double>& cols, std::vector<double>& one) {
  const std::size_t patch = d.c * d.k * d.k;
  const std::size_t pix = d.oh * d.ow;
  cols.resize(patch * nb * pix);
  one.resize(patch * pix);
  for (std::size_t b = 0; b < nb; ++b) {
    im2col(x + (n0 + b) * d.c * d.h * d.w, d.c, d.h, d.w, d.k, one.data());
    for (std::size_t r = 0; r < patch; ++r) {
      std::copy_n(one.data() + r * pix, pix, cols.data() + r * nb * pix + b * pix);
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w) {
  const ConvDims d = conv_dims(x.shape(), w.shape());
  const std::size_t patch = d.c * d.k * d.k;
  const std::size_t pix = d.oh * d.ow;
  Buffer v(d.n * d.o * pix);
  std::vector<double> cols, one, out;
  ConstMap wm(w.data().data(), d.o, patch);
  for (std::size_t n0 = 0; n0 < d.n; n0 += kConvBlock) {
    const std::size_t nb = std::min(kConvBlock, d.n - n0);
    im2col_block(x.data().data(), d, n0, nb, cols, one);
    out.resize(d.o * nb * pix);
    MutMap(out.data(), d.o, nb * pix).noalias() = wm * ConstMap(cols.data(), patch, nb * pix);
    // [o, nb, pix] -> [nb, o, pix]
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t o = 0; o < d.o; ++o) {
        std::copy_n(out.data() + (o * nb + b) * pix, pix, v.data() + ((n0 + b) * d.o + o) * pix);
      }
    }
  }
  return make_result(
      OpKind::kConv2d, {d.n, d.o, d.oh, d.ow}, std::move(v), {x, w},
      [x, w, d](const Tensor& g, const std::vector<bool>& needs) {
        // Raw kernel; the engine refuses this node when a graph is requested.
        const std::size_t patch = d.c * d.k * d.k;
        const std::size_t pix = d.oh * d.ow;
        Buffer gx(needs[0] ? d.n * d.c * d.h * d.w : 0, 0.0);
        Buffer gw(needs[1] ? d.o * patch : 0, 0.0);
        std::vector<double> cols, one, gperm;
        ConstMap wm(w.data().data(), d.o, patch);
        for (std::size_t n0 = 0; n0 < d.n; n0 += kConvBlock) {
          const std::size_t nb = std::min(kConvBlock, d.n - n0);
          gperm.resize(d.o * nb * pix);
          for (std::size_t b = 0; b < nb; ++b) {
            for (std::size_t o = 0; o < d.o; ++o) {
              std::copy_n(g.data().data() + ((n0 + b) * d.o + o) * pix, pix,
                          gperm.data() + (o * nb + b) * pix);
            }
          }
          ConstMap gm(gperm.data(), d.o, nb * pix);
          if (needs[1]) {
            im2col_block(x.data().data(), d, n0, nb, cols, one);
            MutMap(gw.data(), d.o, patch).noalias() +=
                gm * ConstMap(cols.data(), patch, nb * pix).transpose();
          }
          if (needs[0]) {
            cols.resize(patch * nb * pix);
            MutMap(cols.data(), patch, nb * pix).noalias() = wm.transpose() * gm;
            one.resize(patch * pix);
            for (std::size_t b = 0; b < nb; ++b) {
              for (std::size_t r = 0; r < patch; ++r) {
                std::copy_n(cols.data() + r * nb * pix + b * pix, pix, one.data() + r * pix);
              }
              col2im_add(one.data(), d.c, d.h, d.w, d.k, gx.data() + (n0 + b) * d.c * d.h * d.w);
            }
          }
        }
        return std::vector<Tensor>{
            needs[0] ? Tensor::from_buffer(x.shape(), std::move(gx)) : Tensor(),
            needs[1] ? Tensor::from_buffer(w.shape(), std::move(gw)) : Tensor()};
      },
      /*differentiable=*/false);
}

// ---------------------------------------------------------------------------
// Indexing

std::vector<std::size_t> max_pool_indices(const Tensor& x, std::size_t k) {
  if (x.dim() != 4 || k == 0 || x.size(2) % k != 0 || x.size(3) % k != 0) {
    throw ShapeError("max_pool2d: window " + std::to_string(k) +
                     " does not tile input " + shape_str(x.shape()));
  }
  const std::size_t planes = x.size(0) * x.size(1);
  const std::size_t h = x.size(2), w = x.size(3);
  const std::size_t oh = h / k, ow = w / k;
  std::vector<std::size_t> idx(planes * oh * ow);
  const double* p = x.data().data();
  std::size_t o = 0;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const std::size_t base = pl * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = base + i * k * w + j * k;
        for (std::size_t di = 0; di < k; ++di) {
          for (std::size_t dj = 0; dj < k; ++dj) {
            const std::size_t at = base + (i * k + di) * w + j * k + dj;
            if (p[at] > p[best]) best = at;  // strict: ties keep the lowest index
          }
        }
        idx[o++] = best;
      }
    }
  }
  return idx;
}

Tensor max_pool2d(const Tensor& x, std::size_t k) {
  auto idx = std::make_shared<const std::vector<std::size_t>>(max_pool_indices(x, k));
  return gather(x, std::move(idx), {x.size(0), x.size(1), x.size(2) / k, x.size(3) / k});
}

Tensor gather(const Tensor& a, std::shared_ptr<const std::vector<std::size_t>> indices,
              Shape out_shape) {
  if (shape_numel(out_shape) != indices->size()) {
    throw ShapeError("gather: " + std::to_string(indices->size()) +
                     " indices for output shape " + shape_str(out_shape));
  }
  Buffer v(indices->size());
  const double* p = a.data().data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t at = (*indices)[i];
    if (at >= n) throw ShapeError("gather: index out of range for " + shape_str(a.shape()));
    v[i] = p[at];
  }
  return make_result(OpKind::kGather, std::move(out_shape), std::move(v), {a},
                     [indices, sa = a.shape()](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{scatter_add(g, indices, sa)};
                     });
}

Tensor scatter_add(const Tensor& a, std::shared_ptr<const std::vector<std::size_t>> indices,
                   Shape out_shape) {
  if (a.numel() != indices->size()) {
    throw ShapeError("scatter_add: " + std::to_string(indices->size()) +
                     " indices for source shape " + shape_str(a.shape()));
  }
  Buffer v(shape_numel(out_shape), 0.0);
  const double* p = a.data().data();
  for (std::size_t i = 0; i < indices->size(); ++i) {
    const std::size_t at = (*indices)[i];
    if (at >= v.size()) {
      throw ShapeError("scatter_add: index out of range for " + shape_str(out_shape));
    }
    v[at] += p[i];
  }
  return make_result(OpKind::kScatterAdd, std::move(out_shape), std::move(v), {a},
                     [indices, sa = a.shape()](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{gather(g, indices, sa)};
                     });
}

Tensor masked_select(const Tensor& a, std::span<const std::uint8_t> mask) {
  if (mask.size() != a.numel()) {
    throw ShapeError("masked_select: mask of " + std::to_string(mask.size()) +
                     " entries for shape " + shape_str(a.shape()));
  }
  auto idx = std::make_shared<std::vector<std::size_t>>();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) idx->push_back(i);
  }
  const std::size_t n = idx->size();
  return gather(a, std::move(idx), {n});
}

// ---------------------------------------------------------------------------
// Reductions and broadcasting

Tensor sum(const Tensor& a, std::vector<std::size_t> axes, bool keepdim) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  Shape keep = a.shape();
  for (std::size_t ax : axes) {
    check_axis(a, ax, "sum");
    keep[ax] = 1;
  }
  Buffer v = raw_sum_to(a, keep);
  Shape out;
  if (keepdim) {
    out = keep;
  } else {
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (!std::binary_search(axes.begin(), axes.end(), i)) out.push_back(keep[i]);
    }
  }
  return make_result(OpKind::kSum, out, std::move(v), {a},
                     [keep, sa = a.shape()](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{broadcast_to(reshape(g, keep), sa)};
                     });
}

Tensor sum_all(const Tensor& a) {
  std::vector<std::size_t> axes(a.dim());
  std::iota(axes.begin(), axes.end(), 0);
  return sum(a, std::move(axes), false);
}

Tensor mean(const Tensor& a, std::vector<std::size_t> axes, bool keepdim) {
  std::size_t count = 1;
  for (std::size_t ax : axes) {
    check_axis(a, ax, "mean");
    count *= a.size(ax);
  }
  return mul_scalar(sum(a, std::move(axes), keepdim), 1.0 / static_cast<double>(count));
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor l1_norm(const Tensor& a, std::size_t axis, bool keepdim) {
  return sum(abs(a), {axis}, keepdim);
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  if (!broadcastable_to(a.shape(), shape)) {
    throw ShapeError("broadcast_to: cannot broadcast " + shape_str(a.shape()) + " to " +
                     shape_str(shape));
  }
  return make_result(OpKind::kBroadcastTo, shape, raw_broadcast(a, shape), {a},
                     [sa = a.shape()](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{sum_to(g, sa)};
                     });
}

Tensor sum_to(const Tensor& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  if (!broadcastable_to(shape, a.shape())) {
    throw ShapeError("sum_to: cannot reduce " + shape_str(a.shape()) + " to " +
                     shape_str(shape));
  }
  return make_result(OpKind::kSumTo, shape, raw_sum_to(a, shape), {a},
                     [sa = a.shape()](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{broadcast_to(g, sa)};
                     });
}

namespace {

Buffer softmax_rows(const Tensor& a, bool log_space) {
  const std::size_t cols = a.shape().back();
  const std::size_t rows = cols ? a.numel() / cols : 0;
  Buffer v(a.numel());
  const double* p = a.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = p + r * cols;
    double* out = v.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
    if (log_space) {
      const double lz = std::log(z);
      for (std::size_t c = 0; c < cols; ++c) out[c] = in[c] - mx - lz;
    } else {
      for (std::size_t c = 0; c < cols; ++c) out[c] = std::exp(in[c] - mx) / z;
    }
  }
  return v;
}

}  // namespace

Tensor softmax(const Tensor& a) {
  if (a.dim() == 0) throw ShapeError("softmax: needs at least one axis");
  Tensor saved = Tensor::from_buffer(a.shape(), softmax_rows(a, false));
  const std::size_t last = a.dim() - 1;
  return make_result(OpKind::kSoftmax, a.shape(), Buffer(saved.data().begin(), saved.data().end()),
                     {a}, [a, saved, last](const Tensor& g, const std::vector<bool>&) {
                       // Recompute from the input under create_graph so the
                       // result stays differentiable in a.
                       const Tensor y = grad_enabled() ? softmax(a) : saved;
                       const Tensor gy = mul(g, y);
                       return std::vector<Tensor>{sub(gy, mul(y, sum(gy, {last}, true)))};
                     });
}

Tensor log_softmax(const Tensor& a) {
  if (a.dim() == 0) throw ShapeError("log_softmax: needs at least one axis");
  const std::size_t last = a.dim() - 1;
  return make_result(OpKind::kLogSoftmax, a.shape(), softmax_rows(a, true), {a},
                     [a, last](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{
                           sub(g, mul(softmax(a), sum(g, {last}, true)))};
                     });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  if (shape == a.shape()) return a;
  Buffer v(a.data().begin(), a.data().end());
  return make_result(OpKind::kReshape, std::move(shape), std::move(v), {a},
                     [sa = a.shape()](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{reshape(g, sa)};
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  check_axis(parts.front(), axis, "concat");
  Shape out = first;
  out[axis] = 0;
  for (const Tensor& t : parts) {
    Shape probe = t.shape();
    if (probe.size() != first.size()) {
      throw ShapeError("concat: shapes " + shape_str(first) + " and " +
                       shape_str(t.shape()) + " differ in rank");
    }
    probe[axis] = first[axis];
    if (probe != first) {
      throw ShapeError("concat: shapes " + shape_str(first) + " and " +
                       shape_str(t.shape()) + " differ off the concat axis");
    }
    out[axis] += t.size(axis);
  }
  const std::size_t outer = prod(out, 0, axis);
  const std::size_t inner = prod(out, axis + 1, out.size());
  Buffer v(shape_numel(out));
  std::size_t offset = 0;
  std::vector<std::size_t> starts;
  for (const Tensor& t : parts) {
    starts.push_back(offset);
    const std::size_t block = t.size(axis) * inner;
    const double* src = t.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * block, src + (o + 1) * block,
                v.data() + o * out[axis] * inner + offset * inner);
    }
    offset += t.size(axis);
  }
  std::vector<std::size_t> lengths;
  for (const Tensor& t : parts) lengths.push_back(t.size(axis));
  return make_result(OpKind::kConcat, out, std::move(v), parts,
                     [axis, starts, lengths](const Tensor& g, const std::vector<bool>& needs) {
                       std::vector<Tensor> grads(starts.size());
                       for (std::size_t i = 0; i < starts.size(); ++i) {
                         if (needs[i]) grads[i] = slice(g, axis, starts[i], lengths[i]);
                       }
                       return grads;
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  check_axis(a, axis, "slice");
  if (start + length > a.size(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + length) + ") exceeds axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  Shape out = a.shape();
  out[axis] = length;
  const std::size_t outer = prod(out, 0, axis);
  const std::size_t inner = prod(out, axis + 1, out.size());
  Buffer v(shape_numel(out));
  const double* src = a.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    const double* from = src + (o * a.size(axis) + start) * inner;
    std::copy(from, from + length * inner, v.data() + o * length * inner);
  }
  return make_result(OpKind::kSlice, out, std::move(v), {a},
                     [sa = a.shape(), axis, start](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{slice_scatter(g, sa, axis, start)};
                     });
}

Tensor slice_scatter(const Tensor& a, const Shape& shape, std::size_t axis,
                     std::size_t start) {
  if (axis >= shape.size() || a.dim() != shape.size() ||
      start + a.size(axis) > shape[axis]) {
    throw ShapeError("slice_scatter: cannot place " + shape_str(a.shape()) + " into " +
                     shape_str(shape));
  }
  const std::size_t outer = prod(shape, 0, axis);
  const std::size_t inner = prod(shape, axis + 1, shape.size());
  const std::size_t length = a.size(axis);
  Buffer v(shape_numel(shape), 0.0);
  const double* src = a.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(src + o * length * inner, src + (o + 1) * length * inner,
              v.data() + (o * shape[axis] + start) * inner);
  }
  return make_result(OpKind::kSliceScatter, shape, std::move(v), {a},
                     [axis, start, length](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{slice(g, axis, start, length)};
                     });
}

// ---------------------------------------------------------------------------
// Contextual decomposition

Tensor bias_share(const Tensor& own, const Tensor& other, const Tensor& bias, const Tensor& h,
                  double eps) {
  if (own.shape() != other.shape() || own.dim() < 2 || bias.numel() != own.size(1) ||
      h.numel() != own.size(0)) {
    throw ShapeError("bias_share: own " + shape_str(own.shape()) + ", other " +
                     shape_str(other.shape()) + ", bias " + shape_str(bias.shape()) + ", h " +
                     shape_str(h.shape()));
  }
  const std::size_t n = own.size(0);
  const std::size_t c = own.size(1);
  const std::size_t inner = own.numel() / (n * c);
  const double* po = own.data().data();
  const double* pt = other.data().data();
  const double* pb = bias.data().data();
  const double* ph = h.data().data();
  Buffer v(own.numel());
  for (std::size_t i = 0; i < n; ++i) {
    const double lift = eps * ph[i];
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * inner;
      for (std::size_t j = base; j < base + inner; ++j) {
        const double ao = std::fabs(po[j]);
        v[j] = po[j] + pb[ch] * ((ao + lift) / (ao + std::fabs(pt[j]) + eps));
      }
    }
  }
  return make_result(
      OpKind::kBiasShare, own.shape(), std::move(v), {own, other, bias},
      [own, other, bias, h, eps, n, c, inner](const Tensor& g, const std::vector<bool>& needs) {
        const double* po = own.data().data();
        const double* pt = other.data().data();
        const double* pb = bias.data().data();
        const double* ph = h.data().data();
        const double* pg = g.data().data();
        Buffer go(needs[0] ? own.numel() : 0);
        Buffer gt(needs[1] ? own.numel() : 0);
        Buffer gb(needs[2] ? c : 0, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double lift = eps * ph[i];
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (i * c + ch) * inner;
            double acc = 0.0;
            for (std::size_t j = base; j < base + inner; ++j) {
              const double ao = std::fabs(po[j]);
              const double at = std::fabs(pt[j]);
              const double num = ao + lift;
              const double den = ao + at + eps;
              const double share = num / den;
              const double so = po[j] > 0.0 ? 1.0 : (po[j] < 0.0 ? -1.0 : 0.0);
              const double st = pt[j] > 0.0 ? 1.0 : (pt[j] < 0.0 ? -1.0 : 0.0);
              const double scale = pg[j] * pb[ch] / den;
              if (needs[0]) go[j] = pg[j] + scale * so * (1.0 - share);
              if (needs[1]) gt[j] = -scale * st * share;
              acc += pg[j] * share;
            }
            if (needs[2]) gb[ch] += acc;
          }
        }
        return std::vector<Tensor>{
            needs[0] ? Tensor::from_buffer(own.shape(), std::move(go)) : Tensor(),
            needs[1] ? Tensor::from_buffer(own.shape(), std::move(gt)) : Tensor(),
            needs[2] ? Tensor::from_buffer(bias.shape(), std::move(gb)) : Tensor()};
      },
      /*differentiable=*/false);
}

}  // namespace cdep
