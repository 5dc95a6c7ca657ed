/*
 * Copyright 2026 The transfa-cpp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "transfa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "transfa/errors.hpp"
#include "transfa/kernels.hpp"

namespace transfa::ad {
namespace {

using detail::Node;

const kernels::KernelTable& K() { return kernels::active(); }

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

// Splits a shape around an axis into (outer, extent, inner) element counts.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class BinaryKind { Add, Sub, Mul, Div };

const char* binary_name(BinaryKind k) {
  switch (k) {
    case BinaryKind::Add:
      return "add";
    case BinaryKind::Sub:
      return "sub";
    case BinaryKind::Mul:
      return "mul";
    case BinaryKind::Div:
      return "div";
  }
  return "?";
}

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool a_big = a.numel() >= b.numel();
  const Shape& big = a_big ? sa : sb;
  const Shape& small = a_big ? sb : sa;
  if (!is_suffix(small, big))
    throw DimensionError(std::string(binary_name(kind)) + ": shapes " + to_string(sa) + " and " + to_string(sb) +
                         " are not broadcast-compatible");
  const std::size_t n = numel(big);
  const std::size_t ns = numel(small);
  const std::size_t reps = n / ns;
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  const double* av = a.data().data();
  const double* bv = b.data().data();

  if (kind == BinaryKind::Div)
    for (std::size_t i = 0; i < nb; ++i)
      if (bv[i] == 0.0) throw DomainError("div: division by zero");

  std::vector<double> out(n);
  for (std::size_t r = 0; r < reps; ++r) {
    const double* pa = av + (na == n ? r * ns : 0);
    const double* pb = bv + (nb == n ? r * ns : 0);
    double* po = out.data() + r * ns;
    switch (kind) {
      case BinaryKind::Add:
        K().add(pa, pb, po, ns);
        break;
      case BinaryKind::Sub:
        K().sub(pa, pb, po, ns);
        break;
      case BinaryKind::Mul:
        K().mul(pa, pb, po, ns);
        break;
      case BinaryKind::Div:
        for (std::size_t i = 0; i < ns; ++i) po[i] = pa[i] / pb[i];
        break;
    }
  }

  return make_result(big, std::move(out), binary_name(kind), {a, b}, [kind, n, ns, reps](Node& self) {
    Node& ia = *self.inputs[0];
    Node& ib = *self.inputs[1];
    const double* g = self.grad.data();
    const std::size_t na = ia.value.size();
    const std::size_t nb = ib.value.size();
    for (std::size_t r = 0; r < reps; ++r) {
      const std::size_t oa = na == n ? r * ns : 0;
      const std::size_t ob = nb == n ? r * ns : 0;
      const double* gr = g + r * ns;
      if (ia.requires_grad) {
        double* ga = ia.grad_data() + oa;
        switch (kind) {
          case BinaryKind::Add:
          case BinaryKind::Sub:
            K().accumulate(gr, ga, ns);
            break;
          case BinaryKind::Mul:
            K().mul_accumulate(gr, ib.value.data() + ob, ga, ns);
            break;
          case BinaryKind::Div:
            for (std::size_t i = 0; i < ns; ++i) ga[i] += gr[i] / ib.value[ob + i];
            break;
        }
      }
      if (ib.requires_grad) {
        double* gb = ib.grad_data() + ob;
        switch (kind) {
          case BinaryKind::Add:
            K().accumulate(gr, gb, ns);
            break;
          case BinaryKind::Sub:
            K().axpy(-1.0, gr, gb, ns);
            break;
          case BinaryKind::Mul:
            K().mul_accumulate(gr, ia.value.data() + oa, gb, ns);
            break;
          case BinaryKind::Div:
            for (std::size_t i = 0; i < ns; ++i) {
              const double d = ib.value[ob + i];
              gb[i] -= gr[i] * ia.value[oa + i] / (d * d);
            }
            break;
        }
      }
    }
  });
}

// Elementwise unary op; dfn(x, y) is dy/dx given input and output.
template <typename Fn, typename DFn>
Tensor unary(const Tensor& x, std::string_view name, Fn fn, DFn dfn) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fn(in[i]);
  return make_result(x.shape(), std::move(out), name, {x}, [dfn](Node& self) {
    Node& ix = *self.inputs[0];
    double* gx = ix.grad_data();
    for (std::size_t i = 0; i < self.value.size(); ++i) gx[i] += self.grad[i] * dfn(ix.value[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Div); }

Tensor neg(const Tensor& x) {
  return unary(x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data())
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary(
      x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  K().scale(factor, x.data().data(), out.data(), out.size());
  return make_result(x.shape(), std::move(out), "scale", {x}, [factor](Node& self) {
    Node& ix = *self.inputs[0];
    K().axpy(factor, self.grad.data(), ix.grad_data(), self.grad.size());
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw DimensionError("matmul: operands need rank >= 2");
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t kb = b.dim(-2);
  const std::size_t n = b.dim(-1);
  if (k != kb)
    throw DimensionError("matmul: inner extents disagree, " + to_string(a.shape()) + " x " + to_string(b.shape()));

  Shape out_shape = a.shape();
  out_shape.back() = n;

  if (b.rank() == 2) {
    // Fold all leading axes of a into the row count.
    const std::size_t rows = a.numel() / k;
    std::vector<double> out(rows * n, 0.0);
    K().gemm_nn(rows, n, k, a.data().data(), b.data().data(), out.data());
    return make_result(std::move(out_shape), std::move(out), "matmul", {a, b}, [rows, n, k](Node& self) {
      Node& ia = *self.inputs[0];
      Node& ib = *self.inputs[1];
      if (ia.requires_grad) K().gemm_nt(rows, k, n, self.grad.data(), ib.value.data(), ia.grad_data());
      if (ib.requires_grad) K().gemm_tn(k, n, rows, ia.value.data(), self.grad.data(), ib.grad_data());
    });
  }

  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  if (batch_a != batch_b)
    throw DimensionError("matmul: batch axes disagree, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t batches = numel(batch_a);
  std::vector<double> out(batches * m * n, 0.0);
  for (std::size_t t = 0; t < batches; ++t)
    K().gemm_nn(m, n, k, a.data().data() + t * m * k, b.data().data() + t * k * n, out.data() + t * m * n);
  return make_result(std::move(out_shape), std::move(out), "bmm", {a, b}, [batches, m, n, k](Node& self) {
    Node& ia = *self.inputs[0];
    Node& ib = *self.inputs[1];
    for (std::size_t t = 0; t < batches; ++t) {
      const double* g = self.grad.data() + t * m * n;
      if (ia.requires_grad) K().gemm_nt(m, k, n, g, ib.value.data() + t * k * n, ia.grad_data() + t * m * k);
      if (ib.requires_grad) K().gemm_tn(k, n, m, ia.value.data() + t * m * k, g, ib.grad_data() + t * k * n);
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw DimensionError("reshape: " + to_string(x.shape()) + " to " + to_string(shape) + " changes element count");
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {x}, [](Node& self) {
    Node& ix = *self.inputs[0];
    K().accumulate(self.grad.data(), ix.grad_data(), self.grad.size());
  });
}

namespace {

// For each output element (row-major), the offset of its source element.
std::vector<std::size_t> permute_offsets(const Shape& in_shape, const std::vector<std::size_t>& axes) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  const std::size_t n = numel(in_shape);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    offsets[o] = src;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      src += src_strides[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= src_strides[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return offsets;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) throw DimensionError("permute: axis list length does not match rank");
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute: axes are not a permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[axes[i]];
  auto offsets = std::make_shared<std::vector<std::size_t>>(permute_offsets(x.shape(), axes));
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = in[(*offsets)[o]];
  return make_result(std::move(out_shape), std::move(out), "permute", {x}, [offsets](Node& self) {
    double* gx = self.inputs[0]->grad_data();
    for (std::size_t o = 0; o < self.grad.size(); ++o) gx[(*offsets)[o]] += self.grad[o];
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank < 2");
  std::vector<std::size_t> axes(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

IndexMap make_index_map(std::vector<std::int64_t> index) {
  return std::make_shared<const std::vector<std::int64_t>>(std::move(index));
}

Tensor gather_rows(const Tensor& x, const IndexMap& index) {
  if (x.rank() < 2) throw DimensionError("gather_rows: rank < 2");
  if (!index || index->empty()) throw DimensionError("gather_rows: empty index");
  const std::size_t batch = x.shape()[0];
  const std::size_t rows = x.shape()[1];
  const std::size_t width = x.numel() / (batch * rows);
  for (std::int64_t r : *index)
    if (r < -1 || r >= static_cast<std::int64_t>(rows))
      throw DimensionError("gather_rows: index " + std::to_string(r) + " out of range [-1, " + std::to_string(rows) + ")");
  const std::size_t out_rows = index->size();
  Shape out_shape = x.shape();
  out_shape[1] = out_rows;
  std::vector<double> out(batch * out_rows * width, 0.0);
  const double* in = x.data().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < out_rows; ++r) {
      const std::int64_t src = (*index)[r];
      if (src < 0) continue;
      std::copy_n(in + (b * rows + static_cast<std::size_t>(src)) * width, width, out.data() + (b * out_rows + r) * width);
    }
  return make_result(std::move(out_shape), std::move(out), "gather_rows", {x},
                     [index, batch, rows, out_rows, width](Node& self) {
                       double* gx = self.inputs[0]->grad_data();
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t r = 0; r < out_rows; ++r) {
                           const std::int64_t src = (*index)[r];
                           if (src < 0) continue;
                           K().accumulate(self.grad.data() + (b * out_rows + r) * width,
                                          gx + (b * rows + static_cast<std::size_t>(src)) * width, width);
                         }
                     });
}

Tensor concat(std::span<const Tensor> parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<std::size_t> widths;  // contiguous block per outer index, per part
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != ax && s[i] != first[i])
        throw DimensionError("concat: shapes " + to_string(first) + " and " + to_string(s) + " disagree off-axis");
    out_shape[ax] += s[ax];
    widths.push_back(axis_view(s, ax).extent * axis_view(s, ax).inner);
  }
  const std::size_t outer = axis_view(first, ax).outer;
  std::size_t total_width = 0;
  for (std::size_t w : widths) total_width += w;
  std::vector<double> out(outer * total_width);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const double* src = parts[p].data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src + o * widths[p], widths[p], out.data() + o * total_width + offset);
    offset += widths[p];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(std::move(out_shape), std::move(out), "concat", std::move(inputs),
                     [widths, outer, total_width](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < self.inputs.size(); ++p) {
                         Node& in = *self.inputs[p];
                         if (in.requires_grad) {
                           double* g = in.grad_data();
                           for (std::size_t o = 0; o < outer; ++o)
                             K().accumulate(self.grad.data() + o * total_width + offset, g + o * widths[p], widths[p]);
                         }
                         offset += widths[p];
                       }
                     });
}

Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  if (begin >= end || end > v.extent)
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for extent " +
                         std::to_string(v.extent));
  Shape out_shape = x.shape();
  out_shape[ax] = end - begin;
  const std::size_t width = (end - begin) * v.inner;
  const std::size_t in_width = v.extent * v.inner;
  const std::size_t start = begin * v.inner;
  std::vector<double> out(v.outer * width);
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy_n(x.data().data() + o * in_width + start, width, out.data() + o * width);
  return make_result(std::move(out_shape), std::move(out), "slice", {x}, [v, width, in_width, start](Node& self) {
    double* g = self.inputs[0]->grad_data();
    for (std::size_t o = 0; o < v.outer; ++o)
      K().accumulate(self.grad.data() + o * width, g + o * in_width + start, width);
  });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> cols) {
  if (x.rank() != 2) throw DimensionError("pick: expects a rank-2 tensor");
  const std::size_t rows = x.dim(0);
  const std::size_t width = x.dim(1);
  if (cols.size() != rows) throw DimensionError("pick: one column per row required");
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  for (std::size_t c : idx)
    if (c >= width) throw DomainError("pick: column " + std::to_string(c) + " out of range " + std::to_string(width));
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = x.data()[r * width + idx[r]];
  return make_result({rows}, std::move(out), "pick", {x}, [idx = std::move(idx), width](Node& self) {
    double* g = self.inputs[0]->grad_data();
    for (std::size_t r = 0; r < idx.size(); ++r) g[r * width + idx[r]] += self.grad[r];
  });
}

Tensor gather_columns(const Tensor& x, std::span<const std::size_t> cols) {
  if (x.rank() != 2) throw DimensionError("gather_columns: expects a rank-2 tensor");
  if (cols.empty()) throw DimensionError("gather_columns: no columns selected");
  const std::size_t rows = x.dim(0);
  const std::size_t width = x.dim(1);
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  for (std::size_t c : idx)
    if (c >= width) throw DimensionError("gather_columns: column " + std::to_string(c) + " out of range");
  const std::size_t k = idx.size();
  std::vector<double> out(rows * k);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = x.data()[r * width + idx[j]];
  return make_result({rows, k}, std::move(out), "gather_columns", {x}, [idx = std::move(idx), rows, width](Node& self) {
    double* g = self.inputs[0]->grad_data();
    const std::size_t k = idx.size();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < k; ++j) g[r * width + idx[j]] += self.grad[r * k + j];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({}, {s}, "sum", {x}, [](Node& self) {
    Node& ix = *self.inputs[0];
    double* g = ix.grad_data();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < ix.value.size(); ++i) g[i] += up;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<double> out(v.outer * v.inner, 0.0);
  const double* in = x.data().data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      K().accumulate(in + (o * v.extent + e) * v.inner, out.data() + o * v.inner, v.inner);
  return make_result(std::move(out_shape), std::move(out), "sum_axis", {x}, [v](Node& self) {
    double* g = self.inputs[0]->grad_data();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t e = 0; e < v.extent; ++e)
        K().accumulate(self.grad.data() + o * v.inner, g + (o * v.extent + e) * v.inner, v.inner);
  });
}

Tensor mean_axis(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t extent = x.dim(axis);
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(extent));
}

Tensor softmax(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  const double* in = x.data().data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, in[base + e * v.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        const double t = std::exp(in[base + e * v.inner] - mx);
        out[base + e * v.inner] = t;
        z += t;
      }
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= z;
    }
  return make_result(x.shape(), std::move(out), "softmax", {x}, [v](Node& self) {
    double* g = self.inputs[0]->grad_data();
    const double* y = self.value.data();
    const double* gy = self.grad.data();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.extent * v.inner + i;
        double dotp = 0.0;
        for (std::size_t e = 0; e < v.extent; ++e) dotp += gy[base + e * v.inner] * y[base + e * v.inner];
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t k = base + e * v.inner;
          g[k] += y[k] * (gy[k] - dotp);
        }
      }
  });
}

Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  const double* in = x.data().data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, in[base + e * v.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) z += std::exp(in[base + e * v.inner] - mx);
      const double lz = mx + std::log(z);
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] = in[base + e * v.inner] - lz;
    }
  return make_result(x.shape(), std::move(out), "log_softmax", {x}, [v](Node& self) {
    double* g = self.inputs[0]->grad_data();
    const double* y = self.value.data();
    const double* gy = self.grad.data();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.extent * v.inner + i;
        double gsum = 0.0;
        for (std::size_t e = 0; e < v.extent; ++e) gsum += gy[base + e * v.inner];
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t k = base + e * v.inner;
          g[k] += gy[k] - std::exp(y[k]) * gsum;
        }
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: rank 0 input");
  const std::size_t d = x.dim(-1);
  if (gain.numel() != d || bias.numel() != d)
    throw DimensionError("layer_norm: gain/bias extent must equal last axis " + std::to_string(d));
  const std::size_t rows = x.numel() / d;
  const double* in = x.data().data();
  const double* gv = gain.data().data();
  const double* bv = bias.data().data();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), "layer_norm", {x, gain, bias}, [xhat, inv_std, rows, d](Node& self) {
    Node& ix = *self.inputs[0];
    Node& ig = *self.inputs[1];
    Node& ib = *self.inputs[2];
    const double* gy = self.grad.data();
    const double* gv = ig.value.data();
    const double* h = xhat->data();
    if (ig.requires_grad) {
      double* gg = ig.grad_data();
      for (std::size_t r = 0; r < rows; ++r) K().mul_accumulate(gy + r * d, h + r * d, gg, d);
    }
    if (ib.requires_grad) {
      double* gb = ib.grad_data();
      for (std::size_t r = 0; r < rows; ++r) K().accumulate(gy + r * d, gb, d);
    }
    if (ix.requires_grad) {
      double* gx = ix.grad_data();
      std::vector<double> dh(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dh = 0.0;
        double mean_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dh[j] = gy[r * d + j] * gv[j];
          mean_dh += dh[j];
          mean_dh_h += dh[j] * h[r * d + j];
        }
        mean_dh /= static_cast<double>(d);
        mean_dh_h /= static_cast<double>(d);
        const double is = (*inv_std)[r];
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += is * (dh[j] - mean_dh - h[r * d + j] * mean_dh_h);
      }
    }
  });
}

Tensor batch_norm_train(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps, BatchStats* stats) {
  if (x.rank() != 2) throw DimensionError("batch_norm: expects [N, D]");
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  if (gain.numel() != d || bias.numel() != d) throw DimensionError("batch_norm: gain/bias extent mismatch");
  const double* in = x.data().data();
  std::vector<double> mu(d, 0.0);
  std::vector<double> var(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) K().accumulate(in + r * d, mu.data(), d);
  for (double& m : mu) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) var[j] += (in[r * d + j] - mu[j]) * (in[r * d + j] - mu[j]);
  for (double& v : var) v /= static_cast<double>(n);
  auto inv_std = std::make_shared<std::vector<double>>(d);
  for (std::size_t j = 0; j < d; ++j) (*inv_std)[j] = 1.0 / std::sqrt(var[j] + eps);
  auto xhat = std::make_shared<std::vector<double>>(n * d);
  std::vector<double> out(n * d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[r * d + j] - mu[j]) * (*inv_std)[j];
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gain.data()[j] + bias.data()[j];
    }
  if (stats) {
    stats->mean = mu;
    stats->variance = var;
  }
  return make_result(x.shape(), std::move(out), "batch_norm", {x, gain, bias}, [xhat, inv_std, n, d](Node& self) {
    Node& ix = *self.inputs[0];
    Node& ig = *self.inputs[1];
    Node& ib = *self.inputs[2];
    const double* gy = self.grad.data();
    const double* h = xhat->data();
    if (ig.requires_grad) {
      double* gg = ig.grad_data();
      for (std::size_t r = 0; r < n; ++r) K().mul_accumulate(gy + r * d, h + r * d, gg, d);
    }
    if (ib.requires_grad) {
      double* gb = ib.grad_data();
      for (std::size_t r = 0; r < n; ++r) K().accumulate(gy + r * d, gb, d);
    }
    if (ix.requires_grad) {
      double* gx = ix.grad_data();
      for (std::size_t j = 0; j < d; ++j) {
        double mean_dh = 0.0;
        double mean_dh_h = 0.0;
        const double gj = ig.value[j];
        for (std::size_t r = 0; r < n; ++r) {
          const double dh = gy[r * d + j] * gj;
          mean_dh += dh;
          mean_dh_h += dh * h[r * d + j];
        }
        mean_dh /= static_cast<double>(n);
        mean_dh_h /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
          const double dh = gy[r * d + j] * gj;
          gx[r * d + j] += (*inv_std)[j] * (dh - mean_dh - h[r * d + j] * mean_dh_h);
        }
      }
    }
  });
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gain, const Tensor& bias, std::span<const double> mean,
                       std::span<const double> variance, double eps) {
  if (x.rank() != 2) throw DimensionError("batch_norm: expects [N, D]");
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  if (gain.numel() != d || bias.numel() != d || mean.size() != d || variance.size() != d)
    throw DimensionError("batch_norm: parameter extent mismatch");
  auto inv_std = std::make_shared<std::vector<double>>(d);
  for (std::size_t j = 0; j < d; ++j) (*inv_std)[j] = 1.0 / std::sqrt(variance[j] + eps);
  auto xhat = std::make_shared<std::vector<double>>(n * d);
  std::vector<double> out(n * d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (x.data()[r * d + j] - mean[j]) * (*inv_std)[j];
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gain.data()[j] + bias.data()[j];
    }
  return make_result(x.shape(), std::move(out), "batch_norm_eval", {x, gain, bias}, [xhat, inv_std, n, d](Node& self) {
    Node& ix = *self.inputs[0];
    Node& ig = *self.inputs[1];
    Node& ib = *self.inputs[2];
    const double* gy = self.grad.data();
    if (ig.requires_grad) {
      double* gg = ig.grad_data();
      for (std::size_t r = 0; r < n; ++r) K().mul_accumulate(gy + r * d, xhat->data() + r * d, gg, d);
    }
    if (ib.requires_grad) {
      double* gb = ib.grad_data();
      for (std::size_t r = 0; r < n; ++r) K().accumulate(gy + r * d, gb, d);
    }
    if (ix.requires_grad) {
      double* gx = ix.grad_data();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += gy[r * d + j] * ig.value[j] * (*inv_std)[j];
    }
  });
}

Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = std::generate_canonical<double, 53>(rng) < keep ? 1.0 / keep : 0.0;
  return mul(x, Tensor::from_data(x.shape(), std::move(mask)));
}

}  // namespace transfa::ad
