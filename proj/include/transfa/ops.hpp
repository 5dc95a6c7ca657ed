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

#pragma once

// Differentiable operations over ad::Tensor.
//
// Binary elementwise ops broadcast over leading axes only: the operand with
// fewer elements must have a shape equal to the trailing axes of the other
// (a rank-0 scalar broadcasts against anything).

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "transfa/tensor.hpp"

namespace transfa::ad {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Throws DomainError if any divisor is zero.
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
// Throws DomainError on non-positive input.
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
// Exact form x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor square(const Tensor& x);
// Gradient passes where lo <= x <= hi, zero elsewhere.
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(const Tensor& x, double c) { return scale(x, c); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }
inline Tensor operator+(const Tensor& x, double c) { return add_scalar(x, c); }
inline Tensor operator+(double c, const Tensor& x) { return add_scalar(x, c); }
inline Tensor operator-(const Tensor& x, double c) { return add_scalar(x, -c); }
inline Tensor operator-(double c, const Tensor& x) { return add_scalar(neg(x), c); }

// a[..., m, k] x b[k, n] or a[..., m, k] x b[..., k, n] with equal batch axes.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);

// Row gather along axis 1. x is viewed as [B, R, C] with C the product of the
// trailing axes; index holds R_out entries in [-1, R). Entry -1 emits a zero
// row. Output shape is x.shape with axis 1 replaced by R_out.
using IndexMap = std::shared_ptr<const std::vector<std::int64_t>>;
IndexMap make_index_map(std::vector<std::int64_t> index);
Tensor gather_rows(const Tensor& x, const IndexMap& index);

Tensor concat(std::span<const Tensor> parts, std::ptrdiff_t axis);
Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t begin, std::size_t end);
// x[n, cols[n]] for a rank-2 x.
Tensor pick(const Tensor& x, std::span<const std::size_t> cols);
// [N, C] -> [N, cols.size()] with out[:, k] = x[:, cols[k]].
Tensor gather_columns(const Tensor& x, std::span<const std::size_t> cols);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduces (and removes) one axis.
Tensor sum_axis(const Tensor& x, std::ptrdiff_t axis);
Tensor mean_axis(const Tensor& x, std::ptrdiff_t axis);

// Max-subtracted for stability.
Tensor softmax(const Tensor& x, std::ptrdiff_t axis);
Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis);

// Normalizes over the last axis; gain and bias have that axis' extent.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> variance;  // biased (divides by N)
};

// x is [N, D]; normalizes each column with the batch statistics and reports them.
Tensor batch_norm_train(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps, BatchStats* stats);
// Normalizes each column with fixed statistics.
Tensor batch_norm_eval(const Tensor& x, const Tensor& gain, const Tensor& bias, std::span<const double> mean,
                       std::span<const double> variance, double eps);

// Inverted dropout; identity when not training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng);

}  // namespace transfa::ad
