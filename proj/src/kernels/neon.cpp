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

#include "kernels_internal.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>
#endif

namespace transfa::kernels::detail {

#if defined(__aarch64__)
namespace {

// Same contract as the AVX2 table: elementwise ops are unfused, reductions may use FMA.

void add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void accumulate(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += x[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void mul_accumulate(const double* a, const double* b, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i))));
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

void scale(double alpha, const double* x, double* out, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(va, vld1q_f64(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

double dot(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      float64x2_t c0 = vld1q_f64(crow + j);
      float64x2_t c1 = vld1q_f64(crow + j + 2);
      for (std::size_t p = 0; p < k; ++p) {
        const float64x2_t av = vdupq_n_f64(a[i * k + p]);
        c0 = vfmaq_f64(c0, av, vld1q_f64(b + p * n + j));
        c1 = vfmaq_f64(c1, av, vld1q_f64(b + p * n + j + 2));
      }
      vst1q_f64(crow + j, c0);
      vst1q_f64(crow + j + 2, c1);
    }
    for (; j < n; ++j) {
      double s = crow[j];
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      crow[j] = s;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      float64x2_t c0 = vld1q_f64(crow + j);
      float64x2_t c1 = vld1q_f64(crow + j + 2);
      for (std::size_t p = 0; p < k; ++p) {
        const float64x2_t av = vdupq_n_f64(a[p * m + i]);
        c0 = vfmaq_f64(c0, av, vld1q_f64(b + p * n + j));
        c1 = vfmaq_f64(c1, av, vld1q_f64(b + p * n + j + 2));
      }
      vst1q_f64(crow + j, c0);
      vst1q_f64(crow + j + 2, c1);
    }
    for (; j < n; ++j) {
      double s = crow[j];
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      crow[j] = s;
    }
  }
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable t{Backend::Neon, add,  sub,     mul,     accumulate, axpy, mul_accumulate,
                             scale,         dot,  gemm_nn, gemm_nt, gemm_tn};
  return &t;
}

#else

const KernelTable* neon_table() { return nullptr; }

#endif

}  // namespace transfa::kernels::detail
