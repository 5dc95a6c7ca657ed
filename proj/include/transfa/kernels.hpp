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

// Dense float64 inner loops used by the autodiff substrate.
//
// Every kernel has a portable scalar reference implementation. Vectorized
// variants (AVX2+FMA on x86-64, NEON on AArch64) are selected once at runtime
// from CPU feature detection, overridable with TRANSFA_KERNELS=scalar|avx2|neon.
// Elementwise kernels are bit-identical across backends; reductions and GEMM
// may differ in the last few ulps because of FMA contraction and lane-wise
// partial sums. A given backend is deterministic run to run.

#include <cstddef>
#include <string_view>

namespace transfa::kernels {

enum class Backend { Scalar, Avx2, Neon };

struct KernelTable {
  Backend backend;

  // out[i] = a[i] op b[i]
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  // y[i] += x[i]
  void (*accumulate)(const double* x, double* y, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[i] += a[i] * b[i]
  void (*mul_accumulate)(const double* a, const double* b, double* y, std::size_t n);
  // out[i] = alpha * x[i]
  void (*scale)(double alpha, const double* x, double* out, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);

  // Row-major GEMMs that accumulate into c.
  // nn: c[m,n] += a[m,k] * b[k,n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
  // nt: c[m,n] += a[m,k] * b[n,k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
  // tn: c[m,n] += a[k,m]^T * b[k,n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
};

// The table used by all tensor ops.
const KernelTable& active();

// Table for a specific backend; throws transfa::Error if the CPU or build lacks it.
const KernelTable& table(Backend backend);

bool supported(Backend backend);
Backend best_available();
void select(Backend backend);
std::string_view name(Backend backend);

// RAII override of the active backend, for equivalence tests.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend backend);
  ~ScopedBackend();
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

}  // namespace transfa::kernels
