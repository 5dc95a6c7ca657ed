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


#include <random>
#include <vector>

#include "doctest.h"
#include "support/finite_diff.hpp"
#include "transfa/kernels.hpp"

using namespace transfa;

namespace {

std::vector<kernels::Backend> vector_backends() {
  std::vector<kernels::Backend> out;
  for (auto b : {kernels::Backend::Avx2, kernels::Backend::Neon})
    if (kernels::supported(b)) out.push_back(b);
  return out;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  return worst;
}

}  // namespace

TEST_CASE("scalar backend is always available") {
  CHECK(kernels::supported(kernels::Backend::Scalar));
  CHECK(kernels::table(kernels::Backend::Scalar).backend == kernels::Backend::Scalar);
  MESSAGE("active backend: " << kernels::name(kernels::active().backend));
}

TEST_CASE("vector elementwise kernels are bit-identical to scalar") {
  std::mt19937_64 rng(7);
  const auto& ref = kernels::table(kernels::Backend::Scalar);
  for (auto backend : vector_backends()) {
    const auto& simd = kernels::table(backend);
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 17u, 64u, 131u}) {
      auto a = testsupport::random_values(n, rng);
      auto b = testsupport::random_values(n, rng);
      std::vector<double> r(n), s(n);
      ref.add(a.data(), b.data(), r.data(), n);
      simd.add(a.data(), b.data(), s.data(), n);
      CHECK(r == s);
      ref.sub(a.data(), b.data(), r.data(), n);
      simd.sub(a.data(), b.data(), s.data(), n);
      CHECK(r == s);
      ref.mul(a.data(), b.data(), r.data(), n);
      simd.mul(a.data(), b.data(), s.data(), n);
      CHECK(r == s);
      ref.scale(0.37, a.data(), r.data(), n);
      simd.scale(0.37, a.data(), s.data(), n);
      CHECK(r == s);
      r = b;
      s = b;
      ref.axpy(-1.3, a.data(), r.data(), n);
      simd.axpy(-1.3, a.data(), s.data(), n);
      CHECK(r == s);
      ref.mul_accumulate(a.data(), b.data(), r.data(), n);
      simd.mul_accumulate(a.data(), b.data(), s.data(), n);
      CHECK(r == s);
      ref.accumulate(a.data(), r.data(), n);
      simd.accumulate(a.data(), s.data(), n);
      CHECK(r == s);
    }
  }
}

TEST_CASE("vector reductions and GEMMs match scalar within 1e-12") {
  std::mt19937_64 rng(11);
  const auto& ref = kernels::table(kernels::Backend::Scalar);
  for (auto backend : vector_backends()) {
    const auto& simd = kernels::table(backend);
    for (std::size_t n : {1u, 7u, 8u, 33u, 200u}) {
      auto a = testsupport::random_values(n, rng);
      auto b = testsupport::random_values(n, rng);
      const double r = ref.dot(a.data(), b.data(), n);
      const double s = simd.dot(a.data(), b.data(), n);
      CHECK(std::abs(r - s) <= 1e-12 * std::max(1.0, std::abs(r)));
    }
    for (auto [m, n, k] : {std::tuple{1u, 1u, 1u}, {3u, 5u, 7u}, {16u, 16u, 16u}, {9u, 37u, 13u}, {33u, 20u, 48u}}) {
      auto a = testsupport::random_values(m * k, rng);
      auto b = testsupport::random_values(k * n, rng);
      auto c0 = testsupport::random_values(m * n, rng);
      auto r = c0, s = c0;
      ref.gemm_nn(m, n, k, a.data(), b.data(), r.data());
      simd.gemm_nn(m, n, k, a.data(), b.data(), s.data());
      CHECK(max_rel(r, s) <= 1e-12);

      auto bt = testsupport::random_values(n * k, rng);
      r = c0;
      s = c0;
      ref.gemm_nt(m, n, k, a.data(), bt.data(), r.data());
      simd.gemm_nt(m, n, k, a.data(), bt.data(), s.data());
      CHECK(max_rel(r, s) <= 1e-12);

      auto at = testsupport::random_values(k * m, rng);
      r = c0;
      s = c0;
      ref.gemm_tn(m, n, k, at.data(), b.data(), r.data());
      simd.gemm_tn(m, n, k, at.data(), b.data(), s.data());
      CHECK(max_rel(r, s) <= 1e-12);
    }
  }
}

TEST_CASE("scalar gemm agrees with a naive triple loop") {
  std::mt19937_64 rng(3);
  const std::size_t m = 4, n = 6, k = 5;
  auto a = testsupport::random_values(m * k, rng);
  auto b = testsupport::random_values(k * n, rng);
  std::vector<double> c(m * n, 0.0);
  kernels::table(kernels::Backend::Scalar).gemm_nn(m, n, k, a.data(), b.data(), c.data());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("scoped backend restores the previous selection") {
  const auto before = kernels::active().backend;
  {
    kernels::ScopedBackend scoped(kernels::Backend::Scalar);
    CHECK(kernels::active().backend == kernels::Backend::Scalar);
  }
  CHECK(kernels::active().backend == before);
}
