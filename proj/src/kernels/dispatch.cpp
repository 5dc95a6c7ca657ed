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

#include <atomic>
#include <cstdlib>
#include <string>

#include "kernels_internal.hpp"
#include "transfa/errors.hpp"

namespace transfa::kernels {
namespace {

bool cpu_has_avx2_fma() {
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  if (const char* env = std::getenv("TRANSFA_KERNELS")) {
    const std::string v(env);
    if (v == "scalar") return Backend::Scalar;
    if (v == "avx2" && supported(Backend::Avx2)) return Backend::Avx2;
    if (v == "neon" && supported(Backend::Neon)) return Backend::Neon;
  }
  return best_available();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{&table(initial_backend())};
  return ptr;
}

}  // namespace

bool supported(Backend backend) {
  switch (backend) {
    case Backend::Scalar:
      return true;
    case Backend::Avx2:
      return detail::avx2_table() != nullptr && cpu_has_avx2_fma();
    case Backend::Neon:
      return detail::neon_table() != nullptr;
  }
  return false;
}

Backend best_available() {
  if (supported(Backend::Avx2)) return Backend::Avx2;
  if (supported(Backend::Neon)) return Backend::Neon;
  return Backend::Scalar;
}

const KernelTable& table(Backend backend) {
  if (!supported(backend)) throw Error("kernel backend not available: " + std::string(name(backend)));
  switch (backend) {
    case Backend::Avx2:
      return *detail::avx2_table();
    case Backend::Neon:
      return *detail::neon_table();
    case Backend::Scalar:
      break;
  }
  return detail::scalar_table();
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(Backend backend) { current().store(&table(backend), std::memory_order_release); }

std::string_view name(Backend backend) {
  switch (backend) {
    case Backend::Scalar:
      return "scalar";
    case Backend::Avx2:
      return "avx2";
    case Backend::Neon:
      return "neon";
  }
  return "unknown";
}

ScopedBackend::ScopedBackend(Backend backend) : previous_(active().backend) { select(backend); }

ScopedBackend::~ScopedBackend() { select(previous_); }

}  // namespace transfa::kernels
