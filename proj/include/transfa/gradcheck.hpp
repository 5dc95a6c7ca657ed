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

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "transfa/presets.hpp"

namespace transfa::gradcheck {

struct BlockResult {
  std::string block;  // parameter name without its last component
  std::size_t elements = 0;
  double max_rel_err = 0.0;
};

struct Report {
  std::vector<BlockResult> blocks;
  std::size_t elements = 0;
  double seconds = 0.0;

  double worst() const;
};

// Compares the analytic gradient of loss_total against central differences
// for every parameter element of the preset model, in training mode with a
// replayed dropout mask. A block (a module's weight and bias together) reports
//   max |analytic - numeric| / max(max |analytic|, max |numeric|)
// over all of its elements, so an exactly-zero bias gradient is judged
// against the scale of its weight rather than against roundoff.
Report run(const presets::Preset& preset, double step = 1e-6, std::uint64_t seed = 7);

std::string to_table(const Report& report, double tolerance);

}  // namespace transfa::gradcheck
