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

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "transfa/dataset.hpp"
#include "transfa/errors.hpp"

namespace transfa {
namespace {

constexpr std::array<const char*, 4> kRegions = {"around_head", "eyes", "mouth", "neck"};
constexpr double kGlyphAmplitude = 0.3;
constexpr double kPixelNoise = 0.05;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
}

std::size_t below(std::mt19937_64& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(std::generate_canonical<double, 53>(rng) * static_cast<double>(n)));
}

struct IdentityPattern {
  std::array<double, 3> base{};
  std::array<double, 3> phase{};
  double fx = 1, fy = 1;
  std::vector<std::uint8_t> attributes;
};

// Stripe texture of attribute a inside its band; 0 outside.
double glyph(std::size_t a, std::size_t regions, std::size_t y, std::size_t x, std::size_t size, std::size_t c) {
  const std::size_t band = a % regions;
  const std::size_t slot = a / regions;
  if (c != slot % 3) return 0.0;
  const std::size_t top = band * size / 4, bottom = (band + 1) * size / 4;
  const std::size_t margin_x = size / 8;
  if (y <= top || y + 1 >= bottom || x < margin_x || x + margin_x >= size) return 0.0;
  const bool vertical = (slot / 3) % 2 == 1;
  const std::size_t half_period = 2 + slot / 6;
  const std::size_t coord = vertical ? x : y - top;
  return (coord / half_period) % 2 == 0 ? kGlyphAmplitude : 0.0;
}

}  // namespace

AttributeGroupSpec synth_region_groups(std::size_t attr_count) {
  if (attr_count == 0) throw ContractError("synth_region_groups: attr_count must be at least 1");
  const std::size_t regions = std::min<std::size_t>(4, attr_count);
  AttributeGroupSpec::GroupList groups(regions);
  std::vector<std::string> names;
  for (std::size_t r = 0; r < regions; ++r) groups[r].first = kRegions[r];
  for (std::size_t a = 0; a < attr_count; ++a) {
    std::string name = std::string(kRegions[a % regions]) + "_" + std::to_string(a / regions);
    groups[a % regions].second.push_back(name);
    names.push_back(std::move(name));
  }
  return AttributeGroupSpec::from_partition(names, groups);
}

DatasetManifest synth_dataset(const SynthOptions& o) {
  if (o.num_identities == 0 || o.per_identity == 0 || o.attr_count == 0)
    throw ContractError("synth_dataset: counts must be at least 1");
  if (o.image_size < 8) throw ContractError("synth_dataset: image_size must be at least 8");
  const std::size_t regions = std::min<std::size_t>(4, o.attr_count);
  const std::size_t s = o.image_size;
  std::mt19937_64 rng(o.seed);

  DatasetManifest m;
  m.region_groups = synth_region_groups(o.attr_count);
  m.attribute_names = m.region_groups->display_names();
  m.identity_count = o.num_identities;

  std::vector<IdentityPattern> ids(o.num_identities);
  for (auto& id : ids) {
    for (std::size_t c = 0; c < 3; ++c) {
      id.base[c] = uniform(rng, 0.2, 0.35);
      id.phase[c] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    }
    id.fx = static_cast<double>(1 + below(rng, 3));
    id.fy = static_cast<double>(1 + below(rng, 3));
    id.attributes.resize(o.attr_count);
    for (auto& bit : id.attributes) bit = below(rng, 2) ? 1 : 0;
  }

  const std::size_t max_flips = o.attr_count / 20;
  std::size_t serial = 0;
  for (std::size_t i = 0; i < o.num_identities; ++i) {
    const IdentityPattern& id = ids[i];
    for (std::size_t k = 0; k < o.per_identity; ++k) {
      Sample smp;
      smp.identity = i;
      smp.attributes = id.attributes;
      for (std::size_t f = 0; f < max_flips; ++f) {
        const std::size_t a = below(rng, o.attr_count);
        if (below(rng, 2)) smp.attributes[a] ^= 1;
      }
      if (o.per_identity >= 4 && k + 1 == o.per_identity) {
        smp.split = Split::Test;
      } else if (o.per_identity >= 4 && k + 2 == o.per_identity) {
        smp.split = Split::Val;
      }
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.ppm", ++serial);
      smp.source_name = name;

      const double jitter = uniform(rng, -0.03, 0.03);
      smp.image = Image(s, s, 3);
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
          for (std::size_t c = 0; c < 3; ++c) {
            const double u = static_cast<double>(x) / static_cast<double>(s);
            const double v = static_cast<double>(y) / static_cast<double>(s);
            double value = id.base[c] + jitter +
                           0.06 * std::sin(2.0 * std::numbers::pi * (id.fx * u + id.fy * v) + id.phase[c]);
            for (std::size_t a = 0; a < o.attr_count; ++a)
              if (smp.attributes[a]) value += glyph(a, regions, y, x, s, c);
            value += uniform(rng, -kPixelNoise, kPixelNoise);
            // Stored at 8-bit precision so a written dataset reloads exactly.
            smp.image.at(y, x, c) = quantize(value) / 255.0;
          }
      m.samples.push_back(std::move(smp));
    }
  }
  return m;
}

DatasetManifest synth_dataset(std::size_t num_identities, std::size_t per_identity, std::size_t attr_count,
                              std::uint64_t seed) {
  SynthOptions o;
  o.num_identities = num_identities;
  o.per_identity = per_identity;
  o.attr_count = attr_count;
  o.seed = seed;
  return synth_dataset(o);
}

}  // namespace transfa
