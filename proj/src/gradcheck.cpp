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

#include "transfa/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>

#include "transfa/losses.hpp"
#include "transfa/model.hpp"

namespace transfa::gradcheck {

double Report::worst() const {
  double w = 0.0;
  for (const auto& b : blocks) w = std::max(w, b.max_rel_err);
  return w;
}

Report run(const presets::Preset& preset, double step, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& cfg = preset.config;
  const DatasetManifest manifest = synth_dataset(preset.data);
  const auto rows = manifest.all_indices();
  const PreparedSet data = PreparedSet::build(manifest, rows, cfg.groups, cfg.model.image_size);
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Batch batch = data.batch(all);

  model::TransFAModel model(cfg.model, cfg.groups, data.identity_count());
  model.initialize(seed);
  // Spread the weights so no block sits at the all-zero initial bias.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.25, 0.25);
  for (const auto& [name, t] : model.params().tensors()) {
    ad::Tensor p = t;
    for (double& v : p.mutable_data()) v += jitter(rng);
  }

  auto loss = [&]() {
    std::mt19937_64 mask_rng(seed ^ 0x9e3779b97f4a7c15ull);
    const auto out = model.forward(batch.images, true, &mask_rng);
    return loss::batch_losses(out.prediction, batch.attributes, batch.identities, cfg.groups, cfg.loss).loss_total;
  };

  model.params().zero_grad();
  ad::backward(loss());
  std::map<std::string, std::vector<double>> analytic;
  for (const auto& [name, t] : model.params().tensors()) analytic[name].assign(t.grad().begin(), t.grad().end());

  Report report;
  struct Accum {
    std::size_t elements = 0;
    double diff = 0.0;
    double scale = 0.0;
  };
  std::map<std::string, Accum> blocks;
  ad::NoGradGuard no_grad;
  for (const auto& [name, t] : model.params().tensors()) {
    ad::Tensor p = t;
    auto values = p.mutable_data();
    const auto& a = analytic[name];
    auto& b = blocks[name.substr(0, name.rfind('.'))];
    double& diff = b.diff;
    double& scale = b.scale;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + step;
      const double up = loss().item();
      values[i] = orig - step;
      const double down = loss().item();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      diff = std::max(diff, std::abs(a[i] - numeric));
      scale = std::max({scale, std::abs(a[i]), std::abs(numeric)});
    }
    b.elements += values.size();
    report.elements += values.size();
  }
  for (const auto& [block, b] : blocks)
    report.blocks.push_back({block, b.elements, b.scale == 0.0 ? b.diff : b.diff / b.scale});
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::string to_table(const Report& report, double tolerance) {
  std::size_t width = 5;
  for (const auto& b : report.blocks) width = std::max(width, b.block.size());
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %12s  %s\n", static_cast<int>(width), "block", "elements", "max_rel_err",
                "status");
  out << buf;
  for (const auto& b : report.blocks) {
    std::snprintf(buf, sizeof buf, "%-*s  %8zu  %12.3e  %s\n", static_cast<int>(width), b.block.c_str(), b.elements,
                  b.max_rel_err, b.max_rel_err <= tolerance ? "ok" : "FAIL");
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "worst %.3e over %zu elements (tolerance %.0e), %.1f s\n", report.worst(),
                report.elements, tolerance, report.seconds);
  out << buf;
  return out.str();
}

}  // namespace transfa::gradcheck
