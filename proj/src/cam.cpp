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

#include "transfa/cam.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "transfa/errors.hpp"
#include "transfa/ops.hpp"

namespace transfa::cam {

AttentionMap cam_from_grid(std::span<const double> grid, std::span<const double> grad, std::size_t h, std::size_t w,
                           std::size_t d, std::size_t out_size) {
  if (grid.size() != h * w * d || grad.size() != grid.size())
    throw DimensionError("cam_from_grid: grid and gradient must both hold h*w*d values");
  if (h == 0 || w == 0 || out_size == 0) throw ContractError("cam_from_grid: empty grid or output");
  const std::size_t hw = h * w;
  std::vector<double> weight(d, 0.0);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < d; ++c) weight[c] += grad[p * d + c];
  for (double& v : weight) v /= static_cast<double>(hw);

  AttentionMap m;
  m.grid_h = h;
  m.grid_w = w;
  m.size = out_size;
  m.raw.resize(hw);
  for (std::size_t p = 0; p < hw; ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += weight[c] * grid[p * d + c];
    m.raw[p] = std::max(s, 0.0);
  }
  Image src(h, w, 1);
  src.pixels = m.raw;
  Image up = resize_bilinear(src, out_size, out_size);
  m.upsampled = std::move(up.pixels);
  const double peak = *std::max_element(m.upsampled.begin(), m.upsampled.end());
  if (peak > 0.0)
    for (double& v : m.upsampled) v /= peak;
  return m;
}

AttentionMap grad_cam(model::TransFAModel& model, std::span<const double> input, std::string_view attribute,
                      std::string source) {
  const std::size_t a = model.groups().index_of(attribute);
  const std::size_t s = model.config().image_size;
  if (input.size() != 3 * s * s)
    throw DimensionError("grad_cam: expected a 3x" + std::to_string(s) + "x" + std::to_string(s) + " input");
  model.params().zero_grad();
  const auto images = ad::Tensor::from_data({1, 3, s, s}, {input.begin(), input.end()});
  const auto out = model.forward(images, false, nullptr);
  const auto& grid = out.backbone.final_grid;
  const std::size_t cols[] = {a};
  ad::backward(ad::gather_columns(out.prediction.logits, cols));
  const auto& shape = grid.shape();
  std::vector<double> grad(grid.numel(), 0.0);
  if (grid.has_grad()) grad.assign(grid.grad().begin(), grid.grad().end());
  model.params().zero_grad();
  AttentionMap m = cam_from_grid(grid.data(), grad, shape[1], shape[2], shape[3], s);
  m.attribute = model.groups().display_name(a);
  m.source = std::move(source);
  return m;
}

std::vector<std::vector<double>> mean_maps(model::TransFAModel& model, const PreparedSet& data,
                                           std::size_t max_positives) {
  const auto& groups = model.groups();
  const std::size_t s = model.config().image_size;
  std::vector<std::vector<double>> maps(groups.attribute_count(), std::vector<double>(s * s, 0.0));
  for (std::size_t a = 0; a < groups.attribute_count(); ++a) {
    std::size_t used = 0;
    for (std::size_t r = 0; r < data.size() && (max_positives == 0 || used < max_positives); ++r) {
      if (data.labels(r)[a] == 0) continue;
      const auto m = grad_cam(model, data.input(r), groups.display_name(a));
      for (std::size_t i = 0; i < m.upsampled.size(); ++i) maps[a][i] += m.upsampled[i];
      ++used;
    }
    if (used)
      for (double& v : maps[a]) v /= static_cast<double>(used);
  }
  return maps;
}

double map_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("map_correlation: maps differ in size");
  if (a.empty()) return 1.0;
  auto constant = [](std::span<const double> m) {
    return std::all_of(m.begin(), m.end(), [&](double v) { return v == m.front(); });
  };
  const bool ca = constant(a), cb = constant(b);
  if (ca || cb) return (ca && cb) ? 1.0 : 0.0;
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (a[i] - ma) * (b[i] - mb);
    aa += (a[i] - ma) * (a[i] - ma);
    bb += (b[i] - mb) * (b[i] - mb);
  }
  return ab / std::sqrt(aa * bb);
}

GroupProposal group_suggest(const std::vector<std::vector<double>>& maps, const std::vector<std::string>& names,
                            const SuggestOptions& options) {
  const std::size_t n = maps.size();
  if (n < 2) throw ContractError("group_suggest needs at least 2 attributes, got " + std::to_string(n));
  if (names.size() != n) throw ContractError("group_suggest: one name per map required");
  if (options.clusters && (*options.clusters == 0 || *options.clusters > n))
    throw ContractError("group_suggest: cluster count must be in [1, " + std::to_string(n) + "]");

  std::vector<std::vector<double>> sim(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) sim[i][j] = sim[j][i] = map_correlation(maps[i], maps[j]);

  std::vector<std::vector<std::size_t>> clusters(n);
  for (std::size_t i = 0; i < n; ++i) clusters[i] = {i};
  auto linkage = [&](const std::vector<std::size_t>& x, const std::vector<std::size_t>& y) {
    double s = 0.0;
    for (std::size_t i : x)
      for (std::size_t j : y) s += sim[i][j];
    return s / static_cast<double>(x.size() * y.size());
  };
  while (clusters.size() > 1) {
    if (options.clusters && clusters.size() <= *options.clusters) break;
    double best = -2.0;
    std::size_t bi = 0, bj = 1;
    for (std::size_t i = 0; i < clusters.size(); ++i)
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        const double l = linkage(clusters[i], clusters[j]);
        if (l > best) {
          best = l;
          bi = i;
          bj = j;
        }
      }
    if (!options.clusters && best < options.threshold) break;
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    std::sort(clusters[bi].begin(), clusters[bi].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
  }
  std::sort(clusters.begin(), clusters.end());

  GroupProposal p;
  p.clusters = clusters;
  p.cluster_of.assign(n, 0);
  AttributeGroupSpec::GroupList list;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    std::vector<std::string> members;
    for (std::size_t i : clusters[c]) {
      p.cluster_of[i] = c;
      members.push_back(names[i]);
    }
    list.emplace_back("cluster_" + std::to_string(c + 1), std::move(members));
  }
  p.spec = AttributeGroupSpec::from_partition(names, list);
  p.text = "# proposed grouping: review before use\n" + p.spec.to_config_text();
  return p;
}

double cluster_agreement(std::span<const std::size_t> predicted, std::span<const std::size_t> reference) {
  if (predicted.size() != reference.size()) throw DimensionError("cluster_agreement: label lists differ in length");
  if (predicted.empty()) return 1.0;
  const std::size_t kp = *std::max_element(predicted.begin(), predicted.end()) + 1;
  const std::size_t kr = *std::max_element(reference.begin(), reference.end()) + 1;
  std::vector<std::vector<std::size_t>> count(kp, std::vector<std::size_t>(kr, 0));
  for (std::size_t i = 0; i < predicted.size(); ++i) ++count[predicted[i]][reference[i]];

  // Exhaustive matching; cluster counts here are small.
  std::vector<bool> taken(kr, false);
  std::size_t best = 0;
  std::function<void(std::size_t, std::size_t)> search = [&](std::size_t c, std::size_t acc) {
    if (c == kp) {
      best = std::max(best, acc);
      return;
    }
    search(c + 1, acc);  // leave this cluster unmatched
    for (std::size_t r = 0; r < kr; ++r)
      if (!taken[r] && count[c][r] > 0) {
        taken[r] = true;
        search(c + 1, acc + count[c][r]);
        taken[r] = false;
      }
  };
  if (kp > 12 || kr > 12) throw ContractError("cluster_agreement supports at most 12 clusters");
  search(0, 0);
  return static_cast<double>(best) / static_cast<double>(predicted.size());
}

std::array<double, 3> jet(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto ch = [&](double centre) { return std::clamp(1.5 - std::abs(4.0 * v - centre), 0.0, 1.0); };
  return {ch(3.0), ch(2.0), ch(1.0)};
}

Image overlay(const AttentionMap& map, const Image& image) {
  if (map.size == 0 || map.upsampled.size() != map.size * map.size) throw ContractError("overlay: map has no upsampled data");
  if (image.empty()) throw ContractError("overlay: empty image");
  Image base = to_rgb(image);
  if (base.height != map.size || base.width != map.size) base = resize_bilinear(base, map.size, map.size);
  Image out(map.size, map.size, 3);
  for (std::size_t y = 0; y < map.size; ++y)
    for (std::size_t x = 0; x < map.size; ++x) {
      const auto c = jet(map.upsampled[y * map.size + x]);
      for (std::size_t k = 0; k < 3; ++k) out.at(y, x, k) = 0.5 * c[k] + 0.5 * base.at(y, x, k);
    }
  return out;
}

void export_map(const AttentionMap& map, const std::filesystem::path& gray_path, const Image* image,
                const std::filesystem::path& overlay_path) {
  Image gray(map.size, map.size, 1);
  gray.pixels = map.upsampled;
  write_pgm(gray_path, gray);
  if (image && !overlay_path.empty()) write_ppm(overlay_path, overlay(map, *image));
}

}  // namespace transfa::cam
