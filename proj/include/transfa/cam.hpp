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

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "transfa/config.hpp"
#include "transfa/dataset.hpp"
#include "transfa/image_io.hpp"
#include "transfa/model.hpp"

namespace transfa::cam {

struct AttentionMap {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<double> raw;  // grid_h x grid_w, non-negative
  std::size_t size = 0;
  std::vector<double> upsampled;  // size x size in [0, 1]
  std::string attribute;
  std::string source;
};

// The Grad-CAM combination step on an h x w x d token grid and its gradient:
// weight_c = mean over positions of grad_c, raw = ReLU(sum_c weight_c grid_c),
// then corner-aligned bilinear upsampling to out_size and division by the max.
AttentionMap cam_from_grid(std::span<const double> grid, std::span<const double> grad, std::size_t h, std::size_t w,
                           std::size_t d, std::size_t out_size);

// Eval-mode map for one attribute of one preprocessed image (3 x S x S).
// Throws LookupError for an unknown attribute.
AttentionMap grad_cam(model::TransFAModel& model, std::span<const double> input, std::string_view attribute,
                      std::string source = {});

// Per-attribute mean of the upsampled maps over rows labelled positive.
// Uses at most max_positives rows per attribute (0 means all); an attribute
// with no positive row gets an all-zero map.
std::vector<std::vector<double>> mean_maps(model::TransFAModel& model, const PreparedSet& data,
                                           std::size_t max_positives = 0);

// Pearson correlation over pixels. Two constant maps correlate 1; a constant
// map against a varying one correlates 0.
double map_correlation(std::span<const double> a, std::span<const double> b);

struct SuggestOptions {
  std::optional<std::size_t> clusters;  // stop at exactly this many clusters
  double threshold = 0.5;              // otherwise merge while linkage >= threshold
};

struct GroupProposal {
  std::vector<std::size_t> cluster_of;  // per attribute
  std::vector<std::vector<std::size_t>> clusters;
  AttributeGroupSpec spec;  // clusters named cluster_1.., ordered by first member
  std::string text;         // grouping text in config syntax
};

// Average-linkage agglomerative clustering on map_correlation. The result is
// a proposal only; it never modifies a configuration.
GroupProposal group_suggest(const std::vector<std::vector<double>>& maps, const std::vector<std::string>& names,
                            const SuggestOptions& options = {});

// Fraction of items labelled correctly under the best one-to-one matching of
// predicted clusters to reference labels.
double cluster_agreement(std::span<const std::size_t> predicted, std::span<const std::size_t> reference);

// Jet colour map on [0, 1].
std::array<double, 3> jet(double v);
// 0.5 * jet(map) + 0.5 * image, with the image resized to the map size.
Image overlay(const AttentionMap& map, const Image& image);
// Grey PGM of the upsampled map; the overlay PPM is written when both an
// image and a path are given.
void export_map(const AttentionMap& map, const std::filesystem::path& gray_path, const Image* image = nullptr,
                const std::filesystem::path& overlay_path = {});

}  // namespace transfa::cam
