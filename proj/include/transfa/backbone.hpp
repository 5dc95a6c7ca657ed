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

// Windowed self-attention backbone. Token grids are [N, h, w, d] tensors;
// window sets are [N * windows, M * M, d] with windows in row-major order.

#include <cstddef>
#include <string>
#include <vector>

#include "transfa/config.hpp"
#include "transfa/params.hpp"
#include "transfa/tensor.hpp"

namespace transfa::model {

// images [N, 3, S, S] -> [N, S/p, S/p, d]. Patches are flattened in
// (row, column, channel) order; weight is [3 p p, d].
ad::Tensor patch_embed(const ad::Tensor& images, const ad::Tensor& weight, const ad::Tensor& bias,
                       std::size_t patch);

struct WindowSet {
  ad::Tensor windows;  // [N * (h/M) * (w/M), M * M, d]
  std::size_t batch = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t window = 0;

  std::size_t windows_per_image() const { return (grid_h / window) * (grid_w / window); }
};

WindowSet window_partition(const ad::Tensor& grid, std::size_t window);
ad::Tensor window_reverse(const WindowSet& set);

// Toroidal roll: out[(r + dy) mod h][(c + dx) mod w] = in[r][c].
ad::Tensor cyclic_shift(const ad::Tensor& grid, std::ptrdiff_t dy, std::ptrdiff_t dx);
// Zero-pads the bottom/right edges to (h, w).
ad::Tensor pad_grid(const ad::Tensor& grid, std::size_t h, std::size_t w);
// Keeps the top-left (h, w) block.
ad::Tensor crop_grid(const ad::Tensor& grid, std::size_t h, std::size_t w);

// Additive mask [windows, heads, M*M, M*M] for an h x w grid rolled by
// (-shift, -shift): 0 where two tokens came from the same region, -inf
// otherwise. Grid extents must be multiples of M.
ad::Tensor shifted_window_mask(std::size_t h, std::size_t w, std::size_t window, std::size_t shift,
                               std::size_t heads);
// [M*M, M*M] indices into a (2M-1)^2 relative-position table.
std::vector<std::int64_t> relative_position_index(std::size_t window);

struct AttentionWeights {
  ad::Tensor qkv_weight;     // [d, 3d]
  ad::Tensor qkv_bias;       // [3d]
  ad::Tensor proj_weight;    // [d, d]
  ad::Tensor proj_bias;      // [d]
  ad::Tensor relative_bias;  // [(2M-1)^2, heads]; undefined disables it
};

// Multi-head attention inside each window. mask, if defined, is
// [windows_per_image, heads, T, T]. attention, if non-null, receives the
// softmax weights [N * windows, heads, T, T].
ad::Tensor window_msa(const ad::Tensor& windows, const AttentionWeights& w, std::size_t heads, std::size_t window,
                      const ad::Tensor& mask, std::size_t windows_per_image, ad::Tensor* attention = nullptr);

struct SwinLayerWeights {
  ad::Tensor norm1_gain, norm1_bias;
  AttentionWeights attn;
  ad::Tensor norm2_gain, norm2_bias;
  ad::Tensor fc1_weight, fc1_bias, fc2_weight, fc2_bias;

  static SwinLayerWeights from_store(const ParamStore& store, const std::string& prefix);
};

// x + MSA(LN(x)) then x' + MLP(LN(x')). The attention step pads the grid up to
// a multiple of the window and, when shift > 0, rolls it by -shift first.
ad::Tensor swin_layer(const ad::Tensor& grid, const SwinLayerWeights& w, std::size_t heads, std::size_t window,
                      std::size_t shift);

// Concatenates each 2x2 neighbourhood as [(0,0), (1,0), (0,1), (1,1)]
// (row, column offsets) and maps 4d -> 2d channels with weight [4d, 2d].
ad::Tensor patch_merging(const ad::Tensor& grid, const ad::Tensor& weight);

void register_backbone(ParamStore& store, const ModelConfig& cfg);

struct BackboneOutput {
  ad::Tensor shared_feature;  // [N, d_final]
  ad::Tensor final_grid;      // [N, h, w, d_final] before pooling
};

// Training mode normalizes with batch statistics and updates the running
// statistics held in the store; evaluation mode uses the running statistics.
BackboneOutput backbone_forward(const ad::Tensor& images, ParamStore& store, const ModelConfig& cfg, bool training);

}  // namespace transfa::model
