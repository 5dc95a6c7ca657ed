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

#include "transfa/backbone.hpp"

#include <cmath>
#include <limits>

#include "transfa/errors.hpp"
#include "transfa/ops.hpp"

namespace transfa::model {
namespace {

void require_grid(const ad::Tensor& grid, const char* who) {
  if (grid.rank() != 4) throw DimensionError(std::string(who) + ": expected [N, h, w, d], got " + ad::to_string(grid.shape()));
}

std::size_t wrap(std::ptrdiff_t v, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  return static_cast<std::size_t>(((v % m) + m) % m);
}

// Region label used by the shifted-window mask: 0, 1, 2 along one axis.
std::size_t region(std::size_t i, std::size_t extent, std::size_t window, std::size_t shift) {
  if (i < extent - window) return 0;
  if (i < extent - shift) return 1;
  return 2;
}

ad::Tensor regrid(const ad::Tensor& grid, std::size_t out_h, std::size_t out_w, std::vector<std::int64_t> index) {
  const std::size_t n = grid.dim(0), h = grid.dim(1), w = grid.dim(2), d = grid.dim(3);
  const ad::Tensor rows = ad::gather_rows(ad::reshape(grid, {n, h * w, d}), ad::make_index_map(std::move(index)));
  return ad::reshape(rows, {n, out_h, out_w, d});
}

}  // namespace

ad::Tensor patch_embed(const ad::Tensor& images, const ad::Tensor& weight, const ad::Tensor& bias,
                       std::size_t patch) {
  if (images.rank() != 4 || images.dim(1) != 3)
    throw DimensionError("patch_embed: expected [N, 3, S, S], got " + ad::to_string(images.shape()));
  const std::size_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
  if (patch == 0 || h % patch != 0 || w % patch != 0)
    throw DimensionError("patch_embed: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by patch size " + std::to_string(patch));
  const std::size_t gh = h / patch, gw = w / patch;
  if (weight.rank() != 2 || weight.dim(0) != 3 * patch * patch)
    throw DimensionError("patch_embed: weight must be [3*p*p, d], got " + ad::to_string(weight.shape()));
  // [N, 3, gh, p, gw, p] -> [N, gh, gw, p, p, 3]
  ad::Tensor x = ad::reshape(images, {n, 3, gh, patch, gw, patch});
  x = ad::permute(x, {0, 2, 4, 3, 5, 1});
  x = ad::reshape(x, {n, gh, gw, 3 * patch * patch});
  return ad::matmul(x, weight) + bias;
}

WindowSet window_partition(const ad::Tensor& grid, std::size_t window) {
  require_grid(grid, "window_partition");
  const std::size_t n = grid.dim(0), h = grid.dim(1), w = grid.dim(2), d = grid.dim(3);
  if (window == 0 || h % window != 0 || w % window != 0)
    throw DimensionError("window_partition: grid " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by window " + std::to_string(window));
  ad::Tensor x = ad::reshape(grid, {n, h / window, window, w / window, window, d});
  x = ad::permute(x, {0, 1, 3, 2, 4, 5});
  WindowSet ws;
  ws.windows = ad::reshape(x, {n * (h / window) * (w / window), window * window, d});
  ws.batch = n;
  ws.grid_h = h;
  ws.grid_w = w;
  ws.window = window;
  return ws;
}

ad::Tensor window_reverse(const WindowSet& ws) {
  const std::size_t m = ws.window, d = ws.windows.dim(-1);
  if (ws.windows.numel() != ws.batch * ws.grid_h * ws.grid_w * d)
    throw DimensionError("window_reverse: window tensor does not match the recorded grid");
  ad::Tensor x = ad::reshape(ws.windows, {ws.batch, ws.grid_h / m, ws.grid_w / m, m, m, d});
  x = ad::permute(x, {0, 1, 3, 2, 4, 5});
  return ad::reshape(x, {ws.batch, ws.grid_h, ws.grid_w, d});
}

ad::Tensor cyclic_shift(const ad::Tensor& grid, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  require_grid(grid, "cyclic_shift");
  const std::size_t h = grid.dim(1), w = grid.dim(2);
  if (wrap(dy, h) == 0 && wrap(dx, w) == 0) return grid;
  std::vector<std::int64_t> index(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t sr = wrap(static_cast<std::ptrdiff_t>(r) - dy, h);
      const std::size_t sc = wrap(static_cast<std::ptrdiff_t>(c) - dx, w);
      index[r * w + c] = static_cast<std::int64_t>(sr * w + sc);
    }
  return regrid(grid, h, w, std::move(index));
}

ad::Tensor pad_grid(const ad::Tensor& grid, std::size_t out_h, std::size_t out_w) {
  require_grid(grid, "pad_grid");
  const std::size_t h = grid.dim(1), w = grid.dim(2);
  if (out_h < h || out_w < w) throw DimensionError("pad_grid: target smaller than grid");
  if (out_h == h && out_w == w) return grid;
  std::vector<std::int64_t> index(out_h * out_w, -1);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) index[r * out_w + c] = static_cast<std::int64_t>(r * w + c);
  return regrid(grid, out_h, out_w, std::move(index));
}

ad::Tensor crop_grid(const ad::Tensor& grid, std::size_t out_h, std::size_t out_w) {
  require_grid(grid, "crop_grid");
  const std::size_t h = grid.dim(1), w = grid.dim(2);
  if (out_h > h || out_w > w) throw DimensionError("crop_grid: target larger than grid");
  if (out_h == h && out_w == w) return grid;
  std::vector<std::int64_t> index(out_h * out_w);
  for (std::size_t r = 0; r < out_h; ++r)
    for (std::size_t c = 0; c < out_w; ++c) index[r * out_w + c] = static_cast<std::int64_t>(r * w + c);
  return regrid(grid, out_h, out_w, std::move(index));
}

ad::Tensor shifted_window_mask(std::size_t h, std::size_t w, std::size_t window, std::size_t shift,
                               std::size_t heads) {
  if (window == 0 || h % window != 0 || w % window != 0)
    throw DimensionError("shifted_window_mask: grid not divisible by window");
  if (shift >= window) throw DimensionError("shifted_window_mask: shift must be smaller than the window");
  const std::size_t wy = h / window, wx = w / window, t = window * window;
  std::vector<double> mask(wy * wx * heads * t * t, 0.0);
  const double blocked = -std::numeric_limits<double>::infinity();
  for (std::size_t by = 0; by < wy; ++by)
    for (std::size_t bx = 0; bx < wx; ++bx) {
      std::vector<std::size_t> label(t);
      for (std::size_t i = 0; i < t; ++i) {
        const std::size_t r = by * window + i / window, c = bx * window + i % window;
        label[i] = region(r, h, window, shift) * 3 + region(c, w, window, shift);
      }
      for (std::size_t hd = 0; hd < heads; ++hd) {
        double* block = mask.data() + ((by * wx + bx) * heads + hd) * t * t;
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j < t; ++j)
            if (label[i] != label[j]) block[i * t + j] = blocked;
      }
    }
  return ad::Tensor::from_data({wy * wx, heads, t, t}, std::move(mask));
}

std::vector<std::int64_t> relative_position_index(std::size_t window) {
  const std::size_t t = window * window, span = 2 * window - 1;
  std::vector<std::int64_t> index(t * t);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) {
      const std::size_t dy = i / window + window - 1 - j / window;
      const std::size_t dx = i % window + window - 1 - j % window;
      index[i * t + j] = static_cast<std::int64_t>(dy * span + dx);
    }
  return index;
}

ad::Tensor window_msa(const ad::Tensor& windows, const AttentionWeights& w, std::size_t heads, std::size_t window,
                      const ad::Tensor& mask, std::size_t windows_per_image, ad::Tensor* attention) {
  if (windows.rank() != 3) throw DimensionError("window_msa: expected [B, T, d], got " + ad::to_string(windows.shape()));
  const std::size_t b = windows.dim(0), t = windows.dim(1), d = windows.dim(2);
  if (heads == 0 || d % heads != 0)
    throw DimensionError("window_msa: " + std::to_string(d) + " channels not divisible by " + std::to_string(heads) +
                         " heads");
  const std::size_t dh = d / heads;

  ad::Tensor qkv = ad::matmul(windows, w.qkv_weight) + w.qkv_bias;
  qkv = ad::permute(ad::reshape(qkv, {b, t, 3, heads, dh}), {2, 0, 3, 1, 4});
  auto part = [&](std::size_t i) { return ad::reshape(ad::slice(qkv, 0, i, i + 1), {b, heads, t, dh}); };
  const ad::Tensor q = part(0) * (1.0 / std::sqrt(static_cast<double>(dh)));
  const ad::Tensor k = part(1);
  const ad::Tensor v = part(2);

  ad::Tensor logits = ad::matmul(q, ad::transpose(k));
  if (w.relative_bias.defined()) {
    if (t != window * window) throw DimensionError("window_msa: relative bias needs M*M tokens per window");
    const std::size_t table = (2 * window - 1) * (2 * window - 1);
    if (w.relative_bias.shape() != ad::Shape{table, heads})
      throw DimensionError("window_msa: relative bias table must be " + ad::to_string({table, heads}));
    ad::Tensor bias = ad::gather_rows(ad::reshape(w.relative_bias, {1, table, heads}),
                                      ad::make_index_map(relative_position_index(window)));
    bias = ad::permute(ad::reshape(bias, {t, t, heads}), {2, 0, 1});
    logits = logits + bias;
  }
  if (mask.defined()) {
    if (windows_per_image == 0 || b % windows_per_image != 0)
      throw DimensionError("window_msa: window count is not a multiple of windows_per_image");
    logits = ad::reshape(ad::reshape(logits, {b / windows_per_image, windows_per_image, heads, t, t}) + mask,
                         {b, heads, t, t});
  }
  const ad::Tensor attn = ad::softmax(logits, -1);
  if (attention) *attention = attn;
  ad::Tensor out = ad::matmul(attn, v);
  out = ad::reshape(ad::permute(out, {0, 2, 1, 3}), {b, t, d});
  return ad::matmul(out, w.proj_weight) + w.proj_bias;
}

SwinLayerWeights SwinLayerWeights::from_store(const ParamStore& store, const std::string& p) {
  SwinLayerWeights w;
  w.norm1_gain = store.at(p + "norm1.gain");
  w.norm1_bias = store.at(p + "norm1.bias");
  w.attn.qkv_weight = store.at(p + "attn.qkv.weight");
  w.attn.qkv_bias = store.at(p + "attn.qkv.bias");
  w.attn.proj_weight = store.at(p + "attn.proj.weight");
  w.attn.proj_bias = store.at(p + "attn.proj.bias");
  w.attn.relative_bias = store.at(p + "attn.relative_bias");
  w.norm2_gain = store.at(p + "norm2.gain");
  w.norm2_bias = store.at(p + "norm2.bias");
  w.fc1_weight = store.at(p + "mlp.fc1.weight");
  w.fc1_bias = store.at(p + "mlp.fc1.bias");
  w.fc2_weight = store.at(p + "mlp.fc2.weight");
  w.fc2_bias = store.at(p + "mlp.fc2.bias");
  return w;
}

ad::Tensor swin_layer(const ad::Tensor& grid, const SwinLayerWeights& w, std::size_t heads, std::size_t window,
                      std::size_t shift) {
  require_grid(grid, "swin_layer");
  if (window == 0) throw DimensionError("swin_layer: window must be positive");
  if (shift >= window) throw DimensionError("swin_layer: shift must be smaller than the window");
  const std::size_t h = grid.dim(1), wd = grid.dim(2);
  const std::size_t hp = (h + window - 1) / window * window, wp = (wd + window - 1) / window * window;
  const auto s = static_cast<std::ptrdiff_t>(shift);

  ad::Tensor y = pad_grid(ad::layer_norm(grid, w.norm1_gain, w.norm1_bias), hp, wp);
  ad::Tensor mask;
  if (shift > 0) {
    y = cyclic_shift(y, -s, -s);
    mask = shifted_window_mask(hp, wp, window, shift, heads);
  }
  WindowSet ws = window_partition(y, window);
  ws.windows = window_msa(ws.windows, w.attn, heads, window, mask, ws.windows_per_image());
  y = window_reverse(ws);
  if (shift > 0) y = cyclic_shift(y, s, s);
  const ad::Tensor x = grid + crop_grid(y, h, wd);

  ad::Tensor z = ad::layer_norm(x, w.norm2_gain, w.norm2_bias);
  z = ad::matmul(ad::gelu(ad::matmul(z, w.fc1_weight) + w.fc1_bias), w.fc2_weight) + w.fc2_bias;
  return x + z;
}

ad::Tensor patch_merging(const ad::Tensor& grid, const ad::Tensor& weight) {
  require_grid(grid, "patch_merging");
  const std::size_t n = grid.dim(0), h = grid.dim(1), w = grid.dim(2), d = grid.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw DimensionError("patch_merging: grid " + std::to_string(h) + "x" + std::to_string(w) + " has an odd extent");
  // [N, h/2, dy, w/2, dx, d] -> [N, h/2, w/2, dx, dy, d]
  ad::Tensor x = ad::reshape(grid, {n, h / 2, 2, w / 2, 2, d});
  x = ad::reshape(ad::permute(x, {0, 1, 3, 4, 2, 5}), {n, h / 2, w / 2, 4 * d});
  return ad::matmul(x, weight);
}

namespace {

std::string layer_prefix(std::size_t stage, std::size_t layer) {
  return "stages." + std::to_string(stage) + ".layers." + std::to_string(layer) + ".";
}

}  // namespace

void register_backbone(ParamStore& store, const ModelConfig& cfg) {
  const auto geo = cfg.geometry();
  const std::size_t p = cfg.patch_size;
  store.add("patch_embed.weight", {3 * p * p, cfg.embed_dim});
  store.add("patch_embed.bias", {cfg.embed_dim});
  for (std::size_t s = 0; s < geo.size(); ++s) {
    const std::size_t d = geo[s].channels, m = geo[s].window, hid = d * cfg.mlp_ratio;
    for (std::size_t l = 0; l < geo[s].layers; ++l) {
      const std::string pre = layer_prefix(s, l);
      store.add(pre + "norm1.gain", {d});
      store.add(pre + "norm1.bias", {d});
      store.add(pre + "attn.qkv.weight", {d, 3 * d});
      store.add(pre + "attn.qkv.bias", {3 * d});
      store.add(pre + "attn.proj.weight", {d, d});
      store.add(pre + "attn.proj.bias", {d});
      store.add(pre + "attn.relative_bias", {(2 * m - 1) * (2 * m - 1), geo[s].heads});
      store.add(pre + "norm2.gain", {d});
      store.add(pre + "norm2.bias", {d});
      store.add(pre + "mlp.fc1.weight", {d, hid});
      store.add(pre + "mlp.fc1.bias", {hid});
      store.add(pre + "mlp.fc2.weight", {hid, d});
      store.add(pre + "mlp.fc2.bias", {d});
    }
    if (geo[s].merge_after) store.add("stages." + std::to_string(s) + ".merge.weight", {4 * d, 2 * d});
  }
  const std::size_t df = cfg.feature_dim();
  store.add("final_norm.gain", {df});
  store.add("final_norm.bias", {df});
  store.add_buffer("final_norm.running_mean", df, 0.0);
  store.add_buffer("final_norm.running_var", df, 1.0);
}

BackboneOutput backbone_forward(const ad::Tensor& images, ParamStore& store, const ModelConfig& cfg, bool training) {
  const auto geo = cfg.geometry();
  if (images.rank() != 4 || images.dim(2) != cfg.image_size || images.dim(3) != cfg.image_size)
    throw DimensionError("backbone: expected [N, 3, " + std::to_string(cfg.image_size) + ", " +
                         std::to_string(cfg.image_size) + "] images, got " + ad::to_string(images.shape()));
  ad::Tensor x = patch_embed(images, store.at("patch_embed.weight"), store.at("patch_embed.bias"), cfg.patch_size);
  for (std::size_t s = 0; s < geo.size(); ++s) {
    for (std::size_t l = 0; l < geo[s].layers; ++l) {
      const auto w = SwinLayerWeights::from_store(store, layer_prefix(s, l));
      x = swin_layer(x, w, geo[s].heads, geo[s].window, l % 2 == 1 ? geo[s].shift : 0);
    }
    if (geo[s].merge_after) x = patch_merging(x, store.at("stages." + std::to_string(s) + ".merge.weight"));
  }

  BackboneOutput out;
  out.final_grid = x;
  const std::size_t n = x.dim(0), d = x.dim(3);
  const ad::Tensor pooled = ad::mean_axis(ad::reshape(x, {n, x.dim(1) * x.dim(2), d}), 1);
  const ad::Tensor& gain = store.at("final_norm.gain");
  const ad::Tensor& bias = store.at("final_norm.bias");
  auto& running_mean = store.buffer("final_norm.running_mean");
  auto& running_var = store.buffer("final_norm.running_var");
  constexpr double kEps = 1e-5, kMomentum = 0.1;
  if (training) {
    if (n < 2) throw ContractError("batch normalization in training mode needs at least 2 samples");
    ad::BatchStats stats;
    out.shared_feature = ad::batch_norm_train(pooled, gain, bias, kEps, &stats);
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    for (std::size_t j = 0; j < d; ++j) {
      running_mean[j] = (1.0 - kMomentum) * running_mean[j] + kMomentum * stats.mean[j];
      running_var[j] = (1.0 - kMomentum) * running_var[j] + kMomentum * stats.variance[j] * unbias;
    }
  } else {
    out.shared_feature = ad::batch_norm_eval(pooled, gain, bias, running_mean, running_var, kEps);
  }
  return out;
}

}  // namespace transfa::model
