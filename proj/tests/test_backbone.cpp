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


#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "support/finite_diff.hpp"
#include "transfa/backbone.hpp"
#include "transfa/errors.hpp"
#include "transfa/ops.hpp"

using namespace transfa;
using namespace transfa::model;
using ad::Tensor;
using testsupport::weighted_sum;
using testsupport::worst_fd_error;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor rand_param(ad::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  return testsupport::random_param(std::move(shape), rng, -scale, scale);
}

Tensor labeled_grid(std::size_t n, std::size_t h, std::size_t w, std::size_t d) {
  std::vector<double> v(n * h * w * d);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  return Tensor::from_data({n, h, w, d}, std::move(v));
}

SwinLayerWeights random_layer(std::size_t d, std::size_t heads, std::size_t window, std::size_t ratio,
                              std::mt19937_64& rng) {
  SwinLayerWeights w;
  w.norm1_gain = rand_param({d}, rng);
  w.norm1_bias = rand_param({d}, rng, 0.3);
  w.attn.qkv_weight = rand_param({d, 3 * d}, rng, 0.6);
  w.attn.qkv_bias = rand_param({3 * d}, rng, 0.2);
  w.attn.proj_weight = rand_param({d, d}, rng, 0.6);
  w.attn.proj_bias = rand_param({d}, rng, 0.2);
  w.attn.relative_bias = rand_param({(2 * window - 1) * (2 * window - 1), heads}, rng, 0.5);
  w.norm2_gain = rand_param({d}, rng);
  w.norm2_bias = rand_param({d}, rng, 0.3);
  w.fc1_weight = rand_param({d, d * ratio}, rng, 0.6);
  w.fc1_bias = rand_param({d * ratio}, rng, 0.2);
  w.fc2_weight = rand_param({d * ratio, d}, rng, 0.6);
  w.fc2_bias = rand_param({d}, rng, 0.2);
  return w;
}

std::vector<Tensor> layer_leaves(const SwinLayerWeights& w) {
  return {w.norm1_gain, w.norm1_bias, w.attn.qkv_weight, w.attn.qkv_bias, w.attn.proj_weight,
          w.attn.proj_bias, w.attn.relative_bias, w.norm2_gain, w.norm2_bias, w.fc1_weight,
          w.fc1_bias, w.fc2_weight, w.fc2_bias};
}

// ---- brute-force reference, written from the layer definition with plain loops ----

std::vector<double> ref_layer_norm(const double* x, std::size_t d, const Tensor& gain, const Tensor& bias) {
  double mu = 0.0;
  for (std::size_t k = 0; k < d; ++k) mu += x[k];
  mu /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t k = 0; k < d; ++k) var += (x[k] - mu) * (x[k] - mu);
  var /= static_cast<double>(d);
  std::vector<double> y(d);
  for (std::size_t k = 0; k < d; ++k) y[k] = (x[k] - mu) / std::sqrt(var + 1e-5) * gain.data()[k] + bias.data()[k];
  return y;
}

std::vector<double> ref_affine(const std::vector<double>& x, const Tensor& w, const Tensor* b) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  std::vector<double> y(out, 0.0);
  for (std::size_t j = 0; j < out; ++j) {
    double acc = b ? b->data()[j] : 0.0;
    for (std::size_t i = 0; i < in; ++i) acc += x[i] * w.data()[i * out + j];
    y[j] = acc;
  }
  return y;
}

// Layer output on a grid whose extents are multiples of the window. Shifted
// windows are described in original coordinates: two tokens interact when
// they share a window of the grid rolled by -shift and both or neither came
// from the wrapped first `shift` rows (and likewise for columns).
std::vector<double> reference_layer(const Tensor& grid, const SwinLayerWeights& w, std::size_t heads, std::size_t m,
                                    std::size_t shift) {
  const std::size_t n = grid.dim(0), h = grid.dim(1), wd = grid.dim(2), d = grid.dim(3), t = h * wd;
  const std::size_t dh = d / heads;
  std::vector<double> out(grid.numel());
  for (std::size_t b = 0; b < n; ++b) {
    const double* x = grid.data().data() + b * t * d;
    std::vector<std::vector<double>> q(t), k(t), v(t);
    for (std::size_t i = 0; i < t; ++i) {
      const auto qkv = ref_affine(ref_layer_norm(x + i * d, d, w.norm1_gain, w.norm1_bias), w.attn.qkv_weight,
                                  &w.attn.qkv_bias);
      q[i].assign(qkv.begin(), qkv.begin() + d);
      k[i].assign(qkv.begin() + d, qkv.begin() + 2 * d);
      v[i].assign(qkv.begin() + 2 * d, qkv.end());
    }
    for (std::size_t i = 0; i < t; ++i) {
      const std::size_t ri = i / wd, ci = i % wd;
      const std::size_t rri = (ri + h - shift) % h, rci = (ci + wd - shift) % wd;
      std::vector<double> concat(d, 0.0);
      for (std::size_t hd = 0; hd < heads; ++hd) {
        std::vector<double> logit(t, -std::numeric_limits<double>::infinity());
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < t; ++j) {
          const std::size_t rj = j / wd, cj = j % wd;
          const std::size_t rrj = (rj + h - shift) % h, rcj = (cj + wd - shift) % wd;
          if (rri / m != rrj / m || rci / m != rcj / m) continue;
          if ((ri < shift) != (rj < shift) || (ci < shift) != (cj < shift)) continue;
          double dot = 0.0;
          for (std::size_t e = 0; e < dh; ++e) dot += q[i][hd * dh + e] * k[j][hd * dh + e];
          const std::size_t dy = rri % m + m - 1 - rrj % m, dx = rci % m + m - 1 - rcj % m;
          logit[j] = dot / std::sqrt(static_cast<double>(dh)) +
                     w.attn.relative_bias.data()[(dy * (2 * m - 1) + dx) * heads + hd];
          top = std::max(top, logit[j]);
        }
        double z = 0.0;
        for (double& l : logit) z += (l = std::exp(l - top));
        for (std::size_t j = 0; j < t; ++j)
          for (std::size_t e = 0; e < dh; ++e) concat[hd * dh + e] += logit[j] / z * v[j][hd * dh + e];
      }
      const auto attn = ref_affine(concat, w.attn.proj_weight, &w.attn.proj_bias);
      std::vector<double> x1(d);
      for (std::size_t e = 0; e < d; ++e) x1[e] = x[i * d + e] + attn[e];
      auto hid = ref_affine(ref_layer_norm(x1.data(), d, w.norm2_gain, w.norm2_bias), w.fc1_weight, &w.fc1_bias);
      for (double& u : hid) u = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
      const auto mlp = ref_affine(hid, w.fc2_weight, &w.fc2_bias);
      for (std::size_t e = 0; e < d; ++e) out[(b * t + i) * d + e] = x1[e] + mlp[e];
    }
  }
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

ModelConfig toy_config() {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.stage_layout = {{2, true}};
  c.num_heads = {2};
  c.window_size = 2;
  c.shift_size = 1;
  c.mlp_ratio = 2;
  return c;
}

}  // namespace

TEST_CASE("patch embedding shapes and linearity") {
  SUBCASE("224 pixels with 4-pixel patches give a 56x56x96 grid") {
    auto img = Tensor::zeros({1, 3, 224, 224});
    auto out = patch_embed(img, Tensor::zeros({48, 96}), Tensor::zeros({96}), 4);
    CHECK(out.shape() == ad::Shape{1, 56, 56, 96});
  }
  SUBCASE("zero image and zero bias give zero tokens") {
    std::mt19937_64 rng(1);
    auto out = patch_embed(Tensor::zeros({2, 3, 8, 8}), rand_param({48, 5}, rng), Tensor::zeros({5}), 4);
    for (double v : values(out)) CHECK(v == 0.0);
  }
  SUBCASE("identity projection exposes the flattened patch") {
    std::mt19937_64 rng(2);
    auto img = rand_param({1, 3, 8, 8}, rng);
    std::vector<double> eye(48 * 48, 0.0);
    for (std::size_t i = 0; i < 48; ++i) eye[i * 48 + i] = 1.0;
    auto out = patch_embed(img, Tensor::from_data({48, 48}, eye), Tensor::zeros({48}), 4);
    CHECK(out.shape() == ad::Shape{1, 2, 2, 48});
    for (std::size_t py : {0u, 1u})
      for (std::size_t px : {0u, 1u}) {
        std::size_t k = 0;
        for (std::size_t dy = 0; dy < 4; ++dy)
          for (std::size_t dx = 0; dx < 4; ++dx)
            for (std::size_t c = 0; c < 3; ++c, ++k)
              CHECK(out.at({0, py, px, k}) == img.at({0, c, py * 4 + dy, px * 4 + dx}));
      }
  }
  CHECK_THROWS_AS(patch_embed(Tensor::zeros({1, 3, 10, 10}), Tensor::zeros({48, 4}), Tensor::zeros({4}), 4),
                  DimensionError);
}

TEST_CASE("window partition") {
  SUBCASE("one window covering the grid") {
    auto g = labeled_grid(1, 4, 4, 3);
    auto ws = window_partition(g, 4);
    CHECK(ws.windows.shape() == ad::Shape{1, 16, 3});
    CHECK(values(ws.windows) == values(g));
  }
  SUBCASE("8x8 grid into 4x4 windows") {
    auto g = labeled_grid(1, 8, 8, 2);
    auto ws = window_partition(g, 4);
    CHECK(ws.windows.shape() == ad::Shape{4, 16, 2});
    for (std::size_t win = 0; win < 4; ++win)
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t c = 0; c < 2; ++c) {
          const std::size_t r = (win / 2) * 4 + i / 4, col = (win % 2) * 4 + i % 4;
          CHECK(ws.windows.at({win, i, c}) == g.at({0, r, col, c}));
        }
  }
  SUBCASE("random 12x8 grid round-trips exactly") {
    std::mt19937_64 rng(3);
    auto g = rand_param({2, 12, 8, 5}, rng);
    CHECK(values(window_reverse(window_partition(g, 4))) == values(g));
  }
  CHECK_THROWS_AS(window_partition(labeled_grid(1, 6, 8, 1), 4), DimensionError);
}

TEST_CASE("cyclic shift") {
  std::mt19937_64 rng(4);
  auto g = rand_param({2, 6, 5, 3}, rng);
  CHECK(values(cyclic_shift(g, 0, 0)) == values(g));
  CHECK(values(cyclic_shift(cyclic_shift(g, 2, 2), -2, -2)) == values(g));
  CHECK(values(cyclic_shift(cyclic_shift(g, -3, 4), 3, -4)) == values(g));

  auto lab = labeled_grid(1, 4, 4, 1);
  auto s = cyclic_shift(lab, 1, 0);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(s.at({0, r, c, 0}) == lab.at({0, (r + 3) % 4, c, 0}));
}

TEST_CASE("window attention special cases") {
  std::mt19937_64 rng(5);
  const std::size_t d = 4;
  AttentionWeights w;
  w.qkv_weight = rand_param({d, 3 * d}, rng);
  w.qkv_bias = Tensor::zeros({3 * d});
  w.proj_weight = rand_param({d, d}, rng);
  w.proj_bias = Tensor::zeros({d});

  // W_o (W_v x) with plain loops.
  auto value_path = [&](const Tensor& x, std::size_t row) {
    std::vector<double> xv(d), vv(d, 0.0), out(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) xv[i] = x.data()[row * d + i];
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t i = 0; i < d; ++i) vv[j] += xv[i] * w.qkv_weight.data()[i * 3 * d + 2 * d + j];
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t i = 0; i < d; ++i) out[j] += vv[i] * w.proj_weight.data()[i * d + j];
    return out;
  };

  SUBCASE("a single token attends to itself") {
    auto x = rand_param({3, 1, d}, rng);
    auto y = window_msa(x, w, 2, 1, Tensor(), 1);
    for (std::size_t b = 0; b < 3; ++b) {
      const auto want = value_path(x, b);
      for (std::size_t j = 0; j < d; ++j) CHECK(y.at({b, 0, j}) == doctest::Approx(want[j]).epsilon(1e-12));
    }
  }
  SUBCASE("an off-diagonal -inf mask forces self-attention") {
    const std::size_t t = 4, heads = 2;
    std::vector<double> mask(heads * t * t, -std::numeric_limits<double>::infinity());
    for (std::size_t hd = 0; hd < heads; ++hd)
      for (std::size_t i = 0; i < t; ++i) mask[(hd * t + i) * t + i] = 0.0;
    auto x = rand_param({2, t, d}, rng);
    auto y = window_msa(x, w, heads, 2, Tensor::from_data({1, heads, t, t}, mask), 1);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < t; ++i) {
        const auto want = value_path(x, b * t + i);
        for (std::size_t j = 0; j < d; ++j) CHECK(y.at({b, i, j}) == doctest::Approx(want[j]).epsilon(1e-12));
      }
  }
  SUBCASE("two tokens with identity projections") {
    const std::size_t dd = 2;
    std::vector<double> qkv(dd * 3 * dd, 0.0), eye(dd * dd, 0.0);
    for (std::size_t i = 0; i < dd; ++i) {
      eye[i * dd + i] = 1.0;
      for (std::size_t p = 0; p < 3; ++p) qkv[i * 3 * dd + p * dd + i] = 1.0;
    }
    AttentionWeights id{Tensor::from_data({dd, 3 * dd}, qkv), Tensor::zeros({3 * dd}), Tensor::from_data({dd, dd}, eye),
                        Tensor::zeros({dd}), Tensor()};
    const std::vector<double> xs = {0.3, -1.2, 0.8, 0.5};
    auto y = window_msa(Tensor::from_data({1, 2, dd}, xs), id, 1, 1, Tensor(), 1);
    // softmax(x x^T / sqrt(2)) x, evaluated by hand.
    for (std::size_t i = 0; i < 2; ++i) {
      const double s0 = (xs[i * 2] * xs[0] + xs[i * 2 + 1] * xs[1]) / std::sqrt(2.0);
      const double s1 = (xs[i * 2] * xs[2] + xs[i * 2 + 1] * xs[3]) / std::sqrt(2.0);
      const double a0 = std::exp(s0) / (std::exp(s0) + std::exp(s1)), a1 = 1.0 - a0;
      for (std::size_t j = 0; j < dd; ++j)
        CHECK(y.at({0, i, j}) == doctest::Approx(a0 * xs[j] + a1 * xs[2 + j]).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(window_msa(rand_param({1, 4, d}, rng), w, 3, 2, Tensor(), 1), DimensionError);
}

TEST_CASE("attention rows are stochastic") {
  std::mt19937_64 rng(6);
  const std::size_t d = 6, heads = 3, m = 4;
  AttentionWeights w{rand_param({d, 3 * d}, rng, 2.0), rand_param({3 * d}, rng), rand_param({d, d}, rng),
                     rand_param({d}, rng), rand_param({(2 * m - 1) * (2 * m - 1), heads}, rng, 3.0)};
  auto grid = rand_param({2, 8, 8, d}, rng, 3.0);
  auto ws = window_partition(cyclic_shift(grid, -2, -2), m);
  Tensor attn;
  window_msa(ws.windows, w, heads, m, shifted_window_mask(8, 8, m, 2, heads), ws.windows_per_image(), &attn);
  const auto a = values(attn);
  const std::size_t t = m * m;
  double worst = 0.0;
  for (std::size_t row = 0; row < a.size() / t; ++row) {
    double s = 0.0;
    for (std::size_t j = 0; j < t; ++j) s += a[row * t + j];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("shifted-window mask regions") {
  const auto mask = shifted_window_mask(4, 4, 2, 1, 1);
  CHECK(mask.shape() == ad::Shape{4, 1, 4, 4});
  // Window 0 holds tokens that were contiguous before the roll: no masking.
  for (std::size_t i = 0; i < 16; ++i) CHECK(mask.data()[i] == 0.0);
  // Last window mixes four wrapped regions: only the diagonal survives.
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK((mask.at({3, 0, i, j}) == 0.0) == (i == j));
}

TEST_CASE("swin layer matches a brute-force reference") {
  std::mt19937_64 rng(7);
  SUBCASE("single window: global attention over the grid") {
    auto w = random_layer(4, 2, 4, 2, rng);
    auto g = rand_param({2, 4, 4, 4}, rng);
    CHECK(max_abs_diff(values(swin_layer(g, w, 2, 4, 0)), reference_layer(g, w, 2, 4, 0)) <= 1e-12);
  }
  SUBCASE("regular windows") {
    auto w = random_layer(4, 2, 2, 2, rng);
    auto g = rand_param({1, 4, 6, 4}, rng);
    CHECK(max_abs_diff(values(swin_layer(g, w, 2, 2, 0)), reference_layer(g, w, 2, 2, 0)) <= 1e-12);
  }
  SUBCASE("shifted windows") {
    auto w = random_layer(6, 3, 4, 2, rng);
    auto g = rand_param({2, 8, 8, 6}, rng);
    CHECK(max_abs_diff(values(swin_layer(g, w, 3, 4, 2)), reference_layer(g, w, 3, 4, 2)) <= 1e-12);
    auto w2 = random_layer(4, 2, 2, 2, rng);
    auto g2 = rand_param({1, 4, 4, 4}, rng);
    CHECK(max_abs_diff(values(swin_layer(g2, w2, 2, 2, 1)), reference_layer(g2, w2, 2, 2, 1)) <= 1e-12);
  }
}

TEST_CASE("swin layer with zero branch outputs is the identity") {
  std::mt19937_64 rng(8);
  auto w = random_layer(4, 2, 2, 2, rng);
  w.attn.proj_weight = Tensor::zeros({4, 4});
  w.attn.proj_bias = Tensor::zeros({4});
  w.fc2_weight = Tensor::zeros({8, 4});
  w.fc2_bias = Tensor::zeros({4});
  auto g = rand_param({2, 5, 5, 4}, rng);
  for (std::size_t shift : {0u, 1u}) CHECK(values(swin_layer(g, w, 2, 2, shift)) == values(g));
}

TEST_CASE("swin layer gradients agree with finite differences") {
  std::mt19937_64 rng(9);
  for (std::size_t shift : {0u, 1u}) {
    auto w = random_layer(8, 2, 2, 2, rng);
    auto g = rand_param({2, 4, 4, 8}, rng);
    auto leaves = layer_leaves(w);
    leaves.push_back(g);
    INFO("shift=" << shift);
    CHECK(worst_fd_error([&] { return weighted_sum(swin_layer(g, w, 2, 2, shift)); }, leaves) <= 1e-5);
  }
  // Grid not divisible by the window: padded inside the attention step.
  auto w = random_layer(4, 2, 2, 2, rng);
  auto g = rand_param({1, 3, 3, 4}, rng);
  auto leaves = layer_leaves(w);
  leaves.push_back(g);
  auto out = swin_layer(g, w, 2, 2, 1);
  CHECK(out.shape() == g.shape());
  CHECK(worst_fd_error([&] { return weighted_sum(swin_layer(g, w, 2, 2, 1)); }, leaves) <= 1e-5);
}

TEST_CASE("patch merging") {
  SUBCASE("single neighbourhood") {
    auto out = patch_merging(labeled_grid(1, 2, 2, 3), Tensor::zeros({12, 6}));
    CHECK(out.shape() == ad::Shape{1, 1, 1, 6});
    for (double v : values(out)) CHECK(v == 0.0);
  }
  SUBCASE("identity blocks recover neighbourhood tokens") {
    const std::size_t d = 2;
    auto g = labeled_grid(1, 4, 4, d);
    // Output channels [0, d) select neighbour slot a, [d, 2d) select slot b.
    for (auto [a, b] : {std::pair<std::size_t, std::size_t>{0, 1}, {2, 3}}) {
      std::vector<double> wv(4 * d * 2 * d, 0.0);
      for (std::size_t c = 0; c < d; ++c) {
        wv[(a * d + c) * 2 * d + c] = 1.0;
        wv[(b * d + c) * 2 * d + d + c] = 1.0;
      }
      auto out = patch_merging(g, Tensor::from_data({4 * d, 2 * d}, wv));
      // Slots: 0 -> (0,0), 1 -> (1,0), 2 -> (0,1), 3 -> (1,1) as (row, col) offsets.
      const std::size_t off[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
          for (std::size_t c = 0; c < d; ++c) {
            CHECK(out.at({0, i, j, c}) == g.at({0, 2 * i + off[a][0], 2 * j + off[a][1], c}));
            CHECK(out.at({0, i, j, d + c}) == g.at({0, 2 * i + off[b][0], 2 * j + off[b][1], c}));
          }
    }
  }
  CHECK_THROWS_AS(patch_merging(labeled_grid(1, 3, 4, 1), Tensor::zeros({4, 2})), DimensionError);
}

TEST_CASE("backbone shapes follow the stage layout") {
  ModelConfig cfg;  // default layout and heads, narrower channels
  cfg.embed_dim = 24;
  const auto geo = ModelConfig{}.geometry();
  // Shape calculus: 224 / 4 = 56, halved after each of the three merges.
  std::size_t grid = 224 / 4, channels = 96;
  for (const auto& st : geo) {
    CHECK(st.grid == grid);
    CHECK(st.channels == channels);
    if (st.merge_after) {
      grid /= 2;
      channels *= 2;
    }
  }
  CHECK(grid == 7);
  CHECK(channels == 8 * 96);
  CHECK(ModelConfig{}.final_grid() == 7);
  CHECK(ModelConfig{}.feature_dim() == 768);

  ParamStore store;
  register_backbone(store, cfg);
  std::mt19937_64 rng(10);
  init_parameters(store, rng);
  ad::NoGradGuard guard;
  auto img = rand_param({1, 3, 224, 224}, rng);
  auto out = backbone_forward(img, store, cfg, false);
  CHECK(out.final_grid.shape() == ad::Shape{1, 7, 7, 8 * 24});
  CHECK(out.shared_feature.shape() == ad::Shape{1, 8 * 24});
}

TEST_CASE("backbone is deterministic in evaluation mode") {
  auto cfg = toy_config();
  ParamStore store;
  register_backbone(store, cfg);
  std::mt19937_64 rng(11);
  init_parameters(store, rng);
  auto one = rand_param({1, 3, 16, 16}, rng);
  std::vector<double> twice = values(one);
  twice.insert(twice.end(), twice.begin(), twice.end());
  auto out = backbone_forward(Tensor::from_data({2, 3, 16, 16}, twice), store, cfg, false);
  const auto f = values(out.shared_feature);
  const std::size_t df = cfg.feature_dim();
  CHECK(std::vector<double>(f.begin(), f.begin() + df) == std::vector<double>(f.begin() + df, f.end()));
  CHECK(values(backbone_forward(one, store, cfg, false).shared_feature) ==
        std::vector<double>(f.begin(), f.begin() + df));

  // Output shape depends on the configuration only.
  auto other = backbone_forward(rand_param({2, 3, 16, 16}, rng, 5.0), store, cfg, false);
  CHECK(other.final_grid.shape() == out.final_grid.shape());
  CHECK(other.shared_feature.shape() == out.shared_feature.shape());
}

TEST_CASE("batch normalization keeps running statistics") {
  auto cfg = toy_config();
  ParamStore store;
  register_backbone(store, cfg);
  std::mt19937_64 rng(12);
  init_parameters(store, rng);
  auto imgs = rand_param({4, 3, 16, 16}, rng);
  auto out = backbone_forward(imgs, store, cfg, true);
  // Pooled features by hand, then the momentum update.
  const auto grid = values(out.final_grid);
  const std::size_t n = 4, cells = 4, d = cfg.feature_dim();
  const auto& rm = store.buffer("final_norm.running_mean");
  const auto& rv = store.buffer("final_norm.running_var");
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> pooled(n, 0.0);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < cells; ++c) pooled[b] += grid[(b * cells + c) * d + j] / cells;
    double mu = 0.0, var = 0.0;
    for (double p : pooled) mu += p / n;
    for (double p : pooled) var += (p - mu) * (p - mu) / (n - 1);
    CHECK(rm[j] == doctest::Approx(0.1 * mu).epsilon(1e-12));
    CHECK(rv[j] == doctest::Approx(0.9 + 0.1 * var).epsilon(1e-12));
  }
  CHECK_THROWS_AS(backbone_forward(rand_param({1, 3, 16, 16}, rng), store, cfg, true), ContractError);
}

TEST_CASE("end-to-end backbone gradients on the toy configuration") {
  auto cfg = toy_config();
  ParamStore store;
  register_backbone(store, cfg);
  std::mt19937_64 rng(13);
  init_parameters(store, rng);
  // Larger weights than the initializer so every path carries signal.
  for (const auto& [name, t] : store.tensors()) {
    Tensor h = t;
    auto vals = testsupport::random_values(h.numel(), rng, -0.5, 0.5);
    std::copy(vals.begin(), vals.end(), h.mutable_data().begin());
    if (name.ends_with(".gain"))
      for (double& v : h.mutable_data()) v += 1.0;
  }
  auto imgs = rand_param({3, 3, 16, 16}, rng);
  std::vector<Tensor> leaves;
  for (const auto& [_, t] : store.tensors()) leaves.push_back(t);
  leaves.push_back(imgs);
  auto build = [&] {
    auto out = backbone_forward(imgs, store, cfg, true);
    return weighted_sum(out.shared_feature) + 0.3 * weighted_sum(out.final_grid);
  };
  CHECK(worst_fd_error(build, leaves) <= 1e-4);
}
