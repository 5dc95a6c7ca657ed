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
#include <filesystem>
#include <vector>

namespace transfa {

// Interleaved (HWC) image with real values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  bool empty() const { return height == 0 || width == 0; }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

// round(clamp(v, 0, 1) * 255)
std::uint8_t quantize(double v);

// Reads binary/ASCII PGM and PPM; JPEG when built with libjpeg.
Image read_image(const std::filesystem::path& path);
// 8-bit binary PPM (P6); single-channel images are replicated.
void write_ppm(const std::filesystem::path& path, const Image& image);
// 8-bit binary PGM (P5) from the first channel.
void write_pgm(const std::filesystem::path& path, const Image& image);

// Replicates a grey image to three channels; three-channel input passes through.
Image to_rgb(Image image);

}  // namespace transfa
