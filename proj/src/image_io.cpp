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

#include "transfa/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "transfa/errors.hpp"

#if defined(TRANSFA_HAVE_JPEG)
#include <jpeglib.h>

#include <csetjmp>
#endif

namespace transfa {
namespace {

// Netpbm header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

std::size_t header_value(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = next_token(in);
  try {
    return static_cast<std::size_t>(std::stoul(tok));
  } catch (const std::exception&) {
    throw IoError("malformed image header in " + path.string());
  }
}

Image read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  const std::string magic = next_token(in);
  std::size_t channels = 0;
  bool binary = false;
  if (magic == "P5") {
    channels = 1;
    binary = true;
  } else if (magic == "P6") {
    channels = 3;
    binary = true;
  } else if (magic == "P2") {
    channels = 1;
  } else if (magic == "P3") {
    channels = 3;
  } else {
    throw IoError("unsupported image format in " + path.string());
  }
  const std::size_t width = header_value(in, path);
  const std::size_t height = header_value(in, path);
  const std::size_t maxval = header_value(in, path);
  if (width == 0 || height == 0 || maxval == 0 || maxval > 255)
    throw IoError("unsupported image geometry or depth in " + path.string());
  Image img(height, width, channels);
  const std::size_t n = img.pixels.size();
  if (binary) {
    std::vector<unsigned char> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw IoError("truncated image data in " + path.string());
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<double>(raw[i]) / static_cast<double>(maxval);
  } else {
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<double>(header_value(in, path)) / static_cast<double>(maxval);
  }
  return img;
}

#if defined(TRANSFA_HAVE_JPEG)
struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void on_jpeg_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open image " + path.string());
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = on_jpeg_error;
  Image img;
  std::vector<unsigned char> row;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    throw IoError("corrupt JPEG " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img = Image(cinfo.output_height, cinfo.output_width, 3);
  row.resize(static_cast<std::size_t>(cinfo.output_width) * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* rows[1] = {row.data()};
    const std::size_t y = cinfo.output_scanline;
    jpeg_read_scanlines(&cinfo, rows, 1);
    for (std::size_t i = 0; i < row.size(); ++i) img.pixels[y * row.size() + i] = row[i] / 255.0;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(f);
  return img;
}
#endif

void write_netpbm(const std::filesystem::path& path, const Image& image, bool color) {
  if (image.empty()) throw IoError("refusing to write an empty image to " + path.string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (color ? "P6\n" : "P5\n") << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> raw;
  raw.reserve(image.height * image.width * (color ? 3 : 1));
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) {
      if (color) {
        for (std::size_t c = 0; c < 3; ++c) raw.push_back(quantize(image.at(y, x, image.channels == 1 ? 0 : c)));
      } else {
        raw.push_back(quantize(image.at(y, x, 0)));
      }
    }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Image read_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".jpg" || ext == ".jpeg") {
#if defined(TRANSFA_HAVE_JPEG)
    return read_jpeg(path);
#else
    throw IoError("JPEG support not compiled in; cannot read " + path.string());
#endif
  }
  return read_netpbm(path);
}

void write_ppm(const std::filesystem::path& path, const Image& image) { write_netpbm(path, image, true); }

void write_pgm(const std::filesystem::path& path, const Image& image) { write_netpbm(path, image, false); }

Image to_rgb(Image image) {
  if (image.channels == 3) return image;
  if (image.channels != 1) throw IoError("expected a 1- or 3-channel image");
  Image out(image.height, image.width, 3);
  for (std::size_t i = 0; i < image.height * image.width; ++i)
    for (std::size_t c = 0; c < 3; ++c) out.pixels[i * 3 + c] = image.pixels[i];
  return out;
}

}  // namespace transfa
