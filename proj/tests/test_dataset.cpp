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

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <unistd.h>

#include "transfa/dataset.hpp"
#include "transfa/errors.hpp"

using namespace transfa;
namespace fs = std::filesystem;

namespace {

std::string forty_names() {
  std::string s;
  for (int i = 0; i < 40; ++i) s += (i ? " a" : "a") + std::to_string(i);
  return s;
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("transfa_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("attribute rows map 1 to 1 and -1 to 0") {
  std::string row = "000001.jpg 1";
  for (int i = 1; i < 40; ++i) row += " -1";
  const auto t = parse_attribute_text("1\n" + forty_names() + "\n" + row + "\n");
  REQUIRE(t.attribute_names.size() == 40);
  REQUIRE(t.labels.size() == 1);
  CHECK(t.filenames[0] == "000001.jpg");
  CHECK(t.labels[0][0] == 1);
  CHECK(t.labels[0][1] == 0);
}

TEST_CASE("attribute file errors carry line numbers") {
  SUBCASE("declared count larger than rows") {
    try {
      parse_attribute_text("2\nx y\nf.jpg 1 -1\n", "attrs.txt");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("row count") != std::string::npos);
      CHECK(e.line() == 3);
    }
  }
  SUBCASE("label outside {1,-1}") {
    try {
      parse_attribute_text("2\nx y\nf.jpg 1 -1\ng.jpg 0 1\n", "attrs.txt");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 4);
      CHECK(std::string(e.what()).find("attrs.txt:4") != std::string::npos);
    }
  }
  SUBCASE("wrong column count") {
    try {
      parse_attribute_text("1\nx y\nf.jpg 1\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(std::string(e.what()).find("columns") != std::string::npos);
    }
  }
  CHECK_THROWS_AS(parse_attribute_text("two\nx\n"), ParseError);
  CHECK_THROWS_AS(parse_attribute_text(""), ParseError);
}

TEST_CASE("attribute table round-trips through serialization") {
  AttributeTable t;
  t.attribute_names = {"Smiling", "Bald", "Male"};
  t.filenames = {"a.jpg", "b.jpg"};
  t.labels = {{1, 0, 1}, {0, 0, 1}};
  const auto back = parse_attribute_text(serialize_attribute_table(t));
  CHECK(back.attribute_names == t.attribute_names);
  CHECK(back.filenames == t.filenames);
  CHECK(back.labels == t.labels);
}

TEST_CASE("full CelebA annotation file when available") {
  const char* dir = std::getenv("TRANSFA_CELEBA_DIR");
  if (!dir || !fs::exists(fs::path(dir) / "list_attr_celeba.txt")) {
    MESSAGE("TRANSFA_CELEBA_DIR not set; skipping the full-file count check");
    return;
  }
  const fs::path path = fs::path(dir) / "list_attr_celeba.txt";
  // Oracle: count non-empty lines after the two header lines.
  std::ifstream in(path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line))
    if (line.find_first_not_of(" \r\t") != std::string::npos) ++lines;
  const auto t = parse_attribute_file(path);
  CHECK(t.attribute_names.size() == 40);
  CHECK(t.filenames.size() == lines - 2);
  CHECK(t.filenames.size() == 202599);
}

TEST_CASE("identity labels are re-indexed densely") {
  const auto t = parse_identity_text("a.jpg 7\nb.jpg 7\nc.jpg 9\n");
  CHECK(t.identity_count == 2);
  CHECK(t.identity_of.at("a.jpg") == 0);
  CHECK(t.identity_of.at("b.jpg") == 0);
  CHECK(t.identity_of.at("c.jpg") == 1);

  const auto empty = parse_identity_text("");
  CHECK(empty.identity_count == 0);
  CHECK(empty.identity_of.empty());

  CHECK(error_of([] { parse_identity_text("a.jpg 1\na.jpg 2\n"); }).find("duplicate") != std::string::npos);
  CHECK_THROWS_AS(parse_identity_text("a.jpg 1 2\n"), ParseError);
  CHECK_THROWS_AS(parse_identity_text("a.jpg x\n"), ParseError);
}

TEST_CASE("partition file") {
  const auto p = parse_partition_text("a.jpg 0\nb.jpg 2\n");
  CHECK(p.at("a.jpg") == Split::Train);
  CHECK(p.at("b.jpg") == Split::Test);
  CHECK_THROWS_AS(parse_partition_text("a.jpg 3\n"), ParseError);
}

TEST_CASE("preprocess of constant images") {
  for (double v : {0.5, 1.0, 0.0}) {
    const Image img(5, 7, 3, v);
    const auto out = preprocess(img, 4);
    REQUIRE(out.size() == 3 * 4 * 4);
    const double want = (v - 0.5) / 0.5;
    for (double x : out) CHECK(x == want);
  }
  CHECK_THROWS_AS(preprocess(Image(), 4), ContractError);
}

TEST_CASE("bilinear upsampling of a checkerboard") {
  Image board(2, 2, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    board.at(0, 0, c) = 1.0;
    board.at(1, 1, c) = 1.0;
  }
  const auto out = preprocess(board, 4);
  // Hand evaluation: with aligned corners the interior samples sit at
  // t = 1/3 and 2/3, so the diagonal gets (2/3)^2 + (1/3)^2 = 5/9 and the
  // anti-diagonal gets 2 * (1/3)(2/3) = 4/9.
  const double diag = (5.0 / 9.0 - 0.5) / 0.5;
  const double anti = (4.0 / 9.0 - 0.5) / 0.5;
  for (std::size_t c = 0; c < 3; ++c) {
    auto at = [&](std::size_t y, std::size_t x) { return out[(c * 4 + y) * 4 + x]; };
    CHECK(at(1, 1) == doctest::Approx(diag).epsilon(1e-14));
    CHECK(at(2, 2) == doctest::Approx(diag).epsilon(1e-14));
    CHECK(at(1, 2) == doctest::Approx(anti).epsilon(1e-14));
    CHECK(at(2, 1) == doctest::Approx(anti).epsilon(1e-14));
    CHECK(at(0, 0) == 1.0);
    CHECK(at(0, 3) == -1.0);
  }
}

TEST_CASE("netpbm images round-trip at 8-bit precision") {
  const fs::path dir = scratch_dir("img");
  Image img(3, 4, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i * 7 % 256) / 255.0;
  write_ppm(dir / "x.ppm", img);
  const Image back = read_image(dir / "x.ppm");
  CHECK(back.height == 3);
  CHECK(back.width == 4);
  CHECK(back.pixels == img.pixels);

  write_pgm(dir / "g.pgm", img);
  const Image grey = read_image(dir / "g.pgm");
  CHECK(grey.channels == 1);
  CHECK(grey.at(2, 3, 0) == img.at(2, 3, 0));

  {
    std::ofstream f(dir / "a.ppm");
    f << "P3\n# comment\n2 1\n255\n255 0 0  0 0 255\n";
  }
  const Image ascii = read_image(dir / "a.ppm");
  CHECK(ascii.at(0, 0, 0) == 1.0);
  CHECK(ascii.at(0, 1, 2) == 1.0);
  CHECK_THROWS_AS(read_image(dir / "missing.ppm"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("synthetic data is deterministic under its seed") {
  const auto a = synth_dataset(4, 8, 8, 1);
  const auto b = synth_dataset(4, 8, 8, 1);
  REQUIRE(a.samples.size() == 32);
  CHECK(a.identity_count == 4);
  CHECK(a.attribute_names == b.attribute_names);
  bool all_equal = true;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    all_equal = all_equal && a.samples[i].image.pixels == b.samples[i].image.pixels &&
                a.samples[i].attributes == b.samples[i].attributes && a.samples[i].identity == b.samples[i].identity &&
                a.samples[i].source_name == b.samples[i].source_name;
  }
  CHECK(all_equal);
  const auto c = synth_dataset(4, 8, 8, 2);
  CHECK(c.samples[0].image.pixels != a.samples[0].image.pixels);
  a.validate();
  REQUIRE(a.region_groups.has_value());
  CHECK(a.region_groups->group_count() == 4);
}

TEST_CASE("same-identity samples agree on at least 90% of attribute bits") {
  for (std::size_t attrs : {8u, 40u, 61u}) {
    const auto m = synth_dataset(6, 5, attrs, 3);
    double worst = 1.0;
    for (std::size_t i = 0; i < m.samples.size(); ++i)
      for (std::size_t j = i + 1; j < m.samples.size(); ++j) {
        if (m.samples[i].identity != m.samples[j].identity) continue;
        std::size_t same = 0;
        for (std::size_t a = 0; a < attrs; ++a) same += m.samples[i].attributes[a] == m.samples[j].attributes[a];
        worst = std::min(worst, static_cast<double>(same) / static_cast<double>(attrs));
      }
    INFO("attr_count=" << attrs);
    CHECK(worst >= 0.9);
  }
}

TEST_CASE("a linear probe on raw pixels predicts every synthetic attribute") {
  // Mean-difference classifier trained on some identities, scored on others.
  const std::size_t train_ids = 60, test_ids = 20, attrs = 8;
  const auto m = synth_dataset(train_ids + test_ids, 3, attrs, 11);
  const std::size_t dim = m.samples[0].image.pixels.size();
  for (std::size_t a = 0; a < attrs; ++a) {
    std::vector<double> pos(dim, 0.0), neg(dim, 0.0);
    double np = 0, nn = 0;
    for (const Sample& s : m.samples) {
      if (s.identity >= train_ids) continue;
      auto& acc = s.attributes[a] ? pos : neg;
      (s.attributes[a] ? np : nn) += 1;
      for (std::size_t k = 0; k < dim; ++k) acc[k] += s.image.pixels[k];
    }
    REQUIRE(np > 0);
    REQUIRE(nn > 0);
    std::vector<double> w(dim);
    double bias = 0;
    for (std::size_t k = 0; k < dim; ++k) {
      pos[k] /= np;
      neg[k] /= nn;
      w[k] = pos[k] - neg[k];
      bias -= w[k] * 0.5 * (pos[k] + neg[k]);
    }
    std::size_t right = 0, total = 0;
    for (const Sample& s : m.samples) {
      if (s.identity < train_ids) continue;
      double score = bias;
      for (std::size_t k = 0; k < dim; ++k) score += w[k] * s.image.pixels[k];
      right += (score > 0) == (s.attributes[a] == 1);
      ++total;
    }
    const double acc = static_cast<double>(right) / static_cast<double>(total);
    INFO("attribute " << m.attribute_names[a] << " accuracy " << acc);
    CHECK(acc > 0.6);
  }
}

TEST_CASE("epoch batches") {
  auto sizes = [](const auto& batches) {
    std::vector<std::size_t> s;
    for (const auto& b : batches) s.push_back(b.size());
    return s;
  };
  CHECK(sizes(epoch_batches(10, 4, 7, 0)) == std::vector<std::size_t>{4, 4, 2});
  CHECK(sizes(epoch_batches(5, 4, 7, 0)) == std::vector<std::size_t>{4});
  CHECK(epoch_batches(10, 4, 7, 3) == epoch_batches(10, 4, 7, 3));
  CHECK(epoch_batches(10, 4, 7, 3) != epoch_batches(10, 4, 7, 4));
  std::set<std::size_t> seen;
  for (const auto& b : epoch_batches(10, 4, 9, 1)) seen.insert(b.begin(), b.end());
  CHECK(seen.size() == 10);
  CHECK_THROWS_AS(epoch_batches(10, 1, 7, 0), ContractError);
}

TEST_CASE("prepared batches follow the group spec order") {
  const auto m = synth_dataset(3, 4, 8, 5);
  // Reverse the global order relative to the annotation header.
  std::vector<std::string> reversed(m.attribute_names.rbegin(), m.attribute_names.rend());
  const auto spec = AttributeGroupSpec::from_groups({{"all", reversed}});
  const auto all = m.all_indices();
  const auto set = PreparedSet::build(m, all, spec, 16);
  REQUIRE(set.size() == 12);
  const std::vector<std::size_t> rows = {0, 5, 11};
  const Batch b = set.batch(rows);
  CHECK(b.images.shape() == ad::Shape{3, 3, 16, 16});
  CHECK(b.attributes.shape() == ad::Shape{3, 8});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    CHECK(b.identities[r] == m.samples[rows[r]].identity);
    for (std::size_t a = 0; a < 8; ++a) {
      const double v = b.attributes.at({r, a});
      CHECK((v == 0.0 || v == 1.0));
      CHECK(v == m.samples[rows[r]].attributes[7 - a]);
    }
  }
  for (double v : b.images.data()) CHECK((v >= -1.0 && v <= 1.0));

  const auto missing = AttributeGroupSpec::from_groups({{"g", {"not_there"}}});
  CHECK_THROWS_AS(PreparedSet::build(m, all, missing, 16), LookupError);
}

TEST_CASE("a written synthetic dataset reloads through the CelebA parser") {
  const fs::path dir = scratch_dir("synth");
  const auto m = synth_dataset(3, 4, 8, 21);
  write_celeba_directory(m, dir / "data");
  const auto back = load_celeba_directory(dir / "data");
  REQUIRE(back.samples.size() == m.samples.size());
  CHECK(back.attribute_names == m.attribute_names);
  CHECK(back.identity_count == m.identity_count);
  REQUIRE(back.region_groups.has_value());
  CHECK(*back.region_groups == *m.region_groups);
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    CHECK(back.samples[i].image.pixels == m.samples[i].image.pixels);
    CHECK(back.samples[i].attributes == m.samples[i].attributes);
    CHECK(back.samples[i].identity == m.samples[i].identity);
    CHECK(back.samples[i].split == m.samples[i].split);
  }
  const auto head = load_celeba_directory(dir / "data", 5);
  CHECK(head.samples.size() == 5);
  CHECK(head.identity_count == 2);
  CHECK_THROWS_AS(load_celeba_directory(dir / "nowhere"), LoadError);
  fs::remove_all(dir);
}
