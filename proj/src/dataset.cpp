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

#include "transfa/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "transfa/errors.hpp"

namespace transfa {
namespace {

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// Lines with their 1-based numbers; "\r" stripped.
std::vector<std::pair<std::size_t, std::string_view>> lines_of(std::string_view text) {
  std::vector<std::pair<std::size_t, std::string_view>> out;
  std::size_t n = 1, start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.emplace_back(n++, line);
    if (end == text.size()) break;
    start = end + 1;
  }
  return out;
}

bool blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

double sample_bilinear(const Image& img, double sy, double sx, std::size_t c) {
  const std::size_t y0 = static_cast<std::size_t>(sy);
  const std::size_t x0 = static_cast<std::size_t>(sx);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const double fy = sy - static_cast<double>(y0);
  const double fx = sx - static_cast<double>(x0);
  const double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
  const double bot = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
  return top * (1.0 - fy) + bot * fy;
}

double source_coord(std::size_t i, std::size_t in, std::size_t out) {
  if (out <= 1 || in <= 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(text) + "' (expected train, val or test)");
}

AttributeTable parse_attribute_text(std::string_view text, const std::string& source) {
  const auto lines = lines_of(text);
  AttributeTable table;
  std::size_t k = 0;
  auto next_nonblank = [&]() -> const std::pair<std::size_t, std::string_view>* {
    while (k < lines.size() && blank(lines[k].second)) ++k;
    return k < lines.size() ? &lines[k++] : nullptr;
  };

  const auto* count_line = next_nonblank();
  if (!count_line) throw ParseError(source, 1, "missing row count line");
  const auto count_tokens = split_ws(count_line->second);
  std::size_t declared = 0;
  try {
    if (count_tokens.size() != 1) throw std::invalid_argument("tokens");
    std::size_t used = 0;
    declared = std::stoul(count_tokens[0], &used);
    if (used != count_tokens[0].size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ParseError(source, count_line->first, "first line must be the row count");
  }

  const auto* header = next_nonblank();
  if (!header) throw ParseError(source, count_line->first + 1, "missing attribute header line");
  table.attribute_names = split_ws(header->second);
  if (table.attribute_names.empty()) throw ParseError(source, header->first, "empty attribute header");
  const std::size_t a = table.attribute_names.size();

  std::size_t last_line = header->first;
  while (const auto* row = next_nonblank()) {
    last_line = row->first;
    const auto tokens = split_ws(row->second);
    if (tokens.size() != a + 1)
      throw ParseError(source, row->first,
                       "expected " + std::to_string(a + 1) + " columns, found " + std::to_string(tokens.size()));
    std::vector<std::uint8_t> labels(a);
    for (std::size_t i = 0; i < a; ++i) {
      const std::string& t = tokens[i + 1];
      if (t == "1") {
        labels[i] = 1;
      } else if (t == "-1") {
        labels[i] = 0;
      } else {
        throw ParseError(source, row->first, "label '" + t + "' for " + table.attribute_names[i] + " is not 1 or -1");
      }
    }
    table.filenames.push_back(tokens[0]);
    table.labels.push_back(std::move(labels));
  }
  if (table.filenames.size() != declared)
    throw ParseError(source, last_line,
                     "row count mismatch: declared " + std::to_string(declared) + ", found " +
                         std::to_string(table.filenames.size()));
  return table;
}

AttributeTable parse_attribute_file(const std::filesystem::path& path) {
  return parse_attribute_text(read_text(path), path.string());
}

std::string serialize_attribute_table(const AttributeTable& table) {
  std::string out = std::to_string(table.filenames.size()) + "\n";
  for (std::size_t i = 0; i < table.attribute_names.size(); ++i) {
    if (i) out += ' ';
    out += table.attribute_names[i];
  }
  out += '\n';
  for (std::size_t r = 0; r < table.filenames.size(); ++r) {
    out += table.filenames[r];
    for (std::uint8_t v : table.labels[r]) out += v ? " 1" : " -1";
    out += '\n';
  }
  return out;
}

IdentityTable parse_identity_text(std::string_view text, const std::string& source) {
  IdentityTable table;
  std::unordered_map<std::string, std::size_t> dense;
  for (const auto& [n, line] : lines_of(text)) {
    if (blank(line)) continue;
    const auto tokens = split_ws(line);
    if (tokens.size() != 2) throw ParseError(source, n, "expected 'filename identity'");
    try {
      std::size_t used = 0;
      (void)std::stoll(tokens[1], &used);
      if (used != tokens[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(source, n, "identity '" + tokens[1] + "' is not an integer");
    }
    auto [it, fresh] = dense.try_emplace(tokens[1], dense.size());
    if (!table.identity_of.emplace(tokens[0], it->second).second)
      throw ParseError(source, n, "duplicate filename '" + tokens[0] + "'");
    (void)fresh;
  }
  table.identity_count = dense.size();
  return table;
}

IdentityTable parse_identity_file(const std::filesystem::path& path) {
  return parse_identity_text(read_text(path), path.string());
}

std::unordered_map<std::string, Split> parse_partition_text(std::string_view text, const std::string& source) {
  std::unordered_map<std::string, Split> out;
  for (const auto& [n, line] : lines_of(text)) {
    if (blank(line)) continue;
    const auto tokens = split_ws(line);
    if (tokens.size() != 2 || tokens[1].size() != 1 || tokens[1][0] < '0' || tokens[1][0] > '2')
      throw ParseError(source, n, "expected 'filename 0|1|2'");
    if (!out.emplace(tokens[0], static_cast<Split>(tokens[1][0] - '0')).second)
      throw ParseError(source, n, "duplicate filename '" + tokens[0] + "'");
  }
  return out;
}

Image resize_bilinear(const Image& image, std::size_t out_h, std::size_t out_w) {
  if (image.empty()) throw ContractError("cannot resize an empty image");
  if (out_h == 0 || out_w == 0) throw ContractError("resize target must be non-empty");
  Image out(out_h, out_w, image.channels);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = source_coord(y, image.height, out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = source_coord(x, image.width, out_w);
      for (std::size_t c = 0; c < image.channels; ++c) out.at(y, x, c) = sample_bilinear(image, sy, sx, c);
    }
  }
  return out;
}

std::vector<double> preprocess(const Image& image, std::size_t size) {
  if (image.empty()) throw ContractError("preprocess: empty image");
  if (size == 0) throw ContractError("preprocess: target size must be positive");
  const Image rgb = to_rgb(image.height == size && image.width == size ? image : resize_bilinear(image, size, size));
  std::vector<double> out(3 * size * size);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) out[(c * size + y) * size + x] = (rgb.at(y, x, c) - 0.5) / 0.5;
  return out;
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) out.push_back(i);
  return out;
}

std::vector<std::size_t> DatasetManifest::all_indices() const {
  std::vector<std::size_t> out(samples.size());
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

void DatasetManifest::validate() const {
  std::unordered_set<std::size_t> seen;
  for (const Sample& s : samples) {
    if (s.attributes.size() != attribute_names.size())
      throw ContractError("sample " + s.source_name + " has " + std::to_string(s.attributes.size()) +
                          " labels, expected " + std::to_string(attribute_names.size()));
    if (s.identity >= identity_count)
      throw ContractError("sample " + s.source_name + " identity out of range");
    seen.insert(s.identity);
  }
  if (seen.size() != identity_count)
    throw ContractError("identity_count " + std::to_string(identity_count) + " but " + std::to_string(seen.size()) +
                        " distinct identities present");
}

DatasetManifest load_celeba_directory(const std::filesystem::path& dir, std::size_t max_samples) {
  namespace fs = std::filesystem;
  const fs::path attr_path = dir / "list_attr_celeba.txt";
  const fs::path id_path = dir / "identity_CelebA.txt";
  if (!fs::exists(attr_path)) throw LoadError("missing " + attr_path.string());
  if (!fs::exists(id_path)) throw LoadError("missing " + id_path.string());
  fs::path image_dir = dir / "img_align_celeba";
  if (!fs::is_directory(image_dir)) image_dir = dir / "images";
  if (!fs::is_directory(image_dir)) throw LoadError("no img_align_celeba/ or images/ directory under " + dir.string());

  const AttributeTable attrs = parse_attribute_file(attr_path);
  const IdentityTable ids = parse_identity_file(id_path);
  std::unordered_map<std::string, Split> partition;
  if (fs::exists(dir / "list_eval_partition.txt"))
    partition = parse_partition_text(read_text(dir / "list_eval_partition.txt"),
                                     (dir / "list_eval_partition.txt").string());

  DatasetManifest m;
  m.attribute_names = attrs.attribute_names;
  const std::size_t n = max_samples ? std::min(max_samples, attrs.filenames.size()) : attrs.filenames.size();
  std::unordered_map<std::size_t, std::size_t> dense;
  m.samples.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::string& name = attrs.filenames[r];
    auto id = ids.identity_of.find(name);
    if (id == ids.identity_of.end()) throw LoadError("no identity for " + name + " in " + id_path.string());
    Sample s;
    s.source_name = name;
    s.attributes = attrs.labels[r];
    s.identity = dense.try_emplace(id->second, dense.size()).first->second;
    if (auto p = partition.find(name); p != partition.end()) s.split = p->second;
    s.image = to_rgb(read_image(image_dir / name));
    m.samples.push_back(std::move(s));
  }
  m.identity_count = dense.size();

  if (fs::exists(dir / "grouping.cfg")) m.region_groups = load_config(dir / "grouping.cfg").groups;
  m.validate();
  return m;
}

void write_celeba_directory(const DatasetManifest& manifest, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  manifest.validate();
  fs::create_directories(dir / "images");
  AttributeTable table;
  table.attribute_names = manifest.attribute_names;
  std::string ids, parts;
  for (const Sample& s : manifest.samples) {
    table.filenames.push_back(s.source_name);
    table.labels.push_back(s.attributes);
    ids += s.source_name + " " + std::to_string(s.identity + 1) + "\n";
    parts += s.source_name + " " + std::to_string(static_cast<int>(s.split)) + "\n";
    write_ppm(dir / "images" / s.source_name, s.image);
  }
  write_text(dir / "list_attr_celeba.txt", serialize_attribute_table(table));
  write_text(dir / "identity_CelebA.txt", ids);
  write_text(dir / "list_eval_partition.txt", parts);
  if (manifest.region_groups)
    write_text(dir / "grouping.cfg", "# attribute regions of the generated data\n" +
                                         manifest.region_groups->to_config_text());
}

PreparedSet PreparedSet::build(const DatasetManifest& manifest, std::span<const std::size_t> indices,
                               const AttributeGroupSpec& groups, std::size_t image_size) {
  PreparedSet set;
  set.attribute_count_ = groups.attribute_count();
  set.image_size_ = image_size;
  set.identity_count_ = manifest.identity_count;

  std::unordered_map<std::string, std::size_t> column_of;
  for (std::size_t i = 0; i < manifest.attribute_names.size(); ++i)
    column_of.emplace(canonical_attribute_key(manifest.attribute_names[i]), i);
  std::vector<std::size_t> column(set.attribute_count_);
  for (std::size_t a = 0; a < set.attribute_count_; ++a) {
    auto it = column_of.find(groups.key(a));
    if (it == column_of.end())
      throw LookupError("attribute '" + groups.display_name(a) + "' is not in the annotation file");
    column[a] = it->second;
  }

  const std::size_t per = 3 * image_size * image_size;
  set.inputs_.reserve(indices.size() * per);
  set.labels_.reserve(indices.size() * set.attribute_count_);
  for (std::size_t idx : indices) {
    const Sample& s = manifest.samples.at(idx);
    const auto px = preprocess(s.image, image_size);
    set.inputs_.insert(set.inputs_.end(), px.begin(), px.end());
    for (std::size_t a = 0; a < set.attribute_count_; ++a) set.labels_.push_back(s.attributes.at(column[a]));
    set.identities_.push_back(s.identity);
    set.names_.push_back(s.source_name);
  }
  return set;
}

std::span<const double> PreparedSet::input(std::size_t row) const {
  const std::size_t per = 3 * image_size_ * image_size_;
  return std::span<const double>(inputs_).subspan(row * per, per);
}

std::span<const std::uint8_t> PreparedSet::labels(std::size_t row) const {
  return std::span<const std::uint8_t>(labels_).subspan(row * attribute_count_, attribute_count_);
}

Batch PreparedSet::batch(std::span<const std::size_t> rows) const {
  if (rows.empty()) throw ContractError("empty batch");
  const std::size_t n = rows.size();
  const std::size_t per = 3 * image_size_ * image_size_;
  std::vector<double> images;
  images.reserve(n * per);
  std::vector<double> targets;
  targets.reserve(n * attribute_count_);
  Batch b;
  for (std::size_t r : rows) {
    if (r >= size()) throw ContractError("batch row " + std::to_string(r) + " out of range");
    const auto in = input(r);
    images.insert(images.end(), in.begin(), in.end());
    for (std::uint8_t v : labels(r)) targets.push_back(v);
    b.identities.push_back(identities_[r]);
    b.rows.push_back(r);
  }
  b.images = ad::Tensor::from_data({n, 3, image_size_, image_size_}, std::move(images));
  b.attributes = ad::Tensor::from_data({n, attribute_count_}, std::move(targets));
  return b;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch) {
  if (batch_size < 2) throw ContractError("batch_size must be at least 2");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < count; i += batch_size) {
    const std::size_t end = std::min(count, i + batch_size);
    if (end - i < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace transfa
