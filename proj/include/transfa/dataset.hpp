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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "transfa/config.hpp"
#include "transfa/image_io.hpp"
#include "transfa/tensor.hpp"

namespace transfa {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

std::string_view split_name(Split split);
// Accepts "train", "val", "test".
Split parse_split(std::string_view text);

// Annotation file in the CelebA layout: a count line, a header of attribute
// names, then "filename v1 ... vA" rows with each value 1 or -1.
struct AttributeTable {
  std::vector<std::string> attribute_names;
  std::vector<std::string> filenames;
  std::vector<std::vector<std::uint8_t>> labels;  // -1 stored as 0
};

AttributeTable parse_attribute_text(std::string_view text, const std::string& source = "<attributes>");
AttributeTable parse_attribute_file(const std::filesystem::path& path);
std::string serialize_attribute_table(const AttributeTable& table);

// "filename label" lines. Labels are re-indexed 0..C-1 in first-appearance order.
struct IdentityTable {
  std::unordered_map<std::string, std::size_t> identity_of;
  std::size_t identity_count = 0;
};

IdentityTable parse_identity_text(std::string_view text, const std::string& source = "<identities>");
IdentityTable parse_identity_file(const std::filesystem::path& path);

// "filename 0|1|2" lines.
std::unordered_map<std::string, Split> parse_partition_text(std::string_view text,
                                                            const std::string& source = "<partition>");

// Bilinear resize with corner-aligned sampling: output pixel i reads source
// coordinate i * (in - 1) / (out - 1).
Image resize_bilinear(const Image& image, std::size_t out_h, std::size_t out_w);

// Resize to size x size, convert to channel-first and map [0,1] to [-1,1].
// Returns 3 * size * size values.
std::vector<double> preprocess(const Image& image, std::size_t size);

struct Sample {
  Image image;
  std::vector<std::uint8_t> attributes;  // manifest attribute order
  std::size_t identity = 0;
  std::string source_name;
  Split split = Split::Train;
};

struct DatasetManifest {
  std::vector<Sample> samples;
  std::vector<std::string> attribute_names;
  std::size_t identity_count = 0;
  // Known attribute-to-region grouping, when the data generator provides one.
  std::optional<AttributeGroupSpec> region_groups;

  std::vector<std::size_t> indices(Split split) const;
  std::vector<std::size_t> all_indices() const;
  // Checks label widths, identity range and identity_count.
  void validate() const;
};

// Reads list_attr_celeba.txt, identity_CelebA.txt, an optional
// list_eval_partition.txt and images from img_align_celeba/ or images/.
// max_samples > 0 keeps only the first rows; identities are re-indexed over
// the kept rows. A grouping.cfg beside the annotations fills region_groups.
DatasetManifest load_celeba_directory(const std::filesystem::path& dir, std::size_t max_samples = 0);
// Writes the same layout with PPM images (identity labels written 1-based).
void write_celeba_directory(const DatasetManifest& manifest, const std::filesystem::path& dir);

// Band grouping of synthetic attributes in global order: attribute a is
// "<band>_<a / 4>" and belongs to band a % 4.
AttributeGroupSpec synth_region_groups(std::size_t attr_count);

struct SynthOptions {
  std::size_t num_identities = 4;
  std::size_t per_identity = 8;
  std::size_t attr_count = 8;
  std::uint64_t seed = 1;
  std::size_t image_size = 64;
};

// Deterministic face-like dataset. The image is cut into four horizontal
// bands ("around_head", "eyes", "mouth", "neck"); attribute a lives in band
// a % 4 and shows up as a stripe texture there. Identities fix a background
// pattern and an attribute vector; samples add pixel noise and flip at most
// floor(A / 20) attribute bits.
DatasetManifest synth_dataset(const SynthOptions& options);
DatasetManifest synth_dataset(std::size_t num_identities, std::size_t per_identity, std::size_t attr_count,
                              std::uint64_t seed);

struct Batch {
  ad::Tensor images;      // [N, 3, S, S]
  ad::Tensor attributes;  // [N, A] in {0, 1}
  std::vector<std::size_t> identities;
  std::vector<std::size_t> rows;  // source rows in the prepared set

  std::size_t size() const { return identities.size(); }
};

// Preprocessed samples with labels reordered to a group spec's global order.
class PreparedSet {
 public:
  PreparedSet() = default;
  // Throws LookupError when a grouped attribute is missing from the manifest.
  static PreparedSet build(const DatasetManifest& manifest, std::span<const std::size_t> indices,
                           const AttributeGroupSpec& groups, std::size_t image_size);

  std::size_t size() const { return identities_.size(); }
  std::size_t attribute_count() const { return attribute_count_; }
  std::size_t image_size() const { return image_size_; }
  std::size_t identity_count() const { return identity_count_; }

  Batch batch(std::span<const std::size_t> rows) const;
  std::span<const double> input(std::size_t row) const;
  std::span<const std::uint8_t> labels(std::size_t row) const;
  std::size_t identity(std::size_t row) const { return identities_.at(row); }
  const std::string& source_name(std::size_t row) const { return names_.at(row); }

 private:
  std::size_t attribute_count_ = 0;
  std::size_t image_size_ = 0;
  std::size_t identity_count_ = 0;
  std::vector<double> inputs_;
  std::vector<std::uint8_t> labels_;
  std::vector<std::size_t> identities_;
  std::vector<std::string> names_;
};

// Row indices for one epoch: a permutation seeded by (seed, epoch) cut into
// batches of batch_size; a trailing batch smaller than 2 is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch);

}  // namespace transfa
