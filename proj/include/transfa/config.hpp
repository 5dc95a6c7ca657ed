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
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace transfa {

// Lowercase snake-case key used to match attribute names across files:
// "5 O'Clock Shadow" and "5_o_Clock_Shadow" both map to "5_o_clock_shadow",
// and a leading "wearing_" is folded to "wear_".
std::string canonical_attribute_key(std::string_view name);

struct AttributeGroup {
  std::string name;
  std::vector<std::size_t> attributes;  // global attribute indices, in group order
};

// Partition of A attributes into G ordered groups. Every attribute has a
// global index 0..A-1; model outputs and label vectors use that order.
class AttributeGroupSpec {
 public:
  using GroupList = std::vector<std::pair<std::string, std::vector<std::string>>>;

  AttributeGroupSpec() = default;

  // Global order is the concatenation of the groups.
  static AttributeGroupSpec from_groups(const GroupList& groups);
  // Global order is attribute_names; groups must partition it exactly.
  static AttributeGroupSpec from_partition(const std::vector<std::string>& attribute_names, const GroupList& groups);
  // The seven attention-region groups over the 40 CelebA attributes.
  static const AttributeGroupSpec& celeba_default();

  std::size_t attribute_count() const { return display_names_.size(); }
  std::size_t group_count() const { return groups_.size(); }
  const std::vector<AttributeGroup>& groups() const { return groups_; }
  const AttributeGroup& group(std::size_t g) const { return groups_.at(g); }

  const std::string& display_name(std::size_t index) const { return display_names_.at(index); }
  const std::string& key(std::size_t index) const { return keys_.at(index); }
  const std::vector<std::string>& display_names() const { return display_names_; }

  std::optional<std::size_t> find(std::string_view name) const;
  // Throws LookupError for unknown names.
  std::size_t index_of(std::string_view name) const;
  // Group holding a given global attribute index.
  std::size_t group_of(std::size_t index) const { return group_of_.at(index); }

  // True when global order equals the concatenated group order.
  bool contiguous() const;
  // Global indices in concatenated group order.
  std::vector<std::size_t> group_major_order() const;

  // "attributes = ..." plus one "group.<name> = ..." line per group.
  std::string to_config_text() const;

  bool operator==(const AttributeGroupSpec& other) const;

 private:
  std::vector<std::string> display_names_;
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<AttributeGroup> groups_;
  std::vector<std::size_t> group_of_;
};

struct StageSpec {
  std::size_t layers = 0;
  bool merge_after = false;

  bool operator==(const StageSpec&) const = default;
};

// Resolved per-stage shapes. Windows larger than the grid collapse to the grid
// with no shift; grids not divisible by the window are zero-padded inside the
// attention step.
struct StageGeometry {
  std::size_t grid = 0;      // token grid extent (square)
  std::size_t channels = 0;
  std::size_t window = 0;
  std::size_t shift = 0;
  std::size_t heads = 0;
  std::size_t layers = 0;
  bool merge_after = false;
};

struct ModelConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 96;
  std::vector<StageSpec> stage_layout = {{2, true}, {2, true}, {6, true}, {2, false}};
  std::vector<std::size_t> num_heads = {3, 6, 12, 24};
  std::size_t window_size = 4;
  std::size_t shift_size = 2;
  std::size_t mlp_ratio = 4;
  std::vector<std::size_t> branch_hidden = {256, 256};
  double dropout_rate = 0.5;
  // 0 means "take it from the training data".
  std::size_t num_identities = 0;

  void validate() const;
  std::vector<StageGeometry> geometry() const;
  std::size_t final_grid() const;
  std::size_t feature_dim() const;

  bool operator==(const ModelConfig&) const = default;
};

struct LossWeights {
  double alpha = 0.1;
  double beta = 0.3;
  double lambda = 5.0;
  // Off: only the attribute term is trained (ablation baseline).
  bool identity_constraint = true;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct TrainConfig {
  double base_lr = 0.01;
  double lr_decay_factor = 10.0;
  std::size_t lr_decay_epochs = 5;
  double momentum = 0.9;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::uint64_t seed = 42;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// base_lr * decay_factor^-floor(epoch / decay_epochs)
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct Config {
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
  AttributeGroupSpec groups = AttributeGroupSpec::celeba_default();
  bool seed_from_file = false;
};

Config parse_config(std::string_view text, const std::string& source = "<config>");
Config load_config(const std::filesystem::path& path);
// Round-trips through parse_config.
std::string to_config_text(const Config& config);

// TRANSFA_SEED, if set, replaces the seed.
void apply_env_overrides(Config& config);

}  // namespace transfa
