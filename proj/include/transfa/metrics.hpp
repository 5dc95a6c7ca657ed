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
#include <span>
#include <string>
#include <vector>

#include "transfa/config.hpp"
#include "transfa/dataset.hpp"
#include "transfa/model.hpp"

namespace transfa::metrics {

struct AttributeReport {
  std::vector<std::string> attribute_names;
  std::vector<double> accuracy;  // percent, global attribute order
  std::vector<std::string> group_names;
  std::vector<double> group_mean;  // unweighted mean over each group's attributes
  double overall = 0.0;            // unweighted mean over all attributes
  std::size_t samples = 0;
};

// p and y are row-major N x A. A prediction is positive when p >= threshold.
AttributeReport attribute_accuracy(std::span<const double> p, std::span<const double> y, std::size_t n,
                                   const AttributeGroupSpec& spec, double threshold = 0.5);

std::string to_csv(const AttributeReport& report);
// Grouped two-column layout with the overall mean last.
std::string to_table(const AttributeReport& report);

struct FeatureSet {
  std::size_t dim = 0;
  std::vector<double> values;  // row-major size() x dim
  std::vector<std::size_t> identities;

  std::size_t size() const { return identities.size(); }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

// Nearest gallery entry by Euclidean distance, ties to the lowest gallery
// index. Returns percent of probes whose neighbour shares their identity.
double rank1(const FeatureSet& gallery, const FeatureSet& probe);

struct Rank1Split {
  std::vector<std::size_t> probe_rows;
  std::vector<std::size_t> gallery_rows;
  std::size_t requested = 0;
  std::size_t used = 0;
  std::string note;  // set when fewer identities than requested were available
};

// Picks `requested` identities with at least two rows, then one random probe
// row per identity; the rest of their rows form the gallery. Throws
// ProtocolError when fewer than two identities qualify, or when strict and
// fewer than requested qualify.
Rank1Split rank1_split(std::span<const std::size_t> row_identities, std::size_t requested, std::uint64_t seed,
                       bool strict = false);

struct Inference {
  std::size_t count = 0;
  std::size_t attribute_count = 0;
  std::vector<double> probabilities;  // count x A
  std::vector<double> labels;         // count x A
  std::vector<FeatureSet> branch_features;  // one per group, identities filled in
  FeatureSet global_feature;
};

// Eval-mode forward over every row of the set, in row order.
Inference run_inference(model::TransFAModel& model, const PreparedSet& data, std::size_t batch_size = 16);

struct Rank1Report {
  std::vector<std::string> sources;  // group names, then "fea_I"
  std::vector<double> accuracy;
  std::size_t probes = 0;
  std::size_t gallery = 0;
  std::uint64_t seed = 0;
  std::size_t requested = 0;
  std::size_t used = 0;
  std::string note;
};

Rank1Report rank1_protocol(const Inference& inference, const AttributeGroupSpec& groups, std::size_t num_identities,
                           std::uint64_t seed, bool strict = false);
Rank1Report rank1_protocol(model::TransFAModel& model, const PreparedSet& data, std::size_t num_identities,
                           std::uint64_t seed, bool strict = false);

std::string to_csv(const Rank1Report& report);
std::string to_table(const Rank1Report& report);

// Prediction files: header "source,<attribute names>", one row of
// probabilities per image.
void write_predictions(const std::filesystem::path& path, const std::vector<std::string>& sources,
                       const std::vector<std::string>& attribute_names, std::span<const double> p);
struct PredictionFile {
  std::vector<std::string> attribute_names;
  std::vector<std::string> sources;
  std::vector<double> probabilities;
};
PredictionFile read_predictions(const std::filesystem::path& path);

}  // namespace transfa::metrics
