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
#include <random>
#include <string>
#include <vector>

#include "transfa/config.hpp"
#include "transfa/params.hpp"
#include "transfa/tensor.hpp"

namespace transfa::model {

struct BranchWeights {
  ad::Tensor fc1_weight, fc1_bias, fc2_weight, fc2_bias, fc3_weight, fc3_bias;

  static BranchWeights from_store(const ParamStore& store, std::size_t group);
};

struct BranchOutput {
  ad::Tensor feature;  // [N, hidden2], ReLU output of the second layer
  ad::Tensor logits;   // [N, A_g]
};

// fc1 -> ReLU -> dropout -> fc2 -> ReLU (feature) -> dropout -> fc3.
// rng may be null when not training.
BranchOutput branch_forward(const ad::Tensor& shared, const BranchWeights& w, double dropout_rate, bool training,
                            std::mt19937_64* rng);

struct PredictionBundle {
  ad::Tensor logits;         // [N, A], global attribute order
  ad::Tensor probabilities;  // sigmoid(logits)
  std::vector<ad::Tensor> branch_features;  // one [N, hidden2] per group
  ad::Tensor global_feature;                // [N, G * hidden2], branches in group order
  ad::Tensor identity_logits;               // [N, C]; undefined when C == 0
};

// Branches run in group order so dropout draws are reproducible.
PredictionBundle predict(const ad::Tensor& shared, const ParamStore& store, const AttributeGroupSpec& groups,
                         double dropout_rate, bool training, std::mt19937_64* rng);

void register_heads(ParamStore& store, std::size_t feature_dim, const std::vector<std::size_t>& hidden,
                    const AttributeGroupSpec& groups, std::size_t num_identities);

}  // namespace transfa::model
