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
#include <random>

#include "transfa/backbone.hpp"
#include "transfa/config.hpp"
#include "transfa/heads.hpp"
#include "transfa/params.hpp"

namespace transfa::model {

struct ForwardResult {
  BackboneOutput backbone;
  PredictionBundle prediction;
};

// Backbone plus one branch per attribute group and, when num_identities > 0,
// the identity classifier.
class TransFAModel {
 public:
  TransFAModel(ModelConfig config, AttributeGroupSpec groups, std::size_t num_identities);

  // Deterministic under the seed.
  void initialize(std::uint64_t seed);

  // rng may be null when not training.
  ForwardResult forward(const ad::Tensor& images, bool training, std::mt19937_64* rng);

  const ModelConfig& config() const { return config_; }
  const AttributeGroupSpec& groups() const { return groups_; }
  std::size_t num_identities() const { return num_identities_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

 private:
  ModelConfig config_;
  AttributeGroupSpec groups_;
  std::size_t num_identities_;
  ParamStore store_;
};

}  // namespace transfa::model
