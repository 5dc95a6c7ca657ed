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

#include "transfa/model.hpp"

#include <algorithm>

namespace transfa::model {

TransFAModel::TransFAModel(ModelConfig config, AttributeGroupSpec groups, std::size_t num_identities)
    : config_(std::move(config)), groups_(std::move(groups)), num_identities_(num_identities) {
  config_.validate();
  register_backbone(store_, config_);
  register_heads(store_, config_.feature_dim(), config_.branch_hidden, groups_, num_identities_);
}

void TransFAModel::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  init_parameters(store_, rng);
  std::fill(store_.buffer("final_norm.running_mean").begin(), store_.buffer("final_norm.running_mean").end(), 0.0);
  std::fill(store_.buffer("final_norm.running_var").begin(), store_.buffer("final_norm.running_var").end(), 1.0);
}

ForwardResult TransFAModel::forward(const ad::Tensor& images, bool training, std::mt19937_64* rng) {
  ForwardResult r;
  r.backbone = backbone_forward(images, store_, config_, training);
  r.prediction = predict(r.backbone.shared_feature, store_, groups_, config_.dropout_rate, training, rng);
  return r;
}

}  // namespace transfa::model
