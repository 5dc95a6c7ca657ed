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

#include "transfa/heads.hpp"

#include "transfa/errors.hpp"
#include "transfa/ops.hpp"

namespace transfa::model {
namespace {

std::string branch_prefix(std::size_t g) { return "branches." + std::to_string(g) + "."; }

}  // namespace

BranchWeights BranchWeights::from_store(const ParamStore& store, std::size_t group) {
  const std::string p = branch_prefix(group);
  BranchWeights w;
  w.fc1_weight = store.at(p + "fc1.weight");
  w.fc1_bias = store.at(p + "fc1.bias");
  w.fc2_weight = store.at(p + "fc2.weight");
  w.fc2_bias = store.at(p + "fc2.bias");
  w.fc3_weight = store.at(p + "fc3.weight");
  w.fc3_bias = store.at(p + "fc3.bias");
  return w;
}

BranchOutput branch_forward(const ad::Tensor& shared, const BranchWeights& w, double dropout_rate, bool training,
                            std::mt19937_64* rng) {
  if (shared.rank() != 2 || shared.dim(1) != w.fc1_weight.dim(0))
    throw DimensionError("branch: shared feature " + ad::to_string(shared.shape()) + " does not match fc1 " +
                         ad::to_string(w.fc1_weight.shape()));
  const bool drop = training && dropout_rate > 0.0;
  if (drop && !rng) throw ContractError("branch: training with dropout needs a random generator");
  auto maybe_drop = [&](const ad::Tensor& x) { return drop ? ad::dropout(x, dropout_rate, true, *rng) : x; };
  BranchOutput out;
  const ad::Tensor h1 = maybe_drop(ad::relu(ad::matmul(shared, w.fc1_weight) + w.fc1_bias));
  out.feature = ad::relu(ad::matmul(h1, w.fc2_weight) + w.fc2_bias);
  out.logits = ad::matmul(maybe_drop(out.feature), w.fc3_weight) + w.fc3_bias;
  return out;
}

PredictionBundle predict(const ad::Tensor& shared, const ParamStore& store, const AttributeGroupSpec& groups,
                         double dropout_rate, bool training, std::mt19937_64* rng) {
  PredictionBundle b;
  std::vector<ad::Tensor> logits;
  for (std::size_t g = 0; g < groups.group_count(); ++g) {
    BranchOutput o = branch_forward(shared, BranchWeights::from_store(store, g), dropout_rate, training, rng);
    logits.push_back(o.logits);
    b.branch_features.push_back(o.feature);
  }
  ad::Tensor grouped = ad::concat(logits, 1);
  if (!groups.contiguous()) {
    // Column c of the group-major block holds attribute order[c]; invert it.
    const auto order = groups.group_major_order();
    std::vector<std::size_t> inverse(order.size());
    for (std::size_t c = 0; c < order.size(); ++c) inverse[order[c]] = c;
    grouped = ad::gather_columns(grouped, inverse);
  }
  b.logits = grouped;
  b.probabilities = ad::sigmoid(grouped);
  b.global_feature = ad::concat(b.branch_features, 1);
  if (store.contains("identity.weight"))
    b.identity_logits = ad::matmul(b.global_feature, store.at("identity.weight")) + store.at("identity.bias");
  return b;
}

void register_heads(ParamStore& store, std::size_t feature_dim, const std::vector<std::size_t>& hidden,
                    const AttributeGroupSpec& groups, std::size_t num_identities) {
  if (hidden.size() != 2) throw ConfigError("branch_hidden: expected two widths");
  for (std::size_t g = 0; g < groups.group_count(); ++g) {
    const std::string p = branch_prefix(g);
    store.add(p + "fc1.weight", {feature_dim, hidden[0]});
    store.add(p + "fc1.bias", {hidden[0]});
    store.add(p + "fc2.weight", {hidden[0], hidden[1]});
    store.add(p + "fc2.bias", {hidden[1]});
    store.add(p + "fc3.weight", {hidden[1], groups.group(g).attributes.size()});
    store.add(p + "fc3.bias", {groups.group(g).attributes.size()});
  }
  if (num_identities > 0) {
    store.add("identity.weight", {groups.group_count() * hidden[1], num_identities});
    store.add("identity.bias", {num_identities});
  }
}

}  // namespace transfa::model
