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

#include "transfa/losses.hpp"

#include <cmath>

#include "transfa/errors.hpp"
#include "transfa/ops.hpp"

namespace transfa::loss {

AttributeLoss loss_attribute(const ad::Tensor& p, const ad::Tensor& y, const AttributeGroupSpec& groups) {
  if (p.rank() != 2 || p.shape() != y.shape())
    throw DimensionError("loss_attribute: probabilities " + ad::to_string(p.shape()) + " and labels " +
                         ad::to_string(y.shape()) + " must both be [N, A]");
  if (p.dim(1) != groups.attribute_count())
    throw DimensionError("loss_attribute: " + std::to_string(p.dim(1)) + " columns for " +
                         std::to_string(groups.attribute_count()) + " attributes");
  for (double v : p.data())
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("loss_attribute: probability outside [0, 1]");
  for (double v : y.data())
    if (v != 0.0 && v != 1.0) throw DomainError("loss_attribute: labels must be 0 or 1");

  const ad::Tensor pc = ad::clamp(p, kProbClamp, 1.0 - kProbClamp);
  AttributeLoss out;
  for (const AttributeGroup& g : groups.groups()) {
    const ad::Tensor pg = ad::gather_columns(pc, g.attributes);
    const ad::Tensor yg = ad::gather_columns(y, g.attributes);
    const ad::Tensor ll = yg * ad::log(pg) + (1.0 - yg) * ad::log(1.0 - pg);
    out.per_group.push_back(-ad::sum(ll));
  }
  out.total = out.per_group.front();
  for (std::size_t g = 1; g < out.per_group.size(); ++g) out.total = out.total + out.per_group[g];
  return out;
}

PairMask::PairMask(std::span<const std::size_t> identities) : n_(identities.size()), w_(n_ * n_, 0) {
  if (n_ < 2) throw ContractError("pair mask needs at least 2 samples, got " + std::to_string(n_));
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j)
      if (i != j && identities[i] == identities[j]) {
        w_[i * n_ + j] = 1;
        if (i < j) pairs_.emplace_back(i, j);
      }
}

PairMask pair_mask(std::span<const std::size_t> identities) { return PairMask(identities); }

ad::Tensor loss_pairwise(const ad::Tensor& features, const PairMask& mask) {
  if (features.rank() != 2 || features.dim(0) != mask.size())
    throw DimensionError("loss_pairwise: features " + ad::to_string(features.shape()) + " do not match " +
                         std::to_string(mask.size()) + " samples");
  const auto& pairs = mask.positive_pairs();
  if (pairs.empty()) return ad::Tensor::scalar(0.0);
  std::vector<std::int64_t> left, right;
  for (auto [i, j] : pairs) {
    left.push_back(static_cast<std::int64_t>(i));
    right.push_back(static_cast<std::int64_t>(j));
  }
  const std::size_t n = mask.size(), d = features.dim(1);
  const ad::Tensor rows = ad::reshape(features, {1, n, d});
  const ad::Tensor diff =
      ad::gather_rows(rows, ad::make_index_map(std::move(left))) - ad::gather_rows(rows, ad::make_index_map(std::move(right)));
  return ad::sum(ad::square(diff)) * (1.0 / static_cast<double>(n * (n - 1)));
}

ad::Tensor loss_identity_ce(const ad::Tensor& logits, std::span<const std::size_t> identities) {
  if (logits.rank() != 2 || logits.dim(0) != identities.size())
    throw DimensionError("loss_identity_ce: logits " + ad::to_string(logits.shape()) + " for " +
                         std::to_string(identities.size()) + " samples");
  for (std::size_t id : identities)
    if (id >= logits.dim(1))
      throw DomainError("loss_identity_ce: identity " + std::to_string(id) + " outside " +
                        std::to_string(logits.dim(1)) + " classes");
  return -ad::sum(ad::pick(ad::log_softmax(logits, 1), identities));
}

double LossBreakdown::loss_g_sum() const {
  double s = 0.0;
  for (const auto& g : loss_g) s += g.item();
  return s;
}

LossBreakdown compose(const ad::Tensor& loss_A, const std::vector<ad::Tensor>& loss_g, const ad::Tensor& loss_F,
                      const ad::Tensor& loss_C, const LossWeights& w) {
  LossBreakdown b;
  b.loss_A = loss_A;
  b.loss_g = loss_g;
  b.loss_F = loss_F;
  b.loss_C = loss_C;
  ad::Tensor g_sum = ad::Tensor::scalar(0.0);
  for (const auto& g : loss_g) g_sum = g_sum + g;
  b.loss_LA = w.lambda * loss_A + w.beta * g_sum;
  b.loss_GI = w.alpha * loss_F + (1.0 - w.alpha) * loss_C;
  b.loss_total = b.loss_GI + b.loss_LA;
  return b;
}

LossBreakdown batch_losses(const model::PredictionBundle& pred, const ad::Tensor& labels,
                           std::span<const std::size_t> identities, const AttributeGroupSpec& groups,
                           const LossWeights& weights) {
  const AttributeLoss attr = loss_attribute(pred.probabilities, labels, groups);
  const ad::Tensor zero = ad::Tensor::scalar(0.0);
  if (!weights.identity_constraint) {
    return compose(attr.total, std::vector<ad::Tensor>(groups.group_count(), zero), zero, zero, weights);
  }
  const PairMask mask(identities);
  std::vector<ad::Tensor> local;
  for (const auto& f : pred.branch_features) local.push_back(loss_pairwise(f, mask));
  const ad::Tensor ce = pred.identity_logits.defined() ? loss_identity_ce(pred.identity_logits, identities) : zero;
  return compose(attr.total, local, ce, loss_pairwise(pred.global_feature, mask), weights);
}

}  // namespace transfa::loss
