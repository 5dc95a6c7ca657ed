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
#include <span>
#include <utility>
#include <vector>

#include "transfa/config.hpp"
#include "transfa/heads.hpp"
#include "transfa/tensor.hpp"

namespace transfa::loss {

// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before the log.
inline constexpr double kProbClamp = 1e-12;

struct AttributeLoss {
  ad::Tensor total;                  // sum of the group partials
  std::vector<ad::Tensor> per_group;  // one scalar per group
};

// Negative binary cross-entropy summed over samples, attributes and groups.
// p and y are [N, A] in the grouping's global attribute order. Throws DomainError for
// probabilities outside [0, 1] (or NaN).
AttributeLoss loss_attribute(const ad::Tensor& p, const ad::Tensor& y, const AttributeGroupSpec& groups);

// w(i, j) = 1 when samples i != j share an identity.
class PairMask {
 public:
  explicit PairMask(std::span<const std::size_t> identities);

  std::size_t size() const { return n_; }
  bool operator()(std::size_t i, std::size_t j) const { return w_[i * n_ + j] != 0; }
  // (i, j) with i < j and w(i, j) = 1, in row-major order.
  const std::vector<std::pair<std::size_t, std::size_t>>& positive_pairs() const { return pairs_; }

 private:
  std::size_t n_;
  std::vector<std::uint8_t> w_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
};

// Throws ContractError for fewer than two samples.
PairMask pair_mask(std::span<const std::size_t> identities);

// sum_{i<j} w(i,j) ||f_i - f_j||^2 / (N (N - 1)); exactly 0 without positive pairs.
ad::Tensor loss_pairwise(const ad::Tensor& features, const PairMask& mask);

// -sum_n log softmax(logits_n)[identity_n].
ad::Tensor loss_identity_ce(const ad::Tensor& logits, std::span<const std::size_t> identities);

struct LossBreakdown {
  ad::Tensor loss_A;
  std::vector<ad::Tensor> loss_g;
  ad::Tensor loss_LA;
  ad::Tensor loss_F;
  ad::Tensor loss_C;
  ad::Tensor loss_GI;
  ad::Tensor loss_total;

  double loss_g_sum() const;
};

// LA = lambda A + beta sum(g); GI = alpha F + (1 - alpha) C; total = GI + LA.
LossBreakdown compose(const ad::Tensor& loss_A, const std::vector<ad::Tensor>& loss_g, const ad::Tensor& loss_F,
                      const ad::Tensor& loss_C, const LossWeights& weights);

// Every component for one batch. With identity_constraint off (or no
// identity classifier) the identity terms are constant zeros.
LossBreakdown batch_losses(const model::PredictionBundle& prediction, const ad::Tensor& labels,
                           std::span<const std::size_t> identities, const AttributeGroupSpec& groups,
                           const LossWeights& weights);

}  // namespace transfa::loss
