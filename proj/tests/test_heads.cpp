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


#include <random>
#include <vector>

#include "doctest.h"
#include "support/finite_diff.hpp"
#include "transfa/errors.hpp"
#include "transfa/heads.hpp"
#include "transfa/model.hpp"
#include "transfa/ops.hpp"

using namespace transfa;
using namespace transfa::model;
using ad::Tensor;
using testsupport::weighted_sum;
using testsupport::worst_fd_error;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void randomize(ParamStore& store, std::mt19937_64& rng, double scale) {
  for (const auto& [_, t] : store.tensors()) {
    Tensor h = t;
    const auto v = testsupport::random_values(h.numel(), rng, -scale, scale);
    std::copy(v.begin(), v.end(), h.mutable_data().begin());
  }
}

AttributeGroupSpec three_groups(bool swap_first_two) {
  AttributeGroupSpec::GroupList g = {{"a", {"a0", "a1"}}, {"b", {"b0", "b1", "b2"}}, {"c", {"c0"}}};
  if (swap_first_two) std::swap(g[0], g[1]);
  return AttributeGroupSpec::from_groups(g);
}

}  // namespace

TEST_CASE("zero branch weights give zero features and one-half probabilities") {
  ParamStore store;
  const auto spec = three_groups(false);
  register_heads(store, 5, {4, 3}, spec, 6);
  std::mt19937_64 rng(1);
  auto shared = testsupport::random_param({2, 5}, rng);
  auto b = predict(shared, store, spec, 0.5, false, nullptr);
  CHECK(b.probabilities.shape() == ad::Shape{2, 6});
  for (double v : values(b.probabilities)) CHECK(v == 0.5);
  for (double v : values(b.logits)) CHECK(v == 0.0);
  for (double v : values(b.global_feature)) CHECK(v == 0.0);
  CHECK(b.identity_logits.shape() == ad::Shape{2, 6});
  for (double v : values(b.identity_logits)) CHECK(v == 0.0);
}

TEST_CASE("evaluation mode is deterministic and training dropout is seeded") {
  ParamStore store;
  const auto spec = three_groups(false);
  register_heads(store, 5, {16, 16}, spec, 3);
  std::mt19937_64 rng(2);
  randomize(store, rng, 0.5);
  auto shared = testsupport::random_param({4, 5}, rng);
  CHECK(values(predict(shared, store, spec, 0.5, false, nullptr).probabilities) ==
        values(predict(shared, store, spec, 0.5, false, nullptr).probabilities));

  std::mt19937_64 r1(9), r2(9), r3(10);
  const auto a = values(predict(shared, store, spec, 0.5, true, &r1).probabilities);
  CHECK(a == values(predict(shared, store, spec, 0.5, true, &r2).probabilities));
  CHECK(a != values(predict(shared, store, spec, 0.5, true, &r3).probabilities));
  CHECK_THROWS_AS(predict(shared, store, spec, 0.5, true, nullptr), ContractError);
}

TEST_CASE("branch gradients agree with finite differences") {
  std::mt19937_64 rng(3);
  BranchWeights w{testsupport::random_param({5, 6}, rng), testsupport::random_param({6}, rng),
                  testsupport::random_param({6, 4}, rng), testsupport::random_param({4}, rng),
                  testsupport::random_param({4, 3}, rng), testsupport::random_param({3}, rng)};
  auto shared = testsupport::random_param({3, 5}, rng);
  std::vector<Tensor> leaves = {w.fc1_weight, w.fc1_bias, w.fc2_weight, w.fc2_bias, w.fc3_weight, w.fc3_bias, shared};
  SUBCASE("evaluation") {
    auto build = [&] {
      auto o = branch_forward(shared, w, 0.5, false, nullptr);
      return weighted_sum(o.logits) + weighted_sum(o.feature);
    };
    CHECK(worst_fd_error(build, leaves) <= 1e-5);
  }
  SUBCASE("training with a replayed dropout mask") {
    auto build = [&] {
      std::mt19937_64 drop(77);
      auto o = branch_forward(shared, w, 0.3, true, &drop);
      return weighted_sum(o.logits) + weighted_sum(o.feature);
    };
    CHECK(worst_fd_error(build, leaves) <= 1e-5);
  }
}

TEST_CASE("default grouping yields forty probabilities") {
  const auto& spec = AttributeGroupSpec::celeba_default();
  ParamStore store;
  register_heads(store, 8, {4, 4}, spec, 0);
  std::mt19937_64 rng(4);
  randomize(store, rng, 0.5);
  auto b = predict(testsupport::random_param({3, 8}, rng), store, spec, 0.0, false, nullptr);
  CHECK(b.probabilities.shape() == ad::Shape{3, 40});
  for (double v : values(b.probabilities)) CHECK((v > 0.0 && v < 1.0));
  CHECK(b.branch_features.size() == 7);
  CHECK(b.global_feature.shape() == ad::Shape{3, 28});
  CHECK_FALSE(b.identity_logits.defined());
}

TEST_CASE("global feature is the exact concatenation of branch features") {
  const auto spec = three_groups(false);
  ParamStore store;
  register_heads(store, 5, {4, 3}, spec, 2);
  std::mt19937_64 rng(5);
  randomize(store, rng, 0.8);
  auto b = predict(testsupport::random_param({2, 5}, rng), store, spec, 0.0, false, nullptr);
  for (std::size_t g = 0; g < 3; ++g)
    CHECK(values(ad::slice(b.global_feature, 1, 3 * g, 3 * g + 3)) == values(b.branch_features[g]));
}

TEST_CASE("permuting groups permutes probability blocks and the concatenation") {
  const auto spec = three_groups(false);
  const auto swapped = three_groups(true);
  ParamStore store, store2;
  register_heads(store, 5, {4, 3}, spec, 0);
  register_heads(store2, 5, {4, 3}, swapped, 0);
  std::mt19937_64 rng(6);
  randomize(store, rng, 0.8);
  // Branch 0 of the swapped model is branch 1 of the original and vice versa.
  for (const auto& [name, t] : store2.tensors()) {
    std::string src = name;
    if (src.rfind("branches.0.", 0) == 0) src[9] = '1';
    else if (src.rfind("branches.1.", 0) == 0) src[9] = '0';
    Tensor h = t;
    const auto v = store.at(src).data();
    std::copy(v.begin(), v.end(), h.mutable_data().begin());
  }
  auto shared = testsupport::random_param({2, 5}, rng);
  auto b1 = predict(shared, store, spec, 0.0, false, nullptr);
  auto b2 = predict(shared, store2, swapped, 0.0, false, nullptr);
  // Permutation oracle: columns [a0 a1 | b0 b1 b2 | c0] -> [b0 b1 b2 | a0 a1 | c0].
  const std::vector<std::size_t> perm = {2, 3, 4, 0, 1, 5};
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 0; k < 6; ++k) CHECK(b2.probabilities.at({n, k}) == b1.probabilities.at({n, perm[k]}));
  const std::vector<std::size_t> fperm = {3, 4, 5, 0, 1, 2, 6, 7, 8};
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 0; k < 9; ++k) CHECK(b2.global_feature.at({n, k}) == b1.global_feature.at({n, fperm[k]}));
}

TEST_CASE("non-contiguous groups report probabilities in global order") {
  const auto spec = AttributeGroupSpec::from_partition({"x", "y", "z", "w"}, {{"g0", {"z", "x"}}, {"g1", {"w", "y"}}});
  ParamStore store;
  register_heads(store, 3, {4, 4}, spec, 0);
  std::mt19937_64 rng(7);
  randomize(store, rng, 0.8);
  auto shared = testsupport::random_param({2, 3}, rng);
  auto b = predict(shared, store, spec, 0.0, false, nullptr);
  auto l0 = branch_forward(shared, BranchWeights::from_store(store, 0), 0.0, false, nullptr).logits;
  auto l1 = branch_forward(shared, BranchWeights::from_store(store, 1), 0.0, false, nullptr).logits;
  for (std::size_t n = 0; n < 2; ++n) {
    CHECK(b.logits.at({n, 2}) == l0.at({n, 0}));  // z
    CHECK(b.logits.at({n, 0}) == l0.at({n, 1}));  // x
    CHECK(b.logits.at({n, 3}) == l1.at({n, 0}));  // w
    CHECK(b.logits.at({n, 1}) == l1.at({n, 1}));  // y
  }
}

TEST_CASE("model parameters are uniquely named and initialized deterministically") {
  ModelConfig cfg;
  cfg.image_size = 16;
  cfg.embed_dim = 8;
  cfg.stage_layout = {{2, true}};
  cfg.num_heads = {2};
  cfg.window_size = 2;
  cfg.shift_size = 1;
  cfg.branch_hidden = {6, 5};
  TransFAModel a(cfg, three_groups(false), 4), b(cfg, three_groups(false), 4);
  a.initialize(3);
  b.initialize(3);
  for (const auto& [name, t] : a.params().tensors()) CHECK(values(t) == values(b.params().at(name)));
  CHECK(a.params().at("stages.0.layers.0.norm1.gain").data()[0] == 1.0);
  CHECK(a.params().at("identity.weight").shape() == ad::Shape{15, 4});
  for (double v : a.params().at("patch_embed.weight").data()) CHECK(std::abs(v) <= 0.04);

  std::mt19937_64 rng(8), drop(1);
  auto out = a.forward(testsupport::random_param({2, 3, 16, 16}, rng), true, &drop);
  CHECK(out.prediction.probabilities.shape() == ad::Shape{2, 6});
  CHECK(out.backbone.final_grid.shape() == ad::Shape{2, 2, 2, 16});
}
