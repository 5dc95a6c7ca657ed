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

#include "transfa/presets.hpp"

#include "transfa/errors.hpp"

namespace transfa::presets {

namespace {

ModelConfig small_backbone() {
  ModelConfig m;
  m.image_size = 64;
  m.patch_size = 4;
  m.embed_dim = 16;
  m.stage_layout = {{2, true}, {2, false}};
  m.num_heads = {2, 4};
  m.window_size = 4;
  m.shift_size = 2;
  m.mlp_ratio = 2;
  m.branch_hidden = {32, 32};
  m.dropout_rate = 0.1;
  return m;
}

}  // namespace

Preset gradcheck() {
  Preset p;
  auto& m = p.config.model;
  m.image_size = 16;
  m.patch_size = 4;
  m.embed_dim = 8;
  m.stage_layout = {{2, true}};
  m.num_heads = {2};
  m.window_size = 2;
  m.shift_size = 1;
  m.mlp_ratio = 2;
  m.branch_hidden = {6, 5};
  m.dropout_rate = 0.5;
  p.config.groups = AttributeGroupSpec::from_partition(
      {"around_head_0", "eyes_0", "mouth_0", "neck_0"},
      {{"upper", {"around_head_0", "eyes_0"}}, {"lower", {"mouth_0", "neck_0"}}});
  p.config.train.batch_size = 4;
  p.config.train.seed = 5;
  p.data = SynthOptions{.num_identities = 2, .per_identity = 2, .attr_count = 4, .seed = 3, .image_size = 64};
  return p;
}

Preset overfit() {
  Preset p;
  p.config.model = small_backbone();
  p.config.groups = synth_region_groups(8);
  auto& t = p.config.train;
  t.base_lr = 1e-3;
  t.lr_decay_epochs = 100;
  t.epochs = 200;
  t.batch_size = 32;
  t.seed = 42;
  p.data = SynthOptions{.num_identities = 4, .per_identity = 8, .attr_count = 8, .seed = 1, .image_size = 64};
  return p;
}

Preset attention() {
  Preset p;
  p.config.model = small_backbone();
  p.config.groups = synth_region_groups(8);
  auto& t = p.config.train;
  t.base_lr = 1e-3;
  t.lr_decay_epochs = 100;
  t.epochs = 40;
  t.batch_size = 16;
  t.seed = 42;
  p.data = SynthOptions{.num_identities = 96, .per_identity = 2, .attr_count = 8, .seed = 1, .image_size = 64};
  return p;
}

Preset ablation(int row) {
  if (row < 1 || row > 4) throw LookupError("ablation rows are 1 to 4, got " + std::to_string(row));
  Preset p;
  p.config.model = small_backbone();
  p.config.groups = synth_region_groups(8);
  auto& t = p.config.train;
  t.base_lr = 1e-3;
  t.lr_decay_epochs = 100;
  t.epochs = 30;
  t.batch_size = 16;
  t.seed = 42;
  p.data = SynthOptions{.num_identities = 32, .per_identity = 4, .attr_count = 8, .seed = 1, .image_size = 64};
  if (row == 1) p.config.groups = AttributeGroupSpec::from_groups({{"all", p.config.groups.display_names()}});
  if (row <= 2) p.config.model.stage_layout = {{0, true}, {0, false}};
  if (row <= 3) p.config.loss.identity_constraint = false;
  return p;
}

std::vector<std::string> names() {
  return {"gradcheck", "overfit", "attention", "ablation-1", "ablation-2", "ablation-3", "ablation-4"};
}

Preset by_name(std::string_view name) {
  if (name == "gradcheck") return gradcheck();
  if (name == "overfit") return overfit();
  if (name == "attention") return attention();
  if (name.size() == 10 && name.substr(0, 9) == "ablation-" && name[9] >= '1' && name[9] <= '4')
    return ablation(name[9] - '0');
  throw LookupError("unknown preset '" + std::string(name) + "' (known: gradcheck, overfit, attention, ablation-1 .. ablation-4)");
}

}  // namespace transfa::presets
