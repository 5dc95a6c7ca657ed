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

#include <string>
#include <string_view>
#include <vector>

#include "transfa/config.hpp"
#include "transfa/dataset.hpp"

namespace transfa::presets {

// Small configurations used by the gradient suite, the overfit check and the
// attention-map experiments. Each comes with the synthetic data it is meant for.
struct Preset {
  Config config;
  SynthOptions data;
};

// 16x16 images, patch 4, embed 8, 2 heads, window 2, shift 1, two layers and
// one merge, two branches over four attributes.
Preset gradcheck();
// 64x64 synthetic set of 4 identities x 8 images and 8 attributes, full-batch
// SGD at a constant 1e-3 for 200 epochs.
Preset overfit();
// Same backbone as overfit() trained on 96 identities x 2 images, so the
// attributes are not tied to a handful of identities.
Preset attention();

// Four-row component ablation on a 32 x 4 synthetic set (train on the train
// split, score the test split). Rows switch on, in order, region grouping,
// the attention layers and the identity-constraint loss:
//   1: one group, no attention layers, attribute loss only
//   2: region groups, no attention layers, attribute loss only
//   3: region groups, attention layers, attribute loss only
//   4: everything on
// "No attention layers" keeps patch embedding, merging and pooling.
Preset ablation(int row);

std::vector<std::string> names();
// Throws LookupError for an unknown name. Ablation rows are "ablation-<k>".
Preset by_name(std::string_view name);

}  // namespace transfa::presets
