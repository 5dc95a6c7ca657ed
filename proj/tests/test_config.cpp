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


#include <cstdlib>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "transfa/config.hpp"
#include "transfa/errors.hpp"
#include "transfa/presets.hpp"

using namespace transfa;

TEST_CASE("canonical keys fold CelebA and display spellings together") {
  CHECK(canonical_attribute_key("5 O'Clock Shadow") == "5_o_clock_shadow");
  CHECK(canonical_attribute_key("5_o_Clock_Shadow") == "5_o_clock_shadow");
  CHECK(canonical_attribute_key("5 O\xE2\x80\x99" "Clock Shadow") == "5_o_clock_shadow");
  CHECK(canonical_attribute_key("Wearing_Hat") == "wear_hat");
  CHECK(canonical_attribute_key("Wear Hat") == "wear_hat");
  CHECK(canonical_attribute_key("Around-head") == "around_head");
}

TEST_CASE("default grouping: 40 attributes in 7 groups of 9/10/5/2/9/3/2") {
  const auto& spec = AttributeGroupSpec::celeba_default();
  CHECK(spec.attribute_count() == 40);
  REQUIRE(spec.group_count() == 7);
  const std::vector<std::string> names = {"Global", "Around-head", "Eyes", "Nose", "Mouth", "Cheeks", "Neck"};
  const std::vector<std::size_t> sizes = {9, 10, 5, 2, 9, 3, 2};
  std::set<std::size_t> seen;
  for (std::size_t g = 0; g < 7; ++g) {
    CHECK(spec.group(g).name == names[g]);
    CHECK(spec.group(g).attributes.size() == sizes[g]);
    for (std::size_t a : spec.group(g).attributes) CHECK(seen.insert(a).second);
  }
  CHECK(seen.size() == 40);
  CHECK(spec.contiguous());
  CHECK(spec.index_of("Big_Nose") == spec.index_of("Big Nose"));
  CHECK(spec.group_of(spec.index_of("Wearing_Necktie")) == 6);
  CHECK_THROWS_AS(spec.index_of("Sunglasses"), LookupError);
}

TEST_CASE("every CelebA header name resolves to exactly one default attribute") {
  const char* header[] = {
      "5_o_Clock_Shadow", "Arched_Eyebrows", "Attractive",       "Bags_Under_Eyes",     "Bald",
      "Bangs",            "Big_Lips",        "Big_Nose",         "Black_Hair",          "Blond_Hair",
      "Blurry",           "Brown_Hair",      "Bushy_Eyebrows",   "Chubby",              "Double_Chin",
      "Eyeglasses",       "Goatee",          "Gray_Hair",        "Heavy_Makeup",        "High_Cheekbones",
      "Male",             "Mouth_Slightly_Open", "Mustache",     "Narrow_Eyes",         "No_Beard",
      "Oval_Face",        "Pale_Skin",       "Pointy_Nose",      "Receding_Hairline",   "Rosy_Cheeks",
      "Sideburns",        "Smiling",         "Straight_Hair",    "Wavy_Hair",           "Wearing_Earrings",
      "Wearing_Hat",      "Wearing_Lipstick", "Wearing_Necklace", "Wearing_Necktie",    "Young"};
  std::set<std::size_t> hit;
  for (const char* h : header) {
    auto idx = AttributeGroupSpec::celeba_default().find(h);
    REQUIRE_MESSAGE(idx.has_value(), h);
    hit.insert(*idx);
  }
  CHECK(hit.size() == 40);
}

TEST_CASE("empty config gives all defaults") {
  const Config cfg = parse_config("");
  CHECK(cfg.model == ModelConfig{});
  CHECK(cfg.train == TrainConfig{});
  CHECK(cfg.loss.alpha == 0.1);
  CHECK(cfg.loss.beta == 0.3);
  CHECK(cfg.loss.lambda == 5.0);
  CHECK(cfg.train.base_lr == 0.01);
  CHECK(cfg.train.momentum == 0.9);
  CHECK(cfg.groups == AttributeGroupSpec::celeba_default());
  CHECK(cfg.groups.attribute_count() == 40);
}

TEST_CASE("grouping that omits Big Nose is rejected") {
  std::string text;
  for (const auto& g : AttributeGroupSpec::celeba_default().groups()) {
    text += "group." + g.name + " = ";
    bool first = true;
    for (std::size_t a : g.attributes) {
      const auto& name = AttributeGroupSpec::celeba_default().display_name(a);
      if (name == "Big Nose") continue;
      text += (first ? "" : ", ") + name;
      first = false;
    }
    text += "\n";
  }
  try {
    parse_config(text);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("attribute not assigned") != std::string::npos);
    CHECK(std::string(e.what()).find("Big Nose") != std::string::npos);
  }
}

TEST_CASE("invariant violations name the key") {
  auto fails_with = [](const char* text, const char* key) {
    try {
      parse_config(text);
      return false;
    } catch (const ConfigError& e) {
      return std::string(e.what()).find(key) != std::string::npos;
    }
  };
  CHECK(fails_with("alpha = 1.5", "alpha"));
  CHECK(fails_with("beta = -1", "beta"));
  CHECK(fails_with("shift_size = 4", "shift_size"));
  CHECK(fails_with("patch_size = 5", "patch_size"));
  CHECK(fails_with("banana = 3", "banana"));
  CHECK(fails_with("batch_size = 1", "batch_size"));
  CHECK(fails_with("num_heads = 5, 6, 12, 24", "num_heads"));
  CHECK(fails_with("epochs = three", "epochs"));
  CHECK(fails_with("alpha = 0.2\nalpha = 0.3", "alpha"));
  CHECK(fails_with("group.A = Bald, Bald", "Bald"));
}

TEST_CASE("custom universe with groups") {
  const Config cfg = parse_config(
      "attributes = a0, a1, a2, a3\n"
      "group.top = a2, a0   # comment\n"
      "group.bottom = a1, a3\n");
  CHECK(cfg.groups.attribute_count() == 4);
  CHECK(cfg.groups.group_count() == 2);
  CHECK(cfg.groups.group(0).attributes == std::vector<std::size_t>{2, 0});
  CHECK_FALSE(cfg.groups.contiguous());
}

TEST_CASE("config text round-trips") {
  Config cfg = parse_config(
      "image_size = 64\nembed_dim = 16\nstage_layout = 2:merge, 2:none\nnum_heads = 2, 4\n"
      "branch_hidden = 32, 16\nalpha = 0.25\nseed = 7\nidentity_constraint = off\n"
      "attributes = x, y, z\ngroup.g1 = x\ngroup.g2 = z, y\n");
  const Config again = parse_config(to_config_text(cfg));
  CHECK(again.model == cfg.model);
  CHECK(again.train == cfg.train);
  CHECK(again.loss == cfg.loss);
  CHECK(again.groups == cfg.groups);
}

TEST_CASE("lr schedule drops by 10 every 5 epochs") {
  const TrainConfig t;
  CHECK(lr_at(0, t) == 0.01);
  CHECK(lr_at(4, t) == 0.01);
  CHECK(lr_at(5, t) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_at(10, t) == doctest::Approx(0.0001).epsilon(1e-15));
  CHECK(lr_at(12, t) == doctest::Approx(0.0001).epsilon(1e-15));
  for (std::size_t e = 0; e < 40; ++e) {
    CHECK(lr_at(e + 1, t) <= lr_at(e, t));
    CHECK(lr_at(e, t) == lr_at((e / 5) * 5, t));
  }
}

TEST_CASE("default geometry: 56 -> 28 -> 14 -> 7 with 8x channel growth") {
  const ModelConfig m;
  const auto geo = m.geometry();
  REQUIRE(geo.size() == 4);
  CHECK(geo[0].grid == 56);
  CHECK(geo[1].grid == 28);
  CHECK(geo[2].grid == 14);
  CHECK(geo[3].grid == 7);
  CHECK(geo[3].channels == 8 * geo[0].channels);
  CHECK(m.final_grid() == 7);
  CHECK(m.feature_dim() == 768);
  std::size_t layers = 0;
  for (const auto& g : geo) layers += g.layers;
  CHECK(layers == 12);
}

TEST_CASE("TRANSFA_SEED overrides the config seed") {
  Config cfg = parse_config("seed = 5");
  CHECK(cfg.seed_from_file);
  setenv("TRANSFA_SEED", "99", 1);
  apply_env_overrides(cfg);
  unsetenv("TRANSFA_SEED");
  CHECK(cfg.train.seed == 99);
}

TEST_CASE("shipped configuration files") {
  const std::filesystem::path dir = TRANSFA_CONFIG_DIR;
  auto same = [](const Config& a, const Config& b) {
    CHECK(a.model == b.model);
    CHECK(a.train == b.train);
    CHECK(a.loss == b.loss);
    CHECK(a.groups == b.groups);
  };
  same(load_config(dir / "synthetic.cfg"), presets::overfit().config);
  same(load_config(dir / "celeba.cfg"), Config{});
}
