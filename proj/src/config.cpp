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

#include "transfa/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "transfa/errors.hpp"

namespace transfa {
namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) pos = s.size();
    std::string item = trim(s.substr(start, pos - start));
    if (!item.empty()) out.push_back(std::move(item));
    start = pos + 1;
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::ostringstream os;
  for (std::size_t i = 0; i < items.size(); ++i) os << (i ? ", " : "") << items[i];
  return os.str();
}

const AttributeGroupSpec::GroupList& celeba_groups() {
  static const AttributeGroupSpec::GroupList groups = {
      {"Global",
       {"Attractive", "Blurry", "Chubby", "Heavy Makeup", "Male", "Oval Face", "Pale Skin", "Smiling", "Young"}},
      {"Around-head",
       {"Bald", "Bangs", "Black Hair", "Blond Hair", "Brown Hair", "Gray Hair", "Receding Hairline", "Straight Hair",
        "Wavy Hair", "Wear Hat"}},
      {"Eyes", {"Arched Eyebrows", "Bags Under Eyes", "Bushy Eyebrows", "Eyeglasses", "Narrow Eyes"}},
      {"Nose", {"Big Nose", "Pointy Nose"}},
      {"Mouth",
       {"5 O'Clock Shadow", "Big Lips", "Double Chin", "Goatee", "Mouth Slightly Open", "Mustache", "No Beard",
        "Sideburns", "Wear Lipstick"}},
      {"Cheeks", {"High Cheekbones", "Rosy Cheeks", "Wear Earrings"}},
      {"Neck", {"Wear Necklace", "Wear Necktie"}},
  };
  return groups;
}

}  // namespace

std::string canonical_attribute_key(std::string_view name) {
  std::string out;
  bool pending_sep = false;
  for (unsigned char c : name) {
    if (std::isalnum(c)) {
      if (pending_sep && !out.empty()) out.push_back('_');
      pending_sep = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else {
      pending_sep = true;
    }
  }
  constexpr std::string_view wearing = "wearing_";
  if (out.starts_with(wearing)) out = "wear_" + out.substr(wearing.size());
  return out;
}

// ---------------------------------------------------------------------------
// AttributeGroupSpec

AttributeGroupSpec AttributeGroupSpec::from_groups(const GroupList& groups) {
  std::vector<std::string> names;
  for (const auto& [g, attrs] : groups) names.insert(names.end(), attrs.begin(), attrs.end());
  return from_partition(names, groups);
}

AttributeGroupSpec AttributeGroupSpec::from_partition(const std::vector<std::string>& attribute_names,
                                                      const GroupList& groups) {
  AttributeGroupSpec spec;
  if (attribute_names.empty()) throw ConfigError("attributes: at least one attribute is required");
  if (groups.empty()) throw ConfigError("group.*: at least one group is required");
  for (const auto& name : attribute_names) {
    std::string key = canonical_attribute_key(name);
    if (key.empty()) throw ConfigError("attributes: empty attribute name");
    if (!spec.index_.emplace(key, spec.keys_.size()).second)
      throw ConfigError("attributes: duplicate attribute '" + name + "'");
    spec.display_names_.push_back(name);
    spec.keys_.push_back(std::move(key));
  }
  spec.group_of_.assign(attribute_names.size(), SIZE_MAX);
  std::set<std::string> group_names;
  for (const auto& [gname, attrs] : groups) {
    if (!group_names.insert(gname).second) throw ConfigError("group." + gname + ": duplicate group name");
    if (attrs.empty()) throw ConfigError("group." + gname + ": group is empty");
    AttributeGroup g{gname, {}};
    for (const auto& a : attrs) {
      auto it = spec.index_.find(canonical_attribute_key(a));
      if (it == spec.index_.end()) throw ConfigError("group." + gname + ": unknown attribute '" + a + "'");
      if (spec.group_of_[it->second] != SIZE_MAX)
        throw ConfigError("group." + gname + ": attribute '" + a + "' assigned to more than one group");
      spec.group_of_[it->second] = spec.groups_.size();
      g.attributes.push_back(it->second);
    }
    spec.groups_.push_back(std::move(g));
  }
  for (std::size_t i = 0; i < spec.group_of_.size(); ++i)
    if (spec.group_of_[i] == SIZE_MAX)
      throw ConfigError("group.*: attribute not assigned: '" + spec.display_names_[i] + "'");
  return spec;
}

const AttributeGroupSpec& AttributeGroupSpec::celeba_default() {
  static const AttributeGroupSpec spec = from_groups(celeba_groups());
  return spec;
}

std::optional<std::size_t> AttributeGroupSpec::find(std::string_view name) const {
  auto it = index_.find(canonical_attribute_key(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t AttributeGroupSpec::index_of(std::string_view name) const {
  auto idx = find(name);
  if (!idx) throw LookupError("unknown attribute '" + std::string(name) + "'");
  return *idx;
}

bool AttributeGroupSpec::contiguous() const {
  auto order = group_major_order();
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i] != i) return false;
  return true;
}

std::vector<std::size_t> AttributeGroupSpec::group_major_order() const {
  std::vector<std::size_t> order;
  order.reserve(attribute_count());
  for (const auto& g : groups_) order.insert(order.end(), g.attributes.begin(), g.attributes.end());
  return order;
}

std::string AttributeGroupSpec::to_config_text() const {
  std::ostringstream os;
  os << "attributes = " << join(display_names_) << '\n';
  for (const auto& g : groups_) {
    std::vector<std::string> names;
    for (std::size_t i : g.attributes) names.push_back(display_names_[i]);
    os << "group." << g.name << " = " << join(names) << '\n';
  }
  return os.str();
}

bool AttributeGroupSpec::operator==(const AttributeGroupSpec& other) const {
  if (keys_ != other.keys_ || groups_.size() != other.groups_.size()) return false;
  for (std::size_t g = 0; g < groups_.size(); ++g)
    if (groups_[g].name != other.groups_[g].name || groups_[g].attributes != other.groups_[g].attributes) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Model / loss / train validation

void ModelConfig::validate() const {
  if (image_size == 0) throw ConfigError("image_size: must be positive");
  if (patch_size == 0) throw ConfigError("patch_size: must be positive");
  if (image_size % patch_size != 0)
    throw ConfigError("patch_size: image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                      std::to_string(patch_size));
  if (embed_dim == 0) throw ConfigError("embed_dim: must be positive");
  if (stage_layout.empty()) throw ConfigError("stage_layout: at least one stage is required");
  if (num_heads.size() != stage_layout.size())
    throw ConfigError("num_heads: expected one entry per stage (" + std::to_string(stage_layout.size()) + ")");
  if (window_size == 0) throw ConfigError("window_size: must be positive");
  if (shift_size >= window_size) throw ConfigError("shift_size: must be smaller than window_size");
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio: must be positive");
  if (branch_hidden.size() != 2 || branch_hidden[0] == 0 || branch_hidden[1] == 0)
    throw ConfigError("branch_hidden: expected two positive widths");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate: must be in [0, 1)");

  std::size_t grid = image_size / patch_size;
  std::size_t channels = embed_dim;
  for (std::size_t s = 0; s < stage_layout.size(); ++s) {
    if (num_heads[s] == 0 || channels % num_heads[s] != 0)
      throw ConfigError("num_heads: stage " + std::to_string(s) + " has " + std::to_string(channels) +
                        " channels, not divisible by " + std::to_string(num_heads[s]) + " heads");
    if (stage_layout[s].merge_after) {
      if (grid % 2 != 0 || grid < 2)
        throw ConfigError("stage_layout: stage " + std::to_string(s) + " merges an odd grid of extent " +
                          std::to_string(grid));
      grid /= 2;
      channels *= 2;
    }
  }
}

std::vector<StageGeometry> ModelConfig::geometry() const {
  validate();
  std::vector<StageGeometry> out;
  std::size_t grid = image_size / patch_size;
  std::size_t channels = embed_dim;
  for (std::size_t s = 0; s < stage_layout.size(); ++s) {
    StageGeometry g;
    g.grid = grid;
    g.channels = channels;
    g.heads = num_heads[s];
    g.layers = stage_layout[s].layers;
    g.merge_after = stage_layout[s].merge_after;
    if (grid <= window_size) {
      g.window = grid;
      g.shift = 0;
    } else {
      g.window = window_size;
      g.shift = shift_size;
    }
    out.push_back(g);
    if (g.merge_after) {
      grid /= 2;
      channels *= 2;
    }
  }
  return out;
}

std::size_t ModelConfig::final_grid() const {
  auto geo = geometry();
  return geo.back().merge_after ? geo.back().grid / 2 : geo.back().grid;
}

std::size_t ModelConfig::feature_dim() const {
  auto geo = geometry();
  return geo.back().merge_after ? geo.back().channels * 2 : geo.back().channels;
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha: must be in [0, 1], got " + format_double(alpha));
  if (!(beta >= 0.0)) throw ConfigError("beta: must be non-negative, got " + format_double(beta));
  if (!(lambda >= 0.0)) throw ConfigError("lambda: must be non-negative, got " + format_double(lambda));
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr: must be positive");
  if (!(lr_decay_factor > 0.0)) throw ConfigError("lr_decay_factor: must be positive");
  if (lr_decay_epochs == 0) throw ConfigError("lr_decay_epochs: must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum: must be in [0, 1)");
  if (batch_size < 2) throw ConfigError("batch_size: pairwise losses need at least 2");
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  const auto drops = static_cast<double>(epoch / cfg.lr_decay_epochs);
  return cfg.base_lr * std::pow(cfg.lr_decay_factor, -drops);
}

// ---------------------------------------------------------------------------
// Text format

namespace {

struct LineRef {
  const std::string& source;
  std::size_t line;
  const std::string& key;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(source + ":" + std::to_string(line) + ": " + key + ": " + msg);
  }
};

std::size_t parse_size(const std::string& v, const LineRef& ref) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) ref.fail("expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& v, const LineRef& ref) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) ref.fail("expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v, const LineRef& ref) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    ref.fail("expected a finite number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v, const LineRef& ref) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  ref.fail("expected true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& v, const LineRef& ref) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_size(item, ref));
  if (out.empty()) ref.fail("expected a comma-separated list");
  return out;
}

std::vector<StageSpec> parse_layout(const std::string& v, const LineRef& ref) {
  std::vector<StageSpec> out;
  for (const auto& item : split_list(v)) {
    auto colon = item.find(':');
    StageSpec s;
    s.layers = parse_size(trim(item.substr(0, colon)), ref);
    if (colon != std::string::npos) {
      const std::string kind = trim(item.substr(colon + 1));
      if (kind == "merge")
        s.merge_after = true;
      else if (kind != "none")
        ref.fail("stage kind must be 'merge' or 'none', got '" + kind + "'");
    }
    out.push_back(s);
  }
  if (out.empty()) ref.fail("expected entries like '2:merge, 2:none'");
  return out;
}

}  // namespace

Config parse_config(std::string_view text, const std::string& source) {
  Config cfg;
  std::optional<std::vector<std::string>> universe;
  AttributeGroupSpec::GroupList groups;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string key = trim(line.substr(0, eq));
    const LineRef ref{source, lineno, key};
    if (eq == std::string::npos) ref.fail("expected 'key = value'");
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) ref.fail("key given more than once");

    if (key.starts_with("group.")) {
      const std::string gname = key.substr(6);
      if (gname.empty()) ref.fail("group name is empty");
      groups.emplace_back(gname, split_list(value));
    } else if (key == "attributes") {
      universe = split_list(value);
    } else if (key == "image_size") {
      cfg.model.image_size = parse_size(value, ref);
    } else if (key == "patch_size") {
      cfg.model.patch_size = parse_size(value, ref);
    } else if (key == "embed_dim") {
      cfg.model.embed_dim = parse_size(value, ref);
    } else if (key == "stage_layout") {
      cfg.model.stage_layout = parse_layout(value, ref);
    } else if (key == "num_heads") {
      cfg.model.num_heads = parse_size_list(value, ref);
    } else if (key == "window_size") {
      cfg.model.window_size = parse_size(value, ref);
    } else if (key == "shift_size") {
      cfg.model.shift_size = parse_size(value, ref);
    } else if (key == "mlp_ratio") {
      cfg.model.mlp_ratio = parse_size(value, ref);
    } else if (key == "branch_hidden") {
      cfg.model.branch_hidden = parse_size_list(value, ref);
    } else if (key == "dropout_rate") {
      cfg.model.dropout_rate = parse_double(value, ref);
    } else if (key == "num_identities") {
      cfg.model.num_identities = parse_size(value, ref);
    } else if (key == "alpha") {
      cfg.loss.alpha = parse_double(value, ref);
    } else if (key == "beta") {
      cfg.loss.beta = parse_double(value, ref);
    } else if (key == "lambda") {
      cfg.loss.lambda = parse_double(value, ref);
    } else if (key == "identity_constraint") {
      cfg.loss.identity_constraint = parse_bool(value, ref);
    } else if (key == "base_lr") {
      cfg.train.base_lr = parse_double(value, ref);
    } else if (key == "lr_decay_factor") {
      cfg.train.lr_decay_factor = parse_double(value, ref);
    } else if (key == "lr_decay_epochs") {
      cfg.train.lr_decay_epochs = parse_size(value, ref);
    } else if (key == "momentum") {
      cfg.train.momentum = parse_double(value, ref);
    } else if (key == "epochs") {
      cfg.train.epochs = parse_size(value, ref);
    } else if (key == "batch_size") {
      cfg.train.batch_size = parse_size(value, ref);
    } else if (key == "seed") {
      cfg.train.seed = parse_u64(value, ref);
      cfg.seed_from_file = true;
    } else {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }

  cfg.model.validate();
  cfg.loss.validate();
  cfg.train.validate();

  if (universe || !groups.empty()) {
    if (groups.empty()) {
      // A custom universe without groups: one group per attribute.
      for (const auto& a : *universe) groups.emplace_back(a, std::vector<std::string>{a});
    }
    std::vector<std::string> names;
    if (universe) {
      names = *universe;
    } else {
      names = AttributeGroupSpec::celeba_default().display_names();
    }
    cfg.groups = AttributeGroupSpec::from_partition(names, groups);
  }
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string to_config_text(const Config& cfg) {
  std::ostringstream os;
  const auto& m = cfg.model;
  os << "# model\n";
  os << "image_size = " << m.image_size << '\n';
  os << "patch_size = " << m.patch_size << '\n';
  os << "embed_dim = " << m.embed_dim << '\n';
  os << "stage_layout = ";
  for (std::size_t i = 0; i < m.stage_layout.size(); ++i)
    os << (i ? ", " : "") << m.stage_layout[i].layers << (m.stage_layout[i].merge_after ? ":merge" : ":none");
  os << '\n';
  os << "num_heads = " << join(m.num_heads) << '\n';
  os << "window_size = " << m.window_size << '\n';
  os << "shift_size = " << m.shift_size << '\n';
  os << "mlp_ratio = " << m.mlp_ratio << '\n';
  os << "branch_hidden = " << join(m.branch_hidden) << '\n';
  os << "dropout_rate = " << format_double(m.dropout_rate) << '\n';
  os << "num_identities = " << m.num_identities << '\n';
  os << "# loss\n";
  os << "alpha = " << format_double(cfg.loss.alpha) << '\n';
  os << "beta = " << format_double(cfg.loss.beta) << '\n';
  os << "lambda = " << format_double(cfg.loss.lambda) << '\n';
  os << "identity_constraint = " << (cfg.loss.identity_constraint ? "true" : "false") << '\n';
  os << "# training\n";
  os << "base_lr = " << format_double(cfg.train.base_lr) << '\n';
  os << "lr_decay_factor = " << format_double(cfg.train.lr_decay_factor) << '\n';
  os << "lr_decay_epochs = " << cfg.train.lr_decay_epochs << '\n';
  os << "momentum = " << format_double(cfg.train.momentum) << '\n';
  os << "epochs = " << cfg.train.epochs << '\n';
  os << "batch_size = " << cfg.train.batch_size << '\n';
  os << "seed = " << cfg.train.seed << '\n';
  os << "# attribute grouping\n";
  os << cfg.groups.to_config_text();
  return os.str();
}

void apply_env_overrides(Config& config) {
  const char* env = std::getenv("TRANSFA_SEED");
  if (!env || !*env) return;
  const std::string v(env);
  const std::string key = "TRANSFA_SEED";
  const std::string src = "environment";
  config.train.seed = parse_u64(v, LineRef{src, 0, key});
}

}  // namespace transfa
