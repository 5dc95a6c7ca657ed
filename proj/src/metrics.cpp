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

#include "transfa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "transfa/errors.hpp"

namespace transfa::metrics {

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

AttributeReport attribute_accuracy(std::span<const double> p, std::span<const double> y, std::size_t n,
                                   const AttributeGroupSpec& spec, double threshold) {
  const std::size_t a = spec.attribute_count();
  if (p.size() != n * a || y.size() != n * a)
    throw DimensionError("attribute_accuracy: expected " + std::to_string(n) + " x " + std::to_string(a) +
                         " values, got " + std::to_string(p.size()) + " predictions and " + std::to_string(y.size()) +
                         " labels");
  AttributeReport r;
  r.attribute_names = spec.display_names();
  r.samples = n;
  r.accuracy.assign(a, 0.0);
  if (n > 0) {
    std::vector<std::size_t> hits(a, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < a; ++j)
        if ((p[i * a + j] >= threshold) == (y[i * a + j] >= 0.5)) ++hits[j];
    for (std::size_t j = 0; j < a; ++j) r.accuracy[j] = 100.0 * static_cast<double>(hits[j]) / static_cast<double>(n);
  }
  for (const auto& g : spec.groups()) {
    r.group_names.push_back(g.name);
    double s = 0.0;
    for (std::size_t j : g.attributes) s += r.accuracy[j];
    r.group_mean.push_back(g.attributes.empty() ? 0.0 : s / static_cast<double>(g.attributes.size()));
  }
  r.overall = a ? std::accumulate(r.accuracy.begin(), r.accuracy.end(), 0.0) / static_cast<double>(a) : 0.0;
  return r;
}

std::string to_csv(const AttributeReport& r) {
  std::ostringstream out;
  out << "kind,name,accuracy\n";
  for (std::size_t j = 0; j < r.accuracy.size(); ++j)
    out << "attribute," << r.attribute_names[j] << ',' << fixed2(r.accuracy[j]) << '\n';
  for (std::size_t g = 0; g < r.group_mean.size(); ++g)
    out << "group," << r.group_names[g] << ',' << fixed2(r.group_mean[g]) << '\n';
  out << "overall,Average," << fixed2(r.overall) << '\n';
  return out.str();
}

std::string to_table(const AttributeReport& r) {
  std::size_t width = 9;
  for (const auto& s : r.attribute_names) width = std::max(width, s.size());
  for (const auto& s : r.group_names) width = std::max(width, s.size() + 2);
  std::ostringstream out;
  out << pad("Attribute", width) << "  Acc(%)\n" << std::string(width + 8, '-') << '\n';
  for (std::size_t j = 0; j < r.accuracy.size(); ++j)
    out << pad(r.attribute_names[j], width) << "  " << fixed2(r.accuracy[j]) << '\n';
  out << std::string(width + 8, '-') << '\n';
  for (std::size_t g = 0; g < r.group_mean.size(); ++g)
    out << pad("[" + r.group_names[g] + "]", width) << "  " << fixed2(r.group_mean[g]) << '\n';
  out << pad("Average", width) << "  " << fixed2(r.overall) << "  (" << r.samples << " images)\n";
  return out.str();
}

double rank1(const FeatureSet& gallery, const FeatureSet& probe) {
  if (gallery.dim != probe.dim)
    throw DimensionError("rank1: gallery dim " + std::to_string(gallery.dim) + " != probe dim " +
                         std::to_string(probe.dim));
  if (probe.size() == 0) throw ProtocolError("rank1: empty probe set");
  for (std::size_t i = 0; i < probe.size(); ++i)
    if (std::find(gallery.identities.begin(), gallery.identities.end(), probe.identities[i]) == gallery.identities.end())
      throw ProtocolError("rank1: probe identity " + std::to_string(probe.identities[i]) + " is absent from the gallery");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const auto q = probe.row(i);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      const auto g = gallery.row(j);
      double d = 0.0;
      for (std::size_t k = 0; k < q.size(); ++k) d += (q[k] - g[k]) * (q[k] - g[k]);
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    if (gallery.identities[best_j] == probe.identities[i]) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(probe.size());
}

Rank1Split rank1_split(std::span<const std::size_t> row_identities, std::size_t requested, std::uint64_t seed,
                       bool strict) {
  if (requested < 2) throw ContractError("rank-1 protocol needs at least 2 identities, requested " + std::to_string(requested));
  std::map<std::size_t, std::vector<std::size_t>> rows_of;
  for (std::size_t r = 0; r < row_identities.size(); ++r) rows_of[row_identities[r]].push_back(r);
  std::vector<std::size_t> eligible;
  for (const auto& [id, rows] : rows_of)
    if (rows.size() >= 2) eligible.push_back(id);

  Rank1Split split;
  split.requested = requested;
  if (eligible.size() < 2 || (strict && eligible.size() < requested))
    throw ProtocolError("rank-1 protocol needs " + std::to_string(requested) +
                        " identities with at least 2 images; available: " + std::to_string(eligible.size()));
  std::mt19937_64 rng(seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  split.used = std::min(requested, eligible.size());
  if (split.used < requested)
    split.note = "scaled down: " + std::to_string(split.used) + " of " + std::to_string(requested) +
                 " requested identities have at least 2 images";
  eligible.resize(split.used);
  std::sort(eligible.begin(), eligible.end());
  for (std::size_t id : eligible) {
    const auto& rows = rows_of[id];
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, rows.size() - 1)(rng);
    for (std::size_t k = 0; k < rows.size(); ++k) (k == pick ? split.probe_rows : split.gallery_rows).push_back(rows[k]);
  }
  std::sort(split.gallery_rows.begin(), split.gallery_rows.end());
  return split;
}

Inference run_inference(model::TransFAModel& model, const PreparedSet& data, std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("run_inference: batch_size must be positive");
  const auto& groups = model.groups();
  Inference inf;
  inf.count = data.size();
  inf.attribute_count = groups.attribute_count();
  inf.branch_features.resize(groups.group_count());
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> rows;
    for (std::size_t r = start; r < std::min(start + batch_size, data.size()); ++r) rows.push_back(r);
    const Batch b = data.batch(rows);
    ad::NoGradGuard no_grad;
    const auto out = model.forward(b.images, false, nullptr);
    const auto& pred = out.prediction;
    inf.probabilities.insert(inf.probabilities.end(), pred.probabilities.data().begin(), pred.probabilities.data().end());
    inf.labels.insert(inf.labels.end(), b.attributes.data().begin(), b.attributes.data().end());
    for (std::size_t g = 0; g < groups.group_count(); ++g) {
      auto& fs = inf.branch_features[g];
      fs.dim = pred.branch_features[g].shape()[1];
      fs.values.insert(fs.values.end(), pred.branch_features[g].data().begin(), pred.branch_features[g].data().end());
    }
    inf.global_feature.dim = pred.global_feature.shape()[1];
    inf.global_feature.values.insert(inf.global_feature.values.end(), pred.global_feature.data().begin(),
                                     pred.global_feature.data().end());
    for (std::size_t r : rows) {
      for (auto& fs : inf.branch_features) fs.identities.push_back(data.identity(r));
      inf.global_feature.identities.push_back(data.identity(r));
    }
  }
  return inf;
}

namespace {

FeatureSet subset(const FeatureSet& fs, const std::vector<std::size_t>& rows) {
  FeatureSet out;
  out.dim = fs.dim;
  for (std::size_t r : rows) {
    const auto v = fs.row(r);
    out.values.insert(out.values.end(), v.begin(), v.end());
    out.identities.push_back(fs.identities[r]);
  }
  return out;
}

}  // namespace

Rank1Report rank1_protocol(const Inference& inf, const AttributeGroupSpec& groups, std::size_t num_identities,
                           std::uint64_t seed, bool strict) {
  const Rank1Split split = rank1_split(inf.global_feature.identities, num_identities, seed, strict);
  Rank1Report rep;
  rep.seed = seed;
  rep.requested = split.requested;
  rep.used = split.used;
  rep.note = split.note;
  rep.probes = split.probe_rows.size();
  rep.gallery = split.gallery_rows.size();
  auto eval = [&](const std::string& name, const FeatureSet& fs) {
    rep.sources.push_back(name);
    rep.accuracy.push_back(rank1(subset(fs, split.gallery_rows), subset(fs, split.probe_rows)));
  };
  for (std::size_t g = 0; g < groups.group_count(); ++g) eval(groups.group(g).name, inf.branch_features.at(g));
  eval("fea_I", inf.global_feature);
  return rep;
}

Rank1Report rank1_protocol(model::TransFAModel& model, const PreparedSet& data, std::size_t num_identities,
                           std::uint64_t seed, bool strict) {
  return rank1_protocol(run_inference(model, data), model.groups(), num_identities, seed, strict);
}

std::string to_csv(const Rank1Report& r) {
  std::ostringstream out;
  out << "source,rank1\n";
  for (std::size_t i = 0; i < r.sources.size(); ++i) out << r.sources[i] << ',' << fixed2(r.accuracy[i]) << '\n';
  return out.str();
}

std::string to_table(const Rank1Report& r) {
  std::size_t width = 6;
  for (const auto& s : r.sources) width = std::max(width, s.size());
  std::ostringstream out;
  out << pad("Branch", width) << "  Rank-1(%)\n" << std::string(width + 11, '-') << '\n';
  for (std::size_t i = 0; i < r.sources.size(); ++i) out << pad(r.sources[i], width) << "  " << fixed2(r.accuracy[i]) << '\n';
  out << "identities " << r.used << " (requested " << r.requested << "), probes " << r.probes << ", gallery " << r.gallery
      << ", seed " << r.seed << '\n';
  if (!r.note.empty()) out << "note: " << r.note << '\n';
  return out.str();
}

void write_predictions(const std::filesystem::path& path, const std::vector<std::string>& sources,
                       const std::vector<std::string>& attribute_names, std::span<const double> p) {
  if (p.size() != sources.size() * attribute_names.size())
    throw DimensionError("write_predictions: value count does not match sources x attributes");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "source";
  for (const auto& a : attribute_names) out << ',' << a;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < sources.size(); ++i) {
    out << sources[i];
    for (std::size_t j = 0; j < attribute_names.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", p[i * attribute_names.size() + j]);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

PredictionFile read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    return cells;
  };
  PredictionFile pf;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string(), 1, "empty predictions file");
  auto head = split(line);
  if (head.size() < 2 || head[0] != "source") throw ParseError(path.string(), 1, "header must start with 'source'");
  pf.attribute_names.assign(head.begin() + 1, head.end());
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != head.size())
      throw ParseError(path.string(), n, "expected " + std::to_string(head.size()) + " columns, found " + std::to_string(cells.size()));
    pf.sources.push_back(cells[0]);
    for (std::size_t j = 1; j < cells.size(); ++j) {
      char* end = nullptr;
      const double v = std::strtod(cells[j].c_str(), &end);
      if (end == cells[j].c_str() || *end != '\0' || !(v >= 0.0 && v <= 1.0))
        throw ParseError(path.string(), n, "'" + cells[j] + "' is not a probability");
      pf.probabilities.push_back(v);
    }
  }
  return pf;
}

}  // namespace transfa::metrics
