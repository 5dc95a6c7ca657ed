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

#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "transfa/cam.hpp"
#include "transfa/config.hpp"
#include "transfa/dataset.hpp"
#include "transfa/errors.hpp"
#include "transfa/gradcheck.hpp"
#include "transfa/image_io.hpp"
#include "transfa/metrics.hpp"
#include "transfa/model.hpp"
#include "transfa/presets.hpp"
#include "transfa/trainer.hpp"

namespace transfa::cli {

namespace fs = std::filesystem;

namespace {

// Raised for problems that are the caller's fault; mapped to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string preset;
  std::string data;
  std::string out;
  std::string checkpoint;
  std::string split = "train";
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::size_t max_samples = 0;
};

// Messages go to stderr and, once a run directory exists, to run.log there.
class RunLog {
 public:
  explicit RunLog(std::ostream& err) : err_(err) {}
  void open(const fs::path& dir) { file_.open(dir / "run.log", std::ios::app); }
  void operator()(const std::string& msg) {
    err_ << msg << '\n';
    if (file_.is_open()) file_ << msg << '\n' << std::flush;
  }

 private:
  std::ostream& err_;
  std::ofstream file_;
};

fs::path run_directory(const std::string& out, const std::string& command) {
  if (!out.empty()) {
    fs::create_directories(out);
    return out;
  }
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  fs::path dir = fs::path("runs") / (command + "-" + stamp);
  for (int k = 2; fs::exists(dir); ++k) dir = fs::path("runs") / (command + "-" + stamp + "-" + std::to_string(k));
  fs::create_directories(dir);
  return dir;
}

std::uint64_t resolve_seed(const Options& o, std::uint64_t from_config) {
  if (o.seed_opt && o.seed_opt->count()) return o.seed;
  Config probe;
  probe.train.seed = from_config;
  apply_env_overrides(probe);
  return probe.train.seed;
}

Config resolve_config(const Options& o) {
  if (!o.config.empty() && !o.preset.empty()) throw UsageError("--config and --preset are mutually exclusive");
  Config cfg;
  if (!o.config.empty()) {
    cfg = load_config(o.config);
  } else if (!o.preset.empty()) {
    try {
      cfg = presets::by_name(o.preset).config;
    } catch (const LookupError& e) {
      throw UsageError(e.what());
    }
  } else if (!o.checkpoint.empty() && fs::exists(fs::path(o.checkpoint).parent_path() / "config.cfg")) {
    cfg = load_config(fs::path(o.checkpoint).parent_path() / "config.cfg");
  }
  cfg.train.seed = resolve_seed(o, cfg.train.seed);
  return cfg;
}

DatasetManifest load_data(const Options& o) {
  if (!o.data.empty()) return load_celeba_directory(o.data, o.max_samples);
  if (!o.preset.empty()) return synth_dataset(presets::by_name(o.preset).data);
  throw UsageError("--data is required unless --preset names a synthetic dataset");
}

std::vector<std::size_t> split_rows(const DatasetManifest& m, const std::string& split) {
  if (split == "all") return m.all_indices();
  const auto rows = m.indices(parse_split(split));
  if (rows.empty()) throw ProtocolError("split '" + split + "' has no samples");
  return rows;
}

model::TransFAModel load_model(const Config& cfg, const std::string& checkpoint) {
  model::TransFAModel m(cfg.model, cfg.groups, cfg.model.num_identities);
  auto state = train::initial_state(m, cfg.train);
  train::load_checkpoint(checkpoint, m, state);
  return m;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
  if (!f) throw IoError("cannot write " + path.string());
}

void add_common(CLI::App* sub, Options& o, bool with_data, bool with_checkpoint) {
  sub->add_option("--config", o.config, "Configuration file (key = value lines)")->check(CLI::ExistingFile);
  sub->add_option("--preset", o.preset, "Built-in configuration: gradcheck, overfit, attention, ablation-1 .. ablation-4");
  if (with_data) {
    sub->add_option("--data", o.data, "CelebA-layout dataset directory")->check(CLI::ExistingDirectory);
    sub->add_option("--max-samples", o.max_samples, "Read only the first N annotation rows (0 = all)");
  }
  if (with_checkpoint)
    sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint; config.cfg beside it is used when no config is given")
        ->check(CLI::ExistingFile);
  sub->add_option("--out", o.out, "Output directory (default: runs/<command>-<timestamp>)");
  o.seed_opt = sub->add_option("--seed", o.seed, "Seed; overrides TRANSFA_SEED and the config");
}

// ---------------------------------------------------------------------------

int cmd_synth(const Options& o, const SynthOptions& s_in, std::ostream& out, RunLog& log) {
  SynthOptions s = s_in;
  s.seed = resolve_seed(o, 42);
  const fs::path dir = run_directory(o.out, "synth");
  log.open(dir);
  const auto m = synth_dataset(s);
  write_celeba_directory(m, dir);
  log("synth: " + std::to_string(m.samples.size()) + " images, " + std::to_string(s.attr_count) + " attributes, " +
      std::to_string(s.num_identities) + " identities, seed " + std::to_string(s.seed));
  out << dir.string() << '\n';
  return 0;
}

struct TrainFlags {
  std::size_t epochs = 0;
  CLI::Option* epochs_opt = nullptr;
  std::size_t batch_size = 0;
  CLI::Option* batch_opt = nullptr;
  double lr = 0.0;
  CLI::Option* lr_opt = nullptr;
  std::string resume;
  bool data_grouping = false;
};

int cmd_train(const Options& o, const TrainFlags& f, std::ostream& out, RunLog& log) {
  Config cfg = resolve_config(o);
  if (f.epochs_opt->count()) cfg.train.epochs = f.epochs;
  if (f.batch_opt->count()) cfg.train.batch_size = f.batch_size;
  if (f.lr_opt->count()) cfg.train.base_lr = f.lr;
  const auto manifest = load_data(o);
  if (f.data_grouping) {
    if (!manifest.region_groups) throw UsageError("--data-grouping: the dataset has no grouping.cfg");
    cfg.groups = *manifest.region_groups;
  }
  const auto rows = split_rows(manifest, o.split);
  const auto data = PreparedSet::build(manifest, rows, cfg.groups, cfg.model.image_size);
  if (cfg.model.num_identities == 0) cfg.model.num_identities = data.identity_count();
  cfg.model.validate();
  cfg.train.validate();

  const fs::path dir = run_directory(o.out, "train");
  log.open(dir);
  write_file(dir / "config.cfg", to_config_text(cfg));

  model::TransFAModel model(cfg.model, cfg.groups, cfg.model.num_identities);
  model.initialize(cfg.train.seed);
  auto state = train::initial_state(model, cfg.train);
  if (!f.resume.empty()) {
    train::load_checkpoint(f.resume, model, state);
    log("resumed from " + f.resume + " at epoch " + std::to_string(state.epoch));
  }
  log("train: " + std::to_string(data.size()) + " images, " + std::to_string(model.params().parameter_count()) +
      " parameters, " + std::to_string(cfg.train.epochs) + " epochs, seed " + std::to_string(cfg.train.seed));

  train::TrainOptions opts;
  opts.out_dir = dir;
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, data.size() / cfg.train.batch_size);
  opts.on_step = [&](const train::LogRow& r) {
    if ((r.step + 1) % steps_per_epoch == 0) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %zu step %zu lr %.3g loss_total %.6f loss_A %.6f", r.epoch, r.step, r.lr,
                    r.loss_total, r.loss_A);
      log(buf);
    }
  };
  train::train(model, data, cfg, state, opts);
  train::save_checkpoint(dir / "model.bin", model, state);
  log("wrote model.bin");
  out << dir.string() << '\n';
  return 0;
}

int cmd_eval(const Options& o, const std::string& predictions, double threshold, std::ostream& out, RunLog& log) {
  if (predictions.empty() && o.checkpoint.empty()) throw UsageError("eval needs --checkpoint or --predictions");
  const auto manifest = load_data(o);
  Config cfg = resolve_config(o);
  if (o.config.empty() && o.preset.empty() && o.checkpoint.empty() && manifest.region_groups)
    cfg.groups = *manifest.region_groups;
  const fs::path dir = run_directory(o.out, "eval");
  log.open(dir);

  metrics::AttributeReport report;
  if (!predictions.empty()) {
    const auto pf = metrics::read_predictions(predictions);
    if (o.config.empty() && o.preset.empty() && !manifest.region_groups &&
        pf.attribute_names.size() != cfg.groups.attribute_count())
      cfg.groups = AttributeGroupSpec::from_groups({{"all", pf.attribute_names}});
    const auto& g = cfg.groups;
    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) row_of[manifest.samples[i].source_name] = i;
    std::vector<std::size_t> col_of(g.attribute_count());
    for (std::size_t a = 0; a < g.attribute_count(); ++a) {
      bool found = false;
      for (std::size_t j = 0; j < pf.attribute_names.size() && !found; ++j)
        if (canonical_attribute_key(pf.attribute_names[j]) == g.key(a)) {
          col_of[a] = j;
          found = true;
        }
      if (!found) throw LookupError("predictions file has no column for attribute '" + g.display_name(a) + "'");
    }
    std::vector<std::size_t> label_col(g.attribute_count());
    for (std::size_t a = 0; a < g.attribute_count(); ++a) {
      bool found = false;
      for (std::size_t j = 0; j < manifest.attribute_names.size() && !found; ++j)
        if (canonical_attribute_key(manifest.attribute_names[j]) == g.key(a)) {
          label_col[a] = j;
          found = true;
        }
      if (!found) throw LookupError("dataset has no labels for attribute '" + g.display_name(a) + "'");
    }
    const std::size_t width = pf.attribute_names.size();
    std::vector<double> p, y;
    for (std::size_t i = 0; i < pf.sources.size(); ++i) {
      const auto it = row_of.find(pf.sources[i]);
      if (it == row_of.end()) throw LookupError("prediction for unknown image '" + pf.sources[i] + "'");
      const auto& s = manifest.samples[it->second];
      for (std::size_t a = 0; a < g.attribute_count(); ++a) {
        p.push_back(pf.probabilities[i * width + col_of[a]]);
        y.push_back(s.attributes[label_col[a]]);
      }
    }
    report = metrics::attribute_accuracy(p, y, pf.sources.size(), g, threshold);
  } else {
    auto model = load_model(cfg, o.checkpoint);
    const auto rows = split_rows(manifest, o.split);
    const auto data = PreparedSet::build(manifest, rows, cfg.groups, cfg.model.image_size);
    const auto inf = metrics::run_inference(model, data);
    report = metrics::attribute_accuracy(inf.probabilities, inf.labels, inf.count, cfg.groups, threshold);
    std::vector<std::string> sources;
    for (std::size_t r = 0; r < data.size(); ++r) sources.push_back(data.source_name(r));
    metrics::write_predictions(dir / "predictions.csv", sources, cfg.groups.display_names(), inf.probabilities);
  }
  write_file(dir / "attribute_report.csv", metrics::to_csv(report));
  out << metrics::to_table(report);
  log("eval: " + std::to_string(report.samples) + " images, overall " + std::to_string(report.overall));
  return 0;
}

int cmd_rank1(const Options& o, std::size_t identities, bool strict, std::ostream& out, RunLog& log) {
  if (o.checkpoint.empty()) throw UsageError("rank1 needs --checkpoint");
  const Config cfg = resolve_config(o);
  const auto manifest = load_data(o);
  auto model = load_model(cfg, o.checkpoint);
  const auto rows = split_rows(manifest, o.split);
  const auto data = PreparedSet::build(manifest, rows, cfg.groups, cfg.model.image_size);
  const fs::path dir = run_directory(o.out, "rank1");
  log.open(dir);
  const auto rep = metrics::rank1_protocol(model, data, identities, cfg.train.seed, strict);
  write_file(dir / "rank1_report.csv", metrics::to_csv(rep));
  out << metrics::to_table(rep);
  if (!rep.note.empty()) log("rank1: " + rep.note);
  return 0;
}

int cmd_cam(const Options& o, const std::vector<std::string>& images, std::vector<std::string> attributes,
            std::ostream& out, RunLog& log) {
  if (o.checkpoint.empty()) throw UsageError("cam needs --checkpoint");
  const Config cfg = resolve_config(o);
  for (const auto& a : attributes)
    if (!cfg.groups.find(a)) throw UsageError("unknown attribute '" + a + "'");
  if (attributes.empty()) attributes = cfg.groups.display_names();
  auto model = load_model(cfg, o.checkpoint);
  const fs::path dir = run_directory(o.out, "cam");
  log.open(dir);
  for (const auto& path : images) {
    const Image img = read_image(path);
    const auto input = preprocess(img, cfg.model.image_size);
    const std::string stem = fs::path(path).stem().string();
    for (const auto& a : attributes) {
      const auto m = cam::grad_cam(model, input, a, fs::path(path).filename().string());
      const auto gray = dir / (stem + "__" + a + ".pgm");
      const auto blend = dir / (stem + "__" + a + "_overlay.ppm");
      cam::export_map(m, gray, &img, blend);
      out << gray.string() << '\n' << blend.string() << '\n';
    }
  }
  log("cam: " + std::to_string(images.size() * attributes.size()) + " maps");
  return 0;
}

int cmd_group_suggest(const Options& o, std::optional<std::size_t> clusters, double threshold,
                      std::size_t max_positives, std::ostream& out, RunLog& log) {
  if (o.checkpoint.empty()) throw UsageError("group-suggest needs --checkpoint");
  const Config cfg = resolve_config(o);
  const auto manifest = load_data(o);
  auto model = load_model(cfg, o.checkpoint);
  const auto rows = split_rows(manifest, o.split);
  const auto data = PreparedSet::build(manifest, rows, cfg.groups, cfg.model.image_size);
  const fs::path dir = run_directory(o.out, "group-suggest");
  log.open(dir);
  const auto maps = cam::mean_maps(model, data, max_positives);
  cam::SuggestOptions so;
  so.clusters = clusters;
  so.threshold = threshold;
  const auto proposal = cam::group_suggest(maps, cfg.groups.display_names(), so);
  write_file(dir / "grouping_proposal.cfg", proposal.text);
  out << proposal.text;
  std::vector<std::size_t> current(cfg.groups.attribute_count());
  for (std::size_t a = 0; a < current.size(); ++a) current[a] = cfg.groups.group_of(a);
  char buf[96];
  std::snprintf(buf, sizeof buf, "agreement with configured grouping: %.2f%%",
                100.0 * cam::cluster_agreement(proposal.cluster_of, current));
  out << "# " << buf << '\n';
  log(std::string("group-suggest: ") + buf);
  return 0;
}

int cmd_gradcheck(const Options& o, double tolerance, double step, std::ostream& out) {
  presets::Preset p;
  try {
    p = presets::by_name(o.preset.empty() ? "gradcheck" : o.preset);
  } catch (const LookupError& e) {
    throw UsageError(e.what());
  }
  if (!o.config.empty()) p.config = load_config(o.config);
  const std::uint64_t seed = resolve_seed(o, 7);
  const auto report = gradcheck::run(p, step, seed);
  out << gradcheck::to_table(report, tolerance);
  return report.worst() <= tolerance ? 0 : 2;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Face attribute recognition with a shifted-window transformer and identity-constrained losses."};
  app.name("transfa");
  app.require_subcommand(1, 1);
  app.fallthrough(false);

  Options o;
  SynthOptions synth;
  TrainFlags tf;
  std::string predictions;
  double threshold = 0.5;
  std::size_t identities = 100;
  bool strict = false;
  std::vector<std::string> images, attributes;
  std::size_t clusters = 0;
  double link_threshold = 0.5;
  std::size_t max_positives = 0;
  double tolerance = 1e-4, step = 1e-6;

  auto* s_synth = app.add_subcommand("synth", "Write a synthetic dataset in CelebA layout");
  s_synth->add_option("--identities", synth.num_identities, "Number of identities")->capture_default_str();
  s_synth->add_option("--per-identity", synth.per_identity, "Images per identity")->capture_default_str();
  s_synth->add_option("--attributes", synth.attr_count, "Number of binary attributes")->capture_default_str();
  s_synth->add_option("--size", synth.image_size, "Image side in pixels")->capture_default_str();
  s_synth->add_option("--out", o.out, "Output directory (default: runs/synth-<timestamp>)");
  o.seed_opt = s_synth->add_option("--seed", o.seed, "Seed; overrides TRANSFA_SEED (default 42)");

  auto* s_train = app.add_subcommand("train", "Train a model and write per-epoch checkpoints");
  add_common(s_train, o, true, false);
  s_train->add_option("--split", o.split, "Split to train on: train, val, test or all")->capture_default_str();
  tf.epochs_opt = s_train->add_option("--epochs", tf.epochs, "Override the configured epoch count");
  tf.batch_opt = s_train->add_option("--batch-size", tf.batch_size, "Override the configured batch size");
  tf.lr_opt = s_train->add_option("--lr", tf.lr, "Override the configured base learning rate");
  s_train->add_option("--resume", tf.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  s_train->add_flag("--data-grouping", tf.data_grouping, "Use the grouping.cfg shipped with the dataset");

  auto* s_eval = app.add_subcommand("eval", "Per-attribute, per-group and overall accuracy");
  add_common(s_eval, o, true, true);
  s_eval->add_option("--split", o.split, "Split to evaluate: train, val, test or all");
  s_eval->add_option("--predictions", predictions, "Score this predictions CSV instead of running a model")
      ->check(CLI::ExistingFile);
  s_eval->add_option("--threshold", threshold, "Decision threshold (p >= threshold is positive)")->capture_default_str();

  auto* s_rank1 = app.add_subcommand("rank1", "Rank-1 identification per branch feature and fea_I");
  add_common(s_rank1, o, true, true);
  s_rank1->add_option("--split", o.split, "Split to draw identities from");
  s_rank1->add_option("--identities", identities, "Identities to sample")->capture_default_str();
  s_rank1->add_flag("--strict", strict, "Fail instead of scaling down when too few identities qualify");

  auto* s_cam = app.add_subcommand("cam", "Grad-CAM attention maps for images and attributes");
  add_common(s_cam, o, false, true);
  s_cam->add_option("--image", images, "Input image (repeatable)")->required()->check(CLI::ExistingFile);
  s_cam->add_option("--attribute", attributes, "Attribute name (repeatable; default all)");

  auto* s_group = app.add_subcommand("group-suggest", "Propose an attribute grouping from mean attention maps");
  add_common(s_group, o, true, true);
  s_group->add_option("--split", o.split, "Split whose positives form the mean maps");
  auto* k_opt = s_group->add_option("--clusters", clusters, "Stop at this many clusters");
  auto* t_opt =
      s_group->add_option("--threshold", link_threshold, "Merge while average correlation >= threshold")->capture_default_str();
  k_opt->excludes(t_opt);
  s_group->add_option("--max-positives", max_positives, "Positives per attribute to average (0 = all)");

  auto* s_grad = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  s_grad->add_option("--preset", o.preset, "Preset to check (default gradcheck)");
  s_grad->add_option("--config", o.config, "Use this configuration with the preset's data")->check(CLI::ExistingFile);
  s_grad->add_option("--tolerance", tolerance, "Largest acceptable relative error")->capture_default_str();
  s_grad->add_option("--step", step, "Central-difference step")->capture_default_str();
  s_grad->add_option("--seed", o.seed, "Seed for the parameter draw (default 7)");
  o.seed_opt = nullptr;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }
  // Each subcommand registered its own --seed; find the one that was parsed.
  for (auto* sub : app.get_subcommands())
    if (auto* opt = sub->get_option_no_throw("--seed")) o.seed_opt = opt;

  if (o.split != "all") {
    try {
      (void)parse_split(o.split);
    } catch (const Error&) {
      err << "invalid --split '" << o.split << "' (expected train, val, test or all)\n";
      return 1;
    }
  }
  if (s_eval->parsed() && s_eval->get_option("--split")->count() == 0) o.split = "test";
  if (s_rank1->parsed() && s_rank1->get_option("--split")->count() == 0) o.split = "test";
  if (s_group->parsed() && s_group->get_option("--split")->count() == 0) o.split = "all";

  RunLog log(err);
  try {
    if (s_synth->parsed()) return cmd_synth(o, synth, out, log);
    if (s_train->parsed()) return cmd_train(o, tf, out, log);
    if (s_eval->parsed()) return cmd_eval(o, predictions, threshold, out, log);
    if (s_rank1->parsed()) return cmd_rank1(o, identities, strict, out, log);
    if (s_cam->parsed()) return cmd_cam(o, images, attributes, out, log);
    if (s_group->parsed())
      return cmd_group_suggest(o, k_opt->count() ? std::optional<std::size_t>(clusters) : std::nullopt, link_threshold,
                               max_positives, out, log);
    if (s_grad->parsed()) return cmd_gradcheck(o, tolerance, step, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 2;
  }
  return 1;
}

}  // namespace transfa::cli
