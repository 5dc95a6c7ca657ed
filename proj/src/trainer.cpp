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

#include "transfa/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "transfa/errors.hpp"
#include "transfa/ops.hpp"

namespace transfa::train {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

OptimizerState make_optimizer(const ParamStore& params, double momentum) {
  OptimizerState s;
  s.momentum = momentum;
  for (const auto& [name, t] : params.tensors()) s.velocity.emplace(name, std::vector<double>(t.numel(), 0.0));
  return s;
}

void sgd_step(ParamStore& params, OptimizerState& state) {
  for (const auto& [name, t] : params.tensors()) {
    if (!t.has_grad()) throw ContractError("sgd_step: parameter '" + name + "' has no gradient");
    auto it = state.velocity.find(name);
    if (it == state.velocity.end() || it->second.size() != t.numel())
      throw ContractError("sgd_step: no velocity buffer for '" + name + "'");
  }
  for (const auto& [name, t] : params.tensors()) {
    ad::Tensor p = t;
    auto& v = state.velocity[name];
    const auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = state.momentum * v[i] + g[i];
      w[i] -= state.lr * v[i];
    }
  }
}

std::string log_header() { return "step,epoch,lr,loss_A,loss_g_sum,loss_LA,loss_F,loss_C,loss_GI,loss_total"; }

std::string format_log_row(const LogRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.step, r.epoch, r.lr,
                r.loss_A, r.loss_g_sum, r.loss_LA, r.loss_F, r.loss_C, r.loss_GI, r.loss_total);
  return buf;
}

std::vector<LogRow> read_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != log_header()) throw ParseError(path.string(), 1, "unexpected log header");
  std::vector<LogRow> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    LogRow r;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &r.step, &r.epoch, &r.lr, &r.loss_A,
                    &r.loss_g_sum, &r.loss_LA, &r.loss_F, &r.loss_C, &r.loss_GI, &r.loss_total) != 10)
      throw ParseError(path.string(), n, "malformed log row");
    rows.push_back(r);
  }
  return rows;
}

TrainState initial_state(const model::TransFAModel& model, const TrainConfig& cfg) {
  TrainState s;
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x64726f70u};
  s.dropout_rng.seed(seq);
  s.optimizer = make_optimizer(model.params(), cfg.momentum);
  return s;
}

namespace {

constexpr char kMagic[8] = {'T', 'R', 'A', 'N', 'S', 'F', 'A', '1'};

struct Entry {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end, std::string source) : b_(bytes), end_(end), src_(std::move(source)) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw LoadError("checkpoint " + src_ + " is truncated");
  }
  const std::string& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string src_;
};

std::vector<double> rng_to_values(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  std::istringstream in(ss.str());
  std::vector<double> out;
  unsigned long long word;
  while (in >> word) {
    out.push_back(static_cast<double>(word >> 32));
    out.push_back(static_cast<double>(word & 0xffffffffull));
  }
  return out;
}

std::mt19937_64 rng_from_values(const std::vector<double>& v) {
  if (v.size() % 2 != 0) throw LoadError("corrupt generator state in checkpoint");
  std::ostringstream ss;
  for (std::size_t i = 0; i < v.size(); i += 2) {
    const auto hi = static_cast<unsigned long long>(v[i]);
    const auto lo = static_cast<unsigned long long>(v[i + 1]);
    if (static_cast<double>(hi) != v[i] || static_cast<double>(lo) != v[i + 1] || hi > 0xffffffffull || lo > 0xffffffffull)
      throw LoadError("corrupt generator state in checkpoint");
    ss << ((hi << 32) | lo) << ' ';
  }
  std::mt19937_64 rng;
  std::istringstream in(ss.str());
  in >> rng;
  if (!in) throw LoadError("corrupt generator state in checkpoint");
  return rng;
}

std::string shape_text(const std::vector<std::uint32_t>& dims) {
  ad::Shape s(dims.begin(), dims.end());
  return ad::to_string(s);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const model::TransFAModel& model, const TrainState& state) {
  std::vector<std::pair<std::string, Entry>> entries;
  auto add = [&](std::string name, std::vector<std::uint32_t> dims, std::vector<double> values) {
    entries.emplace_back(std::move(name), Entry{std::move(dims), std::move(values)});
  };
  add("meta/epoch", {1}, {static_cast<double>(state.epoch)});
  add("meta/step", {1}, {static_cast<double>(state.step)});
  add("meta/num_identities", {1}, {static_cast<double>(model.num_identities())});
  add("meta/lr", {1}, {state.optimizer.lr});
  add("meta/momentum", {1}, {state.optimizer.momentum});
  for (const auto& [name, t] : model.params().tensors()) {
    std::vector<std::uint32_t> dims(t.shape().begin(), t.shape().end());
    add("param/" + name, dims, {t.data().begin(), t.data().end()});
    add("velocity/" + name, dims, state.optimizer.velocity.at(name));
  }
  for (const auto& [name, b] : model.params().buffers())
    add("buffer/" + name, {static_cast<std::uint32_t>(b.size())}, b);
  auto rng = rng_to_values(state.dropout_rng);
  const auto rng_len = static_cast<std::uint32_t>(rng.size());
  add("rng/dropout", {rng_len}, std::move(rng));

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, e] : entries) {
    if (name.size() > 0xffff) throw ContractError("checkpoint entry name too long: " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
    for (std::uint32_t d : e.dims) put<std::uint32_t>(out, d);
    for (double v : e.values) put<double>(out, v);
  }
  put<std::uint64_t>(out, fnv1a(out));

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void load_checkpoint(const std::filesystem::path& path, model::TransFAModel& model, TrainState& state) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string src = path.string();
  if (bytes.size() < sizeof kMagic || bytes.compare(0, 7, kMagic, 7) != 0)
    throw LoadError(src + " is not a checkpoint file");
  if (bytes[7] != kMagic[7]) throw LoadError(src + ": unsupported checkpoint version '" + std::string(1, bytes[7]) + "'");
  if (bytes.size() < sizeof kMagic + 4 + 8) throw LoadError("checkpoint " + src + " is truncated");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a(bytes.substr(0, body))) throw LoadError("checkpoint " + src + " failed its checksum (truncated or corrupt)");

  Reader r(bytes, body, src);
  (void)r.text(sizeof kMagic);
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, Entry> entries;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = r.get<std::uint16_t>();
    std::string name = r.text(len);
    Entry e;
    const auto rank = r.get<std::uint8_t>();
    std::size_t n = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      e.dims.push_back(r.get<std::uint32_t>());
      n *= e.dims.back();
    }
    e.values.resize(n);
    for (double& v : e.values) v = r.get<double>();
    if (!entries.emplace(std::move(name), std::move(e)).second) throw LoadError(src + ": duplicate entry");
  }
  if (!r.done()) throw LoadError(src + ": trailing bytes after the last entry");

  auto take = [&](const std::string& name) -> Entry& {
    auto it = entries.find(name);
    if (it == entries.end()) throw LoadError(src + ": missing entry '" + name + "'");
    return it->second;
  };
  auto scalar = [&](const std::string& name) {
    const Entry& e = take(name);
    if (e.values.size() != 1) throw LoadError(src + ": entry '" + name + "' is not a scalar");
    return e.values[0];
  };

  const double ids = scalar("meta/num_identities");
  if (ids != static_cast<double>(model.num_identities()))
    throw LoadError(src + ": checkpoint has " + std::to_string(static_cast<std::size_t>(ids)) +
                    " identities, model has " + std::to_string(model.num_identities()));
  // Validate everything before touching the model.
  for (const auto& [name, t] : model.params().tensors()) {
    std::vector<std::uint32_t> want(t.shape().begin(), t.shape().end());
    for (const char* kind : {"param/", "velocity/"}) {
      const Entry& e = take(std::string(kind) + name);
      if (e.dims != want)
        throw LoadError(src + ": shape mismatch for parameter '" + name + "': checkpoint " + shape_text(e.dims) +
                        ", model " + shape_text(want));
    }
  }
  for (const auto& [name, b] : model.params().buffers()) {
    const Entry& e = take("buffer/" + name);
    if (e.values.size() != b.size()) throw LoadError(src + ": size mismatch for buffer '" + name + "'");
  }
  std::size_t expected = 5 + 2 * model.params().tensors().size() + model.params().buffers().size() + 1;
  if (entries.size() != expected) {
    for (const auto& [name, _] : entries) {
      const bool known = name.rfind("meta/", 0) == 0 || name == "rng/dropout" ||
                         (name.rfind("param/", 0) == 0 && model.params().contains(name.substr(6))) ||
                         (name.rfind("velocity/", 0) == 0 && model.params().contains(name.substr(9))) ||
                         (name.rfind("buffer/", 0) == 0 && model.params().buffers().count(name.substr(7)));
      if (!known) throw LoadError(src + ": entry '" + name + "' does not exist in this model configuration");
    }
  }
  std::mt19937_64 rng = rng_from_values(take("rng/dropout").values);

  for (const auto& [name, t] : model.params().tensors()) {
    ad::Tensor p = t;
    const auto& v = take("param/" + name).values;
    std::copy(v.begin(), v.end(), p.mutable_data().begin());
    state.optimizer.velocity[name] = take("velocity/" + name).values;
  }
  for (auto& [name, b] : model.params().buffers()) b = take("buffer/" + name).values;
  state.epoch = static_cast<std::size_t>(scalar("meta/epoch"));
  state.step = static_cast<std::size_t>(scalar("meta/step"));
  state.optimizer.lr = scalar("meta/lr");
  state.optimizer.momentum = scalar("meta/momentum");
  state.dropout_rng = rng;
}

namespace {

void check_finite(const loss::LossBreakdown& b, std::size_t epoch, std::size_t step) {
  auto bad = [&](const std::string& name) {
    throw DomainError("non-finite " + name + " at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
  };
  if (!std::isfinite(b.loss_A.item())) bad("loss_A");
  for (std::size_t g = 0; g < b.loss_g.size(); ++g)
    if (!std::isfinite(b.loss_g[g].item())) bad("loss_g[" + std::to_string(g) + "]");
  if (!std::isfinite(b.loss_LA.item())) bad("loss_LA");
  if (!std::isfinite(b.loss_F.item())) bad("loss_F");
  if (!std::isfinite(b.loss_C.item())) bad("loss_C");
  if (!std::isfinite(b.loss_GI.item())) bad("loss_GI");
  if (!std::isfinite(b.loss_total.item())) bad("loss_total");
}

}  // namespace

TrainResult train(model::TransFAModel& model, const PreparedSet& data, const Config& cfg, TrainState& state,
                  const TrainOptions& options) {
  cfg.train.validate();
  if (data.size() < 2) throw ContractError("training needs at least 2 samples");
  if (data.attribute_count() != model.groups().attribute_count())
    throw ContractError("training data has " + std::to_string(data.attribute_count()) + " attributes, model expects " +
                        std::to_string(model.groups().attribute_count()));
  if (model.num_identities() > 0 && data.identity_count() > model.num_identities())
    throw ContractError("training data has more identities than the identity classifier");

  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    const auto log_path = options.out_dir / "train_log.csv";
    const bool fresh = state.step == 0 || !std::filesystem::exists(log_path);
    log_file.open(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log_file) throw IoError("cannot write " + log_path.string());
    if (fresh) log_file << log_header() << '\n';
  }

  const std::size_t last = options.stop_at_epoch ? std::min(options.stop_at_epoch, cfg.train.epochs) : cfg.train.epochs;
  TrainResult result;
  for (std::size_t epoch = state.epoch; epoch < last; ++epoch) {
    state.optimizer.lr = lr_at(epoch, cfg.train);
    for (const auto& rows : epoch_batches(data.size(), cfg.train.batch_size, cfg.train.seed, epoch)) {
      const Batch batch = data.batch(rows);
      model.params().zero_grad();
      auto out = model.forward(batch.images, true, &state.dropout_rng);
      const auto losses = loss::batch_losses(out.prediction, batch.attributes, batch.identities, model.groups(), cfg.loss);
      check_finite(losses, epoch, state.step);
      ad::backward(losses.loss_total);
      sgd_step(model.params(), state.optimizer);

      LogRow row{state.step,          epoch,
                 state.optimizer.lr,  losses.loss_A.item(),
                 losses.loss_g_sum(), losses.loss_LA.item(),
                 losses.loss_F.item(), losses.loss_C.item(),
                 losses.loss_GI.item(), losses.loss_total.item()};
      ++state.step;
      result.log.push_back(row);
      if (log_file.is_open()) log_file << format_log_row(row) << '\n';
      if (options.on_step) options.on_step(row);
    }
    state.epoch = epoch + 1;
    if (!options.out_dir.empty()) {
      log_file.flush();
      save_checkpoint(options.out_dir / ("checkpoint_epoch_" + std::to_string(state.epoch) + ".bin"), model, state);
    }
  }
  return result;
}

}  // namespace transfa::train
