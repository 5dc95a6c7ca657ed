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
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "transfa/config.hpp"
#include "transfa/dataset.hpp"
#include "transfa/losses.hpp"
#include "transfa/model.hpp"

namespace transfa::train {

struct OptimizerState {
  std::map<std::string, std::vector<double>> velocity;  // mirrors parameter names and sizes
  double momentum = 0.9;
  double lr = 0.0;
};

OptimizerState make_optimizer(const ParamStore& params, double momentum);

// v = momentum * v + g; p = p - lr * v, visiting parameters in name order.
// Throws ContractError naming the first parameter without a gradient.
void sgd_step(ParamStore& params, OptimizerState& state);

struct LogRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_A = 0.0;
  double loss_g_sum = 0.0;
  double loss_LA = 0.0;
  double loss_F = 0.0;
  double loss_C = 0.0;
  double loss_GI = 0.0;
  double loss_total = 0.0;

  bool operator==(const LogRow&) const = default;
};

std::string log_header();
// Round-trip precision ("%.17g").
std::string format_log_row(const LogRow& row);
std::vector<LogRow> read_log(const std::filesystem::path& path);

struct TrainState {
  std::size_t epoch = 0;  // next epoch to run
  std::size_t step = 0;
  std::mt19937_64 dropout_rng;
  OptimizerState optimizer;
};

// Fresh state: zero velocities, dropout stream seeded from the training seed.
TrainState initial_state(const model::TransFAModel& model, const TrainConfig& cfg);

// Binary layout, little-endian: "TRANSFA1", u32 entry count, then per entry
// u16 name length, name bytes, u8 rank, u32 dims[rank], f64 values; finally
// a u64 FNV-1a checksum of everything before it. Entries are prefixed
// param/, velocity/, buffer/, meta/ and rng/.
void save_checkpoint(const std::filesystem::path& path, const model::TransFAModel& model, const TrainState& state);
// Throws LoadError on a bad magic or version, checksum or truncation, and on
// any name or shape disagreement with the model.
void load_checkpoint(const std::filesystem::path& path, model::TransFAModel& model, TrainState& state);

struct TrainOptions {
  // When set, receives train_log.csv and checkpoint_epoch_<k>.bin per epoch.
  std::filesystem::path out_dir;
  // Stop after this epoch count is reached (exclusive); 0 runs to cfg.epochs.
  std::size_t stop_at_epoch = 0;
  std::function<void(const LogRow&)> on_step;
};

struct TrainResult {
  std::vector<LogRow> log;
};

// Runs epochs state.epoch .. cfg.train.epochs - 1. Each epoch takes its lr
// from lr_at, its batch order from (seed, epoch) and draws dropout masks from
// the state's generator. A non-finite loss aborts with the component name.
TrainResult train(model::TransFAModel& model, const PreparedSet& data, const Config& cfg, TrainState& state,
                  const TrainOptions& options = {});

}  // namespace transfa::train
