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
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "transfa/tensor.hpp"

namespace transfa {

// Named trainable tensors plus non-trainable buffers (running statistics).
// Names are unique and iterate in sorted order, which fixes the checkpoint
// layout and the optimizer's traversal order.
class ParamStore {
 public:
  // Registers a zero-initialized trainable tensor. Throws ContractError on a
  // duplicate name.
  ad::Tensor& add(const std::string& name, ad::Shape shape);
  std::vector<double>& add_buffer(const std::string& name, std::size_t size, double fill);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  // Throws LookupError for unknown names.
  const ad::Tensor& at(const std::string& name) const;
  ad::Tensor& at(const std::string& name);
  const std::vector<double>& buffer(const std::string& name) const;
  std::vector<double>& buffer(const std::string& name);

  const std::map<std::string, ad::Tensor>& tensors() const { return params_; }
  const std::map<std::string, std::vector<double>>& buffers() const { return buffers_; }
  std::map<std::string, std::vector<double>>& buffers() { return buffers_; }

  std::size_t parameter_count() const;
  void zero_grad();
  void fill(const std::string& name, double value);

 private:
  std::map<std::string, ad::Tensor> params_;
  std::map<std::string, std::vector<double>> buffers_;
};

// Normal(0, std) samples, redrawn until they fall within two standard deviations.
void truncated_normal_fill(std::span<double> out, double std, std::mt19937_64& rng);

// Visits parameters in name order: "*.weight" gets truncated normal (std
// 0.02), "*.gain" gets ones, everything else zeros.
void init_parameters(ParamStore& store, std::mt19937_64& rng);

}  // namespace transfa
