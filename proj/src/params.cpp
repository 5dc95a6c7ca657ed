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

#include "transfa/params.hpp"

#include <algorithm>
#include <cmath>
#include <string_view>

#include "transfa/errors.hpp"

namespace transfa {

ad::Tensor& ParamStore::add(const std::string& name, ad::Shape shape) {
  if (params_.count(name) || buffers_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  return params_.emplace(name, ad::Tensor::zeros(std::move(shape), true)).first->second;
}

std::vector<double>& ParamStore::add_buffer(const std::string& name, std::size_t size, double fill) {
  if (params_.count(name) || buffers_.count(name)) throw ContractError("duplicate buffer name '" + name + "'");
  return buffers_.emplace(name, std::vector<double>(size, fill)).first->second;
}

const ad::Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw LookupError("no parameter named '" + name + "'");
  return it->second;
}

ad::Tensor& ParamStore::at(const std::string& name) {
  return const_cast<ad::Tensor&>(static_cast<const ParamStore&>(*this).at(name));
}

const std::vector<double>& ParamStore::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw LookupError("no buffer named '" + name + "'");
  return it->second;
}

std::vector<double>& ParamStore::buffer(const std::string& name) {
  return const_cast<std::vector<double>&>(static_cast<const ParamStore&>(*this).buffer(name));
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

void ParamStore::fill(const std::string& name, double value) {
  auto data = at(name).mutable_data();
  std::fill(data.begin(), data.end(), value);
}

void truncated_normal_fill(std::span<double> out, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std);
  for (double& v : out) {
    do {
      v = normal(rng);
    } while (std::abs(v) > 2.0 * std);
  }
}

void init_parameters(ParamStore& store, std::mt19937_64& rng) {
  auto ends_with = [](const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (const auto& [name, tensor] : store.tensors()) {
    ad::Tensor handle = tensor;
    auto data = handle.mutable_data();
    if (ends_with(name, ".weight")) {
      truncated_normal_fill(data, 0.02, rng);
    } else {
      std::fill(data.begin(), data.end(), ends_with(name, ".gain") ? 1.0 : 0.0);
    }
  }
}

}  // namespace transfa
