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

#include "transfa/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "transfa/errors.hpp"

namespace transfa::ad {
namespace {

thread_local bool g_grad_enabled = true;

const detail::Node& checked(const detail::NodePtr& node) {
  if (!node) throw ContractError("use of an undefined tensor");
  return *node;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

double* detail::Node::grad_data() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad.data();
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
  if (ad::numel(shape) != values.size())
    throw DimensionError("data length " + std::to_string(values.size()) + " does not match shape " + to_string(shape));
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::ptrdiff_t axis) const {
  const auto r = static_cast<std::ptrdiff_t>(rank());
  const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return shape()[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return checked(node_).value.size(); }

std::span<const double> Tensor::data() const { return checked(node_).value; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  if (node_->backward) throw ContractError("mutable_data() on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return data()[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + to_string(s));
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range for " + to_string(s));
    off = off * s[axis] + i;
    ++axis;
  }
  return data()[off];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

bool Tensor::is_leaf() const { return !checked(node_).backward; }

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  checked(node_);
  node_->grad_data();
  return node_->grad;
}

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::clear_grad() {
  checked(node_);
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

std::string_view Tensor::op() const { return checked(node_).op; }

Tensor Tensor::detach() const { return from_data(shape(), std::vector<double>(data().begin(), data().end())); }

void backward(const Tensor& root) {
  if (!root.defined()) throw ContractError("backward on an undefined tensor");
  if (root.numel() != 1) throw ContractError("backward root must be a scalar, got shape " + to_string(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS yields a topological order with inputs first.
  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_data()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> values, std::string_view op, std::vector<Tensor> inputs,
                   detail::BackwardFn backward) {
  Tensor out = Tensor::from_data(std::move(shape), std::move(values));
  const bool needs = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
                       return t.defined() && t.requires_grad();
                     });
  auto& node = *out.node();
  node.op = op;
  if (needs) {
    node.requires_grad = true;
    node.backward = std::move(backward);
    node.inputs.reserve(inputs.size());
    for (auto& t : inputs) node.inputs.push_back(t.node());
  }
  return out;
}

}  // namespace transfa::ad
