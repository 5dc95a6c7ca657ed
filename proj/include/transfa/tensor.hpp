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

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to an immutable node: its shape and values are
// fixed at construction. Ops record their inputs and a backward rule when any
// input requires a gradient (and recording is not disabled by NoGradGuard);
// backward() from a scalar root then walks the recorded graph once in reverse
// topological order. Leaf parameter values may be updated in place by an
// optimizer between graph builds via mutable_data().

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace transfa::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;
// Reads self.grad and accumulates into the grads of self.inputs.
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  BackwardFn backward;
  std::string_view op = "leaf";

  // Allocates a zero gradient on first use.
  double* grad_data();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  // Negative axes count from the end.
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Leaves only; graph-produced values are immutable.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  // Sets the gradient to zeros (allocating it).
  void zero_grad();
  void clear_grad();

  std::string_view op() const;
  // Copy of the values as a new constant leaf.
  Tensor detach() const;

  const detail::NodePtr& node() const noexcept { return node_; }

 private:
  detail::NodePtr node_;
};

// Populates grad on every requires_grad tensor reachable from root. Gradients
// accumulate, so callers zero parameter grads between steps.
void backward(const Tensor& root);

bool grad_enabled();

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result. The backward rule and inputs are kept only when some
// input requires a gradient and recording is enabled.
Tensor make_result(Shape shape, std::vector<double> values, std::string_view op, std::vector<Tensor> inputs,
                   detail::BackwardFn backward);

}  // namespace transfa::ad
