/* Copyright 2026 The FGFusion Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Dense tensors with a dynamic reverse-mode tape.
//
// A Tensor is a shared handle to a graph node. Ops in ops.hpp create new
// nodes; when any input requires a gradient (and grad mode is on) the node
// records its parents and a closure that pushes the node's gradient back into
// them. Calling backward() on a scalar visits the graph in reverse
// topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fgfusion/errors.hpp"

namespace fgf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

namespace detail {
inline thread_local bool g_grad_enabled = true;
}  // namespace detail

inline bool grad_enabled() { return detail::g_grad_enabled; }

// Disables graph recording for the lifetime of the guard (inference, finite
// differences).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::g_grad_enabled) {
    detail::g_grad_enabled = false;
  }
  ~NoGradGuard() { detail::g_grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor from_vector(Shape shape, std::vector<T> values,
                            bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    for (const T& v : values) {
      if (!std::isfinite(v)) throw NumericError("tensor: non-finite input");
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    std::size_t n = shape_numel(shape);
    return from_vector(std::move(shape), std::vector<T>(n, v), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_vector({}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Direct write access. Only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item(): tensor " + shape_str(shape()) +
                          " is not a scalar");
    }
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value.at(i); }

  // New leaf holding a copy of the values, cut from the graph.
  Tensor detach() const {
    return from_vector(node_->shape, node_->value, false);
  }

  void backward() const;

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw ContractError("backward(): output " + shape_str(shape()) +
                        " is not a scalar");
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; `order` ends up topologically sorted
  // (parents before children).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

namespace detail {

template <class T>
void check_finite(const char* op, const std::vector<T>& v) {
  for (const T& x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward) {
  check_finite(op, value);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
    n->backward_fn = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

// Gradient buffer of parent i, or nullptr when that parent is a constant.
template <class T>
std::vector<T>* parent_grad(Node<T>& n, std::size_t i) {
  Node<T>& p = *n.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

}  // namespace detail
}  // namespace fgf
