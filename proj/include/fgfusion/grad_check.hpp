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

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fgfusion/tensor.hpp"

namespace fgf {

struct GradCheckReport {
  double max_error = 0.0;    // over checked coordinates
  std::size_t checked = 0;
  std::size_t skipped = 0;   // coordinates with a kink inside [x - eps, x + eps]

  double skipped_fraction() const {
    std::size_t n = checked + skipped;
    return n ? static_cast<double>(skipped) / n : 0.0;
  }
};

// Compares reverse-mode gradients of a scalar function against central
// finite differences, perturbing every coordinate of every leaf in place.
// Error per coordinate is |g_a - g_fd| / max(1, |g_a|, |g_fd|).
//
// With `kink_tol` > 0, a coordinate whose forward and backward one-sided
// differences disagree by more than 2 * kink_tol (same normalisation) is
// counted as skipped instead of checked: the function is not differentiable
// within the step there (ReLU, max), so central differences are meaningless.
// The one-sided differences use forward values only.
template <class T>
GradCheckReport grad_check_report(const std::function<Tensor<T>()>& f,
                                  std::vector<Tensor<T>> leaves, double eps,
                                  double kink_tol = 0.0) {
  if (!(eps >= 1e-6 && eps <= 1e-2)) {
    throw ContractError("grad_check: eps must lie in [1e-6, 1e-2]");
  }
  for (auto& leaf : leaves) {
    leaf.zero_grad();
    leaf.set_requires_grad(true);
  }
  double f0 = 0.0;
  {
    Tensor<T> y = f();
    if (y.numel() != 1) {
      throw ContractError("grad_check: function output " + shape_str(y.shape()) +
                          " is not a scalar");
    }
    f0 = static_cast<double>(y.item());
    y.backward();
  }
  GradCheckReport rep;
  NoGradGuard no_grad;
  for (auto& leaf : leaves) {
    std::vector<T> analytic = leaf.has_grad()
                                  ? std::vector<T>(leaf.grad().begin(), leaf.grad().end())
                                  : std::vector<T>(leaf.numel(), T(0));
    auto values = leaf.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      T orig = values[i];
      values[i] = orig + static_cast<T>(eps);
      double plus = static_cast<double>(f().item());
      values[i] = orig - static_cast<T>(eps);
      double minus = static_cast<double>(f().item());
      values[i] = orig;
      double fd = (plus - minus) / (2.0 * eps);
      double ga = static_cast<double>(analytic[i]);
      double norm = std::max({1.0, std::abs(ga), std::abs(fd)});
      if (kink_tol > 0) {
        double fwd = (plus - f0) / eps, bwd = (f0 - minus) / eps;
        if (std::abs(fwd - bwd) / norm > 2.0 * kink_tol) {
          ++rep.skipped;
          continue;
        }
      }
      rep.max_error = std::max(rep.max_error, std::abs(ga - fd) / norm);
      ++rep.checked;
    }
  }
  return rep;
}

// Strict form: every coordinate is checked. Returns the maximum error.
template <class T>
double grad_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> leaves,
                  double eps) {
  return grad_check_report<T>(f, std::move(leaves), eps).max_error;
}

// Single-input form: f maps x to a scalar.
template <class T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                  const Tensor<T>& x, double eps) {
  Tensor<T> leaf = x.detach();
  return grad_check<T>([&]() { return f(leaf); }, {leaf}, eps);
}

}  // namespace fgf
