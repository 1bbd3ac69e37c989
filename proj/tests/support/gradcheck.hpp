#pragma once

// Central finite-difference oracle. Test-only: it touches nothing but the
// public Tensor API and evaluates the loss as a black box.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "spm/ops.hpp"
#include "spm/tensor.hpp"

namespace spm::testing {

struct GradCheckResult {
  double max_error = 0;   // max over entries of |analytic - numeric| / max(1, |analytic|, |numeric|)
  double max_abs = 0;     // max absolute difference
  std::string worst;      // "<name>[index]"
  std::size_t checked = 0;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, NamedTensors params,
                                       double eps = 1e-5) {
  for (auto& [name, t] : params) t.zero_grad();
  loss_fn().backward();
  std::vector<std::vector<Real>> analytic;
  for (auto& [name, t] : params) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), Real{0});
    }
  }
  GradCheckResult result;
  NoGradGuard guard;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].second.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      Real saved = values[i];
      values[i] = saved + static_cast<Real>(eps);
      double up = loss_fn().item();
      values[i] = saved - static_cast<Real>(eps);
      double down = loss_fn().item();
      values[i] = saved;
      double numeric = (up - down) / (2 * eps);
      double a = analytic[p][i];
      double diff = std::abs(a - numeric);
      double err = diff / std::max({1.0, std::abs(a), std::abs(numeric)});
      result.max_abs = std::max(result.max_abs, diff);
      if (err > result.max_error || result.worst.empty()) {
        if (err >= result.max_error) {
          result.max_error = err;
          result.worst = params[p].first + "[" + std::to_string(i) + "]";
        }
      }
      ++result.checked;
    }
  }
  return result;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = false,
                            double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<Real> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<Real>(dist(rng));
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

}  // namespace spm::testing
