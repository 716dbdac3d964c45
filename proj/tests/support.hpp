// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cdiff/tensor.hpp"

namespace cdiff::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  return Tensor::uniform(shape, rng, lo, hi);
}

struct GradCheckResult {
  double max_error = 0.0;  // max |analytic - numeric| / max(1, |numeric|)
  std::size_t checked = 0;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares tape gradients of f against a Richardson-extrapolated central
/// difference (steps h and h/2) for every element of every input. The
/// extrapolation removes the O(h^2) term, so h can stay large enough that
/// fp32 rounding in f does not dominate. Inputs are modified in place during
/// probing and restored afterwards.
inline GradCheckResult grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-2) {
  for (Tensor& t : inputs) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  std::vector<std::vector<float>> analytic;
  {
    Tape tape;
    const Tensor loss = f(inputs);
    tape.backward(loss);
    for (const Tensor& t : inputs) {
      if (t.has_grad()) {
        analytic.emplace_back(t.grad().begin(), t.grad().end());
      } else {
        analytic.emplace_back(t.numel(), 0.0f);
      }
    }
  }
  GradCheckResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i].data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const float orig = data[j];
      auto central = [&](double step) {
        // use the step actually representable around orig
        const float hi = static_cast<float>(orig + step), lo = static_cast<float>(orig - step);
        data[j] = hi;
        const double up = f(inputs).item();
        data[j] = lo;
        const double down = f(inputs).item();
        data[j] = orig;
        return (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
      };
      const double numeric = (4.0 * central(0.5 * h) - central(h)) / 3.0;
      const double err = std::abs(analytic[i][j] - numeric) / std::max(1.0, std::abs(numeric));
      r.max_error = std::max(r.max_error, err);
      ++r.checked;
    }
  }
  return r;
}

/// sum(x * w) with a fixed random weight, so every output element carries a
/// distinct upstream gradient.
inline Tensor weighted_sum(const Tensor& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(x, Tensor::uniform(x.shape(), rng, -1.0f, 1.0f)));
}

}  // namespace cdiff::testing
