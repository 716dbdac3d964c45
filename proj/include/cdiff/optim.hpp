// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

#include "cdiff/nn.hpp"

namespace cdiff {

/// Adam with decoupled weight decay: p <- p * (1 - lr * wd) before the
/// moment update. weight_decay = 0 gives plain Adam.
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  std::int64_t step_count = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  /// Applies one update to every parameter. Parameters without a gradient
  /// are treated as having a zero gradient.
  void step(const nn::NamedTensors& params, double lr);

  /// Moments as `m.<name>` / `v.<name>` plus a `step` meta entry.
  void save_into(const nn::NamedTensors& params, TensorDirectory& dir) const;
  void load_from(const nn::NamedTensors& params, const TensorDirectory& dir);
};

/// Global L2 norm over all parameter gradients.
double grad_norm(const nn::NamedTensors& params);
/// Rescales gradients so their global norm is at most max_norm; returns
/// the norm before clipping.
double clip_grad_norm(const nn::NamedTensors& params, double max_norm);

}  // namespace cdiff
