// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "cdiff/tensor.hpp"

namespace cdiff {

inline const double kLogTwoPi = std::log(2.0 * std::numbers::pi);
inline constexpr float kConfidenceFloor = 1e-6f;

struct LossConfig {
  double beta = 1.0;  // confidence exponent
  double tau = kLogTwoPi;
  bool stop_grad_weight = false;
  /// Applies conf^beta to the raw residual and takes an RMS over all terms
  /// instead of the per-pixel weighted squared residual.
  bool literal = false;

  void validate() const;
};

/// Confidence-weighted noise-prediction loss. eps and eps_hat are (C,h,w)
/// or (N,C,h,w); conf is (1,h,w) or (N,1,h,w) and must be strictly
/// positive. Per pixel: w * mean_c(r^2) - beta * log(max(conf, 1e-6)) + tau,
/// with w = conf^beta (detached when stop_grad_weight); returns the mean.
Tensor cdiff_loss(const Tensor& eps, const Tensor& eps_hat, const Tensor& conf, const LossConfig& cfg);

/// Per-pixel components, for diagnostics: mean weighted residual and mean
/// log-confidence term.
struct LossParts {
  double weighted_residual = 0.0;
  double log_term = 0.0;
  double total = 0.0;
};
LossParts loss_parts(const Tensor& eps, const Tensor& eps_hat, const Tensor& conf, const LossConfig& cfg);

struct ConfidenceGradientReport {
  std::vector<double> analytic;  // dL/dconf per pixel
  std::vector<double> numeric;   // central differences
  double max_rel_error = 0.0;
};

/// Compares autodiff gradients w.r.t. conf against central differences
/// (computed in double from the loss definition) with the given step.
ConfidenceGradientReport confidence_regularizer_gradients(const Tensor& eps, const Tensor& eps_hat, const Tensor& conf,
                                                          const LossConfig& cfg, double step = 1e-3);

/// Minimizer of c * r2 - log c: 1 / r2.
inline double stationary_confidence(double r2) { return 1.0 / r2; }

/// Gradient descent on a free confidence value for a fixed squared
/// residual (beta as configured, weights not detached). Returns the final
/// confidence.
double descend_confidence(double r2, const LossConfig& cfg, int steps, double lr, double init = 1.0);

}  // namespace cdiff
