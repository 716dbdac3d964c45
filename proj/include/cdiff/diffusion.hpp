// SPDX-License-Identifier: Apache-2.0
// Noise schedule, forward noising and the deterministic (eta = 0) DDIM update.
#pragma once

#include <random>
#include <span>
#include <vector>

#include "cdiff/tensor.hpp"

namespace cdiff {

/// Timesteps are 1-based; alpha_bar(0) := 1 so that the last reverse step
/// lands on the clean-latent estimate.
class NoiseSchedule {
 public:
  /// Linear beta ramp from beta_start to beta_end inclusive.
  static NoiseSchedule linear(int T, double beta_start, double beta_end);

  int T() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const;
  double alpha_bar(int t) const;
  std::span<const double> betas() const { return beta_; }

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;  // index t, alpha_bar_[0] = 1
};

inline constexpr int kDefaultTimesteps = 1000;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

inline NoiseSchedule make_schedule(int T = kDefaultTimesteps, double beta_start = kDefaultBetaStart,
                                   double beta_end = kDefaultBetaEnd) {
  return NoiseSchedule::linear(T, beta_start, beta_end);
}

/// sqrt(alpha_bar_t) * z + sqrt(1 - alpha_bar_t) * eps.
Tensor forward_diffuse(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& schedule);
/// Batched variant: z and eps are (N, ...), one timestep per sample.
Tensor forward_diffuse(const Tensor& z, std::span<const int> t, const Tensor& eps, const NoiseSchedule& schedule);

/// Uniform over {1, ..., T}.
int sample_timestep(std::mt19937_64& rng, const NoiseSchedule& schedule);

/// Algebraic inverse of forward_diffuse given a noise estimate.
Tensor predict_x0(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& schedule);

/// One deterministic DDIM update from t to t_prev (t > t_prev >= 0).
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev, const NoiseSchedule& schedule);

struct InferencePlan {
  std::vector<int> timesteps;  // strictly decreasing, within [1, T]

  std::size_t steps() const { return timesteps.size(); }
  /// Target timestep of the i-th update; 0 after the last plan entry.
  int previous(std::size_t i) const { return i + 1 < timesteps.size() ? timesteps[i + 1] : 0; }
};

/// Evenly spaced plan with floor stride T / steps, anchored at T.
InferencePlan make_inference_plan(int T, int steps);

}  // namespace cdiff
