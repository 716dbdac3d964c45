// SPDX-License-Identifier: Apache-2.0
#include "cdiff/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cdiff {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("noise schedule needs T >= 1, got " + std::to_string(T));
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument("noise schedule needs 0 < beta_start <= beta_end < 1, got " +
                                std::to_string(beta_start) + ", " + std::to_string(beta_end));
  }
  NoiseSchedule s;
  s.beta_.resize(static_cast<std::size_t>(T));
  s.alpha_bar_.resize(static_cast<std::size_t>(T) + 1);
  s.alpha_bar_[0] = 1.0;
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    s.beta_[i] = beta_start + (beta_end - beta_start) * frac;
    s.alpha_bar_[i + 1] = s.alpha_bar_[i] * (1.0 - s.beta_[i]);
  }
  return s;
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > T()) throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, T]");
  return beta_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > T()) throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, T]");
  return alpha_bar_[static_cast<std::size_t>(t)];
}

namespace {

void check_timestep(int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.T()) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.T()) + "]");
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

/// out = ca * a + cb * b elementwise, evaluated in double.
Tensor combine(const Tensor& a, double ca, const Tensor& b, double cb) {
  Tensor out(a.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<float>(ca * a[i] + cb * b[i]);
  return out;
}

}  // namespace

Tensor forward_diffuse(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  check_timestep(t, schedule);
  check_same_shape(z, eps, "forward_diffuse");
  const double ab = schedule.alpha_bar(t);
  return combine(z, std::sqrt(ab), eps, std::sqrt(1.0 - ab));
}

Tensor forward_diffuse(const Tensor& z, std::span<const int> t, const Tensor& eps, const NoiseSchedule& schedule) {
  check_same_shape(z, eps, "forward_diffuse");
  if (z.rank() < 1 || z.dim(0) != t.size()) {
    throw ShapeError("forward_diffuse: " + std::to_string(t.size()) + " timesteps for batch " + shape_str(z.shape()));
  }
  Tensor out(z.shape());
  const std::size_t per = z.numel() / t.size();
  for (std::size_t n = 0; n < t.size(); ++n) {
    check_timestep(t[n], schedule);
    const double ab = schedule.alpha_bar(t[n]);
    const double ca = std::sqrt(ab), cb = std::sqrt(1.0 - ab);
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      out.data()[i] = static_cast<float>(ca * z[i] + cb * eps[i]);
    }
  }
  return out;
}

int sample_timestep(std::mt19937_64& rng, const NoiseSchedule& schedule) {
  std::uniform_int_distribution<int> dist(1, schedule.T());
  return dist(rng);
}

Tensor predict_x0(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& schedule) {
  check_timestep(t, schedule);
  check_same_shape(z_t, eps_hat, "predict_x0");
  const double ab = schedule.alpha_bar(t);
  const double inv = 1.0 / std::sqrt(ab);
  return combine(z_t, inv, eps_hat, -std::sqrt(1.0 - ab) * inv);
}

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev, const NoiseSchedule& schedule) {
  check_timestep(t, schedule);
  if (!(t > t_prev && t_prev >= 0)) {
    throw std::invalid_argument("ddim_step needs t > t_prev >= 0, got t=" + std::to_string(t) +
                                " t_prev=" + std::to_string(t_prev));
  }
  const Tensor x0 = predict_x0(z_t, eps_hat, t, schedule);
  if (t_prev == 0) return x0;
  const double ab_prev = schedule.alpha_bar(t_prev);
  return combine(x0, std::sqrt(ab_prev), eps_hat, std::sqrt(1.0 - ab_prev));
}

InferencePlan make_inference_plan(int T, int steps) {
  if (steps < 1 || steps > T) {
    throw std::out_of_range("inference steps " + std::to_string(steps) + " outside [1, " + std::to_string(T) + "]");
  }
  const int stride = T / steps;
  InferencePlan plan;
  plan.timesteps.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) plan.timesteps.push_back(T - i * stride);
  return plan;
}

}  // namespace cdiff
