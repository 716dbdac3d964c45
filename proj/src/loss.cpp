// SPDX-License-Identifier: Apache-2.0
#include "cdiff/loss.hpp"

#include <cmath>
#include <limits>

namespace cdiff {

namespace {

void check_inputs(const Tensor& eps, const Tensor& eps_hat, const Tensor& conf) {
  if (eps.shape() != eps_hat.shape()) {
    throw ShapeError("cdiff_loss: eps " + shape_str(eps.shape()) + " vs eps_hat " + shape_str(eps_hat.shape()));
  }
  const std::size_t r = eps.rank();
  if (r < 3 || conf.rank() != r || conf.dim(r - 3) != 1 || conf.dim(r - 2) != eps.dim(r - 2) ||
      conf.dim(r - 1) != eps.dim(r - 1) || (r == 4 && conf.dim(0) != eps.dim(0))) {
    throw ShapeError("cdiff_loss: confidence " + shape_str(conf.shape()) + " does not match residual " +
                     shape_str(eps.shape()));
  }
  for (float c : conf.data()) {
    if (c <= 0.0f) throw DomainError("cdiff_loss: confidence must be strictly positive, got " + std::to_string(c));
  }
}

// Reference evaluation in double for the finite-difference oracle.
double loss_value(const Tensor& eps, const Tensor& eps_hat, const std::vector<double>& conf, const LossConfig& cfg) {
  const std::size_t r = eps.rank();
  const std::size_t C = eps.dim(r - 3), HW = eps.dim(r - 2) * eps.dim(r - 1);
  const std::size_t N = eps.numel() / (C * HW);
  double acc = 0.0;
  if (cfg.literal) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < HW; ++p) {
          const std::size_t i = (n * C + c) * HW + p;
          const double cp = conf[n * HW + p];
          const double term = (eps[i] - eps_hat[i]) * std::pow(cp, cfg.beta) -
                              cfg.beta * std::log(std::max(cp, double{kConfidenceFloor})) + cfg.tau;
          acc += term * term;
        }
    return std::sqrt(acc / static_cast<double>(N * C * HW));
  }
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < HW; ++p) {
      double r2 = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = (n * C + c) * HW + p;
        r2 += (eps[i] - eps_hat[i]) * (eps[i] - eps_hat[i]);
      }
      const double cp = conf[n * HW + p];
      acc += std::pow(cp, cfg.beta) * r2 / static_cast<double>(C) -
             cfg.beta * std::log(std::max(cp, double{kConfidenceFloor})) + cfg.tau;
    }
  return acc / static_cast<double>(N * HW);
}

}  // namespace

void LossConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("loss.beta must lie in [0,1]");
  if (!std::isfinite(tau)) throw std::invalid_argument("loss.tau must be finite");
}

Tensor cdiff_loss(const Tensor& eps, const Tensor& eps_hat, const Tensor& conf, const LossConfig& cfg) {
  cfg.validate();
  check_inputs(eps, eps_hat, conf);
  const std::size_t channel_axis = eps.rank() - 3;
  const float beta = static_cast<float>(cfg.beta);
  const Tensor residual = sub(eps_hat, eps);
  const Tensor safe_conf = clamp(conf, kConfidenceFloor, std::numeric_limits<float>::max());

  if (cfg.literal) {
    const Tensor weight = beta == 0.0f ? ones_like(conf) : pow_scalar(conf, beta);
    Tensor term = mul(mul_scalar(residual, -1.0f), weight);
    term = add_scalar(sub(term, mul_scalar(log(safe_conf), beta)), static_cast<float>(cfg.tau));
    return pow_scalar(mean(square(term)), 0.5f);
  }

  const Tensor r2 = mean(square(residual), {channel_axis}, /*keepdim=*/true);
  Tensor weighted = r2;
  if (beta != 0.0f) {
    const Tensor weight = cfg.stop_grad_weight ? pow_scalar(conf.detach(), beta) : pow_scalar(conf, beta);
    weighted = mul(weight, r2);
    weighted = sub(weighted, mul_scalar(log(safe_conf), beta));
  }
  return add_scalar(mean(weighted), static_cast<float>(cfg.tau));
}

LossParts loss_parts(const Tensor& eps, const Tensor& eps_hat, const Tensor& conf, const LossConfig& cfg) {
  check_inputs(eps, eps_hat, conf);
  const std::size_t r = eps.rank();
  const std::size_t C = eps.dim(r - 3), HW = eps.dim(r - 2) * eps.dim(r - 1);
  const std::size_t N = eps.numel() / (C * HW);
  LossParts parts;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < HW; ++p) {
      double r2 = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = (n * C + c) * HW + p;
        r2 += (eps[i] - eps_hat[i]) * (eps[i] - eps_hat[i]);
      }
      const double cp = conf[n * HW + p];
      parts.weighted_residual += std::pow(cp, cfg.beta) * r2 / static_cast<double>(C);
      parts.log_term -= cfg.beta * std::log(std::max(cp, double{kConfidenceFloor}));
    }
  parts.weighted_residual /= static_cast<double>(N * HW);
  parts.log_term /= static_cast<double>(N * HW);
  parts.total = parts.weighted_residual + parts.log_term + cfg.tau;
  return parts;
}

ConfidenceGradientReport confidence_regularizer_gradients(const Tensor& eps, const Tensor& eps_hat, const Tensor& conf,
                                                          const LossConfig& cfg, double step) {
  check_inputs(eps, eps_hat, conf);
  LossConfig live = cfg;
  live.stop_grad_weight = false;  // the finite-difference oracle sees the full dependence on conf
  Tensor c = conf.detach().set_requires_grad(true);
  {
    Tape tape;
    const Tensor loss = cdiff_loss(eps, eps_hat, c, live);
    tape.backward(loss);
  }
  ConfidenceGradientReport rep;
  std::vector<double> base(conf.data().begin(), conf.data().end());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base, minus = base;
    plus[i] += step;
    minus[i] -= step;
    const double num = (loss_value(eps, eps_hat, plus, live) - loss_value(eps, eps_hat, minus, live)) / (2.0 * step);
    const double ana = c.grad()[i];
    rep.analytic.push_back(ana);
    rep.numeric.push_back(num);
    rep.max_rel_error = std::max(rep.max_rel_error, std::abs(ana - num) / std::max(1.0, std::abs(num)));
  }
  return rep;
}

double descend_confidence(double r2, const LossConfig& cfg, int steps, double lr, double init) {
  if (!(r2 > 0.0)) throw std::invalid_argument("descend_confidence needs a positive squared residual");
  const Tensor eps({1, 1, 1}, std::vector<float>{static_cast<float>(std::sqrt(r2))});
  const Tensor eps_hat({1, 1, 1}, 0.0f);
  LossConfig live = cfg;
  live.stop_grad_weight = false;
  double c = init;
  for (int i = 0; i < steps; ++i) {
    Tensor conf = Tensor({1, 1, 1}, std::vector<float>{static_cast<float>(c)}).set_requires_grad(true);
    Tape tape;
    tape.backward(cdiff_loss(eps, eps_hat, conf, live));
    c = std::max(c - lr * conf.grad()[0], double{kConfidenceFloor});
  }
  return c;
}

}  // namespace cdiff
