// SPDX-License-Identifier: Apache-2.0
// Layer building blocks shared by the latent codec and the denoiser.
#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cdiff/ptf.hpp"
#include "cdiff/tensor.hpp"

namespace cdiff::nn {

/// Parameter handles in a fixed order; handles alias the model's storage.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct Conv2d {
  Tensor weight;  // (Cout, Cin, k, k)
  Tensor bias;    // (Cout)
  std::size_t stride = 1;
  std::size_t padding = 0;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias. With
  /// zero_init the weights are zero as well.
  static Conv2d make(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
                     std::mt19937_64& rng, bool zero_init = false);

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct Linear {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)

  static Linear make(std::size_t in, std::size_t out, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct GroupNorm {
  Tensor gamma;
  Tensor beta;
  std::size_t groups = 8;
  float eps = 1e-5f;

  static GroupNorm make(std::size_t channels, std::size_t groups);
  Tensor operator()(const Tensor& x) const { return group_normalize(x, groups, eps, gamma, beta); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

void set_requires_grad(const NamedTensors& params, bool on);
void zero_grads(const NamedTensors& params);

/// Copies tensors from a loaded directory into the parameter handles,
/// validating names and shapes.
void load_into(const NamedTensors& params, const TensorDirectory& dir, const std::string& prefix = "");

/// Deep copies, so later in-place updates of the source do not leak.
NamedTensors snapshot(const NamedTensors& params);

}  // namespace cdiff::nn
