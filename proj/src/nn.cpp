// SPDX-License-Identifier: Apache-2.0
#include "cdiff/nn.hpp"

#include <algorithm>
#include <cmath>

namespace cdiff::nn {

Conv2d Conv2d::make(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::mt19937_64& rng,
                    bool zero_init) {
  Conv2d c;
  const float bound = 1.0f / std::sqrt(static_cast<float>(cin * k * k));
  c.weight = zero_init ? Tensor::zeros({cout, cin, k, k}) : Tensor::uniform({cout, cin, k, k}, rng, -bound, bound);
  c.bias = Tensor::zeros({cout});
  c.stride = stride;
  c.padding = (k - 1) / 2;
  return c;
}

void Conv2d::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

Linear Linear::make(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  Linear l;
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  l.weight = Tensor::uniform({in, out}, rng, -bound, bound);
  l.bias = Tensor::zeros({out});
  return l;
}

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

GroupNorm GroupNorm::make(std::size_t channels, std::size_t groups) {
  GroupNorm g;
  g.gamma = Tensor::ones({channels});
  g.beta = Tensor::zeros({channels});
  g.groups = groups;
  return g;
}

void GroupNorm::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

void set_requires_grad(const NamedTensors& params, bool on) {
  for (const auto& [name, t] : params) {
    Tensor h = t;
    h.set_requires_grad(on);
  }
}

void zero_grads(const NamedTensors& params) {
  for (const auto& [name, t] : params) {
    Tensor h = t;
    h.zero_grad();
  }
}

void load_into(const NamedTensors& params, const TensorDirectory& dir, const std::string& prefix) {
  for (const auto& [name, t] : params) {
    const Tensor& src = dir.at(prefix + name);
    if (src.shape() != t.shape()) {
      throw FormatError("parameter " + name + ": checkpoint shape " + shape_str(src.shape()) +
                        " does not match model shape " + shape_str(t.shape()));
    }
    Tensor h = t;
    std::copy(src.data().begin(), src.data().end(), h.data().begin());
  }
}

NamedTensors snapshot(const NamedTensors& params) {
  NamedTensors out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.emplace_back(name, t.detach());
  return out;
}

}  // namespace cdiff::nn
