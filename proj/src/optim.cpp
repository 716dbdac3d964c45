// SPDX-License-Identifier: Apache-2.0
#include "cdiff/optim.hpp"

#include <cmath>

namespace cdiff {

void AdamW::step(const nn::NamedTensors& params, double lr) {
  if (m.empty()) {
    for (const auto& [name, p] : params) {
      m.push_back(zeros_like(p));
      v.push_back(zeros_like(p));
    }
  }
  if (m.size() != params.size()) throw std::logic_error("optimizer state does not match parameter list");
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    auto w = p.data();
    auto g = p.grad();
    auto mi = m[i].data();
    auto vi = v[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      const double mj = beta1 * mi[j] + (1.0 - beta1) * gj;
      const double vj = beta2 * vi[j] + (1.0 - beta2) * gj * gj;
      mi[j] = static_cast<float>(mj);
      vi[j] = static_cast<float>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps);
      w[j] = static_cast<float>(w[j] * decay - lr * update);
    }
  }
}

void AdamW::save_into(const nn::NamedTensors& params, TensorDirectory& dir) const {
  dir.meta["optimizer.step"] = std::to_string(step_count);
  for (std::size_t i = 0; i < m.size(); ++i) {
    dir.tensors.emplace_back("m." + params[i].first, m[i]);
    dir.tensors.emplace_back("v." + params[i].first, v[i]);
  }
}

void AdamW::load_from(const nn::NamedTensors& params, const TensorDirectory& dir) {
  step_count = std::stoll(dir.meta_at("optimizer.step"));
  m.clear();
  v.clear();
  if (step_count == 0) return;
  for (const auto& [name, p] : params) {
    const Tensor& mt = dir.at("m." + name);
    const Tensor& vt = dir.at("v." + name);
    if (mt.shape() != p.shape() || vt.shape() != p.shape()) {
      throw FormatError("optimizer moments for " + name + " do not match the parameter shape");
    }
    m.push_back(mt.detach());
    v.push_back(vt.detach());
  }
}

double grad_norm(const nn::NamedTensors& params) {
  double acc = 0.0;
  for (const auto& [name, p] : params) {
    for (float g : p.grad()) acc += static_cast<double>(g) * g;
  }
  return std::sqrt(acc);
}

double clip_grad_norm(const nn::NamedTensors& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const float scale = static_cast<float>(max_norm / norm);
    for (const auto& [name, p] : params) {
      Tensor h = p;
      if (!h.has_grad()) continue;
      for (float& g : h.grad_buffer()) g *= scale;
    }
  }
  return norm;
}

}  // namespace cdiff
