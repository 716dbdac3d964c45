// SPDX-License-Identifier: Apache-2.0
#include "cdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace cdiff {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// --------------------------------------------------------------------------
// Tensor

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<TensorStorage>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : impl_(std::make_shared<TensorStorage>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{}, std::vector<float>{value}); }

Tensor Tensor::randn(const Shape& shape, std::mt19937_64& rng, float stddev) {
  Tensor t(shape);
  std::normal_distribution<float> dist(0.0f, stddev);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

Tensor Tensor::uniform(const Shape& shape, std::mt19937_64& rng, float lo, float hi) {
  Tensor t(shape);
  std::uniform_real_distribution<float> dist(lo, hi);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return impl_->shape[axis];
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

std::span<float> Tensor::grad_buffer() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

Tensor Tensor::detach() const {
  Tensor t(impl_->shape, impl_->data);
  return t;
}

Tensor Tensor::reshape(const Shape& shape) const { return cdiff::reshape(*this, shape); }

Tensor Tensor::make_result(Shape shape, std::initializer_list<const Tensor*> inputs) {
  Tensor out(std::move(shape));
  if (Tape::recording(inputs)) {
    out.impl_->requires_grad = true;
    out.impl_->leaf = false;
  }
  return out;
}

Tensor Tensor::make_tracked(Shape shape, bool tracked) {
  Tensor out(std::move(shape));
  if (tracked && Tape::active() != nullptr) {
    out.impl_->requires_grad = true;
    out.impl_->leaf = false;
  }
  return out;
}

Tensor ones_like(const Tensor& t) { return Tensor::ones(t.shape()); }
Tensor zeros_like(const Tensor& t) { return Tensor::zeros(t.shape()); }

// --------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}  // namespace

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

bool Tape::recording(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void Tape::record(const char* op, const Tensor& output, std::initializer_list<const Tensor*> inputs,
                  BackwardFn fn) {
  if (!output.requires_grad() || g_active_tape == nullptr) return;
  Node node{op, output, {}, std::move(fn)};
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined()) node.inputs.push_back(*t);
  }
  g_active_tape->nodes_.push_back(std::move(node));
}

void Tape::record(const char* op, const Tensor& output, std::vector<Tensor> inputs, BackwardFn fn) {
  if (!output.requires_grad() || g_active_tape == nullptr) return;
  g_active_tape->nodes_.push_back(Node{op, output, std::move(inputs), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward: loss was not produced on an open tape");
  }
  if (!loss.is_leaf()) {
    const bool on_tape = std::any_of(nodes_.begin(), nodes_.end(),
                                     [&](const Node& n) { return n.output.same_storage(loss); });
    if (!on_tape) throw std::logic_error("backward: loss was not produced on this tape");
  }
  for (Node& n : nodes_) n.output.zero_grad();
  Tensor root = loss;
  root.grad_buffer()[0] += 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output.has_grad()) it->backward(it->output);
  }
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw std::logic_error("backward: no active tape");
  tape->backward(loss);
}

// --------------------------------------------------------------------------
// Broadcasting elementwise ops

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> strides(r, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    const std::size_t oi = i + (r - in.size());
    strides[oi] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return strides;
}

/// Calls fn(out_index, a_offset, b_offset) for every output element.
template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
  const std::size_t n = shape_numel(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul, div };

Tensor binary(BinaryKind kind, const Tensor& a, const Tensor& b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor out = Tensor::make_result(out_shape, {&a, &b});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  switch (kind) {
    case BinaryKind::add:
      for_each_broadcast(out_shape, a.shape(), b.shape(),
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] + y[ib]; });
      break;
    case BinaryKind::sub:
      for_each_broadcast(out_shape, a.shape(), b.shape(),
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] - y[ib]; });
      break;
    case BinaryKind::mul:
      for_each_broadcast(out_shape, a.shape(), b.shape(),
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] * y[ib]; });
      break;
    case BinaryKind::div:
      for_each_broadcast(out_shape, a.shape(), b.shape(),
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] / y[ib]; });
      break;
  }
  static constexpr const char* names[] = {"add", "sub", "mul", "div"};
  Tape::record(names[static_cast<int>(kind)], out, {&a, &b}, [kind, a, b](const Tensor& res) {
    Tensor ga = a, gb = b;
    auto g = res.grad();
    auto x = a.data();
    auto y = b.data();
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    std::span<float> da = need_a ? ga.grad_buffer() : std::span<float>();
    std::span<float> db = need_b ? gb.grad_buffer() : std::span<float>();
    for_each_broadcast(res.shape(), a.shape(), b.shape(),
                       [&](std::size_t i, std::size_t ia, std::size_t ib) {
                         const float gi = g[i];
                         switch (kind) {
                           case BinaryKind::add:
                             if (need_a) da[ia] += gi;
                             if (need_b) db[ib] += gi;
                             break;
                           case BinaryKind::sub:
                             if (need_a) da[ia] += gi;
                             if (need_b) db[ib] -= gi;
                             break;
                           case BinaryKind::mul:
                             if (need_a) da[ia] += gi * y[ib];
                             if (need_b) db[ib] += gi * x[ia];
                             break;
                           case BinaryKind::div:
                             if (need_a) da[ia] += gi / y[ib];
                             if (need_b) db[ib] -= gi * x[ia] / (y[ib] * y[ib]);
                             break;
                         }
                       });
  });
  return out;
}

/// Unary op helper: forward(x) and derivative dy/dx given (x, y).
template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
  Tensor out = Tensor::make_result(a.shape(), {&a});
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = fwd(x[i]);
  Tape::record(name, out, {&a}, [a, deriv](const Tensor& res) {
    Tensor ga = a;
    auto g = res.grad();
    auto x = a.data();
    auto y = res.data();
    auto d = ga.grad_buffer();
    for (std::size_t i = 0; i < x.size(); ++i) d[i] += g[i] * deriv(x[i], y[i]);
  });
  return out;
}

float stable_sigmoid(float x) {
  if (x >= 0) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinaryKind::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(BinaryKind::div, a, b); }

Tensor add_scalar(const Tensor& a, float s) {
  return unary("add_scalar", a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& a, float s) {
  return unary("mul_scalar", a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

Tensor pow_scalar(const Tensor& a, float p) {
  if (p != std::floor(p)) {
    for (float v : a.data()) {
      if (v < 0.0f) throw DomainError("pow_scalar: negative base with fractional exponent");
    }
  }
  return unary(
      "pow_scalar", a, [p](float x) { return static_cast<float>(std::pow(double(x), double(p))); },
      [p](float x, float) {
        if (p == 0.0f) return 0.0f;
        return static_cast<float>(p * std::pow(double(x), double(p) - 1.0));
      });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

Tensor clamp(const Tensor& a, float lo, float hi) {
  return unary(
      "clamp", a, [lo, hi](float x) { return std::clamp(x, lo, hi); },
      [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

Tensor activation(Activation kind, const Tensor& x) {
  switch (kind) {
    case Activation::silu:
      return unary(
          "silu", x, [](float v) { return static_cast<float>(v * stable_sigmoid(v)); },
          [](float v, float) {
            const double s = stable_sigmoid(v);
            return static_cast<float>(s * (1.0 + v * (1.0 - s)));
          });
    case Activation::softplus:
      return unary(
          "softplus", x,
          [](float v) {
            if (v > kSoftplusThreshold) return v;
            return static_cast<float>(std::log1p(std::exp(double(v))));
          },
          [](float v, float) {
            if (v > kSoftplusThreshold) return 1.0f;
            return static_cast<float>(stable_sigmoid(v));
          });
    case Activation::sigmoid:
      return unary(
          "sigmoid", x, [](float v) { return static_cast<float>(stable_sigmoid(v)); },
          [](float, float y) { return y * (1.0f - y); });
    case Activation::exp:
      return unary(
          "exp", x, [](float v) { return static_cast<float>(std::exp(double(v))); },
          [](float, float y) { return y; });
    case Activation::log:
      for (float v : x.data()) {
        if (v <= 0.0f) throw DomainError("log of non-positive value " + std::to_string(v));
      }
      return unary(
          "log", x, [](float v) { return static_cast<float>(std::log(double(v))); },
          [](float v, float) { return 1.0f / v; });
  }
  throw std::invalid_argument("unknown activation");
}

// --------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::make_result(Shape{}, {&x});
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  out.data()[0] = static_cast<float>(acc);
  Tape::record("sum", out, {&x}, [x](const Tensor& res) {
    Tensor gx = x;
    const float g = res.grad()[0];
    for (float& d : gx.grad_buffer()) d += g;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  Tensor out = Tensor::make_result(Shape{}, {&x});
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  out.data()[0] = static_cast<float>(acc / n);
  Tape::record("mean", out, {&x}, [x, n](const Tensor& res) {
    Tensor gx = x;
    const float g = static_cast<float>(res.grad()[0] / n);
    for (float& d : gx.grad_buffer()) d += g;
  });
  return out;
}

namespace {

Tensor reduce_axes(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim, bool average) {
  const Shape& in = x.shape();
  std::vector<bool> reduced(in.size(), false);
  for (std::size_t a : axes) {
    if (a >= in.size()) {
      throw ShapeError("reduction axis " + std::to_string(a) + " out of range for shape " + shape_str(in));
    }
    reduced[a] = true;
  }
  Shape kept(in.size());
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    kept[i] = reduced[i] ? 1 : in[i];
    if (reduced[i]) count *= in[i];
    if (!reduced[i] || keepdim) out_shape.push_back(kept[i]);
  }
  Tensor out = Tensor::make_result(out_shape, {&x});
  // Map each input element to its output slot through the keepdim shape.
  std::vector<double> acc(shape_numel(kept), 0.0);
  auto src = x.data();
  for_each_broadcast(in, in, kept, [&](std::size_t i, std::size_t, std::size_t io) { acc[io] += src[i]; });
  const double scale = average ? 1.0 / static_cast<double>(count) : 1.0;
  auto o = out.data();
  for (std::size_t i = 0; i < acc.size(); ++i) o[i] = static_cast<float>(acc[i] * scale);
  Tape::record(average ? "mean_axes" : "sum_axes", out, {&x}, [x, kept, scale](const Tensor& res) {
    Tensor gx = x;
    auto g = res.grad();
    auto d = gx.grad_buffer();
    for_each_broadcast(x.shape(), x.shape(), kept, [&](std::size_t i, std::size_t, std::size_t io) {
      d[i] += static_cast<float>(g[io] * scale);
    });
  });
  return out;
}

}  // namespace

Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim) {
  return reduce_axes(x, axes, keepdim, false);
}

Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim) {
  return reduce_axes(x, axes, keepdim, true);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::make_result({m, n}, {&a, &b});
  auto A = a.data();
  auto B = b.data();
  auto O = out.data();
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) row[j] += av * B[p * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) O[i * n + j] = static_cast<float>(row[j]);
  }
  Tape::record("matmul", out, {&a, &b}, [a, b, m, k, n](const Tensor& res) {
    auto G = res.grad();
    auto A = a.data();
    auto B = b.data();
    if (a.requires_grad()) {
      Tensor ga = a;
      auto dA = ga.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += double(G[i * n + j]) * B[p * n + j];
          dA[i * k + p] += static_cast<float>(acc);
        }
      }
    }
    if (b.requires_grad()) {
      Tensor gb = b;
      auto dB = gb.grad_buffer();
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i) acc += double(A[i * k + p]) * G[i * n + j];
          dB[p * n + j] += static_cast<float>(acc);
        }
      }
    }
  });
  return out;
}

// --------------------------------------------------------------------------
// Group normalization

Tensor group_normalize(const Tensor& x, std::size_t groups, float eps, const Tensor& gamma,
                       const Tensor& beta) {
  if (x.rank() < 2) throw ShapeError("group_normalize expects (N,C,...), got " + shape_str(x.shape()));
  if (!(eps > 0.0f)) throw std::invalid_argument("group_normalize: eps must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1);
  if (groups == 0 || C % groups != 0) {
    throw ShapeError("group count " + std::to_string(groups) + " does not divide " + std::to_string(C) +
                     " channels");
  }
  if (gamma.defined() && gamma.numel() != C) throw ShapeError("group_normalize: gamma must have C entries");
  if (beta.defined() && beta.numel() != C) throw ShapeError("group_normalize: beta must have C entries");
  const std::size_t S = x.numel() / (N * C);
  const std::size_t cpg = C / groups;
  const std::size_t gsize = cpg * S;

  Tensor out = Tensor::make_result(x.shape(), {&x, &gamma, &beta});
  std::vector<float> xhat(x.numel());
  std::vector<float> inv_std(N * groups);
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t base = (n * C + g * cpg) * S;
      double m = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) m += src[base + i];
      m /= static_cast<double>(gsize);
      double v = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) {
        const double d = src[base + i] - m;
        v += d * d;
      }
      v /= static_cast<double>(gsize);
      const double is = 1.0 / std::sqrt(v + eps);
      inv_std[n * groups + g] = static_cast<float>(is);
      for (std::size_t i = 0; i < gsize; ++i) {
        const std::size_t c = g * cpg + i / S;
        const float h = static_cast<float>((src[base + i] - m) * is);
        xhat[base + i] = h;
        const float sc = gamma.defined() ? gamma[c] : 1.0f;
        const float sh = beta.defined() ? beta[c] : 0.0f;
        dst[base + i] = h * sc + sh;
      }
    }
  }
  Tape::record("group_normalize", out, {&x, &gamma, &beta},
               [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), N, C, S, groups, cpg,
                gsize](const Tensor& res) {
                 auto g = res.grad();
                 if (gamma.defined() && gamma.requires_grad()) {
                   Tensor gg = gamma;
                   auto d = gg.grad_buffer();
                   for (std::size_t n = 0; n < N; ++n)
                     for (std::size_t c = 0; c < C; ++c) {
                       double acc = 0.0;
                       const std::size_t base = (n * C + c) * S;
                       for (std::size_t i = 0; i < S; ++i) acc += double(g[base + i]) * xhat[base + i];
                       d[c] += static_cast<float>(acc);
                     }
                 }
                 if (beta.defined() && beta.requires_grad()) {
                   Tensor gb = beta;
                   auto d = gb.grad_buffer();
                   for (std::size_t n = 0; n < N; ++n)
                     for (std::size_t c = 0; c < C; ++c) {
                       double acc = 0.0;
                       const std::size_t base = (n * C + c) * S;
                       for (std::size_t i = 0; i < S; ++i) acc += g[base + i];
                       d[c] += static_cast<float>(acc);
                     }
                 }
                 if (!x.requires_grad()) return;
                 Tensor gx = x;
                 auto dx = gx.grad_buffer();
                 std::vector<double> dh(gsize);
                 for (std::size_t n = 0; n < N; ++n) {
                   for (std::size_t grp = 0; grp < groups; ++grp) {
                     const std::size_t base = (n * C + grp * cpg) * S;
                     double mdh = 0.0, mdhx = 0.0;
                     for (std::size_t i = 0; i < gsize; ++i) {
                       const std::size_t c = grp * cpg + i / S;
                       dh[i] = double(g[base + i]) * (gamma.defined() ? gamma[c] : 1.0f);
                       mdh += dh[i];
                       mdhx += dh[i] * xhat[base + i];
                     }
                     mdh /= static_cast<double>(gsize);
                     mdhx /= static_cast<double>(gsize);
                     const double is = inv_std[n * groups + grp];
                     for (std::size_t i = 0; i < gsize; ++i) {
                       dx[base + i] += static_cast<float>(is * (dh[i] - mdh - xhat[base + i] * mdhx));
                     }
                   }
                 }
               });
  return out;
}

// --------------------------------------------------------------------------
// Layout ops

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor out = Tensor::make_result(shape, {&x});
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  Tape::record("reshape", out, {&x}, [x](const Tensor& res) {
    Tensor gx = x;
    auto g = res.grad();
    auto d = gx.grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw ShapeError("concat shape mismatch: " + shape_str(first) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = shape_numel(Shape(first.begin(), first.begin() + axis));
  const std::size_t inner = shape_numel(Shape(first.begin() + axis + 1, first.end()));
  const std::size_t out_row = out_shape[axis] * inner;

  bool tracked = false;
  for (const Tensor& p : parts) tracked = tracked || Tape::recording({&p});
  Tensor out = Tensor::make_tracked(out_shape, tracked);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    const std::size_t row = p.shape()[axis] * inner;
    auto src = p.data();
    auto dst = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * row, row, dst.begin() + o * out_row + off);
    }
    off += row;
  }
  Tape::record("concat", out, parts, [parts, offsets, outer, inner, out_row, axis](const Tensor& res) {
    auto g = res.grad();
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!parts[k].requires_grad()) continue;
      Tensor gp = parts[k];
      auto d = gp.grad_buffer();
      const std::size_t row = parts[k].shape()[axis] * inner;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < row; ++i) d[o * row + i] += g[o * out_row + offsets[k] + i];
    }
  });
  return out;
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& in = x.shape();
  if (axis >= in.size()) throw ShapeError("narrow axis out of range for " + shape_str(in));
  if (start + length > in[axis] || length == 0) {
    throw ShapeError("narrow range [" + std::to_string(start) + "," + std::to_string(start + length) +
                     ") out of bounds for " + shape_str(in));
  }
  Shape out_shape = in;
  out_shape[axis] = length;
  const std::size_t outer = shape_numel(Shape(in.begin(), in.begin() + axis));
  const std::size_t inner = shape_numel(Shape(in.begin() + axis + 1, in.end()));
  const std::size_t in_row = in[axis] * inner, out_row = length * inner, off = start * inner;
  Tensor out = Tensor::make_result(out_shape, {&x});
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(src.begin() + o * in_row + off, out_row, dst.begin() + o * out_row);
  }
  Tape::record("narrow", out, {&x}, [x, outer, in_row, out_row, off](const Tensor& res) {
    Tensor gx = x;
    auto g = res.grad();
    auto d = gx.grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < out_row; ++i) d[o * in_row + off + i] += g[o * out_row + i];
  });
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("upsample_nearest2x expects at least 2 axes");
  Shape out_shape = x.shape();
  const std::size_t H = out_shape[out_shape.size() - 2], W = out_shape.back();
  out_shape[out_shape.size() - 2] = 2 * H;
  out_shape.back() = 2 * W;
  const std::size_t planes = x.numel() / (H * W);
  Tensor out = Tensor::make_result(out_shape, {&x});
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t xx = 0; xx < 2 * W; ++xx)
        dst[(p * 2 * H + y) * 2 * W + xx] = src[(p * H + y / 2) * W + xx / 2];
  Tape::record("upsample_nearest2x", out, {&x}, [x, planes, H, W](const Tensor& res) {
    Tensor gx = x;
    auto g = res.grad();
    auto d = gx.grad_buffer();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < 2 * H; ++y)
        for (std::size_t xx = 0; xx < 2 * W; ++xx)
          d[(p * H + y / 2) * W + xx / 2] += g[(p * 2 * H + y) * 2 * W + xx];
  });
  return out;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  float m = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace cdiff
