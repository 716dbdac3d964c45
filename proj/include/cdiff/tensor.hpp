// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdiff {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct TensorStorage {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  bool leaf = true;
};

/// Dense row-major float32 array with optional gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage. Every op
/// materializes a fresh output, so aliasing only arises from handle copies.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value);
  static Tensor zeros(const Shape& shape) { return Tensor(shape, 0.0f); }
  static Tensor ones(const Shape& shape) { return Tensor(shape, 1.0f); }
  static Tensor randn(const Shape& shape, std::mt19937_64& rng, float stddev = 1.0f);
  static Tensor uniform(const Shape& shape, std::mt19937_64& rng, float lo, float hi);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  float operator[](std::size_t i) const { return impl_->data[i]; }
  float item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->leaf; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const float> grad() const { return impl_->grad; }
  /// Gradient buffer, allocated as zeros on first access.
  std::span<float> grad_buffer();
  void zero_grad() { impl_->grad.clear(); }

  /// Gradient-free deep copy.
  Tensor detach() const;
  Tensor clone() const { return detach(); }
  Tensor reshape(const Shape& shape) const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  bool defined() const { return impl_ != nullptr; }

  static Tensor make_result(Shape shape, std::initializer_list<const Tensor*> inputs);
  static Tensor make_tracked(Shape shape, bool tracked);

 private:
  friend class Tape;
  std::shared_ptr<TensorStorage> impl_;
};

Tensor ones_like(const Tensor& t);
Tensor zeros_like(const Tensor& t);

/// Define-by-run record of executed differentiable ops.
///
/// Constructing a Tape makes it the active tape for the current thread;
/// destroying it restores the previous one. Ops record a node only when a
/// tape is active and at least one operand requires a gradient.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& out)>;

  struct Node {
    std::string op;
    Tensor output;
    std::vector<Tensor> inputs;
    BackwardFn backward;
  };

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();
  static bool recording(std::initializer_list<const Tensor*> inputs);
  static void record(const char* op, const Tensor& output,
                     std::initializer_list<const Tensor*> inputs, BackwardFn fn);
  static void record(const char* op, const Tensor& output, std::vector<Tensor> inputs, BackwardFn fn);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  /// Reverse-mode sweep from a scalar loss recorded on this tape. Leaf
  /// gradients accumulate across calls; intermediate gradients are reset.
  void backward(const Tensor& loss);

 private:
  std::vector<Node> nodes_;
  Tape* previous_ = nullptr;
};

/// Runs backward on the active tape.
void backward(const Tensor& loss);

// --- elementwise, numpy-style broadcasting -------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);
Tensor pow_scalar(const Tensor& a, float p);
Tensor square(const Tensor& a);
Tensor clamp(const Tensor& a, float lo, float hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, float s) { return mul_scalar(a, s); }
inline Tensor operator*(float s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, float s) { return add_scalar(a, s); }

// --- activations ---------------------------------------------------------

enum class Activation { silu, softplus, sigmoid, exp, log };

/// softplus switches to the identity above this input.
inline constexpr float kSoftplusThreshold = 20.0f;

Tensor activation(Activation kind, const Tensor& x);
inline Tensor silu(const Tensor& x) { return activation(Activation::silu, x); }
inline Tensor softplus(const Tensor& x) { return activation(Activation::softplus, x); }
inline Tensor sigmoid(const Tensor& x) { return activation(Activation::sigmoid, x); }
inline Tensor exp(const Tensor& x) { return activation(Activation::exp, x); }
inline Tensor log(const Tensor& x) { return activation(Activation::log, x); }

// --- reductions and linear algebra ---------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim = false);
Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim = false);

/// (m,k) x (k,n) with 64-bit accumulation.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Input (N,Cin,H,W) or (Cin,H,W); kernel (Cout,Cin,k,k); optional bias (Cout).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias = Tensor(),
              std::size_t stride = 1, std::size_t padding = 0);

/// Normalizes each (sample, group) slice of (N,C,...) to zero mean / unit
/// variance, then applies an optional per-channel affine transform.
Tensor group_normalize(const Tensor& x, std::size_t groups, float eps,
                       const Tensor& gamma = Tensor(), const Tensor& beta = Tensor());

// --- layout --------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// Nearest-neighbour 2x upsampling of the last two axes.
Tensor upsample_nearest2x(const Tensor& x);

// --- checksums / equality helpers ----------------------------------------

bool bit_equal(const Tensor& a, const Tensor& b);
float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace cdiff
