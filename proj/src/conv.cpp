// SPDX-License-Identifier: Apache-2.0
// conv2d as im2col + GEMM. The GEMM runs through Eigen in fp32.
#include <Eigen/Core>
#include <algorithm>

#include "cdiff/tensor.hpp"

namespace cdiff {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  std::size_t N, Cin, H, W, Cout, k, stride, pad, Ho, Wo;
  std::size_t K() const { return Cin * k * k; }
  std::size_t P() const { return Ho * Wo; }
};

// Samples are processed in chunks so that each GEMM sees at least this
// many columns; tiny latent grids would otherwise starve the kernel.
constexpr std::size_t kMinGemmColumns = 4096;

// Writes one sample's patches into a (K, ld) row-major buffer starting at
// column `off`.
void im2col(const ConvGeometry& g, const float* x, float* col, std::size_t ld, std::size_t off) {
  for (std::size_t ci = 0; ci < g.Cin; ++ci) {
    const float* plane = x + ci * g.H * g.W;
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        float* dst = col + ((ci * g.k + ky) * g.k + kx) * ld + off;
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          float* row = dst + oy * g.Wo;
          if (iy < 0 || iy >= static_cast<long>(g.H)) {
            std::fill_n(row, g.Wo, 0.0f);
            continue;
          }
          const float* src = plane + iy * g.W;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            row[ox] = (ix < 0 || ix >= static_cast<long>(g.W)) ? 0.0f : src[ix];
          }
        }
      }
  }
}

void col2im_add(const ConvGeometry& g, const float* col, std::size_t ld, std::size_t off, float* dx) {
  for (std::size_t ci = 0; ci < g.Cin; ++ci) {
    float* plane = dx + ci * g.H * g.W;
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const float* src = col + ((ci * g.k + ky) * g.k + kx) * ld + off;
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
          float* row = plane + iy * g.W;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.W)) continue;
            row[ix] += src[oy * g.Wo + ox];
          }
        }
      }
  }
}

std::size_t chunk_size(const ConvGeometry& g) {
  return std::clamp<std::size_t>((kMinGemmColumns + g.P() - 1) / g.P(), 1, g.N);
}

Tensor conv2d_batched(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                      std::size_t padding) {
  if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3)) {
    throw ShapeError("conv2d kernel must be (Cout,Cin,k,k), got " + shape_str(kernel.shape()));
  }
  if (input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) + " vs kernel " +
                     shape_str(kernel.shape()));
  }
  if (stride == 0) throw std::invalid_argument("conv2d stride must be positive");
  ConvGeometry g{};
  g.N = input.dim(0);
  g.Cin = input.dim(1);
  g.H = input.dim(2);
  g.W = input.dim(3);
  g.Cout = kernel.dim(0);
  g.k = kernel.dim(2);
  g.stride = stride;
  g.pad = padding;
  if (g.H + 2 * g.pad < g.k || g.W + 2 * g.pad < g.k) {
    throw ShapeError("conv2d kernel larger than padded input " + shape_str(input.shape()));
  }
  g.Ho = (g.H + 2 * g.pad - g.k) / g.stride + 1;
  g.Wo = (g.W + 2 * g.pad - g.k) / g.stride + 1;
  if (bias.defined() && bias.numel() != g.Cout) {
    throw ShapeError("conv2d bias has " + std::to_string(bias.numel()) + " entries for " +
                     std::to_string(g.Cout) + " output channels");
  }

  const std::size_t K = g.K(), P = g.P(), in_stride = g.Cin * g.H * g.W, out_stride = g.Cout * P;
  const std::size_t chunk = chunk_size(g);
  Tensor out = Tensor::make_result({g.N, g.Cout, g.Ho, g.Wo}, {&input, &kernel, &bias});
  Eigen::Map<const RowMat> Wm(kernel.data().data(), g.Cout, K);
  std::vector<float> col(K * chunk * P);
  RowMat O;
  for (std::size_t n0 = 0; n0 < g.N; n0 += chunk) {
    const std::size_t nc = std::min(chunk, g.N - n0), ld = nc * P;
    for (std::size_t j = 0; j < nc; ++j) im2col(g, input.data().data() + (n0 + j) * in_stride, col.data(), ld, j * P);
    O.noalias() = Wm * Eigen::Map<const RowMat>(col.data(), K, ld);
    for (std::size_t j = 0; j < nc; ++j) {
      float* dst = out.data().data() + (n0 + j) * out_stride;
      for (std::size_t co = 0; co < g.Cout; ++co) {
        const float b = bias.defined() ? bias[co] : 0.0f;
        const float* src = O.data() + co * ld + j * P;
        for (std::size_t p = 0; p < P; ++p) dst[co * P + p] = src[p] + b;
      }
    }
  }

  Tape::record("conv2d", out, {&input, &kernel, &bias}, [input, kernel, bias, g](const Tensor& res) {
    const std::size_t K = g.K(), P = g.P(), in_stride = g.Cin * g.H * g.W, out_stride = g.Cout * P;
    auto grad = res.grad();
    if (bias.defined() && bias.requires_grad()) {
      Tensor gb = bias;
      auto db = gb.grad_buffer();
      for (std::size_t co = 0; co < g.Cout; ++co) {
        double acc = 0.0;
        for (std::size_t n = 0; n < g.N; ++n) {
          const float* src = grad.data() + n * out_stride + co * P;
          for (std::size_t p = 0; p < P; ++p) acc += src[p];
        }
        db[co] += static_cast<float>(acc);
      }
    }
    const bool want_w = kernel.requires_grad(), want_x = input.requires_grad();
    if (!want_w && !want_x) return;
    Eigen::Map<const RowMat> Wm(kernel.data().data(), g.Cout, K);
    Tensor gk = kernel;
    Tensor gi = input;
    const std::size_t chunk = chunk_size(g);
    std::vector<float> col(want_w ? K * chunk * P : 0);
    RowMat G, dcol;
    for (std::size_t n0 = 0; n0 < g.N; n0 += chunk) {
      const std::size_t nc = std::min(chunk, g.N - n0), ld = nc * P;
      G.resize(static_cast<Eigen::Index>(g.Cout), static_cast<Eigen::Index>(ld));
      for (std::size_t j = 0; j < nc; ++j)
        for (std::size_t co = 0; co < g.Cout; ++co) {
          std::copy_n(grad.data() + (n0 + j) * out_stride + co * P, P, G.data() + co * ld + j * P);
        }
      if (want_w) {
        for (std::size_t j = 0; j < nc; ++j) {
          im2col(g, input.data().data() + (n0 + j) * in_stride, col.data(), ld, j * P);
        }
        Eigen::Map<RowMat> dW(gk.grad_buffer().data(), g.Cout, K);
        dW.noalias() += G * Eigen::Map<const RowMat>(col.data(), K, ld).transpose();
      }
      if (want_x) {
        dcol.noalias() = Wm.transpose() * G;
        for (std::size_t j = 0; j < nc; ++j) {
          col2im_add(g, dcol.data(), ld, j * P, gi.grad_buffer().data() + (n0 + j) * in_stride);
        }
      }
    }
  });
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (input.rank() == 3) {
    Tensor batched = reshape(input, {1, input.dim(0), input.dim(1), input.dim(2)});
    Tensor out = conv2d_batched(batched, kernel, bias, stride, padding);
    return reshape(out, {out.dim(1), out.dim(2), out.dim(3)});
  }
  if (input.rank() != 4) throw ShapeError("conv2d expects (N,C,H,W) or (C,H,W), got " + shape_str(input.shape()));
  return conv2d_batched(input, kernel, bias, stride, padding);
}

}  // namespace cdiff
