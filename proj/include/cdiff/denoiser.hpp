// SPDX-License-Identifier: Apache-2.0
// Conditional U-Net over latent grids: input [noisy EO latent | SAR latent],
// outputs a noise estimate and a non-negative confidence map.
#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "cdiff/nn.hpp"

namespace cdiff {

/// Interleaved (sin, cos) pairs at frequencies 10^(-4 i / (dim/2 - 1)),
/// i.e. from 1 down to 1e-4.
Tensor timestep_embedding(double t, std::size_t dim);
/// (N, dim) embeddings for a batch of timesteps.
Tensor timestep_embedding(std::span<const int> t, std::size_t dim);

struct ResBlock {
  nn::GroupNorm norm1;
  nn::Conv2d conv1;
  nn::Linear temb;
  nn::GroupNorm norm2;
  nn::Conv2d conv2;
  nn::Conv2d skip;  // 1x1 when channel counts differ, otherwise empty

  Tensor operator()(const Tensor& x, const Tensor& temb_act) const;
  void collect(const std::string& prefix, nn::NamedTensors& out) const;
};

struct DenoiserParameters {
  std::size_t base_channels = 32;
  std::size_t levels = 3;
  std::size_t cond_dim = 64;
  std::size_t latent_channels = 4;
  std::size_t in_channels = 8;
  std::size_t blocks_per_level = 2;
  std::size_t groups = 8;

  Tensor z_c;  // learned conditioning vector (cond_dim)
  nn::Linear time1, time2;
  nn::Conv2d in_conv;
  std::vector<std::vector<ResBlock>> down;  // [level][block]
  std::vector<nn::Conv2d> downsample;       // levels - 1 stride-2 convs
  std::vector<ResBlock> mid;
  std::vector<std::vector<ResBlock>> up;  // [level][block], level 0 = finest
  std::vector<nn::Conv2d> upsample;       // conv after nearest 2x, per level 1..levels-1
  nn::GroupNorm out_norm;
  nn::Conv2d noise_head;
  nn::Conv2d conf_head;

  std::size_t channels_at(std::size_t level) const { return base_channels << level; }
  std::size_t embed_dim() const { return 4 * base_channels; }

  nn::NamedTensors parameters() const;
  void save(const std::filesystem::path& dir) const;
  void save_into(TensorDirectory& td) const;
  static DenoiserParameters load(const std::filesystem::path& dir);
  static DenoiserParameters from_directory(const TensorDirectory& td);
};

/// Fan-in scaled uniform weights. The noise head is zero so the initial
/// noise estimate is 0; the confidence head has zero weights and bias
/// log(e - 1), so the initial confidence is exactly 1.
DenoiserParameters init_denoiser(std::size_t base_channels, std::uint64_t seed, std::size_t in_channels = 8);

/// Widens the input conv from C to C + sar_channels inputs by repeating
/// the existing weights over the new channels.
DenoiserParameters expand_input_conv(const DenoiserParameters& params, std::size_t sar_channels);

struct DenoiserOutput {
  Tensor eps_hat;  // (N,C,h,w) or (C,h,w)
  Tensor conf;     // (N,1,h,w) or (1,h,w)
};

/// Batched: z_y_t and z_x are (N,C,h,w) with one timestep per sample.
DenoiserOutput denoise(const Tensor& z_y_t, const Tensor& z_x, std::span<const int> t,
                       const DenoiserParameters& params);
DenoiserOutput denoise(const Tensor& z_y_t, const Tensor& z_x, int t, const DenoiserParameters& params);

/// Output of the input conv alone (pre-activation), used to inspect the
/// effect of expand_input_conv.
Tensor input_projection(const Tensor& x, const DenoiserParameters& params);

}  // namespace cdiff
