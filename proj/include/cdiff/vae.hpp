// SPDX-License-Identifier: Apache-2.0
// Small convolutional VAE mapping (3,H,W) images to (4,H/8,W/8) latents.
#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "cdiff/image.hpp"
#include "cdiff/nn.hpp"
#include "cdiff/rng.hpp"

namespace cdiff {

inline constexpr std::size_t kLatentChannels = 4;
inline constexpr float kLogvarMin = -30.0f;
inline constexpr float kLogvarMax = 20.0f;

/// 1 channel -> replicated three times; 4 channels (HH, HV, VH, VV) ->
/// (HH, (HV + VH) / 2, VV).
Tensor sar_to_rgb(const ImageSample& x);
/// EO passes through; SAR goes through sar_to_rgb.
Tensor to_rgb(const ImageSample& x);

struct VaeParameters {
  std::vector<nn::Conv2d> encoder;  // three stride-2 stages, then 128 -> 2*C
  std::vector<nn::Conv2d> decoder;  // C -> 128, upsample stages, -> 3
  bool frozen = false;
  /// Multiplier that brings posterior means to roughly unit variance for
  /// diffusion; computed from training data after VAE training.
  float latent_scale = 1.0f;

  nn::NamedTensors parameters() const;
  void freeze();

  void save(const std::filesystem::path& dir) const;
  static VaeParameters load(const std::filesystem::path& dir);
};

VaeParameters init_vae(std::uint64_t seed);

struct Posterior {
  Tensor mean;    // (N,C,h,w) or (C,h,w)
  Tensor logvar;  // clamped to [kLogvarMin, kLogvarMax]
};

/// Accepts (3,H,W) or (N,3,H,W) with H, W divisible by 8.
Posterior encode_posterior(const Tensor& img3, const VaeParameters& params);

enum class EncodeMode { sample, mean };
Tensor encode(const Tensor& img3, const VaeParameters& params, std::mt19937_64& rng,
              EncodeMode mode = EncodeMode::sample);
Tensor encode_mean(const Tensor& img3, const VaeParameters& params);
/// mean + exp(logvar / 2) * xi with xi ~ N(0, I) drawn from rng.
Tensor sample_posterior(const Posterior& post, std::mt19937_64& rng);

/// (C,h,w) or (N,C,h,w) latents to images in [0,1].
Tensor decode(const Tensor& z, const VaeParameters& params);

/// Mean over latent elements of KL(N(mean, exp(logvar)) || N(0, 1)).
Tensor kl_divergence(const Tensor& mean, const Tensor& logvar);

struct VaeTrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double kl_weight = 1e-4;
  bool augment = true;  // random dihedral transform per sample
  std::uint64_t seed = kDefaultSeed;
};

struct VaeTrainStats {
  std::vector<double> loss;  // per optimizer step
  std::vector<double> mse;
};

/// Minimizes reconstruction MSE + kl_weight * KL on (3,H,W) images, then
/// sets latent_scale and freezes the parameters.
VaeParameters train_vae(const std::vector<Tensor>& images, const VaeTrainConfig& cfg, VaeTrainStats* stats = nullptr,
                        const std::function<void(std::size_t, double)>& on_step = {});
/// Continues training existing (unfrozen) parameters.
void train_vae_into(VaeParameters& params, const std::vector<Tensor>& images, const VaeTrainConfig& cfg,
                    VaeTrainStats* stats = nullptr, const std::function<void(std::size_t, double)>& on_step = {});

/// 1 / std of posterior means over the given images.
float estimate_latent_scale(const std::vector<Tensor>& images, const VaeParameters& params);

struct ProbeRow {
  double level = 0.0;  // speckle variance 1/L; 0 means no speckle
  double psnr = 0.0;
};

/// For each level, multiplies the clean RGB rendering of x by a speckle
/// field of variance `level`, clips to [0,1], reconstructs through the VAE
/// and reports PSNR against the clean image.
std::vector<ProbeRow> reconstruction_probe(const ImageSample& x, const VaeParameters& params,
                                           const std::vector<double>& speckle_levels,
                                           std::uint64_t seed = kDefaultSeed);

}  // namespace cdiff
