// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cdiff/denoiser.hpp"
#include "cdiff/diffusion.hpp"
#include "cdiff/metrics.hpp"
#include "cdiff/synth.hpp"
#include "cdiff/vae.hpp"

namespace cdiff {

inline constexpr std::size_t kIntermediateSnapshots = 11;

struct SamplerConfig {
  int steps = 50;
  std::uint64_t seed = kDefaultSeed;
  bool export_intermediate = false;
};

struct Snapshot {
  std::size_t position = 0;  // number of completed updates
  int timestep = 0;          // timestep the latent is at
  Tensor image;              // decoded (3,H,W)
};

struct SampleResult {
  Tensor image;   // (3,H,W)
  Tensor latent;  // final latent in VAE units (before decoding)
  std::size_t denoiser_calls = 0;
  std::vector<Snapshot> intermediates;
};

/// Callback invoked with each denoiser output; the sampler never reads the
/// confidence map, so a hook may overwrite it.
using OutputHook = std::function<void(DenoiserOutput&)>;

/// Runs the reverse process for a latent condition z_x (already scaled).
/// The predictor defaults to the denoiser; tests may substitute an oracle.
Tensor reverse_process(const Tensor& z_x, const Tensor& z_init, const InferencePlan& plan,
                       const NoiseSchedule& schedule, const std::function<DenoiserOutput(const Tensor&, int)>& predict,
                       std::size_t* calls = nullptr,
                       const std::function<void(std::size_t, int, const Tensor&)>& on_step = {});

/// Deterministic DDIM sampling of an EO image for a SAR sample.
SampleResult sample_eo(const ImageSample& x, const DenoiserParameters& params, const VaeParameters& vae,
                       const NoiseSchedule& schedule, const SamplerConfig& cfg, const OutputHook& hook = {});

/// Evenly spaced plan positions (0..steps) at which snapshots are taken.
std::vector<std::size_t> snapshot_positions(std::size_t steps, std::size_t count = kIntermediateSnapshots);

/// Confidence map (1,h,w) for a paired sample at timestep t, computed from
/// the true EO latent noised with a fresh draw.
Tensor confidence_map_at(const ImageSample& x, const ImageSample& y, int t, const DenoiserParameters& params,
                         const VaeParameters& vae, const NoiseSchedule& schedule, std::uint64_t seed = kDefaultSeed);

/// Nearest-neighbour upsampling of a (1,h,w) map by the latent factor.
Tensor upsample_map(const Tensor& map, std::size_t factor = kLatentDownsample);

struct SweepRow {
  int steps = 0;
  double psnr = 0.0;  // medians over the test set
  double ssim = 0.0;
  double scc = 0.0;
  double seconds_per_image = 0.0;
  std::vector<double> psnr_values;
};

std::vector<SweepRow> sweep_inference_steps(const std::vector<PairedSample>& test, const DenoiserParameters& params,
                                            const VaeParameters& vae, const NoiseSchedule& schedule,
                                            const std::vector<int>& steps_list, std::uint64_t seed = kDefaultSeed);

std::string sweep_to_tsv(const std::vector<SweepRow>& rows);

/// Per-image noise seed used by batch evaluation and sweeps.
std::uint64_t sample_seed(std::uint64_t seed, const std::string& id);

}  // namespace cdiff
