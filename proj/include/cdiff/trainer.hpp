// SPDX-License-Identifier: Apache-2.0
// Diffusion-stage training: latent cache, batch assembly, optimizer loop,
// checkpoints.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "cdiff/denoiser.hpp"
#include "cdiff/diffusion.hpp"
#include "cdiff/loss.hpp"
#include "cdiff/optim.hpp"
#include "cdiff/synth.hpp"
#include "cdiff/vae.hpp"

namespace cdiff {

struct TrainConfig {
  std::size_t iterations = 5000;
  std::size_t warmup_steps = 100;
  std::size_t batch_size = 8;
  double lr_init = 3e-5;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
  std::uint64_t seed = kDefaultSeed;
  std::size_t base_channels = 32;
  LossConfig loss;
  std::size_t eval_every = 0;
  std::size_t checkpoint_every = 0;

  void validate() const;
};

/// Linear warmup from 0 to lr_init over warmup_steps, then cosine decay.
double lr_at(std::size_t step, const TrainConfig& cfg);

/// Posterior statistics for every (scene, dihedral element) pair, already
/// multiplied by the VAE latent scale. SAR latents are posterior means.
struct LatentDataset {
  std::size_t count = 0;
  std::vector<Tensor> zx;         // [scene * 8 + k] (C,h,w)
  std::vector<Tensor> zy_mean;    // [scene * 8 + k]
  std::vector<Tensor> zy_logvar;  // [scene * 8 + k], log-variance after scaling

  static LatentDataset build(const std::vector<PairedSample>& samples, const VaeParameters& vae);
  static LatentDataset build(const std::vector<ScenePair>& scenes, const VaeParameters& vae);
};

struct TrainBatch {
  std::vector<std::size_t> scene;  // dataset indices
  std::vector<int> dihedral;
  std::vector<int> t;
  Tensor zx;   // (N,C,h,w)
  Tensor zy;   // sampled clean target latents
  Tensor eps;  // forward-process noise
};

/// Deterministic in (cfg.seed, step): data order comes from a per-epoch
/// permutation, noise and timesteps from a per-step stream.
TrainBatch make_batch(const LatentDataset& data, std::size_t step, const TrainConfig& cfg,
                      const NoiseSchedule& schedule);

using Predictor = std::function<DenoiserOutput(const Tensor& z_t, const Tensor& zx, std::span<const int> t)>;

struct BatchLoss {
  Tensor loss;  // scalar, on the active tape
  double mean_conf = 0.0;
  LossParts parts;
};

BatchLoss batch_loss(const TrainBatch& batch, const NoiseSchedule& schedule, const LossConfig& loss,
                     const Predictor& predict);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainState {
  DenoiserParameters params;
  AdamW opt;
  std::size_t step = 0;
};

/// Fresh state: EO-only init expanded to the SAR-conditioned input conv.
TrainState init_train_state(const TrainConfig& cfg);

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  double mean_conf = 0.0;
  double grad_norm = 0.0;
};

/// One optimizer update on the batch for state.step; advances state.step.
StepResult train_step(TrainState& state, const LatentDataset& data, const NoiseSchedule& schedule,
                      const TrainConfig& cfg);

/// `<dir>/denoiser` holds the parameters, `<dir>/optimizer` the moments and
/// step counter.
void save_checkpoint(const TrainState& state, const std::filesystem::path& dir);
TrainState resume(const std::filesystem::path& dir);

struct TrainHooks {
  std::ostream* log = nullptr;  // `step\tlr\tloss\tmean_conf` lines
  std::function<void(const TrainState&)> on_checkpoint;
  std::function<void(const TrainState&)> on_eval;
};

/// Runs until state.step == cfg.iterations.
void train(TrainState& state, const LatentDataset& data, const NoiseSchedule& schedule, const TrainConfig& cfg,
           const TrainHooks& hooks = {});

}  // namespace cdiff
