// SPDX-License-Identifier: Apache-2.0
#include "cdiff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cdiff/parallel.hpp"

namespace cdiff {

namespace {

constexpr int kDihedralCount = 8;

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto rng = make_rng(seed, "train-order", epoch);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Tensor stack(const std::vector<Tensor>& parts) {
  std::vector<Tensor> v;
  v.reserve(parts.size());
  for (const Tensor& t : parts) {
    Shape s{1};
    s.insert(s.end(), t.shape().begin(), t.shape().end());
    v.push_back(reshape(t, s));
  }
  return concat(v, 0);
}

template <typename Pair>
LatentDataset build_latents(const std::vector<Pair>& items, const VaeParameters& vae,
                            const std::function<std::pair<ImageSample, ImageSample>(const Pair&)>& views) {
  if (items.empty()) throw std::invalid_argument("latent dataset needs at least one sample");
  LatentDataset d;
  d.count = items.size();
  const std::size_t total = items.size() * kDihedralCount;
  d.zx.resize(total);
  d.zy_mean.resize(total);
  d.zy_logvar.resize(total);
  const float scale = vae.latent_scale;
  const float log_scale2 = 2.0f * std::log(scale);
  // One image per encoder call, so cached values never depend on batching.
  parallel_for(total, [&](std::size_t j) {
    const auto [sar, eo] = views(items[j / kDihedralCount]);
    const int k = static_cast<int>(j % kDihedralCount);
    const Tensor x = apply_dihedral(sar_to_rgb(sar), k);
    const Tensor y = apply_dihedral(eo.pixels, k);
    d.zx[j] = mul_scalar(encode_mean(x, vae), scale);
    const Posterior post = encode_posterior(y, vae);
    d.zy_mean[j] = mul_scalar(post.mean, scale);
    d.zy_logvar[j] = add_scalar(post.logvar, log_scale2);
  });
  return d;
}

}  // namespace

void TrainConfig::validate() const {
  if (iterations == 0) throw std::invalid_argument("train.iterations must be positive");
  if (warmup_steps >= iterations) throw std::invalid_argument("train.warmup_steps must be smaller than train.iterations");
  if (!(lr_init > 0.0)) throw std::invalid_argument("train.lr must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("train.weight_decay must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("train.batch_size must be positive");
  loss.validate();
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step >= cfg.iterations) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(cfg.iterations) + ")");
  }
  if (step < cfg.warmup_steps) return cfg.lr_init * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.iterations - cfg.warmup_steps);
  return cfg.lr_init * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

LatentDataset LatentDataset::build(const std::vector<PairedSample>& samples, const VaeParameters& vae) {
  return build_latents<PairedSample>(samples, vae, [](const PairedSample& s) { return std::make_pair(s.sar, s.eo); });
}

LatentDataset LatentDataset::build(const std::vector<ScenePair>& scenes, const VaeParameters& vae) {
  return build_latents<ScenePair>(scenes, vae, [](const ScenePair& s) { return std::make_pair(s.sar, s.eo); });
}

TrainBatch make_batch(const LatentDataset& data, std::size_t step, const TrainConfig& cfg,
                      const NoiseSchedule& schedule) {
  if (data.count == 0) throw std::invalid_argument("make_batch: empty dataset");
  TrainBatch b;
  auto rng = make_rng(cfg.seed, "train-step", step);
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order;
  std::vector<Tensor> zx, zy, eps;
  for (std::size_t i = 0; i < cfg.batch_size; ++i) {
    const std::size_t pos = step * cfg.batch_size + i;
    const std::size_t epoch = pos / data.count;
    if (epoch != cached_epoch) {
      order = epoch_order(data.count, cfg.seed, epoch);
      cached_epoch = epoch;
    }
    const std::size_t scene = order[pos % data.count];
    const int k = std::uniform_int_distribution<int>(0, kDihedralCount - 1)(rng);
    const std::size_t j = scene * kDihedralCount + static_cast<std::size_t>(k);
    b.scene.push_back(scene);
    b.dihedral.push_back(k);
    b.t.push_back(sample_timestep(rng, schedule));
    zx.push_back(data.zx[j]);
    Posterior post{data.zy_mean[j], data.zy_logvar[j]};
    zy.push_back(sample_posterior(post, rng));
    eps.push_back(Tensor::randn(data.zy_mean[j].shape(), rng));
  }
  b.zx = stack(zx);
  b.zy = stack(zy);
  b.eps = stack(eps);
  return b;
}

BatchLoss batch_loss(const TrainBatch& batch, const NoiseSchedule& schedule, const LossConfig& loss,
                     const Predictor& predict) {
  const Tensor z_t = forward_diffuse(batch.zy, batch.t, batch.eps, schedule);
  const DenoiserOutput out = predict(z_t, batch.zx, batch.t);
  BatchLoss res;
  res.loss = cdiff_loss(batch.eps, out.eps_hat, out.conf, loss);
  double c = 0.0;
  for (float v : out.conf.data()) c += v;
  res.mean_conf = c / static_cast<double>(out.conf.numel());
  res.parts = loss_parts(batch.eps, out.eps_hat, out.conf, loss);
  return res;
}

TrainState init_train_state(const TrainConfig& cfg) {
  TrainState s;
  const DenoiserParameters eo_only = init_denoiser(cfg.base_channels, cfg.seed, kLatentChannels);
  s.params = expand_input_conv(eo_only, kLatentChannels);
  s.opt.weight_decay = cfg.weight_decay;
  return s;
}

StepResult train_step(TrainState& state, const LatentDataset& data, const NoiseSchedule& schedule,
                      const TrainConfig& cfg) {
  const TrainBatch batch = make_batch(data, state.step, cfg, schedule);
  const auto params = state.params.parameters();
  nn::set_requires_grad(params, true);
  nn::zero_grads(params);
  StepResult r;
  {
    Tape tape;
    const BatchLoss bl = batch_loss(batch, schedule, cfg.loss, [&](const Tensor& z_t, const Tensor& zx,
                                                                   std::span<const int> t) {
      return denoise(z_t, zx, t, state.params);
    });
    r.loss = bl.loss.item();
    r.mean_conf = bl.mean_conf;
    if (!std::isfinite(r.loss)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << state.step << ": t=[";
      for (std::size_t i = 0; i < batch.t.size(); ++i) msg << (i ? "," : "") << batch.t[i];
      msg << "] weighted_residual=" << bl.parts.weighted_residual << " log_term=" << bl.parts.log_term
          << " mean_conf=" << bl.mean_conf;
      throw TrainingDiverged(msg.str());
    }
    tape.backward(bl.loss);
  }
  r.grad_norm = cfg.grad_clip > 0.0 ? clip_grad_norm(params, cfg.grad_clip) : grad_norm(params);
  r.lr = lr_at(state.step, cfg);
  state.opt.weight_decay = cfg.weight_decay;
  state.opt.step(params, r.lr);
  nn::zero_grads(params);
  ++state.step;
  return r;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& dir) {
  state.params.save(dir / "denoiser");
  TensorDirectory opt;
  state.opt.save_into(state.params.parameters(), opt);
  opt.meta["train.step"] = std::to_string(state.step);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", state.opt.weight_decay);
  opt.meta["optimizer.weight_decay"] = buf;
  opt.save(dir / "optimizer");
}

TrainState resume(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "denoiser" / "manifest.txt") ||
      !std::filesystem::exists(dir / "optimizer" / "manifest.txt")) {
    throw FormatError("missing checkpoint in " + dir.string() + " (expected denoiser/ and optimizer/ manifests)");
  }
  TrainState s;
  s.params = DenoiserParameters::load(dir / "denoiser");
  const TensorDirectory opt = TensorDirectory::load(dir / "optimizer");
  s.opt.load_from(s.params.parameters(), opt);
  s.opt.weight_decay = std::stod(opt.meta_at("optimizer.weight_decay"));
  s.step = std::stoul(opt.meta_at("train.step"));
  return s;
}

void train(TrainState& state, const LatentDataset& data, const NoiseSchedule& schedule, const TrainConfig& cfg,
           const TrainHooks& hooks) {
  cfg.validate();
  while (state.step < cfg.iterations) {
    const std::size_t step = state.step;
    const StepResult r = train_step(state, data, schedule, cfg);
    if (hooks.log) {
      char line[128];
      std::snprintf(line, sizeof line, "%zu\t%.9g\t%.9g\t%.9g\n", step, r.lr, r.loss, r.mean_conf);
      *hooks.log << line;
    }
    if (cfg.checkpoint_every && state.step % cfg.checkpoint_every == 0 && hooks.on_checkpoint) hooks.on_checkpoint(state);
    if (cfg.eval_every && state.step % cfg.eval_every == 0 && hooks.on_eval) hooks.on_eval(state);
  }
}

}  // namespace cdiff
