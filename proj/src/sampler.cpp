// SPDX-License-Identifier: Apache-2.0
#include "cdiff/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

namespace cdiff {

Tensor reverse_process(const Tensor& z_x, const Tensor& z_init, const InferencePlan& plan,
                       const NoiseSchedule& schedule, const std::function<DenoiserOutput(const Tensor&, int)>& predict,
                       std::size_t* calls, const std::function<void(std::size_t, int, const Tensor&)>& on_step) {
  if (z_x.shape() != z_init.shape()) {
    throw ShapeError("reverse_process: condition " + shape_str(z_x.shape()) + " vs latent " + shape_str(z_init.shape()));
  }
  // The trajectory is carried in double; only the denoiser inputs and the
  // result are rounded. Storing z_t in fp32 would amplify each rounding by
  // 1/sqrt(alpha_bar_t) on the way to t = 0.
  std::vector<double> state(z_init.data().begin(), z_init.data().end());
  Tensor z = z_init.detach();
  if (on_step) on_step(0, plan.timesteps.front(), z);
  for (std::size_t i = 0; i < plan.steps(); ++i) {
    const int t = plan.timesteps[i];
    const int t_prev = plan.previous(i);
    if (t_prev >= t) throw std::invalid_argument("reverse_process: plan is not strictly decreasing");
    const DenoiserOutput out = predict(z, t);
    if (calls) ++*calls;
    if (out.eps_hat.shape() != z.shape()) {
      throw ShapeError("reverse_process: eps_hat " + shape_str(out.eps_hat.shape()) + " vs latent " + shape_str(z.shape()));
    }
    const double ab = schedule.alpha_bar(t), ab_prev = schedule.alpha_bar(t_prev);
    const double s = std::sqrt(ab), n = std::sqrt(1.0 - ab);
    const double s_prev = std::sqrt(ab_prev), n_prev = std::sqrt(1.0 - ab_prev);
    auto e = out.eps_hat.data();
    Tensor next(z.shape());
    auto zd = next.data();
    for (std::size_t j = 0; j < state.size(); ++j) {
      const double x0 = (state[j] - n * e[j]) / s;
      state[j] = t_prev == 0 ? x0 : s_prev * x0 + n_prev * e[j];
      zd[j] = static_cast<float>(state[j]);
    }
    z = next;
    if (on_step) on_step(i + 1, t_prev, z);
  }
  return z;
}

std::vector<std::size_t> snapshot_positions(std::size_t steps, std::size_t count) {
  std::vector<std::size_t> pos;
  if (count == 0) return pos;
  if (count == 1) return {steps};
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t p = (i * steps + (count - 1) / 2) / (count - 1);
    if (pos.empty() || pos.back() != p) pos.push_back(p);
  }
  return pos;
}

SampleResult sample_eo(const ImageSample& x, const DenoiserParameters& params, const VaeParameters& vae,
                       const NoiseSchedule& schedule, const SamplerConfig& cfg, const OutputHook& hook) {
  validate_image(x);
  if (params.in_channels != 2 * params.latent_channels) {
    throw ShapeError("sample_eo: denoiser input conv has " + std::to_string(params.in_channels) + " channels, expected " +
                     std::to_string(2 * params.latent_channels));
  }
  const InferencePlan plan = make_inference_plan(schedule.T(), cfg.steps);
  const float scale = vae.latent_scale;
  const Tensor z_x = mul_scalar(encode_mean(sar_to_rgb(x), vae), scale);
  auto rng = make_rng(cfg.seed, "sample-noise");
  const Tensor z_T = Tensor::randn(z_x.shape(), rng);

  SampleResult res;
  std::vector<std::size_t> keep;
  if (cfg.export_intermediate) keep = snapshot_positions(plan.steps());
  auto on_step = [&](std::size_t pos, int t, const Tensor& z) {
    if (std::find(keep.begin(), keep.end(), pos) == keep.end()) return;
    res.intermediates.push_back({pos, t, decode(mul_scalar(z, 1.0f / scale), vae)});
  };
  const Tensor z0 = reverse_process(
      z_x, z_T, plan, schedule,
      [&](const Tensor& z, int t) {
        DenoiserOutput out = denoise(z, z_x, t, params);
        if (hook) hook(out);
        return out;
      },
      &res.denoiser_calls, on_step);
  res.latent = mul_scalar(z0, 1.0f / scale);
  res.image = decode(res.latent, vae);
  return res;
}

Tensor confidence_map_at(const ImageSample& x, const ImageSample& y, int t, const DenoiserParameters& params,
                         const VaeParameters& vae, const NoiseSchedule& schedule, std::uint64_t seed) {
  if (t < 1 || t > schedule.T()) {
    throw std::out_of_range("confidence_map_at: t=" + std::to_string(t) + " outside [1, " + std::to_string(schedule.T()) + "]");
  }
  const float scale = vae.latent_scale;
  const Tensor z_x = mul_scalar(encode_mean(sar_to_rgb(x), vae), scale);
  const Tensor z_y = mul_scalar(encode_mean(to_rgb(y), vae), scale);
  auto rng = make_rng(seed, "confidence-noise", static_cast<std::uint64_t>(t));
  const Tensor eps = Tensor::randn(z_y.shape(), rng);
  const Tensor z_t = forward_diffuse(z_y, t, eps, schedule);
  return denoise(z_t, z_x, t, params).conf;
}

Tensor upsample_map(const Tensor& map, std::size_t factor) {
  if (map.rank() != 3) throw ShapeError("upsample_map expects (C,h,w)");
  const std::size_t C = map.dim(0), h = map.dim(1), w = map.dim(2);
  Tensor out({C, h * factor, w * factor});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < h * factor; ++y)
      for (std::size_t x = 0; x < w * factor; ++x) {
        out.data()[(c * h * factor + y) * w * factor + x] = map[(c * h + y / factor) * w + x / factor];
      }
  return out;
}

std::uint64_t sample_seed(std::uint64_t seed, const std::string& id) {
  return derive_seed(seed, "sample:" + id);
}

std::vector<SweepRow> sweep_inference_steps(const std::vector<PairedSample>& test, const DenoiserParameters& params,
                                            const VaeParameters& vae, const NoiseSchedule& schedule,
                                            const std::vector<int>& steps_list, std::uint64_t seed) {
  if (steps_list.empty()) throw std::invalid_argument("sweep_inference_steps: empty steps list");
  if (test.empty()) throw std::invalid_argument("sweep_inference_steps: empty test set");
  std::vector<SweepRow> rows;
  for (int steps : steps_list) {
    SweepRow row;
    row.steps = steps;
    std::vector<double> ssims, sccs;
    const auto t0 = std::chrono::steady_clock::now();
    for (const PairedSample& s : test) {
      SamplerConfig cfg;
      cfg.steps = steps;
      cfg.seed = sample_seed(seed, s.id);
      const Tensor y_hat = sample_eo(s.sar, params, vae, schedule, cfg).image;
      row.psnr_values.push_back(psnr(y_hat, s.eo.pixels));
      ssims.push_back(ssim(y_hat, s.eo.pixels));
      sccs.push_back(scc(y_hat, s.eo.pixels));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    row.seconds_per_image = secs / static_cast<double>(test.size());
    row.psnr = median(row.psnr_values);
    row.ssim = median(ssims);
    row.scc = median(sccs);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_to_tsv(const std::vector<SweepRow>& rows) {
  std::string out = "steps\tpsnr\tssim\tscc\tseconds_per_image\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d\t%.6f\t%.6f\t%.6f\t%.6f\n", r.steps, r.psnr, r.ssim, r.scc, r.seconds_per_image);
    out += buf;
  }
  return out;
}

}  // namespace cdiff
