// SPDX-License-Identifier: Apache-2.0
#include "cdiff/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cdiff/metrics.hpp"
#include "cdiff/optim.hpp"
#include "cdiff/rng.hpp"
#include "cdiff/synth.hpp"

namespace cdiff {

namespace {

constexpr std::size_t kEncoderWidths[] = {32, 64, 128};
constexpr std::size_t kDecoderWidth = 128;

Tensor as_batch(const Tensor& x, std::size_t channels, const char* what) {
  if (x.rank() == 3) return reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() != 4) throw ShapeError(std::string(what) + " expects (C,H,W) or (N,C,H,W), got " + shape_str(x.shape()));
  if (x.dim(1) != channels) {
    throw ShapeError(std::string(what) + " expects " + std::to_string(channels) + " channels, got " +
                     shape_str(x.shape()));
  }
  return x;
}

Tensor unbatch_like(const Tensor& y, const Tensor& like) {
  if (like.rank() == 4) return y;
  return reshape(y, {y.dim(1), y.dim(2), y.dim(3)});
}

Tensor stack(const std::vector<Tensor>& images) {
  std::vector<Tensor> parts;
  parts.reserve(images.size());
  for (const Tensor& t : images) parts.push_back(reshape(t, {1, t.dim(0), t.dim(1), t.dim(2)}));
  return concat(parts, 0);
}

}  // namespace

Tensor sar_to_rgb(const ImageSample& x) {
  if (x.pixels.rank() != 3) throw ShapeError("SAR sample must be (C,H,W), got " + shape_str(x.pixels.shape()));
  const std::size_t C = x.channels(), H = x.height(), W = x.width();
  if (C == 1) return concat({x.pixels, x.pixels, x.pixels}, 0);
  if (C == 4) {
    const Tensor hh = narrow(x.pixels, 0, 0, 1);
    const Tensor cross = mul_scalar(add(narrow(x.pixels, 0, 1, 1), narrow(x.pixels, 0, 2, 1)), 0.5f);
    const Tensor vv = narrow(x.pixels, 0, 3, 1);
    Tensor out = concat({hh, cross, vv}, 0);
    if (out.dim(1) != H || out.dim(2) != W) throw std::logic_error("sar_to_rgb produced a bad shape");
    return out;
  }
  throw ShapeError("unsupported SAR channel count " + std::to_string(C) + " (expected 1 or 4)");
}

Tensor to_rgb(const ImageSample& x) {
  if (x.modality == Modality::sar) return sar_to_rgb(x);
  if (x.channels() != 3) throw ShapeError("EO samples must have 3 channels, got " + shape_str(x.pixels.shape()));
  return x.pixels;
}

nn::NamedTensors VaeParameters::parameters() const {
  nn::NamedTensors out;
  for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].collect("enc" + std::to_string(i), out);
  for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].collect("dec" + std::to_string(i), out);
  return out;
}

void VaeParameters::freeze() {
  nn::set_requires_grad(parameters(), false);
  nn::zero_grads(parameters());
  frozen = true;
}

void VaeParameters::save(const std::filesystem::path& dir) const {
  TensorDirectory td;
  td.tensors = parameters();
  td.meta["kind"] = "vae";
  td.meta["latent_channels"] = std::to_string(kLatentChannels);
  td.meta["encoder_stages"] = std::to_string(encoder.size());
  td.meta["decoder_stages"] = std::to_string(decoder.size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(latent_scale));
  td.meta["latent_scale"] = buf;
  td.meta["frozen"] = frozen ? "1" : "0";
  td.save(dir);
}

VaeParameters VaeParameters::load(const std::filesystem::path& dir) {
  const TensorDirectory td = TensorDirectory::load(dir);
  if (td.meta_at("kind") != "vae") throw FormatError(dir.string() + " is not a VAE checkpoint");
  VaeParameters p = init_vae(0);
  if (std::stoul(td.meta_at("encoder_stages")) != p.encoder.size() ||
      std::stoul(td.meta_at("decoder_stages")) != p.decoder.size()) {
    throw FormatError(dir.string() + ": VAE layout does not match this build");
  }
  nn::load_into(p.parameters(), td);
  p.latent_scale = std::stof(td.meta_at("latent_scale"));
  if (td.meta_at("frozen") == "1") p.freeze();
  return p;
}

VaeParameters init_vae(std::uint64_t seed) {
  auto rng = make_rng(seed, "vae-init");
  VaeParameters p;
  std::size_t cin = 3;
  for (std::size_t w : kEncoderWidths) {
    p.encoder.push_back(nn::Conv2d::make(cin, w, 3, 2, rng));
    cin = w;
  }
  p.encoder.push_back(nn::Conv2d::make(cin, 2 * kLatentChannels, 3, 1, rng));

  p.decoder.push_back(nn::Conv2d::make(kLatentChannels, kDecoderWidth, 3, 1, rng));
  p.decoder.push_back(nn::Conv2d::make(kDecoderWidth, kDecoderWidth, 3, 1, rng));
  cin = kDecoderWidth;
  for (auto it = std::rbegin(kEncoderWidths) + 1; it != std::rend(kEncoderWidths); ++it) {
    p.decoder.push_back(nn::Conv2d::make(cin, *it, 3, 1, rng));
    cin = *it;
  }
  p.decoder.push_back(nn::Conv2d::make(cin, cin, 3, 1, rng));
  p.decoder.push_back(nn::Conv2d::make(cin, 3, 3, 1, rng));
  return p;
}

Posterior encode_posterior(const Tensor& img3, const VaeParameters& params) {
  Tensor x = as_batch(img3, 3, "encode");
  if (x.dim(2) % kLatentDownsample != 0 || x.dim(3) % kLatentDownsample != 0) {
    throw ShapeError("encode: spatial size " + shape_str(img3.shape()) + " is not divisible by 8");
  }
  Tensor h = add_scalar(mul_scalar(x, 2.0f), -1.0f);
  for (std::size_t i = 0; i + 1 < params.encoder.size(); ++i) h = silu(params.encoder[i](h));
  const Tensor out = params.encoder.back()(h);
  Posterior post;
  post.mean = unbatch_like(narrow(out, 1, 0, kLatentChannels), img3);
  post.logvar = unbatch_like(clamp(narrow(out, 1, kLatentChannels, kLatentChannels), kLogvarMin, kLogvarMax), img3);
  return post;
}

Tensor sample_posterior(const Posterior& post, std::mt19937_64& rng) {
  const Tensor xi = Tensor::randn(post.mean.shape(), rng);
  return add(post.mean, mul(exp(mul_scalar(post.logvar, 0.5f)), xi));
}

Tensor encode(const Tensor& img3, const VaeParameters& params, std::mt19937_64& rng, EncodeMode mode) {
  Posterior post = encode_posterior(img3, params);
  return mode == EncodeMode::mean ? post.mean : sample_posterior(post, rng);
}

Tensor encode_mean(const Tensor& img3, const VaeParameters& params) { return encode_posterior(img3, params).mean; }

Tensor decode(const Tensor& z, const VaeParameters& params) {
  Tensor h = as_batch(z, kLatentChannels, "decode");
  const auto& d = params.decoder;
  h = silu(d[0](h));
  h = silu(d[1](h));
  std::size_t i = 2;
  for (; i + 2 < d.size(); ++i) h = silu(d[i](upsample_nearest2x(h)));
  h = silu(d[i++](upsample_nearest2x(h)));
  return unbatch_like(sigmoid(d[i](h)), z);
}

Tensor kl_divergence(const Tensor& mean, const Tensor& logvar) {
  // 0.5 * (mu^2 + exp(lv) - 1 - lv)
  Tensor t = sub(add(square(mean), exp(logvar)), add_scalar(logvar, 1.0f));
  return mul_scalar(cdiff::mean(t), 0.5f);
}

void train_vae_into(VaeParameters& params, const std::vector<Tensor>& images, const VaeTrainConfig& cfg,
                    VaeTrainStats* stats, const std::function<void(std::size_t, double)>& on_step) {
  if (images.empty()) throw std::invalid_argument("train_vae: empty dataset");
  if (params.frozen) throw std::logic_error("train_vae: parameters are frozen");
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw std::invalid_argument("train_vae: epochs and batch must be > 0");
  const auto named = params.parameters();
  nn::set_requires_grad(named, true);
  AdamW opt;
  const std::size_t batches = (images.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = batches * cfg.epochs;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto order_rng = make_rng(cfg.seed, "vae-order", epoch);
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      auto rng = make_rng(cfg.seed, "vae-step", step);
      std::vector<Tensor> batch;
      for (std::size_t i = b * cfg.batch_size; i < std::min(images.size(), (b + 1) * cfg.batch_size); ++i) {
        const Tensor& img = images[order[i]];
        batch.push_back(cfg.augment ? apply_dihedral(img, std::uniform_int_distribution<int>(0, 7)(rng)) : img);
      }
      const Tensor x = stack(batch);
      Tape tape;
      const Posterior post = encode_posterior(x, params);
      const Tensor z = sample_posterior(post, rng);
      const Tensor recon = decode(z, params);
      const Tensor mse = cdiff::mean(square(sub(recon, x)));
      Tensor loss = mse;
      if (cfg.kl_weight > 0.0) {
        loss = add(loss, mul_scalar(kl_divergence(post.mean, post.logvar), static_cast<float>(cfg.kl_weight)));
      }
      nn::zero_grads(named);
      tape.backward(loss);
      // Cosine decay to 10% of the base rate over the run.
      const double progress = static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(1, total - 1));
      const double lr = cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
      opt.step(named, lr);
      const double lv = loss.item();
      if (!std::isfinite(lv)) throw std::runtime_error("train_vae: non-finite loss at step " + std::to_string(step));
      if (stats) {
        stats->loss.push_back(lv);
        stats->mse.push_back(mse.item());
      }
      if (on_step) on_step(step, lv);
    }
  }
  nn::zero_grads(named);
}

float estimate_latent_scale(const std::vector<Tensor>& images, const VaeParameters& params) {
  double s = 0.0, ss = 0.0;
  std::size_t n = 0;
  for (const Tensor& img : images) {
    const Tensor z = encode_mean(img, params);
    for (float v : z.data()) {
      s += v;
      ss += static_cast<double>(v) * v;
      ++n;
    }
  }
  const double var = ss / static_cast<double>(n) - (s / static_cast<double>(n)) * (s / static_cast<double>(n));
  return var > 0.0 ? static_cast<float>(1.0 / std::sqrt(var)) : 1.0f;
}

VaeParameters train_vae(const std::vector<Tensor>& images, const VaeTrainConfig& cfg, VaeTrainStats* stats,
                        const std::function<void(std::size_t, double)>& on_step) {
  VaeParameters params = init_vae(cfg.seed);
  train_vae_into(params, images, cfg, stats, on_step);
  params.freeze();
  params.latent_scale = estimate_latent_scale(images, params);
  return params;
}

std::vector<ProbeRow> reconstruction_probe(const ImageSample& x, const VaeParameters& params,
                                           const std::vector<double>& speckle_levels, std::uint64_t seed) {
  const Tensor clean = to_rgb(x);
  std::vector<ProbeRow> rows;
  for (std::size_t i = 0; i < speckle_levels.size(); ++i) {
    const double level = speckle_levels[i];
    if (level < 0.0) throw std::invalid_argument("speckle level must be >= 0");
    Tensor input = clean.detach();
    if (level > 0.0) {
      auto rng = make_rng(seed, "probe-speckle", i);
      const Tensor field = speckle_field(input.shape(), 1.0 / level, rng);
      for (std::size_t j = 0; j < input.numel(); ++j) input.data()[j] = std::clamp(input[j] * field[j], 0.0f, 1.0f);
    }
    const Tensor recon = decode(encode_mean(input, params), params);
    rows.push_back({level, psnr(recon, clean)});
  }
  return rows;
}

}  // namespace cdiff
