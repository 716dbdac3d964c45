// SPDX-License-Identifier: Apache-2.0
#include "cdiff/denoiser.hpp"

#include <cmath>

#include "cdiff/rng.hpp"

namespace cdiff {

namespace {

constexpr std::size_t kTimeDim = 64;

ResBlock make_block(std::size_t cin, std::size_t cout, std::size_t emb, std::size_t groups, std::mt19937_64& rng) {
  ResBlock b;
  b.norm1 = nn::GroupNorm::make(cin, groups);
  b.conv1 = nn::Conv2d::make(cin, cout, 3, 1, rng);
  b.temb = nn::Linear::make(emb, cout, rng);
  b.norm2 = nn::GroupNorm::make(cout, groups);
  b.conv2 = nn::Conv2d::make(cout, cout, 3, 1, rng);
  if (cin != cout) b.skip = nn::Conv2d::make(cin, cout, 1, 1, rng);
  return b;
}

Tensor batch4(const Tensor& x, const char* what) {
  if (x.rank() == 3) return reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() != 4) throw ShapeError(std::string(what) + " must be (C,h,w) or (N,C,h,w), got " + shape_str(x.shape()));
  return x;
}

}  // namespace

Tensor timestep_embedding(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("timestep embedding dim must be even, got " + std::to_string(dim));
  const std::size_t half = dim / 2;
  Tensor e({dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = half == 1 ? 1.0 : std::pow(10.0, -4.0 * static_cast<double>(i) / static_cast<double>(half - 1));
    e.data()[2 * i] = static_cast<float>(std::sin(t * freq));
    e.data()[2 * i + 1] = static_cast<float>(std::cos(t * freq));
  }
  return e;
}

Tensor timestep_embedding(std::span<const int> t, std::size_t dim) {
  Tensor out({t.size(), dim});
  for (std::size_t n = 0; n < t.size(); ++n) {
    const Tensor e = timestep_embedding(static_cast<double>(t[n]), dim);
    std::copy(e.data().begin(), e.data().end(), out.data().begin() + static_cast<long>(n * dim));
  }
  return out;
}

Tensor ResBlock::operator()(const Tensor& x, const Tensor& temb_act) const {
  Tensor h = conv1(silu(norm1(x)));
  const Tensor proj = temb(temb_act);
  h = add(h, reshape(proj, {proj.dim(0), proj.dim(1), 1, 1}));
  h = conv2(silu(norm2(h)));
  return add(skip.weight.defined() ? skip(x) : x, h);
}

void ResBlock::collect(const std::string& prefix, nn::NamedTensors& out) const {
  norm1.collect(prefix + ".norm1", out);
  conv1.collect(prefix + ".conv1", out);
  temb.collect(prefix + ".temb", out);
  norm2.collect(prefix + ".norm2", out);
  conv2.collect(prefix + ".conv2", out);
  if (skip.weight.defined()) skip.collect(prefix + ".skip", out);
}

nn::NamedTensors DenoiserParameters::parameters() const {
  nn::NamedTensors out;
  out.emplace_back("z_c", z_c);
  time1.collect("time1", out);
  time2.collect("time2", out);
  in_conv.collect("in_conv", out);
  for (std::size_t l = 0; l < down.size(); ++l) {
    for (std::size_t b = 0; b < down[l].size(); ++b) {
      down[l][b].collect("down" + std::to_string(l) + "." + std::to_string(b), out);
    }
    if (l < downsample.size()) downsample[l].collect("downsample" + std::to_string(l), out);
  }
  for (std::size_t b = 0; b < mid.size(); ++b) mid[b].collect("mid." + std::to_string(b), out);
  for (std::size_t l = up.size(); l-- > 0;) {
    for (std::size_t b = 0; b < up[l].size(); ++b) up[l][b].collect("up" + std::to_string(l) + "." + std::to_string(b), out);
    if (l > 0) upsample[l - 1].collect("upsample" + std::to_string(l), out);
  }
  out_norm.collect("out_norm", out);
  noise_head.collect("noise_head", out);
  conf_head.collect("conf_head", out);
  return out;
}

DenoiserParameters init_denoiser(std::size_t base_channels, std::uint64_t seed, std::size_t in_channels) {
  DenoiserParameters p;
  if (base_channels < 8 || base_channels % p.groups != 0) {
    throw std::invalid_argument("base_channels must be a multiple of 8 and at least 8");
  }
  if (in_channels == 0) throw std::invalid_argument("in_channels must be positive");
  p.base_channels = base_channels;
  p.in_channels = in_channels;
  auto rng = make_rng(seed, "denoiser-init");
  const std::size_t emb = p.embed_dim();

  p.z_c = Tensor::randn({p.cond_dim}, rng, 0.02f);
  p.time1 = nn::Linear::make(kTimeDim, emb, rng);
  p.time2 = nn::Linear::make(emb, emb, rng);
  p.in_conv = nn::Conv2d::make(in_channels, base_channels, 3, 1, rng);

  std::size_t ch = base_channels;
  std::vector<std::size_t> skip_channels;
  for (std::size_t l = 0; l < p.levels; ++l) {
    const std::size_t out = p.channels_at(l);
    std::vector<ResBlock> blocks;
    for (std::size_t b = 0; b < p.blocks_per_level; ++b) {
      blocks.push_back(make_block(ch, out, emb, p.groups, rng));
      ch = out;
    }
    p.down.push_back(std::move(blocks));
    skip_channels.push_back(ch);
    if (l + 1 < p.levels) p.downsample.push_back(nn::Conv2d::make(ch, ch, 3, 2, rng));
  }
  for (std::size_t b = 0; b < p.blocks_per_level; ++b) p.mid.push_back(make_block(ch, ch, emb, p.groups, rng));

  p.up.resize(p.levels);
  p.upsample.resize(p.levels - 1);
  for (std::size_t l = p.levels; l-- > 0;) {
    const std::size_t out = p.channels_at(l);
    std::vector<ResBlock> blocks;
    blocks.push_back(make_block(ch + skip_channels[l], out, emb, p.groups, rng));
    for (std::size_t b = 1; b < p.blocks_per_level; ++b) blocks.push_back(make_block(out, out, emb, p.groups, rng));
    ch = out;
    p.up[l] = std::move(blocks);
    if (l > 0) {
      p.upsample[l - 1] = nn::Conv2d::make(ch, ch, 3, 1, rng);
    }
  }
  p.out_norm = nn::GroupNorm::make(ch, p.groups);
  p.noise_head = nn::Conv2d::make(ch, p.latent_channels, 1, 1, rng, /*zero_init=*/true);
  p.conf_head = nn::Conv2d::make(ch, 1, 1, 1, rng, /*zero_init=*/true);
  p.conf_head.bias.data()[0] = static_cast<float>(std::log(std::exp(1.0) - 1.0));
  return p;
}

DenoiserParameters expand_input_conv(const DenoiserParameters& params, std::size_t sar_channels) {
  const Tensor& w = params.in_conv.weight;
  const std::size_t cout = w.dim(0), cin = w.dim(1), k = w.dim(2);
  if (cin != params.latent_channels || sar_channels != cin) {
    throw ShapeError("expand_input_conv: input conv has " + std::to_string(cin) + " channels, expected " +
                     std::to_string(params.latent_channels) + " (and sar_channels equal to it)");
  }
  // Round-trip through a tensor directory so the result shares no storage
  // with the source.
  TensorDirectory td;
  params.save_into(td);
  DenoiserParameters out = DenoiserParameters::from_directory(td);

  Tensor wide({cout, cin + sar_channels, k, k});
  const std::size_t plane = k * k;
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t c = 0; c < cin + sar_channels; ++c) {
      const float* from = w.data().data() + (o * cin + c % cin) * plane;
      std::copy_n(from, plane, wide.data().data() + (o * (cin + sar_channels) + c) * plane);
    }
  out.in_conv.weight = wide;
  out.in_channels = cin + sar_channels;
  return out;
}

Tensor input_projection(const Tensor& x, const DenoiserParameters& params) { return params.in_conv(batch4(x, "input")); }

DenoiserOutput denoise(const Tensor& z_y_t, const Tensor& z_x, std::span<const int> t, const DenoiserParameters& params) {
  if (z_y_t.shape() != z_x.shape()) {
    throw ShapeError("denoise: noisy latent " + shape_str(z_y_t.shape()) + " and condition " + shape_str(z_x.shape()) +
                     " differ in shape");
  }
  const Tensor zy = batch4(z_y_t, "noisy latent");
  const Tensor zx = batch4(z_x, "condition latent");
  const std::size_t N = zy.dim(0);
  if (t.size() != N) throw ShapeError("denoise: " + std::to_string(t.size()) + " timesteps for batch of " + std::to_string(N));
  if (zy.dim(1) + zx.dim(1) != params.in_channels) {
    throw ShapeError("denoise: model expects " + std::to_string(params.in_channels) + " input channels, got " +
                     std::to_string(zy.dim(1) + zx.dim(1)));
  }
  const std::size_t down_factor = std::size_t{1} << (params.levels - 1);
  if (zy.dim(2) % down_factor != 0 || zy.dim(3) % down_factor != 0) {
    throw ShapeError("denoise: latent grid " + shape_str(zy.shape()) + " not divisible by " + std::to_string(down_factor));
  }
  for (int ti : t) {
    if (ti < 0) throw std::out_of_range("denoise: negative timestep");
  }

  const Tensor emb = add(timestep_embedding(t, kTimeDim), reshape(params.z_c, {1, params.cond_dim}));
  const Tensor temb = silu(params.time2(silu(params.time1(emb))));

  Tensor h = params.in_conv(concat({zy, zx}, 1));
  std::vector<Tensor> skips;
  for (std::size_t l = 0; l < params.levels; ++l) {
    for (const ResBlock& b : params.down[l]) h = b(h, temb);
    skips.push_back(h);
    if (l + 1 < params.levels) h = params.downsample[l](h);
  }
  for (const ResBlock& b : params.mid) h = b(h, temb);
  for (std::size_t l = params.levels; l-- > 0;) {
    h = concat({h, skips[l]}, 1);
    for (const ResBlock& b : params.up[l]) h = b(h, temb);
    if (l > 0) h = params.upsample[l - 1](upsample_nearest2x(h));
  }
  h = silu(params.out_norm(h));

  DenoiserOutput out;
  out.eps_hat = params.noise_head(h);
  out.conf = softplus(params.conf_head(h));
  if (z_y_t.rank() == 3) {
    out.eps_hat = reshape(out.eps_hat, z_y_t.shape());
    out.conf = reshape(out.conf, {1, z_y_t.dim(1), z_y_t.dim(2)});
  }
  return out;
}

DenoiserOutput denoise(const Tensor& z_y_t, const Tensor& z_x, int t, const DenoiserParameters& params) {
  const int ts[1] = {t};
  if (z_y_t.rank() != 3) throw ShapeError("single-timestep denoise expects (C,h,w) latents");
  return denoise(z_y_t, z_x, std::span<const int>(ts, 1), params);
}

void DenoiserParameters::save_into(TensorDirectory& td) const {
  for (const auto& [name, t] : parameters()) td.tensors.emplace_back(name, t.detach());
  td.meta["kind"] = "denoiser";
  td.meta["base_channels"] = std::to_string(base_channels);
  td.meta["levels"] = std::to_string(levels);
  td.meta["cond_dim"] = std::to_string(cond_dim);
  td.meta["latent_channels"] = std::to_string(latent_channels);
  td.meta["in_channels"] = std::to_string(in_channels);
  td.meta["blocks_per_level"] = std::to_string(blocks_per_level);
}

void DenoiserParameters::save(const std::filesystem::path& dir) const {
  TensorDirectory td;
  save_into(td);
  td.save(dir);
}

DenoiserParameters DenoiserParameters::from_directory(const TensorDirectory& td) {
  if (td.meta_at("kind") != "denoiser") throw FormatError("not a denoiser checkpoint");
  const std::size_t base = std::stoul(td.meta_at("base_channels"));
  const std::size_t in = std::stoul(td.meta_at("in_channels"));
  DenoiserParameters p = init_denoiser(base, 0, in);
  if (std::stoul(td.meta_at("levels")) != p.levels || std::stoul(td.meta_at("cond_dim")) != p.cond_dim ||
      std::stoul(td.meta_at("latent_channels")) != p.latent_channels ||
      std::stoul(td.meta_at("blocks_per_level")) != p.blocks_per_level) {
    throw FormatError("denoiser checkpoint layout does not match this build");
  }
  nn::load_into(p.parameters(), td);
  return p;
}

DenoiserParameters DenoiserParameters::load(const std::filesystem::path& dir) {
  return from_directory(TensorDirectory::load(dir));
}

}  // namespace cdiff
