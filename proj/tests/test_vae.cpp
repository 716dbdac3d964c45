// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "cdiff/checksum.hpp"
#include "cdiff/metrics.hpp"
#include "cdiff/synth.hpp"
#include "cdiff/vae.hpp"

using namespace cdiff;

TEST(SarToRgb, SingleChannelReplicated) {
  const Tensor rgb = sar_to_rgb(ImageSample{Tensor({1, 8, 8}, 0.5f), Modality::sar});
  EXPECT_EQ(rgb.shape(), (Shape{3, 8, 8}));
  for (float v : rgb.data()) EXPECT_EQ(v, 0.5f);
}

TEST(SarToRgb, FullPolarimetricMapping) {
  auto pixel = [](float hh, float hv, float vh, float vv) {
    Tensor x({4, 8, 8});
    for (std::size_t i = 0; i < 64; ++i) {
      x.data()[i] = hh;
      x.data()[64 + i] = hv;
      x.data()[128 + i] = vh;
      x.data()[192 + i] = vv;
    }
    return sar_to_rgb(ImageSample{x, Modality::sar});
  };
  const Tensor a = pixel(0.1f, 0.2f, 0.4f, 0.3f);
  EXPECT_FLOAT_EQ(a[0], 0.1f);
  EXPECT_FLOAT_EQ(a[64], 0.3f);
  EXPECT_FLOAT_EQ(a[128], 0.3f);
  EXPECT_TRUE(bit_equal(a, pixel(0.1f, 0.4f, 0.2f, 0.3f)));
}

TEST(SarToRgb, UnsupportedChannelCounts) {
  for (std::size_t c : {2u, 3u, 5u}) {
    EXPECT_ANY_THROW(sar_to_rgb(ImageSample{Tensor({c, 8, 8}), Modality::sar})) << c;
  }
}

TEST(Vae, EncodeShapesAndDeterminism) {
  const VaeParameters p = init_vae(1);
  std::mt19937_64 rng(1);
  const Tensor y = Tensor::uniform({3, 64, 64}, rng, 0, 1);
  const Tensor z = encode_mean(y, p);
  EXPECT_EQ(z.shape(), (Shape{4, 8, 8}));
  EXPECT_TRUE(bit_equal(z, encode_mean(y, p)));
  const Tensor back = decode(z, p);
  EXPECT_EQ(back.shape(), (Shape{3, 64, 64}));
  EXPECT_EQ(encode(Tensor::uniform({3, 32, 48}, rng, 0, 1), p, rng, EncodeMode::mean).shape(), (Shape{4, 4, 6}));
  EXPECT_THROW(encode_mean(Tensor({3, 60, 64}), p), ShapeError);
  EXPECT_THROW(decode(Tensor({3, 8, 8}), p), ShapeError);
}

TEST(Vae, SampleApproachesMeanAtLogvarFloor) {
  std::mt19937_64 rng(2);
  Posterior post{Tensor::randn({4, 8, 8}, rng), Tensor({4, 8, 8}, -1000.0f)};
  post.logvar = clamp(post.logvar, kLogvarMin, kLogvarMax);
  EXPECT_LT(max_abs_diff(sample_posterior(post, rng), post.mean), 1e-3f);
  // the encoder applies the same clamp
  const VaeParameters p = init_vae(2);
  const Posterior enc = encode_posterior(Tensor::uniform({3, 16, 16}, rng, 0, 1), p);
  for (float v : enc.logvar.data()) {
    EXPECT_GE(v, kLogvarMin);
    EXPECT_LE(v, kLogvarMax);
  }
}

TEST(Vae, DecodeRangeOnRandomLatents) {
  const VaeParameters p = init_vae(3);
  std::mt19937_64 rng(3);
  const Tensor img = decode(Tensor::randn({4, 8, 8}, rng, 5.0f), p);
  for (float v : img.data()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Vae, KlOfStandardPosteriorIsZero) {
  EXPECT_EQ(kl_divergence(Tensor({4, 2, 2}), Tensor({4, 2, 2})).item(), 0.0f);
  // KL(N(1, e^0) || N(0,1)) = 0.5 per element
  EXPECT_NEAR(kl_divergence(Tensor({4, 2, 2}, 1.0f), Tensor({4, 2, 2})).item(), 0.5, 1e-6);
}

TEST(Vae, FrozenParametersRejectTrainingAndGetNoGradient) {
  VaeParameters p = init_vae(4);
  p.freeze();
  const std::string before = checksum(p.parameters());
  EXPECT_THROW(train_vae_into(p, {Tensor({3, 16, 16}, 0.5f)}, {}), std::logic_error);
  Tensor x = Tensor({3, 16, 16}, 0.5f).set_requires_grad(true);
  {
    Tape tape;
    tape.backward(mean(decode(encode_mean(x, p), p)));
  }
  for (const auto& [name, t] : p.parameters()) EXPECT_FALSE(t.has_grad()) << name;
  EXPECT_EQ(checksum(p.parameters()), before);
}

TEST(Vae, EmptyDatasetRejected) { EXPECT_THROW(train_vae({}, {}), std::invalid_argument); }

TEST(Vae, SmokeTrainLossDecreases) {
  SceneSpec spec;
  spec.image_size = 32;
  spec.misalign_max = 2;
  std::vector<Tensor> images;
  for (std::size_t i = 0; i < 16; ++i) images.push_back(render_scene_at(spec, i).eo.pixels);
  VaeTrainConfig cfg;
  cfg.epochs = 100;
  cfg.batch_size = 16;
  cfg.kl_weight = 0.0;
  cfg.augment = false;
  VaeTrainStats stats;
  train_vae(images, cfg, &stats);
  ASSERT_EQ(stats.loss.size(), 100u);
  EXPECT_LT(stats.loss.back(), stats.loss.front());
  // mean over consecutive blocks of 20 steps decreases strictly
  double prev = 1e9;
  for (std::size_t b = 0; b < 5; ++b) {
    double m = 0;
    for (std::size_t i = 20 * b; i < 20 * (b + 1); ++i) m += stats.loss[i];
    EXPECT_LT(m / 20, prev) << "block " << b;
    prev = m / 20;
  }
}

TEST(Vae, OverfitsConstantImage) {
  const Tensor y({3, 16, 16}, 0.37f);
  VaeTrainConfig cfg;
  cfg.epochs = 300;
  cfg.batch_size = 1;
  const VaeParameters p = train_vae({y}, cfg);
  EXPECT_TRUE(p.frozen);
  const Tensor r = decode(encode_mean(y, p), p);
  double mse = 0;
  for (std::size_t i = 0; i < r.numel(); ++i) mse += (r[i] - y[i]) * (r[i] - y[i]);
  EXPECT_LT(mse / r.numel(), 1e-3);
}

TEST(Vae, SaveLoadRoundTrip) {
  VaeParameters p = init_vae(5);
  p.latent_scale = 0.75f;
  p.freeze();
  const auto dir = std::filesystem::temp_directory_path() / "cdiff_test_vae_ckpt";
  std::filesystem::remove_all(dir);
  p.save(dir);
  const VaeParameters q = VaeParameters::load(dir);
  EXPECT_EQ(checksum(p.parameters()), checksum(q.parameters()));
  EXPECT_EQ(q.latent_scale, 0.75f);
  EXPECT_TRUE(q.frozen);
  std::filesystem::remove_all(dir);
}

TEST(ReconstructionProbe, RowsAndDegenerateLevel) {
  const VaeParameters p = init_vae(6);
  SceneSpec spec;
  const ScenePair s = render_scene_at(spec, 1);
  const auto rows = reconstruction_probe(s.eo, p, {0.0, 0.1, 0.3, 1.0});
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].level, 0.0);
  EXPECT_NEAR(rows[0].psnr, psnr(decode(encode_mean(s.eo.pixels, p), p), s.eo.pixels), 1e-9);
  for (const auto& r : rows) EXPECT_TRUE(std::isfinite(r.psnr));
}
