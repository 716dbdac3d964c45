// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "cdiff/checksum.hpp"
#include "cdiff/denoiser.hpp"
#include "cdiff/loss.hpp"
#include "cdiff/optim.hpp"

using namespace cdiff;

namespace {
DenoiserParameters small_model(std::uint64_t seed = 1) { return expand_input_conv(init_denoiser(8, seed, 4), 4); }

double l2(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}
}  // namespace

TEST(TimestepEmbedding, ZeroTimestep) {
  const Tensor e = timestep_embedding(0.0, 16);
  for (std::size_t i = 0; i < 16; i += 2) {
    EXPECT_EQ(e[i], 0.0f);
    EXPECT_EQ(e[i + 1], 1.0f);
  }
}

TEST(TimestepEmbedding, DistinctTimestepsDiffer) {
  const Tensor a = timestep_embedding(1.0, 64), b = timestep_embedding(500.0, 64), c = timestep_embedding(1000.0, 64);
  EXPECT_GT(l2(a, b), 0.0);
  EXPECT_GT(l2(a, c), 0.0);
  EXPECT_GT(l2(b, c), 0.0);
}

TEST(TimestepEmbedding, PinnedValuesAtTen) {
  // frozen from a direct double-precision evaluation of the sin/cos pairs
  const Tensor e = timestep_embedding(10.0, 64);
  double norm = 0;
  for (float v : e.data()) norm += double(v) * v;
  EXPECT_NEAR(std::sqrt(norm), 5.656854249492381, 1e-6);
  EXPECT_NEAR(e[2], 0.9113097907522185, 1e-7);
  EXPECT_NEAR(e[3], 0.41172134421128526, 1e-7);
  EXPECT_NEAR(e[62], 0.0009999998333333417, 1e-9);
}

TEST(TimestepEmbedding, OddDimensionRejected) { EXPECT_THROW(timestep_embedding(3.0, 63), std::invalid_argument); }

TEST(Denoiser, OutputShapesAndPositiveConfidence) {
  const DenoiserParameters p = small_model();
  std::mt19937_64 rng(2);
  const DenoiserOutput out = denoise(Tensor::randn({4, 8, 8}, rng), Tensor::randn({4, 8, 8}, rng), 500, p);
  EXPECT_EQ(out.eps_hat.shape(), (Shape{4, 8, 8}));
  EXPECT_EQ(out.conf.shape(), (Shape{1, 8, 8}));
  // random heads so the confidence is not trivially the init bias
  DenoiserParameters q = p;
  q.conf_head.weight = Tensor::randn(p.conf_head.weight.shape(), rng, 2.0f);
  const DenoiserOutput r = denoise(Tensor::randn({4, 8, 8}, rng), Tensor::randn({4, 8, 8}, rng), 10, q);
  for (float c : r.conf.data()) EXPECT_GE(c, 0.0f);
}

TEST(Denoiser, InitialConfidenceIsOneAndNoiseIsZero) {
  const DenoiserParameters p = small_model();
  std::mt19937_64 rng(3);
  double total = 0;
  std::size_t n = 0;
  for (int i = 0; i < 16; ++i) {
    const DenoiserOutput out = denoise(Tensor::randn({4, 8, 8}, rng), Tensor::randn({4, 8, 8}, rng), 1 + i * 60, p);
    for (float c : out.conf.data()) {
      total += c;
      ++n;
      EXPECT_NEAR(c, 1.0f, 1e-6);
    }
    for (float e : out.eps_hat.data()) EXPECT_EQ(e, 0.0f);
  }
  EXPECT_NEAR(total / n, 1.0, 0.05);
}

TEST(Denoiser, SameSeedSameParameters) {
  EXPECT_EQ(checksum(small_model(9).parameters()), checksum(small_model(9).parameters()));
  EXPECT_NE(checksum(small_model(9).parameters()), checksum(small_model(10).parameters()));
}

TEST(Denoiser, ShapeMismatchRejected) {
  const DenoiserParameters p = small_model();
  EXPECT_THROW(denoise(Tensor({4, 8, 8}), Tensor({4, 4, 4}), 5, p), ShapeError);
}

namespace {
DenoiserParameters randomized_heads(std::uint64_t seed) {
  DenoiserParameters p = small_model(seed);
  std::mt19937_64 rng(seed);
  p.noise_head.weight = Tensor::randn(p.noise_head.weight.shape(), rng, 0.1f);
  p.conf_head.weight = Tensor::randn(p.conf_head.weight.shape(), rng, 0.1f);
  return p;
}
}  // namespace

TEST(Denoiser, BatchPermutationPermutesOutputs) {
  const DenoiserParameters p = randomized_heads(4);
  std::mt19937_64 rng(4);
  std::vector<Tensor> zy, zx;
  const std::vector<int> t = {3, 250, 600, 999};
  for (int i = 0; i < 4; ++i) {
    zy.push_back(Tensor::randn({1, 4, 8, 8}, rng));
    zx.push_back(Tensor::randn({1, 4, 8, 8}, rng));
  }
  const int perm[4] = {2, 0, 3, 1};
  std::vector<Tensor> zy_p, zx_p;
  std::vector<int> t_p;
  for (int i : perm) {
    zy_p.push_back(zy[i]);
    zx_p.push_back(zx[i]);
    t_p.push_back(t[i]);
  }
  const DenoiserOutput a = denoise(concat(zy, 0), concat(zx, 0), t, p);
  const DenoiserOutput b = denoise(concat(zy_p, 0), concat(zx_p, 0), t_p, p);
  for (int j = 0; j < 4; ++j) {
    EXPECT_LT(max_abs_diff(narrow(b.eps_hat, 0, j, 1), narrow(a.eps_hat, 0, perm[j], 1)), 1e-5f);
    EXPECT_LT(max_abs_diff(narrow(b.conf, 0, j, 1), narrow(a.conf, 0, perm[j], 1)), 1e-5f);
  }
}

TEST(Denoiser, DeterministicAndConditionSensitive) {
  const DenoiserParameters p = randomized_heads(5);
  std::mt19937_64 rng(5);
  const Tensor zy = Tensor::randn({4, 8, 8}, rng), zx = Tensor::randn({4, 8, 8}, rng);
  const DenoiserOutput a = denoise(zy, zx, 300, p), b = denoise(zy, zx, 300, p);
  EXPECT_TRUE(bit_equal(a.eps_hat, b.eps_hat));
  EXPECT_TRUE(bit_equal(a.conf, b.conf));
  const DenoiserOutput c = denoise(zy, Tensor::randn({4, 8, 8}, rng), 300, p);
  EXPECT_GT(l2(a.eps_hat, c.eps_hat), 0.0);
}

TEST(Denoiser, EveryParameterReceivesGradientAfterOneStep) {
  DenoiserParameters p = small_model(6);
  const auto params = p.parameters();
  nn::set_requires_grad(params, true);
  std::mt19937_64 rng(6);
  const Tensor zy = Tensor::randn({2, 4, 8, 8}, rng), zx = Tensor::randn({2, 4, 8, 8}, rng);
  const Tensor target = Tensor::randn({2, 4, 8, 8}, rng);
  const std::vector<int> t = {100, 700};
  auto backprop = [&] {
    nn::zero_grads(params);
    Tape tape;
    const DenoiserOutput out = denoise(zy, zx, t, p);
    tape.backward(cdiff_loss(target, out.eps_hat, out.conf, {}));
  };
  backprop();
  AdamW opt;
  opt.step(params, 1e-2);
  backprop();
  for (const auto& [name, tensor] : params) {
    ASSERT_TRUE(tensor.has_grad()) << name;
    double n = 0;
    for (float g : tensor.grad()) n += double(g) * g;
    EXPECT_GT(n, 0.0) << name;
  }
}

TEST(ExpandInputConv, LinearityOfFirstLayer) {
  std::mt19937_64 rng(7);
  DenoiserParameters eo_only = init_denoiser(8, 7, 4);
  eo_only.in_conv.bias = Tensor::randn(eo_only.in_conv.bias.shape(), rng);
  const DenoiserParameters wide = expand_input_conv(eo_only, 4);
  EXPECT_EQ(wide.in_channels, 8u);
  const Tensor z = Tensor::randn({1, 4, 8, 8}, rng);
  const Tensor& b = eo_only.in_conv.bias;
  auto no_bias = [&](const Tensor& x, const DenoiserParameters& p) { return conv2d(x, p.in_conv.weight, Tensor(), 1, 1); };
  // with z_x = z_y_t the pre-activation (bias aside) doubles
  EXPECT_LT(max_abs_diff(no_bias(concat({z, z}, 1), wide), mul_scalar(no_bias(z, eo_only), 2.0f)), 1e-5f);
  // with z_x = 0 it matches the original layer exactly, bias included
  const Tensor orig = input_projection(z, eo_only);
  EXPECT_LT(max_abs_diff(input_projection(concat({z, zeros_like(z)}, 1), wide), orig), 1e-6f);
  EXPECT_TRUE(bit_equal(wide.in_conv.bias, b));
}

TEST(ExpandInputConv, OtherParametersUnchanged) {
  const DenoiserParameters eo_only = init_denoiser(8, 8, 4);
  const DenoiserParameters wide = expand_input_conv(eo_only, 4);
  auto without_in_conv = [](nn::NamedTensors v) {
    std::erase_if(v, [](const auto& p) { return p.first == "in_conv.weight"; });
    return v;
  };
  EXPECT_EQ(checksum(without_in_conv(eo_only.parameters())), checksum(without_in_conv(wide.parameters())));
  EXPECT_FALSE(wide.in_conv.weight.same_storage(eo_only.in_conv.weight));
  EXPECT_THROW(expand_input_conv(wide, 4), ShapeError);
  EXPECT_THROW(expand_input_conv(eo_only, 3), ShapeError);
}

TEST(DenoiserCheckpoint, SaveLoadRoundTrip) {
  const DenoiserParameters p = randomized_heads(11);
  const auto dir = std::filesystem::temp_directory_path() / "cdiff_test_denoiser_ckpt";
  std::filesystem::remove_all(dir);
  p.save(dir);
  const DenoiserParameters q = DenoiserParameters::load(dir);
  EXPECT_EQ(checksum(p.parameters()), checksum(q.parameters()));
  EXPECT_EQ(q.base_channels, 8u);
  EXPECT_EQ(q.in_channels, 8u);
  const TensorDirectory td = TensorDirectory::load(dir);
  for (const char* key : {"base_channels", "levels", "cond_dim", "latent_channels"}) EXPECT_NO_THROW(td.meta_at(key));
  std::filesystem::remove_all(dir);
}
