// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance runner. Prints one PASS/FAIL line per criterion and
// exits non-zero if any selected criterion fails.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "cdiff/checksum.hpp"
#include "cdiff/cli.hpp"
#include "cdiff/config.hpp"
#include "cdiff/evaluate.hpp"
#include "cdiff/sampler.hpp"
#include "cdiff/trainer.hpp"
#include "grad_cases.hpp"

using namespace cdiff;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome within_budget(Outcome o, double secs, double budget) {
  o.detail += fmt(" runtime=%.1fs (budget %.0fs)", secs, budget);
  o.pass = o.pass && secs <= budget;
  return o;
}

// ---------------------------------------------------------------- 1

Outcome autodiff_correctness() {
  using namespace cdiff::testing;
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  for (const GradCase& c : op_grad_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(seed);
      const GradCheckResult r = grad_check(c.fn, c.make_inputs(rng));
      checks += r.checked;
      if (r.max_error > worst) {
        worst = r.max_error;
        worst_name = c.name;
      }
    }
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ComposedLossCase lc(seed);
    const GradCheckResult r = grad_check([&](const std::vector<Tensor>& v) { return lc.loss_with(v); }, lc.probes());
    checks += r.checked;
    if (r.max_error > worst) {
      worst = r.max_error;
      worst_name = "composed_loss";
    }
  }
  return {worst < 1e-3, fmt("max_rel_err=%.3g (%s) over %zu ops x 10 seeds + composed loss x 10 seeds, %zu probes",
                            worst, worst_name.c_str(), op_grad_cases().size(), checks)};
}

// ---------------------------------------------------------------- 2

Outcome schedule_fidelity() {
  const NoiseSchedule s = make_schedule();
  double worst_ab = 0.0;
  double prod = 1.0;
  for (int t = 1; t <= s.T(); ++t) {
    prod *= 1.0 - s.beta(t);
    worst_ab = std::max(worst_ab, std::abs(s.alpha_bar(t) - prod));
  }
  // moments of z_t for a fixed clean latent
  std::mt19937_64 rng(20);
  const Tensor z = Tensor::randn({8}, rng);
  const int n = 20000;
  double worst_sigma = 0.0;
  for (int t : {1, s.T() / 2, s.T()}) {
    std::vector<double> m1(z.numel(), 0.0), m2(z.numel(), 0.0);
    for (int i = 0; i < n; ++i) {
      const Tensor x = forward_diffuse(z, t, Tensor::randn(z.shape(), rng), s);
      for (std::size_t j = 0; j < z.numel(); ++j) {
        m1[j] += x[j];
        m2[j] += static_cast<double>(x[j]) * x[j];
      }
    }
    const double var = 1.0 - s.alpha_bar(t);
    for (std::size_t j = 0; j < z.numel(); ++j) {
      const double mean = m1[j] / n;
      const double sv = (m2[j] - n * mean * mean) / (n - 1);
      worst_sigma = std::max(worst_sigma, std::abs(mean - std::sqrt(s.alpha_bar(t)) * z[j]) / std::sqrt(var / n));
      worst_sigma = std::max(worst_sigma, std::abs(sv - var) / (var * std::sqrt(2.0 / (n - 1))));
    }
  }
  return {worst_ab < 1e-9 && worst_sigma < 4.0,
          fmt("alpha_bar_err=%.3g moment_dev=%.2f SE (t in {1,%d,%d}, n=%d)", worst_ab, worst_sigma, s.T() / 2, s.T(), n)};
}

// ---------------------------------------------------------------- 3

Outcome sampler_consistency() {
  const NoiseSchedule s = make_schedule();
  double worst = 0.0;
  for (int steps : {50, s.T()}) {
    const InferencePlan plan = make_inference_plan(s.T(), steps);
    for (std::uint64_t c = 0; c < 100; ++c) {
      std::mt19937_64 rng(300 + c);
      const Tensor z0 = Tensor::randn({4, 8, 8}, rng), eps = Tensor::randn({4, 8, 8}, rng);
      const Tensor z_T = forward_diffuse(z0, plan.timesteps.front(), eps, s);
      const Tensor out = reverse_process(zeros_like(z0), z_T, plan, s, [&](const Tensor& z, int t) {
        const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
        Tensor e(z.shape());
        for (std::size_t i = 0; i < z.numel(); ++i) e.data()[i] = static_cast<float>((z[i] - a * z0[i]) / b);
        return DenoiserOutput{e, Tensor({1, 8, 8}, 1.0f)};
      });
      worst = std::max(worst, static_cast<double>(max_abs_diff(out, z0)));
    }
  }
  // the sampler output must not depend on the confidence head
  VaeParameters vae = init_vae(31);
  vae.freeze();
  DenoiserParameters params = expand_input_conv(init_denoiser(8, 32, kLatentChannels), kLatentChannels);
  std::mt19937_64 rng(33);
  for (Tensor* w : {&params.noise_head.weight, &params.conf_head.weight}) {
    for (float& v : w->data()) v = 0.05f * std::normal_distribution<float>()(rng);
  }
  bool invariant = true;
  for (std::size_t i = 0; i < 4; ++i) {
    const ScenePair scene = render_scene_at(SceneSpec{}, i);
    SamplerConfig cfg;
    cfg.seed = i;
    const Tensor base = sample_eo(scene.sar, params, vae, s, cfg).image;
    const Tensor dummy = sample_eo(scene.sar, params, vae, s, cfg, [](DenoiserOutput& o) {
                           o.conf = Tensor(o.conf.shape(), 0.0f);
                         }).image;
    invariant = invariant && bit_equal(base, dummy);
  }
  return {worst < 1e-4 && invariant,
          fmt("oracle_max_abs_err=%.3g over 100 cases x {50, %d} steps, discard_invariant=%s", worst, s.T(),
              invariant ? "bit-exact" : "VIOLATED")};
}

// ---------------------------------------------------------------- 4

Outcome loss_degeneration() {
  std::mt19937_64 rng(40);
  const Tensor eps = Tensor::randn({4, 4, 8, 8}, rng);
  Tensor eps_hat = Tensor::randn({4, 4, 8, 8}, rng).set_requires_grad(true);
  const Tensor conf = Tensor::uniform({4, 1, 8, 8}, rng, 0.2f, 3.0f);
  LossConfig cfg;
  cfg.beta = 0.0;
  {
    Tape tape;
    tape.backward(cdiff_loss(eps, eps_hat, conf, cfg));
  }
  double worst_grad = 0.0;
  const double n = static_cast<double>(eps.numel());
  for (std::size_t i = 0; i < eps.numel(); ++i) {
    worst_grad = std::max(worst_grad, std::abs(eps_hat.grad()[i] - 2.0 * (eps_hat[i] - eps[i]) / n));
  }
  LossConfig live;
  live.beta = 1.0;
  live.stop_grad_weight = false;
  double worst_conf = 0.0;
  for (double r2 : {0.5, 1.0, 2.0, 4.0}) {
    const double c = descend_confidence(r2, live, 200, 0.1);
    worst_conf = std::max(worst_conf, std::abs(c - 1.0 / r2) * r2);
  }
  return {worst_grad <= 1e-7 && worst_conf < 0.05,
          fmt("beta0_grad_err=%.3g conf_star_rel_err=%.4f (r^2 in {0.5,1,2,4}, 200 steps)", worst_grad, worst_conf)};
}

// ---------------------------------------------------------------- 8

Outcome metric_suite() {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  std::mt19937_64 rng(80);
  const Tensor a = Tensor::uniform({3, 32, 32}, rng, 0.2f, 0.8f);
  check(std::abs(psnr(a, add_scalar(a, 0.1f)) - 20.0) < 1e-4, "psnr_offset_20dB");
  check(psnr(a, a) == kPsnrCap, "psnr_identity_cap");
  const double c1 = 0.01 * 0.01;
  const double ssim_expected = (2 * 0.2 * 0.8 + c1) / (0.2 * 0.2 + 0.8 * 0.8 + c1);
  check(std::abs(ssim(Tensor({1, 16, 16}, 0.2f), Tensor({1, 16, 16}, 0.8f)) - ssim_expected) < 1e-6, "ssim_constant");
  check(std::abs(ssim(a, a) - 1.0) < 1e-9, "ssim_identity");
  check(std::abs(scc(a, a) - 1.0) < 1e-9, "scc_self");
  check(scc_detail(a, Tensor(a.shape(), 0.5f)).degenerate, "scc_degenerate");
  const Tensor b = Tensor::uniform({3, 64, 64}, rng, 0.0f, 1.0f), c = Tensor::uniform({3, 64, 64}, rng, 0.0f, 1.0f);
  check(std::abs(scc(b, c)) < 0.05, "scc_null");
  check(std::abs(psnr(b, c) - psnr(c, b)) < 1e-9, "psnr_symmetry");
  check(std::abs(ssim(b, c) - ssim(c, b)) < 1e-9, "ssim_symmetry");
  check(std::abs(scc(b, c) - scc(c, b)) < 1e-9, "scc_symmetry");
  // degradation monotonicity
  std::vector<Tensor> refs;
  for (int i = 0; i < 8; ++i) refs.push_back(render_scene_at(SceneSpec{}, 900 + i).eo.pixels);
  double prev_p = 1e9, prev_s = 1e9;
  for (double sigma : {0.01, 0.03, 0.06, 0.1, 0.2}) {
    std::vector<double> ps, ss;
    for (const Tensor& r : refs) {
      Tensor noisy = r.clone();
      for (float& v : noisy.data()) v = std::clamp(v + static_cast<float>(sigma * std::normal_distribution<>()(rng)), 0.0f, 1.0f);
      ps.push_back(psnr(r, noisy));
      ss.push_back(ssim(r, noisy));
    }
    check(median(ps) < prev_p && median(ss) < prev_s, fmt("monotone_sigma_%.2f", sigma));
    prev_p = median(ps);
    prev_s = median(ss);
  }
  // AUROC examples
  std::vector<Tensor> masks, perfect, inverted, affine;
  for (int i = 0; i < 4; ++i) {
    Tensor m({1, 64, 64});
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) m.data()[y * 64 + x] = (x / 8 + y / 8 + i) % 3 == 0 ? 1.0f : 0.0f;
    const Tensor pooled = max_pool_mask(m, 8);
    Tensor conf = add_scalar(mul_scalar(pooled, -1.0f), 1.0f);
    for (float& v : conf.data()) v += std::uniform_real_distribution<float>(0.0f, 0.1f)(rng);
    masks.push_back(m);
    perfect.push_back(conf);
    inverted.push_back(pooled);
    affine.push_back(add_scalar(mul_scalar(conf, 2.0f), 1.0f));
  }
  check(confidence_auroc(perfect, masks) == 1.0, "auroc_perfect");
  check(confidence_auroc(inverted, masks) == 0.0, "auroc_inverted");
  check(confidence_auroc(affine, masks) == confidence_auroc(perfect, masks), "auroc_monotone_invariance");
  std::vector<double> scores(20000);
  std::vector<bool> labels(20000);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = std::normal_distribution<>()(rng);
    labels[i] = std::bernoulli_distribution(0.3)(rng);
  }
  check(std::abs(auroc(scores, labels) - 0.5) < 0.03, "auroc_null");
  std::string which;
  for (const auto& f : failed) which += " " + f;
  return {failed.empty(), failed.empty() ? "all analytic, oracle, symmetry and monotonicity checks hold"
                                         : "failed:" + which};
}

// ---------------------------------------------------------------- 5, 6, 7

struct Arm {
  std::uint64_t seed = 0;
  double beta = 1.0;
  DenoiserParameters params;
  std::vector<double> psnr;
  double median_psnr = 0.0;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
};

class Pipeline {
 public:
  Pipeline(fs::path work, Config cfg, std::vector<std::uint64_t> seeds, std::size_t eval_limit)
      : work_(std::move(work)), cfg_(std::move(cfg)), seeds_(std::move(seeds)), eval_limit_(eval_limit) {}

  void prepare() {
    if (prepared_) return;
    prepared_ = true;
    const auto t0 = Clock::now();
    manifest_ = write_dataset(cfg_.scene, cfg_.data_count, work_ / "data");
    train_ = load_split(manifest_, Split::train);
    test_ = load_split(manifest_, Split::test);
    if (eval_limit_ && test_.size() > eval_limit_) test_.resize(eval_limit_);
    std::vector<Tensor> eo;
    for (const auto& s : train_) eo.push_back(s.eo.pixels);
    log(fmt("dataset: %zu train / %zu test scenes (%.0fs)", train_.size(), test_.size(), seconds_since(t0)));

    const auto t1 = Clock::now();
    vae_ = train_vae(eo, cfg_.vae);
    for (const auto& s : test_) vae_psnr_.push_back(psnr(decode(encode_mean(s.eo.pixels, vae_), vae_), s.eo.pixels));
    log(fmt("vae: median test round-trip PSNR %.2f dB, latent scale %.4f (%.0fs)", median(vae_psnr_),
            vae_.latent_scale, seconds_since(t1)));

    // constant baseline: per-pixel mean of the training EO images
    Tensor mean_img(eo.front().shape(), 0.0f);
    for (const Tensor& img : eo) mean_img = add(mean_img, img);
    mean_img = mul_scalar(mean_img, 1.0f / static_cast<float>(eo.size()));
    for (const auto& s : test_) baseline_psnr_.push_back(psnr(mean_img, s.eo.pixels));

    latents_ = LatentDataset::build(train_, vae_);
    vae_checksum_ = checksum(vae_.parameters());
  }

  Arm& arm(std::uint64_t seed, double beta) {
    prepare();
    for (Arm& a : arms_) {
      if (a.seed == seed && a.beta == beta) return a;
    }
    Arm a;
    a.seed = seed;
    a.beta = beta;
    TrainConfig tc = cfg_.train;
    tc.seed = seed;
    tc.loss.beta = beta;
    const auto t0 = Clock::now();
    TrainState state = init_train_state(tc);
    train(state, latents_, cfg_.schedule(), tc);
    a.train_seconds = seconds_since(t0);
    a.params = state.params;
    const auto t1 = Clock::now();
    for (const auto& s : test_) {
      SamplerConfig sc;
      sc.steps = cfg_.inference_steps;
      sc.seed = sample_seed(cfg_.seed, s.id);
      a.psnr.push_back(psnr(sample_eo(s.sar, a.params, vae_, cfg_.schedule(), sc).image, s.eo.pixels));
    }
    a.eval_seconds = seconds_since(t1);
    a.median_psnr = median(a.psnr);
    log(fmt("arm seed=%llu beta=%g: median PSNR %.3f dB (train %.0fs, eval %.0fs)",
            static_cast<unsigned long long>(seed), beta, a.median_psnr, a.train_seconds, a.eval_seconds));
    arms_.push_back(std::move(a));
    return arms_.back();
  }

  Outcome end_to_end() {
    const auto t0 = Clock::now();
    prepare();
    const double base = median(baseline_psnr_), upper = median(vae_psnr_);
    bool a_ok = true, b_ok = true;
    double mean1 = 0.0, mean0 = 0.0;
    std::string per_seed;
    for (std::uint64_t seed : seeds_) {
      const double p1 = arm(seed, 1.0).median_psnr, p0 = arm(seed, 0.0).median_psnr;
      // (a) scores the C-Diff models; the MSE arm only enters (b) and (c)
      a_ok = a_ok && p1 - base >= 2.0;
      for (double p : {p1, p0}) b_ok = b_ok && p <= upper;
      mean1 += p1 / static_cast<double>(seeds_.size());
      mean0 += p0 / static_cast<double>(seeds_.size());
      per_seed += fmt(" [seed %llu: %.2f vs %.2f]", static_cast<unsigned long long>(seed), p1, p0);
    }
    const bool c_ok = mean1 >= mean0 - 0.2;
    const bool codec_frozen = checksum(vae_.parameters()) == vae_checksum_;
    double arm_budget_used = 0.0;
    for (double beta : {1.0, 0.0}) {
      double secs = 0.0;
      for (const Arm& a : arms_) {
        if (a.beta == beta) secs += a.train_seconds + a.eval_seconds;
      }
      arm_budget_used = std::max(arm_budget_used, secs);
    }
    Outcome o;
    o.pass = a_ok && b_ok && c_ok && codec_frozen && arm_budget_used <= 3600.0;
    o.detail = fmt("(a) %s beta1 vs baseline=%.2f dB, (b) %s upper=%.2f dB, (c) %s mean beta1=%.3f beta0=%.3f, vae_frozen=%s,"
                   " slowest arm %.0fs, total %.0fs;",
                   a_ok ? "ok" : "FAIL", base, b_ok ? "ok" : "FAIL", upper, c_ok ? "ok" : "FAIL", mean1, mean0,
                   codec_frozen ? "yes" : "NO", arm_budget_used, seconds_since(t0)) +
               per_seed;
    return o;
  }

  Outcome confidence_localization() {
    prepare();
    const Arm& a = arm(seeds_.front(), 1.0);
    const auto t0 = Clock::now();
    const NoiseSchedule schedule = cfg_.schedule();
    const int t = schedule.T() / 2;
    std::vector<Tensor> maps, masks;
    std::size_t from_test = 0;
    auto add_pair = [&](const ImageSample& sar, const ImageSample& eo, const Tensor& mask, const std::string& id) {
      maps.push_back(confidence_map_at(sar, eo, t, a.params, vae_, schedule, sample_seed(cfg_.seed, id)));
      masks.push_back(mask);
    };
    for (const auto& s : load_split(manifest_, Split::test)) {
      if (!s.has_discrepancy) continue;
      add_pair(s.sar, s.eo, s.mask, s.id);
      ++from_test;
    }
    // top up with unseen scenes rendered past the end of the dataset
    for (std::size_t i = cfg_.data_count; maps.size() < kLocalizationScenes; ++i) {
      const ScenePair p = render_scene_at(cfg_.scene, i);
      if (p.has_discrepancy) add_pair(p.sar, p.eo, p.mask, "heldout-" + std::to_string(i));
    }
    const double score = confidence_auroc(maps, masks);
    auto rng = make_rng(cfg_.seed, "acceptance-null");
    double null_sum = 0.0;
    const int perms = 20;
    for (int k = 0; k < perms; ++k) {
      std::vector<Tensor> shuffled = masks;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      null_sum += confidence_auroc(maps, shuffled);
    }
    const double null_auroc = null_sum / perms;
    Outcome o{score > 0.6 && std::abs(null_auroc - 0.5) <= 0.03,
              fmt("auroc=%.3f null=%.3f (mean of %d mask permutations) over %zu scenes (%zu test + %zu held-out), t=%d",
                  score, null_auroc, perms, maps.size(), from_test, maps.size() - from_test, t)};
    return within_budget(o, seconds_since(t0), 300.0);
  }

  Outcome step_sweep() {
    prepare();
    const Arm& a = arm(seeds_.front(), 1.0);
    const auto t0 = Clock::now();
    std::vector<PairedSample> subset(test_.begin(), test_.begin() + std::min<std::size_t>(test_.size(), 24));
    const auto rows = sweep_inference_steps(subset, a.params, vae_, cfg_.schedule(), {1, 5, 10, 25, 50}, cfg_.seed);
    bool monotone = true;
    std::string table;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i && rows[i].seconds_per_image <= rows[i - 1].seconds_per_image) monotone = false;
      table += fmt(" %d:%.2fdB/%.3fs", rows[i].steps, rows[i].psnr, rows[i].seconds_per_image);
    }
    const bool quality = rows.back().psnr >= rows.front().psnr;
    Outcome o{quality && monotone, fmt("psnr50>=psnr1 %s, time monotone %s;", quality ? "ok" : "FAIL",
                                       monotone ? "ok" : "FAIL") + table};
    return within_budget(o, seconds_since(t0), 600.0);
  }

  Outcome codec_quality() {
    prepare();
    return {median(vae_psnr_) > 25.0, fmt("median test round-trip PSNR %.2f dB (target > 25)", median(vae_psnr_))};
  }

  Outcome codec_probe() {
    prepare();
    std::vector<double> gap;
    for (std::size_t i = 0; i < std::min<std::size_t>(test_.size(), 32); ++i) {
      const auto rows = reconstruction_probe(test_[i].eo, vae_, {0.0, 1.0}, sample_seed(cfg_.seed, test_[i].id));
      gap.push_back(rows[0].psnr - rows[1].psnr);
    }
    return {median(gap) > 5.0, fmt("clean minus speckled (1/L = 1) round-trip PSNR %.2f dB (target > 5)", median(gap))};
  }

 private:
  static constexpr std::size_t kLocalizationScenes = 64;

  void log(const std::string& s) const { std::cout << "  .. " << s << std::endl; }

  fs::path work_;
  Config cfg_;
  std::vector<std::uint64_t> seeds_;
  std::size_t eval_limit_;
  bool prepared_ = false;
  Manifest manifest_;
  std::vector<PairedSample> train_, test_;
  VaeParameters vae_;
  std::string vae_checksum_;
  std::vector<double> vae_psnr_, baseline_psnr_;
  LatentDataset latents_;
  std::vector<Arm> arms_;
};

// ---------------------------------------------------------------- 9

int run_tool(const std::vector<std::string>& args, const fs::path& log_path) {
  std::string cmd = CDIFF_CLI_PATH;
  for (const auto& a : args) cmd += " '" + a + "'";
  cmd += " > '" + log_path.string() + "' 2>&1";
  return std::system(cmd.c_str());
}

std::map<std::string, std::string> tree_digest(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).generic_string();
    if (e.path().filename() == kRunManifestName || e.path().extension() == ".log") continue;
    out[rel] = sha256_file(e.path());
  }
  return out;
}

Outcome determinism(const fs::path& work) {
  const auto t0 = Clock::now();
  const fs::path cfg_path = work / "pipeline.cfg";
  fs::create_directories(work);
  std::ofstream(cfg_path) << "data.count = 40\nvae.epochs = 2\ntrain.iterations = 60\ntrain.warmup_steps = 6\n"
                             "train.lr = 1e-3\nmodel.base_channels = 8\ninference.steps = 10\n";
  std::vector<std::string> problems;
  std::vector<std::map<std::string, std::string>> digests;
  std::size_t manifests = 0;
  for (const char* run : {"run_a", "run_b"}) {
    const fs::path r = work / run;
    fs::remove_all(r);
    fs::create_directories(r);
    const std::string c = cfg_path.string();
    const std::vector<std::vector<std::string>> steps = {
        {"gen-data", "--config", c, "--out", (r / "data").string()},
        {"train-vae", "--config", c, "--data", (r / "data").string(), "--out", (r / "vae").string()},
        {"train-set", "--config", c, "--data", (r / "data").string(), "--vae", (r / "vae").string(), "--out",
         (r / "set").string()},
        {"sample", "--checkpoint", (r / "set").string(), "--input", (r / "data" / "sar" / "000003.pgm").string(),
         "--export-intermediate", "--dump-latent", "--out", (r / "sample").string()},
        {"eval", "--checkpoint", (r / "set").string(), "--manifest", (r / "data").string(), "--confidence-auroc",
         "--out", (r / "eval").string()},
    };
    for (const auto& args : steps) {
      const int rc = run_tool(args, r / (args.front() + ".log"));
      if (rc != 0) problems.push_back(std::string(run) + ":" + args.front() + " exited " + std::to_string(rc));
    }
    for (const char* sub : {"data", "vae", "set", "sample", "eval"}) {
      if (!fs::exists(r / sub / kRunManifestName)) {
        problems.push_back(std::string(run) + "/" + sub + " has no run manifest");
        continue;
      }
      ++manifests;
      for (const auto& bad : RunManifest::verify(r / sub)) problems.push_back(std::string(run) + "/" + sub + "/" + bad);
    }
    digests.push_back(tree_digest(r));
  }
  std::size_t differing = 0;
  for (const auto& [rel, sum] : digests[0]) {
    const auto it = digests[1].find(rel);
    if (it == digests[1].end() || it->second != sum) {
      ++differing;
      if (differing <= 3) problems.push_back("differs: " + rel);
    }
  }
  if (digests[0].size() != digests[1].size()) problems.push_back("file sets differ");
  std::string detail = fmt("%zu files compared, %zu differ, %zu manifests verified;", digests[0].size(), differing,
                           manifests);
  for (const auto& p : problems) detail += " " + p;
  return {problems.empty() && digests[0].size() > 0, detail + fmt(" (%.0fs)", seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cdiff acceptance runner"};
  fs::path work = "acceptance_work";
  std::string only;
  std::size_t seeds = 3, eval_limit = 0;
  app.add_option("--work", work, "Scratch directory (wiped)");
  app.add_option("--only", only, "Comma-separated criteria to run (default all)");
  app.add_option("--seeds", seeds, "Training seeds for the end-to-end comparison");
  app.add_option("--eval-limit", eval_limit, "Cap on scored test images (0 = whole split)");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  std::stringstream ss(only);
  for (std::string tok; std::getline(ss, tok, ',');) selected.insert(std::stoi(tok));
  auto wanted = [&](int c) { return selected.empty() || selected.contains(c); };

  fs::remove_all(work);
  fs::create_directories(work);
  Config cfg = parse_config("");
  cfg.train.lr_init = 3e-3;
  std::vector<std::uint64_t> seed_list;
  for (std::size_t i = 0; i < seeds; ++i) seed_list.push_back(kDefaultSeed + i);
  Pipeline pipeline(work / "pipeline", cfg, seed_list, eval_limit);

  bool all = true;
  auto report = [&](const std::string& label, const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << label << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
              << fmt("  [%.0fs]", seconds_since(t0)) << std::endl;
  };
  auto criterion = [&](int n, const std::function<Outcome()>& fn, double budget = 0.0) {
    if (!wanted(n)) return;
    report("criterion " + std::to_string(n), [&] {
      const auto t0 = Clock::now();
      Outcome o = fn();
      return budget > 0.0 ? within_budget(o, seconds_since(t0), budget) : o;
    });
  };

  criterion(1, autodiff_correctness, 120.0);
  criterion(2, schedule_fidelity, 60.0);
  criterion(3, sampler_consistency, 60.0);
  criterion(4, loss_degeneration, 60.0);
  criterion(5, [&] { return pipeline.end_to_end(); });
  criterion(6, [&] { return pipeline.confidence_localization(); });
  criterion(7, [&] { return pipeline.step_sweep(); });
  criterion(8, metric_suite, 60.0);
  criterion(9, [&] { return determinism(work / "determinism"); });
  if (wanted(5)) {
    report("check codec-fidelity", [&] { return pipeline.codec_quality(); });
    report("check codec-speckle-probe", [&] { return pipeline.codec_probe(); });
  }
  std::cout << (all ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL") << std::endl;
  return all ? 0 : 1;
}
