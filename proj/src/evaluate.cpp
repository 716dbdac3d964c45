// SPDX-License-Identifier: Apache-2.0
#include "cdiff/evaluate.hpp"

#include <cmath>
#include <fstream>

namespace cdiff {

void Checkpoint::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  denoiser.save(dir / "denoiser");
  vae.save(dir / "vae");
  std::ofstream(dir / "config.txt", std::ios::trunc) << config.to_text();
}

Checkpoint Checkpoint::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("checkpoint directory " + dir.string() + " does not exist");
  Checkpoint c;
  c.config = parse_config(dir / "config.txt");
  c.denoiser = DenoiserParameters::load(dir / "denoiser");
  c.vae = VaeParameters::load(dir / "vae");
  return c;
}

MetricReport evaluate_manifest(const Manifest& manifest, const Checkpoint& ckpt, const EvalOptions& opt,
                               std::vector<Tensor>* predictions) {
  std::vector<PairedSample> test = load_split(manifest, Split::test, opt.norm);
  if (test.empty()) throw std::invalid_argument("evaluate_manifest: test split is empty");
  if (opt.limit && test.size() > opt.limit) test.resize(opt.limit);
  const NoiseSchedule schedule = ckpt.config.schedule();

  MetricReport report;
  report.rows.resize(test.size());
  std::vector<Tensor> preds(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const PairedSample& s = test[i];
    SamplerConfig cfg;
    cfg.steps = opt.steps;
    cfg.seed = sample_seed(opt.seed, s.id);
    preds[i] = sample_eo(s.sar, ckpt.denoiser, ckpt.vae, schedule, cfg).image;
    report.rows[i] = {s.id, psnr(preds[i], s.eo.pixels), ssim(preds[i], s.eo.pixels), scc(preds[i], s.eo.pixels)};
  }
  if (opt.confidence_auroc) {
    const int t = std::max(1, static_cast<int>(std::lround(opt.t_frac * schedule.T())));
    std::vector<Tensor> maps, masks;
    for (const PairedSample& s : test) {
      if (!s.mask.defined()) continue;
      maps.push_back(confidence_map_at(s.sar, s.eo, t, ckpt.denoiser, ckpt.vae, schedule, sample_seed(opt.seed, s.id)));
      masks.push_back(s.mask);
    }
    if (maps.empty()) throw std::invalid_argument("confidence AUROC requested but the manifest has no masks");
    report.auroc = confidence_auroc(maps, masks);
  }
  if (predictions) *predictions = std::move(preds);
  return report;
}

}  // namespace cdiff
