// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "cdiff/config.hpp"
#include "cdiff/denoiser.hpp"
#include "cdiff/metrics.hpp"
#include "cdiff/sampler.hpp"
#include "cdiff/vae.hpp"

namespace cdiff {

/// Self-contained inference bundle: `denoiser/`, `vae/` and `config.txt`.
struct Checkpoint {
  DenoiserParameters denoiser;
  VaeParameters vae;
  Config config;

  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);
};

struct EvalOptions {
  int steps = 50;
  std::uint64_t seed = kDefaultSeed;
  bool confidence_auroc = false;
  double t_frac = 0.5;
  std::size_t limit = 0;  // 0 = whole test split
  SarNormalization norm = SarNormalization::none;
};

/// Samples every test pair with a per-id noise seed and scores it against
/// the EO reference. Rows follow manifest order.
MetricReport evaluate_manifest(const Manifest& manifest, const Checkpoint& ckpt, const EvalOptions& opt,
                               std::vector<Tensor>* predictions = nullptr);

}  // namespace cdiff
