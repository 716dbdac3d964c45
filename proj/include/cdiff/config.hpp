// SPDX-License-Identifier: Apache-2.0
// Flat `section.key = value` configuration with typed defaults.
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "cdiff/diffusion.hpp"
#include "cdiff/synth.hpp"
#include "cdiff/trainer.hpp"
#include "cdiff/vae.hpp"

namespace cdiff {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Config {
  std::uint64_t seed = kDefaultSeed;

  SceneSpec scene;
  std::size_t data_count = 512;
  SarNormalization sar_normalization = SarNormalization::none;

  int T = kDefaultTimesteps;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;

  int inference_steps = 50;
  double t_frac = 0.5;

  VaeTrainConfig vae;
  TrainConfig train;

  /// Propagates `seed` into the per-module configs.
  void apply_seed();
  NoiseSchedule schedule() const { return NoiseSchedule::linear(T, beta_start, beta_end); }
  /// Every key with its resolved value, sorted by key, one per line.
  std::string to_text() const;
  void validate() const;
};

Config parse_config_text(const std::string& text, const std::string& origin = "<config>");
/// Empty path gives the defaults.
Config parse_config(const std::filesystem::path& path);

}  // namespace cdiff
