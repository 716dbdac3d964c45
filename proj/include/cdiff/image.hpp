// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "cdiff/tensor.hpp"

namespace cdiff {

enum class Modality { sar, eo };

/// Pixels (C,H,W) in [0,1]. SAR samples carry 1 (single-pol) or 4
/// (HH, HV, VH, VV) channels; EO samples carry 3.
struct ImageSample {
  Tensor pixels;
  Modality modality = Modality::eo;

  std::size_t channels() const { return pixels.dim(0); }
  std::size_t height() const { return pixels.dim(1); }
  std::size_t width() const { return pixels.dim(2); }
};

inline constexpr std::size_t kLatentDownsample = 8;

/// Throws ShapeError unless the sample is (C,H,W) with H, W divisible by 8
/// and values within [0,1].
void validate_image(const ImageSample& img);

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary 8-bit PGM (P5) for 1 channel, PPM (P6) for 3 channels.
/// Values are quantized with round(v * 255) after clamping to [0,1].
void write_pnm(const std::filesystem::path& path, const Tensor& img);
/// Reads P5/P6 (maxval <= 255) into a (C,H,W) tensor of v / maxval.
Tensor read_pnm(const std::filesystem::path& path);

}  // namespace cdiff
