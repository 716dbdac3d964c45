// SPDX-License-Identifier: Apache-2.0
// Full-reference image metrics and confidence-map scoring.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cdiff/tensor.hpp"

namespace cdiff {

/// Reported when the two images are identical.
inline constexpr double kPsnrCap = 100.0;

double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

/// Gaussian-weighted SSIM over valid window positions, averaged over
/// channels. Inputs are (C,H,W).
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt = {});

struct SccResult {
  double value = 0.0;
  bool degenerate = false;  // some channel had a zero-variance high-pass field
};

/// Pearson correlation of 3x3 Laplacian responses (valid region), averaged
/// over channels whose responses have nonzero variance in both images.
SccResult scc_detail(const Tensor& a, const Tensor& b);
inline double scc(const Tensor& a, const Tensor& b) { return scc_detail(a, b).value; }

/// AUROC of score = -conf for predicting mask membership. conf_maps are
/// (1,h,w); masks are (1,H,W) and are max-pooled down to (h,w).
double confidence_auroc(const std::vector<Tensor>& conf_maps, const std::vector<Tensor>& masks);

/// Max-pools a (1,H,W) mask by an integer factor.
Tensor max_pool_mask(const Tensor& mask, std::size_t factor);

/// Mann-Whitney AUROC with average ranks for ties.
double auroc(const std::vector<double>& scores, const std::vector<bool>& labels);

struct MetricRow {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
  double scc = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::optional<double> auroc;

  MetricRow aggregate() const;
  /// Header `id\tpsnr\tssim\tscc`, one line per row, then `ALL`, then
  /// `AUROC` when present.
  std::string to_tsv() const;
};

double median(std::vector<double> values);

}  // namespace cdiff
