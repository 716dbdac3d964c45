// SPDX-License-Identifier: Apache-2.0
#include "cdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace cdiff {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_chw(const Tensor& a, const char* what) {
  if (a.rank() != 3) throw ShapeError(std::string(what) + " expects (C,H,W), got " + shape_str(a.shape()));
}

std::vector<double> gaussian_window(std::size_t n, double sigma) {
  std::vector<double> w(n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= s;
  return w;
}

// Valid-mode separable filtering of an H x W plane.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t H, std::size_t W,
                                 const std::vector<double>& k) {
  const std::size_t n = k.size(), Wo = W - n + 1, Ho = H - n + 1;
  std::vector<double> rows(H * Wo, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < Wo; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * img[y * W + x + i];
      rows[y * Wo + x] = acc;
    }
  std::vector<double> out(Ho * Wo, 0.0);
  for (std::size_t y = 0; y < Ho; ++y)
    for (std::size_t x = 0; x < Wo; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * rows[(y + i) * Wo + x];
      out[y * Wo + x] = acc;
    }
  return out;
}

std::vector<double> plane(const Tensor& t, std::size_t c) {
  const std::size_t HW = t.dim(1) * t.dim(2);
  auto d = t.data().subspan(c * HW, HW);
  return {d.begin(), d.end()};
}

std::vector<double> laplacian_valid(const std::vector<double>& img, std::size_t H, std::size_t W) {
  std::vector<double> out((H - 2) * (W - 2));
  for (std::size_t y = 1; y + 1 < H; ++y)
    for (std::size_t x = 1; x + 1 < W; ++x) {
      out[(y - 1) * (W - 2) + (x - 1)] = 4.0 * img[y * W + x] - img[(y - 1) * W + x] - img[(y + 1) * W + x] -
                                         img[y * W + x - 1] - img[y * W + x + 1];
    }
  return out;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double peak) {
  require_same(a, b, "psnr");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.numel());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt) {
  require_same(a, b, "ssim");
  require_chw(a, "ssim");
  const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (H < opt.window || W < opt.window) {
    throw ShapeError("ssim: image " + shape_str(a.shape()) + " smaller than window " + std::to_string(opt.window));
  }
  const auto k = gaussian_window(opt.window, opt.sigma);
  const double c1 = (opt.k1 * opt.peak) * (opt.k1 * opt.peak);
  const double c2 = (opt.k2 * opt.peak) * (opt.k2 * opt.peak);
  double total = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    const auto x = plane(a, c), y = plane(b, c);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, H, W, k), my = filter_valid(y, H, W, k);
    const auto sxx = filter_valid(xx, H, W, k), syy = filter_valid(yy, H, W, k), sxy = filter_valid(xy, H, W, k);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(C);
}

SccResult scc_detail(const Tensor& a, const Tensor& b) {
  require_same(a, b, "scc");
  require_chw(a, "scc");
  const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (H < 3 || W < 3) throw ShapeError("scc needs images of at least 3x3");
  SccResult res;
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const auto la = laplacian_valid(plane(a, c), H, W);
    const auto lb = laplacian_valid(plane(b, c), H, W);
    const double n = static_cast<double>(la.size());
    const double ma = std::accumulate(la.begin(), la.end(), 0.0) / n;
    const double mb = std::accumulate(lb.begin(), lb.end(), 0.0) / n;
    double saa = 0, sbb = 0, sab = 0;
    for (std::size_t i = 0; i < la.size(); ++i) {
      saa += (la[i] - ma) * (la[i] - ma);
      sbb += (lb[i] - mb) * (lb[i] - mb);
      sab += (la[i] - ma) * (lb[i] - mb);
    }
    if (saa <= 1e-20 || sbb <= 1e-20) {
      res.degenerate = true;
      continue;
    }
    total += sab / std::sqrt(saa * sbb);
    ++used;
  }
  res.value = used == 0 ? 0.0 : total / static_cast<double>(used);
  return res;
}

Tensor max_pool_mask(const Tensor& mask, std::size_t factor) {
  if (mask.rank() != 3 || mask.dim(0) != 1) throw ShapeError("mask must be (1,H,W), got " + shape_str(mask.shape()));
  const std::size_t H = mask.dim(1), W = mask.dim(2);
  if (factor == 0 || H % factor != 0 || W % factor != 0) {
    throw ShapeError("mask " + shape_str(mask.shape()) + " not divisible by pooling factor " + std::to_string(factor));
  }
  const std::size_t h = H / factor, w = W / factor;
  Tensor out({1, h, w});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      float& o = out.data()[(y / factor) * w + x / factor];
      o = std::max(o, mask[y * W + x]);
    }
  return out;
}

double auroc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i) + 1.0 + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("auroc needs both positive and negative cells");
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double confidence_auroc(const std::vector<Tensor>& conf_maps, const std::vector<Tensor>& masks) {
  if (conf_maps.size() != masks.size() || conf_maps.empty()) {
    throw std::invalid_argument("confidence_auroc needs equally many (nonzero) maps and masks");
  }
  std::vector<double> scores;
  std::vector<bool> labels;
  for (std::size_t i = 0; i < conf_maps.size(); ++i) {
    const Tensor& c = conf_maps[i];
    if (c.rank() != 3 || c.dim(0) != 1) throw ShapeError("confidence map must be (1,h,w), got " + shape_str(c.shape()));
    if (masks[i].rank() != 3 || masks[i].dim(1) % c.dim(1) != 0) {
      throw ShapeError("mask " + shape_str(masks[i].shape()) + " incompatible with map " + shape_str(c.shape()));
    }
    const Tensor m = max_pool_mask(masks[i], masks[i].dim(1) / c.dim(1));
    if (m.shape() != c.shape()) throw ShapeError("pooled mask does not match confidence map");
    for (std::size_t j = 0; j < c.numel(); ++j) {
      scores.push_back(-static_cast<double>(c[j]));
      labels.push_back(m[j] > 0.5f);
    }
  }
  return auroc(scores, labels);
}

MetricRow MetricReport::aggregate() const {
  MetricRow all{"ALL"};
  if (rows.empty()) return all;
  for (const auto& r : rows) {
    all.psnr += r.psnr;
    all.ssim += r.ssim;
    all.scc += r.scc;
  }
  const double n = static_cast<double>(rows.size());
  all.psnr /= n;
  all.ssim /= n;
  all.scc /= n;
  return all;
}

std::string MetricReport::to_tsv() const {
  std::string out = "id\tpsnr\tssim\tscc\n";
  char buf[160];
  auto line = [&](const MetricRow& r) {
    std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\t%.6f\n", r.psnr, r.ssim, r.scc);
    out += r.id + buf;
  };
  for (const auto& r : rows) line(r);
  line(aggregate());
  if (auroc) {
    std::snprintf(buf, sizeof buf, "AUROC\t%.6f\n", *auroc);
    out += buf;
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace cdiff
