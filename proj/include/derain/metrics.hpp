#pragma once

// PSNR and SSIM on [0,1] images.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "derain/image.hpp"

namespace derain::metrics {

/// PSNR with peak 1.0. Identical inputs yield +infinity.
inline double psnr(const Image& a, const Image& b) {
  require_non_empty(a);
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(static_cast<double>(a.size()) / se);
}

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(size);
  const int r = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    k[i] = std::exp(-(i - r) * (i - r) / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable filtering keeping only positions where the window fits.
inline std::vector<double> filter_valid(std::span<const double> src, int w, int h,
                                        const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace detail

/// Mean SSIM over all fully-contained Gaussian windows; color inputs are
/// compared on luminance.
inline double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {}) {
  require_non_empty(a);
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  if (a.width() < cfg.window || a.height() < cfg.window)
    throw std::invalid_argument("ssim: image too small");
  const Image x = luminance(a), y = luminance(b);
  const int w = x.width(), h = x.height();
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x.data()[i] * x.data()[i];
    yy[i] = y.data()[i] * y.data()[i];
    xy[i] = x.data()[i] * y.data()[i];
  }
  const auto k = detail::gaussian_kernel(cfg.window, cfg.sigma);
  const auto mx = detail::filter_valid(x.data(), w, h, k);
  const auto my = detail::filter_valid(y.data(), w, h, k);
  const auto sxx = detail::filter_valid(xx, w, h, k);
  const auto syy = detail::filter_valid(yy, w, h, k);
  const auto sxy = detail::filter_valid(xy, w, h, k);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cxy = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + cfg.c1) * (2.0 * cxy + cfg.c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + cfg.c1) * (vx + vy + cfg.c2));
  }
  return total / static_cast<double>(mx.size());
}

struct MetricRow {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> per_image;
  double mean_psnr_db = 0.0;
  double mean_ssim = 0.0;

  void add(MetricRow row) {
    per_image.push_back(std::move(row));
    double p = 0.0, s = 0.0;
    for (const auto& r : per_image) {
      p += r.psnr_db;
      s += r.ssim;
    }
    mean_psnr_db = p / static_cast<double>(per_image.size());
    mean_ssim = s / static_cast<double>(per_image.size());
  }
};

inline std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

/// CSV with header `name,psnr_db,ssim` and one row per image. Means are not
/// part of the table; they are recomputed from the rows by readers.
inline std::string to_csv(const MetricReport& r) {
  std::ostringstream os;
  os << "name,psnr_db,ssim\n";
  for (const auto& row : r.per_image)
    os << row.name << ',' << format_metric(row.psnr_db) << ',' << format_metric(row.ssim) << '\n';
  return os.str();
}

}  // namespace derain::metrics
