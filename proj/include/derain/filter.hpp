#pragma once

// Guided-filter family: GIF, WGIF and the improved weighted guided filter
// (iWGIF) that combines WGIF's edge-aware regularization with residual-weighted
// aggregation of the per-window linear coefficients. Every stage runs in time
// linear in the pixel count, independent of the window radius.

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "derain/image.hpp"

namespace derain::filter {

struct FilterParams {
  int zeta = 7;           // window radius
  double lambda = 1e-3;   // regularization on the slope
  double epsilon = 1e-4;  // edge-aware weighting constant
  double eta = 0.05;      // residual weighting temperature

  void validate() const {
    if (zeta < 1) throw std::invalid_argument("zeta must be >= 1");
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
    if (!(eta > 0.0)) throw std::invalid_argument("eta must be > 0");
  }
};

/// Per-pixel statistics of a guidance/input pair over clipped square windows.
struct WindowStats {
  Image mu_G, mu_I, mu_GI;
  Image var_G, var_I, cov_IG;
  Image window_count;
};

/// Slope/intercept field of the local linear model plus the weights that
/// produced and aggregate it. Fields left empty when a stage is skipped.
struct CoefficientField {
  Image a, b;
  Image gamma;
  Image w;
};

enum class Clamp { yes, no };

namespace detail {

// Summed-area table with one row/column of zero padding.
class IntegralImage {
 public:
  IntegralImage(std::span<const double> plane, int width, int height)
      : w_(width + 1), sums_(static_cast<std::size_t>(width + 1) * (height + 1), 0.0) {
    for (int y = 0; y < height; ++y) {
      double row = 0.0;
      for (int x = 0; x < width; ++x) {
        row += plane[static_cast<std::size_t>(y) * width + x];
        sums_[idx(x + 1, y + 1)] = sums_[idx(x + 1, y)] + row;
      }
    }
  }

  // Sum over [x0,x1) x [y0,y1).
  double sum(int x0, int y0, int x1, int y1) const {
    return sums_[idx(x1, y1)] - sums_[idx(x0, y1)] - sums_[idx(x1, y0)] + sums_[idx(x0, y0)];
  }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * w_ + x; }
  int w_;
  std::vector<double> sums_;
};

inline Image box_sum(const Image& img, int zeta) {
  Image out(img.width(), img.height(), img.channels());
  const int W = img.width(), H = img.height();
  for (int c = 0; c < img.channels(); ++c) {
    IntegralImage ii(img.plane(c), W, H);
    auto dst = out.plane(c);
    for (int y = 0; y < H; ++y) {
      const int y0 = std::max(0, y - zeta), y1 = std::min(H, y + zeta + 1);
      for (int x = 0; x < W; ++x) {
        const int x0 = std::max(0, x - zeta), x1 = std::min(W, x + zeta + 1);
        dst[static_cast<std::size_t>(y) * W + x] = ii.sum(x0, y0, x1, y1);
      }
    }
  }
  return out;
}

inline Image window_count(int width, int height, int zeta) {
  Image out(width, height, 1);
  for (int y = 0; y < height; ++y) {
    const int ny = std::min(height, y + zeta + 1) - std::max(0, y - zeta);
    for (int x = 0; x < width; ++x) {
      const int nx = std::min(width, x + zeta + 1) - std::max(0, x - zeta);
      out.at(x, y) = static_cast<double>(nx * ny);
    }
  }
  return out;
}

inline Image product(const Image& a, const Image& b) {
  Image out = a;
  auto d = out.data();
  auto s = b.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= s[i];
  return out;
}

inline void check_pair(const Image& I, const Image& G) {
  require_non_empty(I);
  require_non_empty(G);
  if (!I.same_shape(G)) throw std::invalid_argument("guidance/input shape mismatch");
}

}  // namespace detail

/// Mean over the window of radius `zeta` clipped to the image, normalized by
/// the number of in-bounds pixels.
inline Image box_mean(const Image& img, int zeta) {
  require_non_empty(img);
  if (zeta < 1) throw std::invalid_argument("zeta must be >= 1");
  Image out = detail::box_sum(img, zeta);
  const Image count = detail::window_count(img.width(), img.height(), zeta);
  auto n = count.data();
  for (int c = 0; c < out.channels(); ++c) {
    auto d = out.plane(c);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] /= n[i];
  }
  return out;
}

inline WindowStats window_stats(const Image& I, const Image& G, int zeta) {
  detail::check_pair(I, G);
  WindowStats s;
  s.mu_G = box_mean(G, zeta);
  s.mu_I = box_mean(I, zeta);
  s.mu_GI = box_mean(detail::product(G, I), zeta);
  const Image mu_GG = box_mean(detail::product(G, G), zeta);
  const Image mu_II = box_mean(detail::product(I, I), zeta);
  s.var_G = Image(G.width(), G.height(), G.channels());
  s.var_I = s.var_G;
  s.cov_IG = s.var_G;
  for (std::size_t i = 0; i < s.var_G.size(); ++i) {
    const double mg = s.mu_G.data()[i], mi = s.mu_I.data()[i];
    s.var_G.data()[i] = mu_GG.data()[i] - mg * mg;
    s.var_I.data()[i] = mu_II.data()[i] - mi * mi;
    s.cov_IG.data()[i] = s.mu_GI.data()[i] - mg * mi;
  }
  s.window_count = detail::window_count(G.width(), G.height(), zeta);
  return s;
}

/// Edge-aware weight from normalized 3x3 local variances of a single-channel
/// guidance. Uses the precomputed sum of reciprocals so the cost stays linear.
inline Image edge_aware_weight(const Image& G, double epsilon) {
  require_non_empty(G);
  if (G.channels() != 1) throw std::invalid_argument("edge_aware_weight expects one channel");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  const WindowStats s = window_stats(G, G, 1);
  double inv_sum = 0.0;
  for (double v : s.var_G.data()) inv_sum += 1.0 / (std::max(v, 0.0) + epsilon);
  const double M = static_cast<double>(G.plane_size());
  Image gamma(G.width(), G.height(), 1);
  for (std::size_t i = 0; i < gamma.size(); ++i)
    gamma.data()[i] = (std::max(s.var_G.data()[i], 0.0) + epsilon) * inv_sum / M;
  return gamma;
}

/// Closed-form minimizer of the edge-aware ridge cost in every window.
inline CoefficientField solve_coefficients(const WindowStats& stats, const Image& gamma,
                                           double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
  if (!gamma.same_extent(stats.mu_G)) throw std::invalid_argument("gamma shape mismatch");
  CoefficientField f;
  f.a = Image(stats.mu_G.width(), stats.mu_G.height(), stats.mu_I.channels());
  f.b = f.a;
  f.gamma = gamma;
  const std::size_t n = stats.mu_G.plane_size();
  for (int c = 0; c < f.a.channels(); ++c) {
    const int gc = stats.mu_G.channels() == 1 ? 0 : c;
    auto a = f.a.plane(c), b = f.b.plane(c);
    auto cov = stats.cov_IG.plane(c), mi = stats.mu_I.plane(c);
    auto vg = stats.var_G.plane(gc), mg = stats.mu_G.plane(gc);
    auto g = gamma.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      a[i] = gi * cov[i] / (gi * std::max(vg[i], 0.0) + lambda);
      b[i] = mi[i] - a[i] * mg[i];
    }
  }
  return f;
}

/// Mean squared fit residual of each window's linear model, evaluated from
/// window statistics alone: var_I - a^2 (var_G + 2 lambda / gamma).
inline Image residual_mse(const WindowStats& stats, const Image& a, const Image& gamma,
                          double lambda) {
  Image out(a.width(), a.height(), a.channels());
  const std::size_t n = a.plane_size();
  for (int c = 0; c < a.channels(); ++c) {
    const int gc = stats.var_G.channels() == 1 ? 0 : c;
    auto dst = out.plane(c);
    auto ap = a.plane(c), vi = stats.var_I.plane(c), vg = stats.var_G.plane(gc);
    auto g = gamma.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double r = std::max(vi[i], 0.0) -
                       ap[i] * ap[i] * (std::max(vg[i], 0.0) + 2.0 * lambda / g[i]);
      dst[i] = std::max(r, 0.0);
    }
  }
  return out;
}

inline Image aggregation_weights(const Image& residual, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be > 0");
  Image w(residual.width(), residual.height(), residual.channels());
  for (std::size_t i = 0; i < w.size(); ++i)
    w.data()[i] = std::exp(-residual.data()[i] / eta) + 0.001;
  return w;
}

namespace detail {

struct Variant {
  bool edge_aware = false;
  bool weighted_aggregation = false;
  double epsilon = 1e-4;
  double eta = 0.05;
};

// Applies the chosen filter variant. Multi-channel inputs share one slope
// field fitted on luminance; intercepts use each channel's own window mean.
inline Image run(const Image& I, const Image& G, int zeta, double lambda, const Variant& v,
                 Clamp clamp, CoefficientField* trace = nullptr) {
  check_pair(I, G);
  if (zeta < 1) throw std::invalid_argument("zeta must be >= 1");
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");

  const Image guide = luminance(G);
  const Image target = luminance(I);
  const WindowStats stats = window_stats(target, guide, zeta);
  const Image gamma = v.edge_aware ? edge_aware_weight(guide, v.epsilon)
                                   : Image(guide.width(), guide.height(), 1, 1.0);
  CoefficientField f = solve_coefficients(stats, gamma, lambda);
  f.w = v.weighted_aggregation ? aggregation_weights(residual_mse(stats, f.a, gamma, lambda), v.eta)
                               : Image(guide.width(), guide.height(), 1, 1.0);

  const Image w_sum = box_sum(f.w, zeta);
  const Image a_bar = box_sum(product(f.w, f.a), zeta);
  const std::size_t n = guide.plane_size();

  Image out(I.width(), I.height(), I.channels());
  Image b_fields(I.width(), I.height(), I.channels());
  for (int c = 0; c < I.channels(); ++c) {
    // b_c = mu_{I_c} - a * mu_G
    const Image mu_c = I.channels() == 1 ? stats.mu_I : box_mean(I.channel(c), zeta);
    auto bc = b_fields.plane(c);
    for (std::size_t i = 0; i < n; ++i) bc[i] = mu_c.data()[i] - f.a.data()[i] * stats.mu_G.data()[i];
  }
  for (int c = 0; c < I.channels(); ++c) {
    const Image wb = box_sum(product(f.w, b_fields.channel(c)), zeta);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < n; ++i) {
      const double inv = 1.0 / w_sum.data()[i];
      dst[i] = a_bar.data()[i] * inv * guide.data()[i] + wb.data()[i] * inv;
    }
  }
  if (clamp == Clamp::yes) out.clamp();
  if (trace) {
    f.b = std::move(b_fields);
    *trace = std::move(f);
  }
  return out;
}

}  // namespace detail

/// Improved weighted guided filter. `coefficients`, when given, receives the
/// slope/intercept/weight fields of the run.
inline Image iwgif(const Image& I, const Image& G, const FilterParams& params,
                   Clamp clamp = Clamp::yes, CoefficientField* coefficients = nullptr) {
  params.validate();
  return detail::run(I, G, params.zeta, params.lambda,
                     {.edge_aware = true, .weighted_aggregation = true,
                      .epsilon = params.epsilon, .eta = params.eta},
                     clamp, coefficients);
}

/// Classic guided filter: constant regularization, plain averaging.
inline Image gif(const Image& I, const Image& G, int zeta, double lambda,
                 Clamp clamp = Clamp::yes) {
  return detail::run(I, G, zeta, lambda, {}, clamp);
}

/// Weighted guided filter: edge-aware regularization, plain averaging.
inline Image wgif(const Image& I, const Image& G, int zeta, double lambda, double epsilon,
                  Clamp clamp = Clamp::yes) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  return detail::run(I, G, zeta, lambda, {.edge_aware = true, .epsilon = epsilon}, clamp);
}

struct Decomposition {
  Image base;
  Image detail;  // signed, I - base
};

/// Self-guided split of `I` into a smooth base layer and a signed detail layer.
inline Decomposition decompose(const Image& I, const FilterParams& params) {
  Decomposition d;
  d.base = iwgif(I, I, params, Clamp::no);
  d.detail = I - d.base;
  return d;
}

}  // namespace derain::filter
