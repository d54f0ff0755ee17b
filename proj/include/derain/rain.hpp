#pragma once

// Additive rain model, synthetic streak/scene generation and paired-dataset
// ingestion.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "derain/image.hpp"
#include "derain/io.hpp"
#include "derain/rng.hpp"

namespace derain::rain {

struct StreakParams {
  int count = 60;
  double angle_deg = 10.0;  // mean fall angle from vertical
  double angle_jitter_deg = 5.0;
  double length_px = 14.0;
  double length_jitter_px = 5.0;
  double width_px = 1.2;
  double intensity = 0.5;
  std::uint64_t seed = 7;

  void validate() const {
    if (count < 0) throw std::invalid_argument("streak count must be >= 0");
    if (!(intensity >= 0.0 && intensity <= 1.0))
      throw std::invalid_argument("streak intensity must be in [0,1]");
    if (angle_jitter_deg < 0.0 || length_jitter_px < 0.0)
      throw std::invalid_argument("streak jitter must be >= 0");
    if (!(length_px > 0.0) || !(width_px > 0.0))
      throw std::invalid_argument("streak length and width must be > 0");
  }
};

struct PairedSample {
  std::string name;
  Image rainy;
  Image clean;
};

/// I = clamp(B + S). A single-channel streak map is added to every channel.
inline Image compose_rainy(const Image& B, const Image& S) {
  require_non_empty(B);
  if (!B.same_extent(S) || (S.channels() != 1 && S.channels() != B.channels()))
    throw std::invalid_argument("background/streak shape mismatch");
  Image I = B;
  for (int c = 0; c < B.channels(); ++c) {
    auto dst = I.plane(c);
    auto s = S.plane(S.channels() == 1 ? 0 : c);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::clamp(dst[i] + s[i], 0.0, 1.0);
  }
  return I;
}

/// Renders `count` straight streaks with a Gaussian cross-section into a
/// single-channel non-negative map. Overlaps combine by maximum, so the map
/// never exceeds `intensity`.
inline Image synth_streaks(int width, int height, const StreakParams& p) {
  p.validate();
  Image S(width, height, 1);
  Rng rng(p.seed);
  const double sigma = 0.5 * p.width_px;
  const double reach = 3.0 * sigma + 0.5;
  for (int k = 0; k < p.count; ++k) {
    const double cx = uniform(rng, -0.1 * width, 1.1 * width);
    const double cy = uniform(rng, -0.1 * height, 1.1 * height);
    const double theta =
        (p.angle_deg + p.angle_jitter_deg * uniform(rng, -1.0, 1.0)) * std::numbers::pi / 180.0;
    const double len = std::max(1.0, p.length_px + p.length_jitter_px * uniform(rng, -1.0, 1.0));
    const double amp = p.intensity * uniform(rng, 0.7, 1.0);
    const double dx = std::sin(theta), dy = std::cos(theta);
    const double x0 = cx - 0.5 * len * dx, y0 = cy - 0.5 * len * dy;
    const double x1 = cx + 0.5 * len * dx, y1 = cy + 0.5 * len * dy;

    const int bx0 = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - reach)));
    const int bx1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(x0, x1) + reach)));
    const int by0 = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - reach)));
    const int by1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(y0, y1) + reach)));
    for (int y = by0; y <= by1; ++y)
      for (int x = bx0; x <= bx1; ++x) {
        // distance from the pixel center to the segment
        const double px = x - x0, py = y - y0;
        const double t = std::clamp(px * dx + py * dy, 0.0, len);
        const double ex = px - t * dx, ey = py - t * dy;
        const double d2 = ex * ex + ey * ey;
        if (d2 > reach * reach) continue;
        const double v = amp * std::exp(-d2 / (2.0 * sigma * sigma));
        double& dst = S.at(x, y);
        dst = std::max(dst, v);
      }
  }
  return S;
}

/// Smooth toy scene: a color gradient, a few soft-edged blobs and boxes, and
/// low-frequency shading. Deterministic in `seed`.
inline Image synth_scene(int width, int height, std::uint64_t seed) {
  Rng rng(seed);
  Image B(width, height, 3);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = uniform(rng, 0.1, 0.6);
    c1[c] = uniform(rng, 0.1, 0.6);
  }
  const double gdir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double gx = std::cos(gdir), gy = std::sin(gdir);
  const double fx = uniform(rng, 0.5, 2.0), fy = uniform(rng, 0.5, 2.0);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = x / static_cast<double>(std::max(1, width - 1));
      const double v = y / static_cast<double>(std::max(1, height - 1));
      const double t = std::clamp(0.5 + 0.5 * ((u - 0.5) * gx + (v - 0.5) * gy) * 2.0, 0.0, 1.0);
      const double shade =
          0.06 * std::sin(2.0 * std::numbers::pi * (fx * u + fy * v) + phase);
      for (int c = 0; c < 3; ++c) B.at(x, y, c) = (1.0 - t) * c0[c] + t * c1[c] + shade;
    }

  const int shapes = 3 + static_cast<int>(uniform_index(rng, 3));
  for (int k = 0; k < shapes; ++k) {
    const bool box = uniform01(rng) < 0.5;
    const double cx = uniform(rng, 0.0, width), cy = uniform(rng, 0.0, height);
    const double rx = uniform(rng, 0.08, 0.3) * width, ry = uniform(rng, 0.08, 0.3) * height;
    const double soft = uniform(rng, 1.0, 3.0);
    double col[3];
    for (double& v : col) v = uniform(rng, 0.05, 0.7);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double d;  // signed distance-like value, negative inside
        if (box) {
          d = std::max(std::abs(x - cx) - rx, std::abs(y - cy) - ry);
        } else {
          const double nx = (x - cx) / rx, ny = (y - cy) / ry;
          d = (std::sqrt(nx * nx + ny * ny) - 1.0) * std::min(rx, ry);
        }
        const double alpha = 1.0 / (1.0 + std::exp(d / soft));
        for (int c = 0; c < 3; ++c) B.at(x, y, c) = (1.0 - alpha) * B.at(x, y, c) + alpha * col[c];
      }
  }
  B.clamp();
  return B;
}

/// Clean scene plus streaks. Both generators are seeded from `seed`.
inline PairedSample synth_pair(int width, int height, const StreakParams& streaks,
                               std::uint64_t seed, std::string name = {}) {
  PairedSample s;
  s.name = std::move(name);
  s.clean = synth_scene(width, height, seed);
  StreakParams sp = streaks;
  sp.seed = streaks.seed ^ (seed * 0x9E3779B97F4A7C15ULL);
  s.rainy = compose_rainy(s.clean, synth_streaks(width, height, sp));
  return s;
}

struct PairingRule {
  // When set, a trailing "_<digits>" is removed from the rainy stem before
  // looking up the clean file (Rain1400-style "x_1.png" -> "x.png").
  bool strip_numeric_suffix = false;
};

namespace detail {

inline std::string clean_stem(std::string stem, const PairingRule& rule) {
  if (!rule.strip_numeric_suffix) return stem;
  const auto us = stem.rfind('_');
  if (us == std::string::npos || us + 1 == stem.size()) return stem;
  if (!std::all_of(stem.begin() + static_cast<long>(us) + 1, stem.end(),
                   [](unsigned char ch) { return std::isdigit(ch); }))
    return stem;
  return stem.substr(0, us);
}

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw io::IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && io::is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  return files;
}

}  // namespace detail

/// Loads every rainy image and its clean counterpart, ordered by filename.
inline std::vector<PairedSample> load_pairs(const std::filesystem::path& rainy_dir,
                                            const std::filesystem::path& clean_dir,
                                            const PairingRule& rule = {}) {
  const auto rainy_files = detail::list_images(rainy_dir);
  std::map<std::string, std::filesystem::path> clean_by_stem;
  for (const auto& p : detail::list_images(clean_dir)) clean_by_stem.emplace(p.stem().string(), p);

  std::vector<PairedSample> out;
  out.reserve(rainy_files.size());
  for (const auto& rp : rainy_files) {
    const auto it = clean_by_stem.find(detail::clean_stem(rp.stem().string(), rule));
    if (it == clean_by_stem.end())
      throw io::IoError("no clean counterpart for " + rp.filename().string());
    PairedSample s;
    s.name = rp.filename().string();
    s.rainy = io::read_image(rp);
    s.clean = io::read_image(it->second);
    if (!s.rainy.same_shape(s.clean))
      throw io::IoError("rainy/clean shape mismatch for " + s.name);
    out.push_back(std::move(s));
  }
  return out;
}

/// Same random window from both images of a pair.
inline PairedSample random_crop(const PairedSample& sample, int size, Rng& rng) {
  const int W = sample.rainy.width(), H = sample.rainy.height();
  if (W < size || H < size) throw std::invalid_argument("image smaller than crop size");
  const int x0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(W - size + 1)));
  const int y0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(H - size + 1)));
  return {sample.name, sample.rainy.crop(x0, y0, size, size), sample.clean.crop(x0, y0, size, size)};
}

}  // namespace derain::rain
