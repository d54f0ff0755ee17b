#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace derain {

/// Planar floating-point image. Channels are stored one after another, each
/// channel row-major. Values are nominally in [0,1]; signed layers (detail,
/// residuals) reuse the same container without clamping.
class Image {
 public:
  Image() = default;

  Image(int width, int height, int channels = 1, double fill = 0.0)
      : width_(width), height_(height), channels_(channels) {
    if (width < 0 || height < 0 || channels < 0)
      throw std::invalid_argument("negative image dimension");
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(width_) * height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  std::span<double> plane(int c) {
    return std::span<double>(data_).subspan(c * plane_size(), plane_size());
  }
  std::span<const double> plane(int c) const {
    return std::span<const double>(data_).subspan(c * plane_size(), plane_size());
  }

  bool same_shape(const Image& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }
  bool same_extent(const Image& o) const { return width_ == o.width_ && height_ == o.height_; }

  /// Single-channel copy of channel `c`.
  Image channel(int c) const {
    Image out(width_, height_, 1);
    auto src = plane(c);
    std::copy(src.begin(), src.end(), out.data_.begin());
    return out;
  }

  void set_channel(int c, const Image& src) {
    if (!same_extent(src) || src.channels() != 1)
      throw std::invalid_argument("set_channel: extent mismatch");
    std::copy(src.data_.begin(), src.data_.end(), plane(c).begin());
  }

  void clamp(double lo = 0.0, double hi = 1.0) {
    for (auto& v : data_) v = std::clamp(v, lo, hi);
  }

  Image clamped(double lo = 0.0, double hi = 1.0) const {
    Image out = *this;
    out.clamp(lo, hi);
    return out;
  }

  Image crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || w < 0 || h < 0 || x0 + w > width_ || y0 + h > height_)
      throw std::out_of_range("crop window outside image");
    Image out(w, h, channels_);
    for (int c = 0; c < channels_; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(x, y, c) = at(x0 + x, y0 + y, c);
    return out;
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

inline void require_non_empty(const Image& img) {
  if (img.width() < 1 || img.height() < 1 || img.channels() < 1)
    throw std::invalid_argument("empty image");
}

/// ITU-R BT.601 luma. Single-channel images are returned unchanged.
inline Image luminance(const Image& img) {
  if (img.channels() == 1) return img;
  if (img.channels() != 3) throw std::invalid_argument("luminance expects 1 or 3 channels");
  Image out(img.width(), img.height(), 1);
  auto r = img.plane(0), g = img.plane(1), b = img.plane(2);
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  return out;
}

/// Replicates a gray image into three channels; three-channel input is copied.
inline Image to_rgb(const Image& img) {
  if (img.channels() == 3) return img;
  if (img.channels() != 1) throw std::invalid_argument("to_rgb expects 1 or 3 channels");
  Image out(img.width(), img.height(), 3);
  for (int c = 0; c < 3; ++c) out.set_channel(c, img);
  return out;
}

inline Image operator-(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("image shape mismatch");
  Image out = a;
  auto d = out.data();
  auto s = b.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] -= s[i];
  return out;
}

inline Image operator+(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("image shape mismatch");
  Image out = a;
  auto d = out.data();
  auto s = b.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  return out;
}

inline double mean_abs(const Image& img) {
  double s = 0.0;
  for (double v : img.data()) s += std::abs(v);
  return img.empty() ? 0.0 : s / static_cast<double>(img.size());
}

}  // namespace derain
