#pragma once

// PNG (via libpng's simplified API) and binary PPM/PGM reading; PNG writing.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "derain/image.hpp"

namespace derain::io {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return e;
}

inline Image from_interleaved(const std::vector<std::uint8_t>& buf, int w, int h, int ch,
                              double scale = 1.0 / 255.0) {
  Image img(w, h, ch);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c)
        img.at(x, y, c) = buf[(static_cast<std::size_t>(y) * w + x) * ch + c] * scale;
  return img;
}

inline Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw IoError("cannot decode image " + path.string() + ": " + png.message);
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw IoError("cannot decode image " + path.string() + ": " + msg);
  }
  return from_interleaved(buf, static_cast<int>(png.width), static_cast<int>(png.height),
                          color ? 3 : 1);
}

inline std::string pnm_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      tok.push_back(ch);
      break;
    }
  }
  while (in.get(ch) && !std::isspace(static_cast<unsigned char>(ch))) tok.push_back(ch);
  return tok;
}

// Binary P6 (RGB) and P5 (gray), 8-bit only.
inline Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = pnm_token(in);
  if (magic != "P6" && magic != "P5") throw IoError("cannot decode image " + path.string() + ": not binary PPM/PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pnm_token(in));
    h = std::stoi(pnm_token(in));
    maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    throw IoError("cannot decode image " + path.string() + ": bad header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw IoError("cannot decode image " + path.string() + ": unsupported header");
  const int ch = magic == "P6" ? 3 : 1;
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * ch);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw IoError("cannot decode image " + path.string() + ": truncated data");
  return from_interleaved(buf, w, h, ch, 1.0 / maxval);
}

inline std::vector<std::uint8_t> quantize(const Image& img) {
  const int ch = img.channels();
  std::vector<std::uint8_t> buf(img.size());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < ch; ++c) {
        const double v = std::clamp(img.at(x, y, c), 0.0, 1.0);
        buf[(static_cast<std::size_t>(y) * img.width() + x) * ch + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return buf;
}

}  // namespace detail

inline bool is_image_file(const std::filesystem::path& p) {
  const auto e = detail::lower_ext(p);
  return e == ".png" || e == ".ppm" || e == ".pgm" || e == ".pnm";
}

/// Reads PNG or binary PPM/PGM into [0,1] intensities.
inline Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  const auto e = detail::lower_ext(path);
  if (e == ".png") return detail::read_png(path);
  if (e == ".ppm" || e == ".pgm" || e == ".pnm") return detail::read_pnm(path);
  throw IoError("cannot decode image " + path.string() + ": unsupported extension");
}

/// Writes an 8-bit PNG; values are clamped to [0,1] and rounded.
inline void write_png(const std::filesystem::path& path, const Image& img) {
  require_non_empty(img);
  if (img.channels() != 1 && img.channels() != 3)
    throw std::invalid_argument("write_png expects 1 or 3 channels");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const auto buf = detail::quantize(img);
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write " + path.string() + ": " + png.message);
}

}  // namespace derain::io
