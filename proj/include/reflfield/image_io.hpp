#pragma once

// 8-bit PNG codec (libpng simplified API) and conversions between byte
// images, display-space colors, normal maps and masks.

#include "reflfield/core.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace reflfield::io {

/// Interleaved 8-bit pixels, rows top to bottom; channels 1 (gray), 3 (RGB) or 4 (RGBA).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::uint8_t at(std::size_t pixel, int c) const { return data[pixel * channels + c]; }
};

inline png_uint_32 format_for(int channels) {
  switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 2: return PNG_FORMAT_GA;
    case 3: return PNG_FORMAT_RGB;
    case 4: return PNG_FORMAT_RGBA;
  }
  fail("png: unsupported channel count ", channels);
}

inline void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.width < 1 || img.height < 1 || img.data.size() != img.pixel_count() * img.channels) {
    fail(path.string(), ": image buffer does not match ", img.width, "x", img.height, "x", img.channels);
  }
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = format_for(img.channels);
  if (!png_image_write_to_file(&pi, path.string().c_str(), 0, img.data.data(), 0, nullptr)) {
    const std::string msg = pi.message;
    png_image_free(&pi);
    fail(path.string(), ": cannot write PNG (", msg, ")");
  }
}

/// Reads an 8-bit PNG keeping its color/alpha layout (gray, gray+alpha,
/// RGB or RGBA); palette images expand to RGB(A).
inline Image8 read_png(const std::filesystem::path& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.string().c_str())) {
    const std::string msg = pi.message;
    png_image_free(&pi);
    fail(path.string(), ": cannot read PNG (", msg, ")");
  }
  const bool color = (pi.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (pi.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  Image8 img;
  img.width = static_cast<int>(pi.width);
  img.height = static_cast<int>(pi.height);
  img.channels = (color ? 3 : 1) + (alpha ? 1 : 0);
  pi.format = format_for(img.channels);
  img.data.resize(img.pixel_count() * img.channels);
  if (!png_image_finish_read(&pi, nullptr, img.data.data(), 0, nullptr)) {
    const std::string msg = pi.message;
    png_image_free(&pi);
    fail(path.string(), ": cannot decode PNG (", msg, ")");
  }
  return img;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Display-space colors in [0,1] to an RGB image.
inline Image8 rgb_image(int width, int height, const std::vector<Rgb>& colors) {
  Image8 img{width, height, 3, {}};
  img.data.reserve(colors.size() * 3);
  for (const auto& c : colors)
    for (int j = 0; j < 3; ++j) img.data.push_back(to_byte(c(j)));
  return img;
}

/// Channel bytes = round(255 (n + 1) / 2).
inline Image8 normal_image(int width, int height, const std::vector<Vec3>& normals) {
  Image8 img{width, height, 3, {}};
  img.data.reserve(normals.size() * 3);
  for (const auto& n : normals)
    for (int j = 0; j < 3; ++j) img.data.push_back(to_byte(0.5 * (std::clamp(n(j), -1.0, 1.0) + 1.0)));
  return img;
}

inline Image8 gray_image(int width, int height, const std::vector<double>& values) {
  Image8 img{width, height, 1, {}};
  img.data.reserve(values.size());
  for (double v : values) img.data.push_back(to_byte(v));
  return img;
}

/// Colors in [0,1]; alpha, when present, is composited over `background`.
inline std::vector<Rgb> colors_of(const Image8& img, const Rgb& background = Rgb::Ones()) {
  std::vector<Rgb> out(img.pixel_count());
  const bool color = img.channels >= 3;
  const bool alpha = img.channels == 2 || img.channels == 4;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rgb c;
    for (int j = 0; j < 3; ++j) c(j) = img.at(i, color ? j : 0) / 255.0;
    if (alpha) {
      const double a = img.at(i, img.channels - 1) / 255.0;
      c = a * c + (1.0 - a) * background;
    }
    out[i] = c;
  }
  return out;
}

inline std::vector<Vec3> normals_of(const Image8& img) {
  if (img.channels < 3) fail("normal map must have RGB channels, got ", img.channels);
  std::vector<Vec3> out(img.pixel_count());
  for (std::size_t i = 0; i < out.size(); ++i)
    for (int j = 0; j < 3; ++j) out[i](j) = 2.0 * img.at(i, j) / 255.0 - 1.0;
  return out;
}

}  // namespace reflfield::io
