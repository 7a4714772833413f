#pragma once

#include <png.h>

#include <cstdio>
#include <string>

#include "segstack/image.hpp"

namespace segstack {

// PNG I/O via libpng's simplified API. Images are 8-bit gray or RGB; score
// maps are stored as 16-bit single-channel PNGs holding round(score*65535).

inline Raster read_png(const std::string& path) {
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str()))
    fail("read_png: cannot open ", path, ": ", im.message);

  const int channels = PNG_IMAGE_PIXEL_CHANNELS(im.format) >= 3 ? 3 : 1;
  im.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Raster out(int(im.height), int(im.width), channels);
  png_color bg{0, 0, 0};
  if (!png_image_finish_read(&im, &bg, out.v.data(), 0, nullptr)) {
    png_image_free(&im);
    fail("read_png: decode failed for ", path, ": ", im.message);
  }
  return out;
}

inline void write_png(const std::string& path, const Raster& r) {
  check(r.c == 1 || r.c == 3, "write_png: unsupported channel count ", r.c);
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  im.width = png_uint_32(r.w);
  im.height = png_uint_32(r.h);
  im.format = r.c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&im, path.c_str(), 0, r.v.data(), 0, nullptr))
    fail("write_png: cannot write ", path, ": ", im.message);
}

inline void write_png_scores(const std::string& path, const ScoreMap& s) {
  std::vector<std::uint16_t> buf(s.v.size());
  for (std::size_t i = 0; i < s.v.size(); ++i) {
    const float c = std::clamp(s.v[i], 0.0f, 1.0f);
    buf[i] = std::uint16_t(std::lround(double(c) * 65535.0));
  }
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  im.width = png_uint_32(s.w);
  im.height = png_uint_32(s.h);
  im.format = PNG_FORMAT_LINEAR_Y;
  if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr))
    fail("write_png_scores: cannot write ", path, ": ", im.message);
}

inline ScoreMap read_png_scores(const std::string& path) {
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str()))
    fail("read_png_scores: cannot open ", path, ": ", im.message);
  im.format = PNG_FORMAT_LINEAR_Y;
  std::vector<std::uint16_t> buf(std::size_t(im.width) * im.height);
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&im);
    fail("read_png_scores: decode failed for ", path, ": ", im.message);
  }
  ScoreMap s(int(im.height), int(im.width));
  for (std::size_t i = 0; i < buf.size(); ++i) s.v[i] = float(buf[i]) * (1.0f / 65535.0f);
  return s;
}

}  // namespace segstack
