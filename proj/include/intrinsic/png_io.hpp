#pragma once

// PNG raster I/O on top of libpng's simplified API. Link against PNG::PNG.

#include <png.h>

#include <cstdint>
#include <string>
#include <vector>

#include "intrinsic/errors.hpp"
#include "intrinsic/image.hpp"

namespace intrinsic {

// Reads 8-bit RGB(A) or gray PNGs; alpha is dropped.
inline Srgb8Image read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError(path, std::string("cannot decode PNG: ") + image.message);
  }
  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgba.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError(path, std::string("cannot decode PNG: ") + image.message);
  }
  Srgb8Image out{image.width, image.height, {}};
  out.data.resize(out.width * out.height * 3);
  for (std::size_t p = 0; p < out.width * out.height; ++p) {
    out.data[3 * p + 0] = rgba[4 * p + 0];
    out.data[3 * p + 1] = rgba[4 * p + 1];
    out.data[3 * p + 2] = rgba[4 * p + 2];
  }
  return out;
}

inline LinearImage read_linear_png(const std::string& path) { return srgb_to_linear(read_png(path)); }

namespace detail {

inline void write_png_raw(const std::string& path, std::size_t width, std::size_t height,
                          std::uint32_t format, const std::vector<std::uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw IoError(path, "cannot write PNG: " + message);
  }
}

}  // namespace detail

inline void write_png(const std::string& path, const Srgb8Image& raster) {
  detail::write_png_raw(path, raster.width, raster.height, PNG_FORMAT_RGB, raster.data);
}

inline void write_linear_png(const std::string& path, const LinearImage& img) {
  write_png(path, linear_to_srgb(img));
}

// Single-channel PNG, sRGB-encoded like the RGB export.
inline void write_intensity_png(const std::string& path, const IntensityMap& map) {
  std::vector<std::uint8_t> bytes(map.pixel_count());
  for (std::size_t p = 0; p < map.pixel_count(); ++p) bytes[p] = linear_to_srgb8(map(p));
  detail::write_png_raw(path, map.width(), map.height(), PNG_FORMAT_GRAY, bytes);
}

}  // namespace intrinsic
