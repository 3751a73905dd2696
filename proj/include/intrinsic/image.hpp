#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "intrinsic/errors.hpp"

namespace intrinsic {

// Row-major, channel-interleaved raster of doubles. Coordinates are
// (x = column, y = row) with the origin in the top-left corner.
template <std::size_t Channels>
class Image {
 public:
  static constexpr std::size_t channels = Channels;
  using Pixel = std::array<double, Channels>;

  Image() = default;

  Image(std::size_t width, std::size_t height, double fill = 0.0)
      : width_(width), height_(height), data_(checked_size(width, height), fill) {}

  Image(std::size_t width, std::size_t height, std::vector<double> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != checked_size(width, height)) {
      throw ArgumentError("image data length does not match dimensions");
    }
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept { return width_ * height_; }
  bool empty() const noexcept { return data_.empty(); }

  double& at(std::size_t x, std::size_t y, std::size_t c = 0) {
    return data_[(y * width_ + x) * Channels + c];
  }
  double at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return data_[(y * width_ + x) * Channels + c];
  }

  // Linear pixel index p = y * width + x.
  double& operator()(std::size_t p, std::size_t c = 0) { return data_[p * Channels + c]; }
  double operator()(std::size_t p, std::size_t c = 0) const { return data_[p * Channels + c]; }

  Pixel pixel(std::size_t p) const {
    Pixel out;
    for (std::size_t c = 0; c < Channels; ++c) out[c] = data_[p * Channels + c];
    return out;
  }
  Pixel pixel(std::size_t x, std::size_t y) const { return pixel(y * width_ + x); }

  void set_pixel(std::size_t p, const Pixel& v) {
    for (std::size_t c = 0; c < Channels; ++c) data_[p * Channels + c] = v[c];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(std::size_t w, std::size_t h) const noexcept { return w == width_ && h == height_; }
  template <std::size_t D>
  bool same_shape(const Image<D>& other) const noexcept {
    return same_shape(other.width(), other.height());
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  static std::size_t checked_size(std::size_t width, std::size_t height) {
    if (width == 0 || height == 0) throw ArgumentError("image dimensions must be at least 1x1");
    return width * height * Channels;
  }

  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> data_;
};

using LinearImage = Image<3>;
using IntensityMap = Image<1>;
using Rgb = std::array<double, 3>;

// 8-bit sRGB-encoded RGB raster as decoded from / written to disk.
struct Srgb8Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;  // RGB interleaved

  friend bool operator==(const Srgb8Image&, const Srgb8Image&) = default;
};

template <std::size_t C>
void require_same_shape(const Image<C>& a, std::size_t w, std::size_t h, const char* what) {
  if (!a.same_shape(w, h)) throw ArgumentError(std::string(what) + ": image dimensions do not match");
}

// ---------------------------------------------------------------------------
// sRGB transfer functions

inline double srgb_decode(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline double srgb_encode(double v) {
  return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

inline const std::array<double, 256>& srgb_decode_table() {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) t[i] = srgb_decode(i / 255.0);
    return t;
  }();
  return table;
}

inline std::uint8_t linear_to_srgb8(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(srgb_encode(clamped) * 255.0));
}

inline LinearImage srgb_to_linear(const Srgb8Image& raster) {
  if (raster.data.size() != raster.width * raster.height * 3) {
    throw ArgumentError("sRGB raster data length does not match dimensions");
  }
  const auto& table = srgb_decode_table();
  LinearImage out(raster.width, raster.height);
  auto dst = out.data();
  for (std::size_t i = 0; i < raster.data.size(); ++i) dst[i] = table[raster.data[i]];
  return out;
}

// Values are clamped to [0,1] here and only here.
inline Srgb8Image linear_to_srgb(const LinearImage& img) {
  Srgb8Image out{img.width(), img.height(), {}};
  out.data.resize(img.data().size());
  auto src = img.data();
  for (std::size_t i = 0; i < src.size(); ++i) out.data[i] = linear_to_srgb8(src[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Channel reductions and expansions

inline IntensityMap mean_intensity(const LinearImage& img) {
  IntensityMap out(img.width(), img.height());
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    out(p) = (img(p, 0) + img(p, 1) + img(p, 2)) / 3.0;
  }
  return out;
}

inline LinearImage replicate_channels(const IntensityMap& map) {
  LinearImage out(map.width(), map.height());
  for (std::size_t p = 0; p < map.pixel_count(); ++p) {
    out(p, 0) = out(p, 1) = out(p, 2) = map(p);
  }
  return out;
}

template <std::size_t C>
Image<C> mirror_horizontal(const Image<C>& img) {
  Image<C> out(img.width(), img.height());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      for (std::size_t c = 0; c < C; ++c) out.at(img.width() - 1 - x, y, c) = img.at(x, y, c);
    }
  }
  return out;
}

template <std::size_t C>
std::pair<double, double> value_range(const Image<C>& img) {
  auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
  return {*lo, *hi};
}

// ---------------------------------------------------------------------------
// Resampling

namespace detail {

struct AxisTap {
  std::size_t i0;
  std::size_t i1;
  double t;  // weight of i1
};

// Half-pixel-centred sample positions, clamped at the borders.
inline std::vector<AxisTap> bilinear_taps(std::size_t src, std::size_t dst) {
  std::vector<AxisTap> taps(dst);
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t i = 0; i < dst; ++i) {
    double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, src - 1);
    taps[i] = {i0, i1, s - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

template <std::size_t C>
Image<C> resize_bilinear(const Image<C>& img, std::size_t new_w, std::size_t new_h) {
  if (new_w == 0 || new_h == 0) throw ArgumentError("resize_bilinear: target dimensions must be >= 1");
  const auto xt = detail::bilinear_taps(img.width(), new_w);
  const auto yt = detail::bilinear_taps(img.height(), new_h);

  // Horizontal pass into a new_w x src_h buffer, then vertical.
  Image<C> tmp(new_w, img.height());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < new_w; ++x) {
      const auto& t = xt[x];
      for (std::size_t c = 0; c < C; ++c) {
        tmp.at(x, y, c) = (1.0 - t.t) * img.at(t.i0, y, c) + t.t * img.at(t.i1, y, c);
      }
    }
  }
  Image<C> out(new_w, new_h);
  for (std::size_t y = 0; y < new_h; ++y) {
    const auto& t = yt[y];
    for (std::size_t x = 0; x < new_w; ++x) {
      for (std::size_t c = 0; c < C; ++c) {
        out.at(x, y, c) = (1.0 - t.t) * tmp.at(x, t.i0, c) + t.t * tmp.at(x, t.i1, c);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Colour spaces

// CIELab (D65) from linear sRGB primaries. L in [0,100].
inline Rgb linear_rgb_to_lab(const Rgb& rgb) {
  const double x = 0.4124564 * rgb[0] + 0.3575761 * rgb[1] + 0.1804375 * rgb[2];
  const double y = 0.2126729 * rgb[0] + 0.7151522 * rgb[1] + 0.0721750 * rgb[2];
  const double z = 0.0193339 * rgb[0] + 0.1191920 * rgb[1] + 0.9503041 * rgb[2];
  constexpr double xn = 0.95047, yn = 1.0, zn = 1.08883;
  auto f = [](double t) {
    constexpr double d = 6.0 / 29.0;
    return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
  };
  const double fx = f(x / xn), fy = f(y / yn), fz = f(z / zn);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

// HSV components in [0,1] (hue wraps) to sRGB-encoded RGB in [0,1].
inline Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double h6 = h * 6.0;
  const int sector = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace intrinsic
