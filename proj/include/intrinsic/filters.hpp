#pragma once

// Edge-aware smoothing of an input image p under a guidance image I:
// q_i = sum_j W_ij(I) p_j with joint bilateral or guided-filter weights.
// Guidance intensities are measured on a 0-255 scale, which is the scale the
// range parameters (sigma_r, epsilon) refer to.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "intrinsic/errors.hpp"
#include "intrinsic/image.hpp"
#include "intrinsic/parallel.hpp"

namespace intrinsic {

inline constexpr double kGuidanceScale = 255.0;

struct BilateralParams {
  double sigma_s = 28.0;  // pixels
  double sigma_r = 15.0;  // 0-255 intensity units

  static BilateralParams flat_guidance() { return {28.0, 15.0}; }
  static BilateralParams self_guidance() { return {22.0, 20.0}; }
};

struct GuidedParams {
  std::size_t radius = 45;  // window half-width in pixels
  double epsilon = 3.0;     // squared 0-255 intensity units

  static GuidedParams flat_guidance() { return {45, 3.0}; }
  static GuidedParams self_guidance() { return {7, 52.0}; }
};

inline void validate(const BilateralParams& p) {
  if (!(p.sigma_s > 0.0) || !(p.sigma_r > 0.0) || !std::isfinite(p.sigma_s) || !std::isfinite(p.sigma_r)) {
    throw ArgumentError("bilateral sigmas must be finite and > 0");
  }
}

inline void validate(const GuidedParams& p) {
  if (p.radius < 1) throw ArgumentError("guided filter radius must be >= 1");
  if (!(p.epsilon >= 0.0) || !std::isfinite(p.epsilon)) throw ArgumentError("guided filter epsilon must be >= 0");
}

inline std::size_t bilateral_radius(const BilateralParams& p) {
  return static_cast<std::size_t>(std::ceil(3.0 * p.sigma_s));
}

// ---------------------------------------------------------------------------
// Joint bilateral filter

namespace detail {

inline std::vector<double> bilateral_spatial_table(const BilateralParams& params) {
  const auto radius = static_cast<std::ptrdiff_t>(bilateral_radius(params));
  const std::size_t side = 2 * static_cast<std::size_t>(radius) + 1;
  std::vector<double> table(side * side);
  const double inv = 1.0 / (params.sigma_s * params.sigma_s);
  for (std::ptrdiff_t dy = -radius; dy <= radius; ++dy) {
    for (std::ptrdiff_t dx = -radius; dx <= radius; ++dx) {
      table[(dy + radius) * side + (dx + radius)] = std::exp(-static_cast<double>(dx * dx + dy * dy) * inv);
    }
  }
  return table;
}

// Unnormalised weights around (x, y); clipped to the image.
struct BilateralWindow {
  std::size_t x0, y0, x1, y1;  // inclusive bounds
  std::vector<double> weights;
  double sum = 0.0;
};

inline void bilateral_window(const LinearImage& guidance, std::size_t x, std::size_t y, const BilateralParams& params,
                             const std::vector<double>& spatial, BilateralWindow& win) {
  const std::size_t radius = bilateral_radius(params);
  const std::size_t side = 2 * radius + 1;
  const double range_inv = kGuidanceScale * kGuidanceScale / (params.sigma_r * params.sigma_r);
  win.x0 = x >= radius ? x - radius : 0;
  win.y0 = y >= radius ? y - radius : 0;
  win.x1 = std::min(guidance.width() - 1, x + radius);
  win.y1 = std::min(guidance.height() - 1, y + radius);
  win.weights.resize((win.x1 - win.x0 + 1) * (win.y1 - win.y0 + 1));
  win.sum = 0.0;
  const Rgb gi = guidance.pixel(x, y);
  std::size_t k = 0;
  for (std::size_t yy = win.y0; yy <= win.y1; ++yy) {
    const double* srow = &spatial[(yy + radius - y) * side];
    for (std::size_t xx = win.x0; xx <= win.x1; ++xx, ++k) {
      const double d0 = guidance.at(xx, yy, 0) - gi[0];
      const double d1 = guidance.at(xx, yy, 1) - gi[1];
      const double d2 = guidance.at(xx, yy, 2) - gi[2];
      const double w = srow[xx + radius - x] * std::exp(-(d0 * d0 + d1 * d1 + d2 * d2) * range_inv);
      win.weights[k] = w;
      win.sum += w;
    }
  }
}

}  // namespace detail

// Normalised weights W_ij for output pixel (x, y), row-major over the clipped
// window [x0..x1] x [y0..y1].
struct BilateralWeights {
  std::size_t x0, y0, x1, y1;
  std::vector<double> weights;
};

inline BilateralWeights bilateral_weights_at(const LinearImage& guidance, std::size_t x, std::size_t y,
                                             const BilateralParams& params) {
  validate(params);
  const auto spatial = detail::bilateral_spatial_table(params);
  detail::BilateralWindow win;
  detail::bilateral_window(guidance, x, y, params, spatial, win);
  for (double& w : win.weights) w /= win.sum;
  return {win.x0, win.y0, win.x1, win.y1, std::move(win.weights)};
}

template <std::size_t C>
Image<C> joint_bilateral(const Image<C>& input, const LinearImage& guidance, const BilateralParams& params,
                         std::size_t jobs = 1) {
  validate(params);
  require_same_shape(input, guidance.width(), guidance.height(), "joint_bilateral");
  const auto spatial = detail::bilateral_spatial_table(params);
  Image<C> out(input.width(), input.height());
  parallel_for(input.height(), jobs, [&](std::size_t y) {
    detail::BilateralWindow win;
    for (std::size_t x = 0; x < input.width(); ++x) {
      detail::bilateral_window(guidance, x, y, params, spatial, win);
      std::array<double, C> acc{};
      std::size_t k = 0;
      for (std::size_t yy = win.y0; yy <= win.y1; ++yy) {
        for (std::size_t xx = win.x0; xx <= win.x1; ++xx, ++k) {
          for (std::size_t c = 0; c < C; ++c) acc[c] += win.weights[k] * input.at(xx, yy, c);
        }
      }
      for (std::size_t c = 0; c < C; ++c) out.at(x, y, c) = acc[c] / win.sum;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Guided filter

namespace detail {

// Summed-area table with a zero border row/column.
class IntegralImage {
 public:
  IntegralImage(const std::vector<double>& values, std::size_t width, std::size_t height)
      : width_(width), sums_((width + 1) * (height + 1), 0.0) {
    for (std::size_t y = 0; y < height; ++y) {
      double row = 0.0;
      for (std::size_t x = 0; x < width; ++x) {
        row += values[y * width + x];
        sums_[(y + 1) * (width_ + 1) + x + 1] = sums_[y * (width_ + 1) + x + 1] + row;
      }
    }
  }

  // Sum over the inclusive rectangle [x0, x1] x [y0, y1].
  double sum(std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1) const {
    const std::size_t s = width_ + 1;
    return sums_[(y1 + 1) * s + x1 + 1] - sums_[y0 * s + x1 + 1] - sums_[(y1 + 1) * s + x0] + sums_[y0 * s + x0];
  }

 private:
  std::size_t width_;
  std::vector<double> sums_;
};

// Mean over the (2r+1)^2 window around each pixel, clipped at the borders and
// divided by the true clipped count.
inline std::vector<double> box_mean(const std::vector<double>& values, std::size_t width, std::size_t height,
                                    std::size_t radius) {
  const IntegralImage integral(values, width, height);
  std::vector<double> out(values.size());
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t y0 = y >= radius ? y - radius : 0, y1 = std::min(height - 1, y + radius);
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t x0 = x >= radius ? x - radius : 0, x1 = std::min(width - 1, x + radius);
      const auto count = static_cast<double>((x1 - x0 + 1) * (y1 - y0 + 1));
      out[y * width + x] = integral.sum(x0, y0, x1, y1) / count;
    }
  }
  return out;
}

// a_k = cov / (var + eps); windows whose denominator vanishes get a_k = 0.
inline double guided_slope(double cov, double var, double epsilon, double scale) {
  const double denom = std::max(0.0, var) + epsilon;
  if (denom <= 1e-12 * std::max(1.0, scale)) return 0.0;
  return cov / denom;
}

}  // namespace detail

// Box-filter implementation of the guided filter. The guidance holds intensities
// in [0,1] and is rescaled to 0-255 internally. Multi-channel inputs are
// filtered per channel with shared window statistics.
template <std::size_t C>
Image<C> guided_filter(const Image<C>& input, const IntensityMap& guidance, const GuidedParams& params) {
  validate(params);
  require_same_shape(input, guidance.width(), guidance.height(), "guided_filter");
  const std::size_t w = input.width(), h = input.height(), n = input.pixel_count();
  const std::size_t r = params.radius;

  std::vector<double> guide(n), guide_sq(n);
  for (std::size_t p = 0; p < n; ++p) {
    guide[p] = kGuidanceScale * guidance(p);
    guide_sq[p] = guide[p] * guide[p];
  }
  const auto mean_i = detail::box_mean(guide, w, h, r);
  const auto mean_ii = detail::box_mean(guide_sq, w, h, r);

  Image<C> out(w, h);
  std::vector<double> channel(n), product(n), a(n), b(n);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      channel[p] = input(p, c);
      product[p] = guide[p] * channel[p];
    }
    const auto mean_p = detail::box_mean(channel, w, h, r);
    const auto mean_ip = detail::box_mean(product, w, h, r);
    for (std::size_t p = 0; p < n; ++p) {
      const double var = mean_ii[p] - mean_i[p] * mean_i[p];
      a[p] = detail::guided_slope(mean_ip[p] - mean_i[p] * mean_p[p], var, params.epsilon, mean_ii[p]);
      b[p] = mean_p[p] - a[p] * mean_i[p];
    }
    const auto mean_a = detail::box_mean(a, w, h, r);
    const auto mean_b = detail::box_mean(b, w, h, r);
    for (std::size_t p = 0; p < n; ++p) out(p, c) = mean_a[p] * guide[p] + mean_b[p];
  }
  return out;
}

// Direct evaluation of the explicit guided-filter weight sum
//   W_ij = 1/N_i sum_{k : i,j in w_k} 1/|w_k| (1 + (I_i - mu_k)(I_j - mu_k) / (sigma_k^2 + eps))
// where N_i counts the windows covering i. Away from the border N_i = |w_k| = |w|
// and this is the textbook 1/|w|^2 form. O(N r^4); a test oracle.
template <std::size_t C>
Image<C> guided_filter_naive(const Image<C>& input, const IntensityMap& guidance, const GuidedParams& params) {
  validate(params);
  require_same_shape(input, guidance.width(), guidance.height(), "guided_filter_naive");
  const std::size_t w = input.width(), h = input.height();
  const auto r = static_cast<std::ptrdiff_t>(params.radius);

  struct Window {
    std::size_t x0, y0, x1, y1;
    double count, mean, var, mean_sq;
  };
  auto window = [&](std::size_t kx, std::size_t ky) {
    Window win{kx >= params.radius ? kx - params.radius : 0, ky >= params.radius ? ky - params.radius : 0,
               std::min(w - 1, kx + params.radius), std::min(h - 1, ky + params.radius), 0.0, 0.0, 0.0, 0.0};
    for (std::size_t y = win.y0; y <= win.y1; ++y) {
      for (std::size_t x = win.x0; x <= win.x1; ++x) {
        win.mean += kGuidanceScale * guidance.at(x, y);
        win.mean_sq += kGuidanceScale * kGuidanceScale * guidance.at(x, y) * guidance.at(x, y);
        win.count += 1.0;
      }
    }
    win.mean /= win.count;
    win.mean_sq /= win.count;
    for (std::size_t y = win.y0; y <= win.y1; ++y) {
      for (std::size_t x = win.x0; x <= win.x1; ++x) {
        const double d = kGuidanceScale * guidance.at(x, y) - win.mean;
        win.var += d * d;
      }
    }
    win.var /= win.count;
    return win;
  };

  std::vector<Window> windows;
  windows.reserve(w * h);
  for (std::size_t ky = 0; ky < h; ++ky) {
    for (std::size_t kx = 0; kx < w; ++kx) windows.push_back(window(kx, ky));
  }

  Image<C> out(w, h);
  for (std::size_t iy = 0; iy < h; ++iy) {
    for (std::size_t ix = 0; ix < w; ++ix) {
      const double gi = kGuidanceScale * guidance.at(ix, iy);
      std::array<double, C> acc{};
      double covering = 0.0;
      for (std::ptrdiff_t ky = static_cast<std::ptrdiff_t>(iy) - r; ky <= static_cast<std::ptrdiff_t>(iy) + r; ++ky) {
        for (std::ptrdiff_t kx = static_cast<std::ptrdiff_t>(ix) - r; kx <= static_cast<std::ptrdiff_t>(ix) + r; ++kx) {
          if (kx < 0 || ky < 0 || kx >= static_cast<std::ptrdiff_t>(w) || ky >= static_cast<std::ptrdiff_t>(h)) continue;
          const Window& win = windows[static_cast<std::size_t>(ky) * w + static_cast<std::size_t>(kx)];
          covering += 1.0;
          const double denom = win.var + params.epsilon;
          const bool degenerate = denom <= 1e-12 * std::max(1.0, win.mean_sq);
          for (std::size_t jy = win.y0; jy <= win.y1; ++jy) {
            for (std::size_t jx = win.x0; jx <= win.x1; ++jx) {
              const double gj = kGuidanceScale * guidance.at(jx, jy);
              const double weight =
                  (1.0 + (degenerate ? 0.0 : (gi - win.mean) * (gj - win.mean) / denom)) / win.count;
              for (std::size_t c = 0; c < C; ++c) acc[c] += weight * input.at(jx, jy, c);
            }
          }
        }
      }
      for (std::size_t c = 0; c < C; ++c) out.at(ix, iy, c) = acc[c] / covering;
    }
  }
  return out;
}

}  // namespace intrinsic
