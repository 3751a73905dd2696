#pragma once

// WHDR evaluation and the WHDR-hinge training loss.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "intrinsic/annotations.hpp"
#include "intrinsic/errors.hpp"
#include "intrinsic/image.hpp"

namespace intrinsic {

// Guards the reflectance ratios against division by zero.
inline constexpr double kRatioGuard = 1e-10;

struct WhdrParams {
  double delta = 0.1;
};

struct HingeParams {
  double delta = 0.12;
  double xi = 0.08;
};

inline void validate(const WhdrParams& p) {
  if (!(p.delta >= 0.0) || !std::isfinite(p.delta)) throw ArgumentError("WHDR delta must be finite and >= 0");
}

inline void validate(const HingeParams& p) {
  if (!(p.delta >= 0.0) || !std::isfinite(p.delta)) throw ArgumentError("hinge delta must be finite and >= 0");
  if (!(p.xi >= 0.0) || !std::isfinite(p.xi)) throw ArgumentError("hinge margin xi must be finite and >= 0");
  if (!(p.xi < 1.0 + p.delta)) throw ArgumentError("hinge margin xi must be < 1 + delta");
}

inline double guarded_ratio(double r1, double r2) { return (r1 + kRatioGuard) / (r2 + kRatioGuard); }

inline Judgment classify_pair(double r1, double r2, const WhdrParams& params) {
  if (r1 < 0.0 || r2 < 0.0) throw ArgumentError("classify_pair: reflectance must be >= 0");
  const double threshold = 1.0 + params.delta;
  if ((r2 + kRatioGuard) / (r1 + kRatioGuard) > threshold) return Judgment::Darker1;
  if ((r1 + kRatioGuard) / (r2 + kRatioGuard) > threshold) return Judgment::Darker2;
  return Judgment::Equal;
}

namespace detail {

inline double sample_checked(const IntensityMap& r, const PixelCoord& p) {
  if (p.x >= r.width() || p.y >= r.height()) throw ArgumentError("judgment pixel lies outside the reflectance map");
  return r.at(p.x, p.y);
}

}  // namespace detail

// Weighted fraction of judgments the prediction disagrees with. Empty when the
// image has no comparisons or zero total weight; such images are left out of
// aggregates.
inline std::optional<double> whdr(std::span<const ResolvedComparison> judgments, const IntensityMap& r,
                                  const WhdrParams& params = {}) {
  validate(params);
  double error = 0.0;
  double total = 0.0;
  for (const auto& j : judgments) {
    const double r1 = detail::sample_checked(r, j.pixel1);
    const double r2 = detail::sample_checked(r, j.pixel2);
    const double w = j.comparison.weight;
    if (classify_pair(r1, r2, params) != j.comparison.label) error += w;
    total += w;
  }
  if (!(total > 0.0)) return std::nullopt;
  return error / total;
}

// ---------------------------------------------------------------------------
// Hinge loss on rho = r1 / r2

inline double hinge_loss_ratio(double rho, Judgment label, const HingeParams& params) {
  const double d = params.delta, xi = params.xi;
  switch (label) {
    case Judgment::Darker1: return std::max(0.0, rho - 1.0 / (1.0 + d + xi));
    case Judgment::Darker2: return std::max(0.0, 1.0 + d + xi - rho);
    case Judgment::Equal: return std::max({0.0, 1.0 / (1.0 + d - xi) - rho, rho - (1.0 + d - xi)});
  }
  return 0.0;
}

// d loss / d rho; zero at the kinks.
inline double hinge_slope_ratio(double rho, Judgment label, const HingeParams& params) {
  const double d = params.delta, xi = params.xi;
  switch (label) {
    case Judgment::Darker1: return rho - 1.0 / (1.0 + d + xi) > 0.0 ? 1.0 : 0.0;
    case Judgment::Darker2: return 1.0 + d + xi - rho > 0.0 ? -1.0 : 0.0;
    case Judgment::Equal: {
      const double below = 1.0 / (1.0 + d - xi) - rho;
      const double above = rho - (1.0 + d - xi);
      if (below > 0.0 && below > above) return -1.0;
      if (above > 0.0 && above > below) return 1.0;
      return 0.0;
    }
  }
  return 0.0;
}

inline double hinge_loss(double r1, double r2, Judgment label, const HingeParams& params) {
  if (r1 < 0.0 || r2 < 0.0) throw ArgumentError("hinge_loss: reflectance must be >= 0");
  return hinge_loss_ratio(guarded_ratio(r1, r2), label, params);
}

struct PairGradient {
  double d_r1 = 0.0;
  double d_r2 = 0.0;
};

inline PairGradient hinge_subgradient(double r1, double r2, Judgment label, const HingeParams& params) {
  if (r1 < 0.0 || r2 < 0.0) throw ArgumentError("hinge_subgradient: reflectance must be >= 0");
  const double a = r1 + kRatioGuard, b = r2 + kRatioGuard;
  const double slope = hinge_slope_ratio(a / b, label, params);
  if (slope == 0.0) return {};
  return {slope / b, -slope * a / (b * b)};
}

// Weighted hinge loss over sampled pair values, normalised by the total weight.
// Writes d loss / d r1[i] and d r2[i]; returns empty when the total weight is 0.
inline std::optional<double> hinge_sum_samples(std::span<const Comparison> comparisons,
                                               std::span<const double> r1, std::span<const double> r2,
                                               const HingeParams& params, std::span<double> grad1,
                                               std::span<double> grad2) {
  const std::size_t n = comparisons.size();
  if (r1.size() != n || r2.size() != n || grad1.size() != n || grad2.size() != n) {
    throw ArgumentError("hinge_sum_samples: span lengths differ");
  }
  double total = 0.0;
  for (const auto& c : comparisons) total += c.weight;
  if (!(total > 0.0)) return std::nullopt;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = comparisons[i].weight / total;
    loss += w * hinge_loss(r1[i], r2[i], comparisons[i].label, params);
    const auto g = hinge_subgradient(r1[i], r2[i], comparisons[i].label, params);
    grad1[i] = w * g.d_r1;
    grad2[i] = w * g.d_r2;
  }
  return loss;
}

struct HingeSum {
  double loss = 0.0;
  IntensityMap gradient;  // d loss / d r, nonzero only at annotated pixels
};

inline std::optional<HingeSum> weighted_hinge_sum(std::span<const ResolvedComparison> judgments,
                                                  const IntensityMap& r, const HingeParams& params) {
  validate(params);
  const std::size_t n = judgments.size();
  std::vector<Comparison> comparisons(n);
  std::vector<double> r1(n), r2(n), g1(n), g2(n);
  for (std::size_t i = 0; i < n; ++i) {
    comparisons[i] = judgments[i].comparison;
    r1[i] = detail::sample_checked(r, judgments[i].pixel1);
    r2[i] = detail::sample_checked(r, judgments[i].pixel2);
  }
  const auto loss = hinge_sum_samples(comparisons, r1, r2, params, g1, g2);
  if (!loss) return std::nullopt;
  HingeSum out{*loss, IntensityMap(r.width(), r.height())};
  for (std::size_t i = 0; i < n; ++i) {
    out.gradient.at(judgments[i].pixel1.x, judgments[i].pixel1.y) += g1[i];
    out.gradient.at(judgments[i].pixel2.x, judgments[i].pixel2.y) += g2[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregates

struct WhdrSummary {
  double mean = 0.0;
  double median = 0.0;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // images without a defined WHDR
};

// Unweighted mean and median over images with a defined WHDR.
inline WhdrSummary summarize(std::span<const std::optional<double>> per_image) {
  WhdrSummary s;
  std::vector<double> values;
  for (const auto& v : per_image) {
    if (v) {
      values.push_back(*v);
    } else {
      ++s.excluded;
    }
  }
  s.evaluated = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  s.median = values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  return s;
}

}  // namespace intrinsic
