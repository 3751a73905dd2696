#pragma once

// Decomposition pipelines: predictor -> optional guided/bilateral filtering of
// the reflectance intensity r -> recovery of (R, S) under achromatic light.

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "intrinsic/annotations.hpp"
#include "intrinsic/errors.hpp"
#include "intrinsic/filters.hpp"
#include "intrinsic/flatten.hpp"
#include "intrinsic/image.hpp"
#include "intrinsic/metric.hpp"
#include "intrinsic/model.hpp"
#include "intrinsic/png_io.hpp"

namespace intrinsic {

// Pixels darker than this are treated as black; r is floored at it as well.
inline constexpr double kBlackThreshold = 1e-10;

struct Decomposition {
  LinearImage reflectance;
  LinearImage shading;  // three identical channels
};

// R_p = r_p / mean(I_p) * I_p,  S_p = mean(I_p) / r_p * (1,1,1).
inline Decomposition recover_decomposition(const LinearImage& img, const IntensityMap& r) {
  require_same_shape(r, img.width(), img.height(), "recover_decomposition");
  Decomposition out{LinearImage(img.width(), img.height()), LinearImage(img.width(), img.height())};
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    const double mean = (img(p, 0) + img(p, 1) + img(p, 2)) / 3.0;
    if (mean <= kBlackThreshold) continue;
    const double rp = std::max(r(p), kBlackThreshold);
    const double gain = rp / mean;
    const double shade = mean / rp;
    for (std::size_t c = 0; c < 3; ++c) {
      out.reflectance(p, c) = gain * img(p, c);
      out.shading(p, c) = shade;
    }
  }
  return out;
}

// Input intensity rescaled into [a, 1]. a = 1 is the constant-reflectance
// baseline, a = 0 the constant-shading one.
inline IntensityMap rescale_baseline(const LinearImage& img, double a) {
  if (!(a >= 0.0 && a <= 1.0)) throw ArgumentError("rescale_baseline: a must lie in [0,1]");
  IntensityMap r = mean_intensity(img);
  for (double& v : r.data()) v = a + (1.0 - a) * v;
  return r;
}

// ---------------------------------------------------------------------------
// Pipeline specification

struct NetworkPredictor {
  std::filesystem::path weights;
  std::shared_ptr<const PixelNet> preloaded;  // used instead of `weights` when set
};
struct RescalePredictor {
  double a = 0.55;
};
// Reflectance produced elsewhere (grayscale r or RGB R); reduced to intensity.
struct ExternalReflectance {
  std::filesystem::path path;
};
using Predictor = std::variant<NetworkPredictor, RescalePredictor, ExternalReflectance>;

struct InputGuidance {};
struct FlatGuidance {
  FlattenParams params;
};
struct ExternalGuidance {
  std::filesystem::path path;
};
using Guidance = std::variant<InputGuidance, FlatGuidance, ExternalGuidance>;

struct NoFilter {};
using FilterChoice = std::variant<NoFilter, BilateralParams, GuidedParams>;

struct PipelineSpec {
  Predictor predictor = RescalePredictor{};
  Guidance guidance = InputGuidance{};
  FilterChoice filter = NoFilter{};
  std::size_t repeats = 0;
  std::size_t jobs = 1;  // threads for the bilateral filter
};

inline void validate(const PipelineSpec& spec) {
  if (spec.repeats > 0 && std::holds_alternative<NoFilter>(spec.filter)) {
    throw ArgumentError("pipeline: repeats > 0 requires a filter");
  }
  if (const auto* b = std::get_if<BilateralParams>(&spec.filter)) validate(*b);
  if (const auto* g = std::get_if<GuidedParams>(&spec.filter)) validate(*g);
  if (const auto* f = std::get_if<FlatGuidance>(&spec.guidance)) validate(f->params);
  if (const auto* r = std::get_if<RescalePredictor>(&spec.predictor); r && !(r->a >= 0.0 && r->a <= 1.0)) {
    throw ArgumentError("pipeline: rescale bound must lie in [0,1]");
  }
}

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct PipelineOutput {
  Decomposition decomposition;
  IntensityMap initial_r;  // predictor output
  IntensityMap r;          // after filtering
  std::optional<LinearImage> guidance;
  std::optional<FlattenEnergy> flatten_energy;
  std::vector<StageTiming> timings;
};

inline std::shared_ptr<const PixelNet> load_predictor_network(const NetworkPredictor& p) {
  if (p.preloaded) return p.preloaded;
  if (!std::filesystem::exists(p.weights)) throw ConfigError("weights file not found: " + p.weights.string());
  try {
    return std::make_shared<const PixelNet>(load_weights(p.weights));
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot load weights: ") + e.what());
  }
}

namespace detail {

inline LinearImage load_external_image(const std::filesystem::path& path, const char* what) {
  if (!std::filesystem::exists(path)) throw ConfigError(std::string(what) + " file not found: " + path.string());
  try {
    return read_linear_png(path.string());
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read ") + what + ": " + e.what());
  }
}

class StageClock {
 public:
  explicit StageClock(std::vector<StageTiming>& sink) : sink_(sink) {}
  void lap(std::string stage) {
    const auto now = std::chrono::steady_clock::now();
    sink_.push_back({std::move(stage), std::chrono::duration<double>(now - last_).count()});
    last_ = now;
  }

 private:
  std::vector<StageTiming>& sink_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace detail

inline IntensityMap predict_intensity(const LinearImage& img, const Predictor& predictor) {
  if (const auto* net = std::get_if<NetworkPredictor>(&predictor)) {
    return forward_image(*load_predictor_network(*net), img);
  }
  if (const auto* rescale = std::get_if<RescalePredictor>(&predictor)) {
    return rescale_baseline(img, rescale->a);
  }
  const auto& ext = std::get<ExternalReflectance>(predictor);
  LinearImage reflectance = detail::load_external_image(ext.path, "reflectance");
  if (!reflectance.same_shape(img)) reflectance = resize_bilinear(reflectance, img.width(), img.height());
  return mean_intensity(reflectance);
}

// One application of the configured filter to r.
inline IntensityMap apply_filter(const IntensityMap& r, const LinearImage& guidance, const FilterChoice& filter,
                                 std::size_t jobs = 1) {
  if (const auto* b = std::get_if<BilateralParams>(&filter)) return joint_bilateral(r, guidance, *b, jobs);
  if (const auto* g = std::get_if<GuidedParams>(&filter)) return guided_filter(r, mean_intensity(guidance), *g);
  return r;
}

inline PipelineOutput run_pipeline(const LinearImage& img, const PipelineSpec& spec) {
  validate(spec);
  PipelineOutput out;
  detail::StageClock clock(out.timings);

  out.initial_r = predict_intensity(img, spec.predictor);
  clock.lap("predict");

  out.r = out.initial_r;
  if (!std::holds_alternative<NoFilter>(spec.filter) && spec.repeats > 0) {
    LinearImage guidance;
    if (std::holds_alternative<InputGuidance>(spec.guidance)) {
      guidance = img;
    } else if (const auto* flat = std::get_if<FlatGuidance>(&spec.guidance)) {
      auto result = flatten(img, flat->params);
      out.flatten_energy = result.energy;
      guidance = std::move(result.flat);
    } else {
      guidance = detail::load_external_image(std::get<ExternalGuidance>(spec.guidance).path, "guidance");
      if (!guidance.same_shape(img)) guidance = resize_bilinear(guidance, img.width(), img.height());
    }
    clock.lap("guidance");
    for (std::size_t i = 0; i < spec.repeats; ++i) out.r = apply_filter(out.r, guidance, spec.filter, spec.jobs);
    clock.lap("filter");
    out.guidance = std::move(guidance);
  }

  out.decomposition = recover_decomposition(img, out.r);
  clock.lap("recover");
  return out;
}

// ---------------------------------------------------------------------------
// Rescale sweep

// WHDR of rescale_baseline(img, a) for every a in the grid; empty entries when
// the image has no weighted comparisons.
inline std::vector<std::optional<double>> rescale_whdr_row(const LinearImage& img, const JudgmentSet& judgments,
                                                           std::span<const double> a_grid, const WhdrParams& params) {
  const auto resolved = resolve_points(judgments, img.width(), img.height());
  const IntensityMap mean = mean_intensity(img);
  std::vector<std::optional<double>> row;
  row.reserve(a_grid.size());
  for (double a : a_grid) {
    if (!(a >= 0.0 && a <= 1.0)) throw ArgumentError("sweep_rescale: a must lie in [0,1]");
    double error = 0.0, total = 0.0;
    for (const auto& j : resolved) {
      const double r1 = a + (1.0 - a) * mean.at(j.pixel1.x, j.pixel1.y);
      const double r2 = a + (1.0 - a) * mean.at(j.pixel2.x, j.pixel2.y);
      if (classify_pair(r1, r2, params) != j.comparison.label) error += j.comparison.weight;
      total += j.comparison.weight;
    }
    row.push_back(total > 0.0 ? std::optional<double>(error / total) : std::nullopt);
  }
  return row;
}

struct SweepRow {
  double parameter = 0.0;
  WhdrSummary summary;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  std::size_t argmin = 0;  // row with the lowest mean WHDR (last on ties)
};

// Builds a sweep table from per-image rows (outer index: image, inner: grid).
inline SweepTable sweep_table(std::span<const double> grid, const std::vector<std::vector<std::optional<double>>>& per_image) {
  if (grid.empty()) throw ArgumentError("sweep: empty parameter grid");
  SweepTable table;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::vector<std::optional<double>> column;
    column.reserve(per_image.size());
    for (const auto& row : per_image) column.push_back(row.at(g));
    table.rows.push_back({grid[g], summarize(column)});
    if (table.rows[g].summary.mean <= table.rows[table.argmin].summary.mean) table.argmin = g;
  }
  return table;
}

inline SweepTable sweep_rescale(std::span<const AnnotatedImage> corpus, std::span<const double> a_grid,
                                const WhdrParams& params = {}) {
  if (corpus.empty()) throw ArgumentError("sweep_rescale: empty corpus");
  if (a_grid.empty()) throw ArgumentError("sweep_rescale: empty grid");
  std::vector<std::vector<std::optional<double>>> per_image;
  per_image.reserve(corpus.size());
  for (const auto& item : corpus) per_image.push_back(rescale_whdr_row(item.image, item.judgments, a_grid, params));
  return sweep_table(a_grid, per_image);
}

}  // namespace intrinsic
