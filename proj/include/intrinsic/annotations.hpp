#pragma once

// Sparse pairwise reflectance judgments in the IIW JSON format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "intrinsic/errors.hpp"
#include "json.hpp"

namespace intrinsic {

using PointId = std::int64_t;

// Which point of the pair has the darker reflectance.
enum class Judgment { Darker1, Darker2, Equal };

inline char judgment_code(Judgment j) {
  switch (j) {
    case Judgment::Darker1: return '1';
    case Judgment::Darker2: return '2';
    default: return 'E';
  }
}

inline Judgment flipped(Judgment j) {
  switch (j) {
    case Judgment::Darker1: return Judgment::Darker2;
    case Judgment::Darker2: return Judgment::Darker1;
    default: return Judgment::Equal;
  }
}

struct Comparison {
  PointId point1 = 0;
  PointId point2 = 0;
  Judgment label = Judgment::Equal;
  double weight = 1.0;

  friend bool operator==(const Comparison&, const Comparison&) = default;
};

struct NormalizedPoint {
  double x = 0.0;  // column / width, in [0,1]
  double y = 0.0;  // row / height, in [0,1]

  friend bool operator==(const NormalizedPoint&, const NormalizedPoint&) = default;
};

struct JudgmentSet {
  std::string image_id;
  std::map<PointId, NormalizedPoint> points;
  std::vector<Comparison> comparisons;

  double total_weight() const {
    double sum = 0.0;
    for (const auto& c : comparisons) sum += c.weight;
    return sum;
  }

  friend bool operator==(const JudgmentSet&, const JudgmentSet&) = default;
};

struct LoadedJudgments {
  JudgmentSet set;
  std::size_t dropped = 0;  // comparisons skipped (unknown point, null label, non-opaque point)
};

namespace detail {

template <typename T>
T json_field(const nlohmann::json& obj, const char* field, const std::string& context) {
  const auto it = obj.find(field);
  if (it == obj.end()) throw IngestionError(context + ": missing field '" + field + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(context + ": field '" + field + "': " + e.what());
  }
}

inline PointId json_point_id(const nlohmann::json& value, const std::string& context) {
  if (value.is_number_integer()) return value.get<PointId>();
  if (value.is_string()) {
    try {
      return std::stoll(value.get<std::string>());
    } catch (const std::exception&) {
    }
  }
  throw IngestionError(context + ": point id is not an integer");
}

}  // namespace detail

// Parses IIW judgment JSON text. Comparisons whose label is null or not one of
// "1", "2", "E", whose score is null, or that reference missing or non-opaque
// points are dropped and counted.
inline LoadedJudgments parse_iiw_judgments(std::string_view text, std::string image_id) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IngestionError(image_id + ": " + e.what());
  }
  if (!doc.is_object()) throw IngestionError(image_id + ": top-level value is not an object");

  LoadedJudgments out;
  out.set.image_id = std::move(image_id);
  const std::string& id = out.set.image_id;
  std::map<PointId, bool> opaque;

  if (const auto pts = doc.find("intrinsic_points"); pts != doc.end() && !pts->is_null()) {
    if (!pts->is_array()) throw IngestionError(id + ": intrinsic_points is not an array");
    for (std::size_t i = 0; i < pts->size(); ++i) {
      const auto& p = (*pts)[i];
      const std::string ctx = id + ": intrinsic_points[" + std::to_string(i) + "]";
      if (!p.is_object()) throw IngestionError(ctx + ": not an object");
      const PointId pid = detail::json_point_id(p.value("id", nlohmann::json{}), ctx);
      NormalizedPoint np{detail::json_field<double>(p, "x", ctx), detail::json_field<double>(p, "y", ctx)};
      out.set.points[pid] = np;
      const auto op = p.find("opaque");
      opaque[pid] = (op == p.end() || op->is_null()) ? true : op->get<bool>();
    }
  }

  if (const auto cmps = doc.find("intrinsic_comparisons"); cmps != doc.end() && !cmps->is_null()) {
    if (!cmps->is_array()) throw IngestionError(id + ": intrinsic_comparisons is not an array");
    for (std::size_t i = 0; i < cmps->size(); ++i) {
      const auto& c = (*cmps)[i];
      const std::string ctx = id + ": intrinsic_comparisons[" + std::to_string(i) + "]";
      if (!c.is_object()) throw IngestionError(ctx + ": not an object");
      const PointId p1 = detail::json_point_id(c.value("point1", nlohmann::json{}), ctx);
      const PointId p2 = detail::json_point_id(c.value("point2", nlohmann::json{}), ctx);
      const auto darker = c.find("darker");
      const auto score = c.find("darker_score");
      if (darker == c.end() || darker->is_null() || score == c.end() || score->is_null() ||
          !out.set.points.contains(p1) || !out.set.points.contains(p2) || p1 == p2 ||
          !opaque[p1] || !opaque[p2]) {
        ++out.dropped;
        continue;
      }
      const std::string code = darker->is_string() ? darker->get<std::string>() : std::string{};
      Judgment label;
      if (code == "1") {
        label = Judgment::Darker1;
      } else if (code == "2") {
        label = Judgment::Darker2;
      } else if (code == "E") {
        label = Judgment::Equal;
      } else {
        ++out.dropped;
        continue;
      }
      if (!score->is_number()) throw IngestionError(ctx + ": field 'darker_score' is not a number");
      const double w = score->get<double>();
      if (!std::isfinite(w) || w < 0.0) throw IngestionError(ctx + ": darker_score must be finite and >= 0");
      out.set.comparisons.push_back({p1, p2, label, w});
    }
  }
  return out;
}

inline LoadedJudgments load_iiw_judgments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open judgment file");
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_iiw_judgments(buffer.str(), path.stem().string());
  } catch (const IngestionError& e) {
    throw IngestionError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Mapping onto a raster

struct PixelCoord {
  std::size_t x = 0;
  std::size_t y = 0;

  std::size_t index(std::size_t width) const noexcept { return y * width + x; }
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

struct ResolvedComparison {
  Comparison comparison;
  PixelCoord pixel1;
  PixelCoord pixel2;
};

inline std::size_t normalized_to_pixel(double v, std::size_t extent) {
  const double scaled = std::floor(v * static_cast<double>(extent));
  if (!(scaled > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(scaled), extent - 1);
}

inline PixelCoord resolve_point(const NormalizedPoint& p, std::size_t width, std::size_t height) {
  return {normalized_to_pixel(p.x, width), normalized_to_pixel(p.y, height)};
}

inline std::vector<ResolvedComparison> resolve_points(const JudgmentSet& set, std::size_t width,
                                                      std::size_t height) {
  if (width == 0 || height == 0) throw ArgumentError("resolve_points: raster dimensions must be >= 1");
  std::vector<ResolvedComparison> out;
  out.reserve(set.comparisons.size());
  for (const auto& c : set.comparisons) {
    const auto a = set.points.find(c.point1);
    const auto b = set.points.find(c.point2);
    if (a == set.points.end() || b == set.points.end()) {
      throw ArgumentError("resolve_points: comparison references unknown point in " + set.image_id);
    }
    out.push_back({c, resolve_point(a->second, width, height), resolve_point(b->second, width, height)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset splits

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

// Every fifth image (starting with the first) goes to test; of the rest, the
// seventh of every ten goes to validation.
inline DatasetSplit split_narihira(const std::vector<std::string>& sorted_ids) {
  DatasetSplit split;
  for (std::size_t i = 0; i < sorted_ids.size(); ++i) {
    if (i % 5 == 0) {
      split.test.push_back(sorted_ids[i]);
    } else if (i % 10 == 6) {
      split.validation.push_back(sorted_ids[i]);
    } else {
      split.train.push_back(sorted_ids[i]);
    }
  }
  return split;
}

inline void write_id_list(const std::filesystem::path& path, const std::vector<std::string>& ids) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot write id list");
  for (const auto& id : ids) out << id << '\n';
}

// ---------------------------------------------------------------------------
// Transitive augmentation

// Closes the judgment graph under EQUAL (symmetric, transitive) and DARKER
// (strict order). A derived relation's weight is the bottleneck (minimum) weight
// along its best derivation. Every original comparison is kept; for each point
// pair without an original comparison the highest-weight derived relation is
// added and contradicting lower-weight relations are discarded.
inline JudgmentSet augment_transitive(const JudgmentSet& set) {
  std::vector<PointId> ids;
  std::map<PointId, std::size_t> index;
  for (const auto& [pid, pt] : set.points) {
    index[pid] = ids.size();
    ids.push_back(pid);
  }
  const std::size_t n = ids.size();
  constexpr double none = -std::numeric_limits<double>::infinity();
  // eq[i][j]: best weight of "i equal j"; lt[i][j]: best weight of "i darker than j".
  std::vector<double> eq(n * n, none), lt(n * n, none);
  auto at = [n](std::vector<double>& m, std::size_t i, std::size_t j) -> double& { return m[i * n + j]; };

  std::vector<char> has_original(n * n, 0);
  for (const auto& c : set.comparisons) {
    const std::size_t a = index.at(c.point1), b = index.at(c.point2);
    has_original[a * n + b] = has_original[b * n + a] = 1;
    switch (c.label) {
      case Judgment::Equal:
        at(eq, a, b) = std::max(at(eq, a, b), c.weight);
        at(eq, b, a) = at(eq, a, b);
        break;
      case Judgment::Darker1:
        at(lt, a, b) = std::max(at(lt, a, b), c.weight);
        break;
      case Judgment::Darker2:
        at(lt, b, a) = std::max(at(lt, b, a), c.weight);
        break;
    }
  }

  // Bottleneck Floyd-Warshall over the {EQUAL, DARKER} composition rules.
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const double eik = at(eq, i, k), lik = at(lt, i, k);
      if (eik == none && lik == none) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double ekj = at(eq, k, j), lkj = at(lt, k, j);
        double& eij = at(eq, i, j);
        double& lij = at(lt, i, j);
        eij = std::max(eij, std::min(eik, ekj));
        lij = std::max({lij, std::min(lik, lkj), std::min(eik, lkj), std::min(lik, ekj)});
      }
    }
  }

  JudgmentSet out = set;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (has_original[i * n + j]) continue;
      const double e = at(eq, i, j), d1 = at(lt, i, j), d2 = at(lt, j, i);
      const double best = std::max({e, d1, d2});
      if (best == none) continue;
      Judgment label = Judgment::Equal;
      if (d1 == best && d1 > e) label = Judgment::Darker1;
      if (d2 == best && d2 > e && d2 > d1) label = Judgment::Darker2;
      out.comparisons.push_back({ids[i], ids[j], label, best});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weak-label subsampling

inline JudgmentSet subsample_pairs(const JudgmentSet& set, double keep_fraction, std::uint64_t seed) {
  if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) {
    throw ArgumentError("subsample_pairs: keep_fraction must lie in [0,1]");
  }
  const auto keep = static_cast<std::size_t>(
      std::llround(keep_fraction * static_cast<double>(set.comparisons.size())));
  JudgmentSet out = set;
  out.comparisons.clear();
  std::mt19937_64 rng(seed);
  std::sample(set.comparisons.begin(), set.comparisons.end(), std::back_inserter(out.comparisons), keep, rng);
  return out;
}

}  // namespace intrinsic
