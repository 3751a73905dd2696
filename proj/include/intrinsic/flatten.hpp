#pragma once

// L1 image flattening: minimise
//   E = E_l + alpha * E_g + beta * E_a
//   E_l = sum_i sum_{j in N_h(i)} w_ij |q_i - q_j|_1
//   E_g = sum_{i in S_r} sum_{j in S_r} w_ij |q_i - q_j|_1
//   E_a = |q - p|_2^2
// with w_ij = exp(-|f_i - f_j|^2 / (2 sigma^2)) on the input's scaled CIELab
// features and S_r one representative pixel per superpixel. Colour values in
// E are measured on a 0-255 scale. Solved by iteratively reweighted least
// squares with a preconditioned CG inner solve.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "intrinsic/errors.hpp"
#include "intrinsic/image.hpp"

namespace intrinsic {

inline constexpr double kFlattenScale = 255.0;

struct FlattenParams {
  double alpha = 20.0;        // global sparsity weight
  double beta = 1.0;          // data term weight
  double kappa = 1.2;         // lightness scaling in the features
  double sigma = 0.25;        // affinity bandwidth (Lab / 100 units)
  std::size_t neighborhood = 5;  // h, odd window width
  std::size_t n_superpixels = 1000;
  double compactness = 10.0;  // SLIC spatial weight
  double irls_eps = 1e-4;     // [0,1] intensity units
  std::size_t max_iters = 30;
  double rel_tol = 1e-4;      // stop when the relative energy decrease falls below this
  double cg_tol = 1e-4;       // relative residual of each inner solve
  std::size_t cg_max_iters = 5000;
};

inline void validate(const FlattenParams& p) {
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (!positive(p.alpha) || !positive(p.beta) || !positive(p.kappa) || !positive(p.sigma) ||
      !positive(p.compactness) || !positive(p.irls_eps) || !positive(p.rel_tol) || !positive(p.cg_tol)) {
    throw ArgumentError("flatten parameters must be finite and positive");
  }
  if (p.neighborhood < 1 || p.neighborhood % 2 == 0) throw ArgumentError("flatten neighborhood must be odd");
  if (p.n_superpixels < 1) throw ArgumentError("flatten needs at least one superpixel");
  if (p.max_iters < 1 || p.cg_max_iters < 1) throw ArgumentError("flatten iteration limits must be >= 1");
}

using Feature = std::array<double, 3>;

// [kappa * L, a, b] with CIELab components divided by 100.
inline Feature flatten_feature(const Rgb& linear_rgb, double kappa) {
  const Rgb lab = linear_rgb_to_lab(linear_rgb);
  return {kappa * lab[0] / 100.0, lab[1] / 100.0, lab[2] / 100.0};
}

inline double affinity(const Feature& fi, const Feature& fj, double sigma) {
  const double d0 = fi[0] - fj[0], d1 = fi[1] - fj[1], d2 = fi[2] - fj[2];
  return std::exp(-(d0 * d0 + d1 * d1 + d2 * d2) / (2.0 * sigma * sigma));
}

// ---------------------------------------------------------------------------
// Superpixels

struct SuperpixelSegmentation {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::size_t> labels;           // per pixel, contiguous ids 0..count-1
  std::vector<std::size_t> representatives;  // pixel index per superpixel

  std::size_t count() const noexcept { return representatives.size(); }
};

namespace detail {

// Member closest (in Lab) to each superpixel's mean colour; lowest index wins ties.
inline std::vector<std::size_t> superpixel_representatives(const std::vector<Rgb>& lab,
                                                           const std::vector<std::size_t>& labels,
                                                           std::size_t count) {
  std::vector<Rgb> mean(count, Rgb{0, 0, 0});
  std::vector<double> size(count, 0.0);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    for (std::size_t c = 0; c < 3; ++c) mean[labels[p]][c] += lab[p][c];
    size[labels[p]] += 1.0;
  }
  for (std::size_t k = 0; k < count; ++k) {
    for (std::size_t c = 0; c < 3; ++c) mean[k][c] /= size[k];
  }
  std::vector<std::size_t> rep(count, std::numeric_limits<std::size_t>::max());
  std::vector<double> best(count, std::numeric_limits<double>::infinity());
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const std::size_t k = labels[p];
    double d = 0.0;
    for (std::size_t c = 0; c < 3; ++c) d += (lab[p][c] - mean[k][c]) * (lab[p][c] - mean[k][c]);
    if (d < best[k]) {
      best[k] = d;
      rep[k] = p;
    }
  }
  return rep;
}

// Relabels 4-connected components; components smaller than min_size are merged
// into the previously visited neighbouring component. Returns the label count.
inline std::size_t enforce_connectivity(std::vector<std::size_t>& labels, std::size_t width, std::size_t height,
                                        std::size_t min_size) {
  constexpr std::size_t unset = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> out(labels.size(), unset);
  std::vector<std::size_t> component;
  std::size_t next = 0;
  const int dx[4] = {-1, 1, 0, 0};
  const int dy[4] = {0, 0, -1, 1};
  for (std::size_t start = 0; start < labels.size(); ++start) {
    if (out[start] != unset) continue;
    // Label of an already relabelled neighbour, used when this component is too small.
    std::size_t adjacent = unset;
    const std::size_t sx = start % width, sy = start / width;
    for (int d = 0; d < 4; ++d) {
      const auto nx = static_cast<std::ptrdiff_t>(sx) + dx[d], ny = static_cast<std::ptrdiff_t>(sy) + dy[d];
      if (nx < 0 || ny < 0 || nx >= static_cast<std::ptrdiff_t>(width) || ny >= static_cast<std::ptrdiff_t>(height)) continue;
      const std::size_t q = static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx);
      if (out[q] != unset) adjacent = out[q];
    }
    component.clear();
    component.push_back(start);
    out[start] = next;
    for (std::size_t head = 0; head < component.size(); ++head) {
      const std::size_t p = component[head];
      const std::size_t px = p % width, py = p / width;
      for (int d = 0; d < 4; ++d) {
        const auto nx = static_cast<std::ptrdiff_t>(px) + dx[d], ny = static_cast<std::ptrdiff_t>(py) + dy[d];
        if (nx < 0 || ny < 0 || nx >= static_cast<std::ptrdiff_t>(width) || ny >= static_cast<std::ptrdiff_t>(height)) continue;
        const std::size_t q = static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx);
        if (out[q] == unset && labels[q] == labels[start]) {
          out[q] = next;
          component.push_back(q);
        }
      }
    }
    if (component.size() < min_size && adjacent != unset) {
      for (std::size_t p : component) out[p] = adjacent;
    } else {
      ++next;
    }
  }
  labels = std::move(out);
  return next;
}

}  // namespace detail

// SLIC-style k-means in (Lab, xy) on a regular seed grid, followed by
// connectivity enforcement.
inline SuperpixelSegmentation slic_superpixels(const LinearImage& img, std::size_t n_superpixels,
                                               double compactness = 10.0, std::size_t iterations = 10) {
  if (n_superpixels < 1) throw ArgumentError("slic_superpixels: need at least one superpixel");
  const std::size_t w = img.width(), h = img.height(), n = img.pixel_count();
  n_superpixels = std::min(n_superpixels, n);

  std::vector<Rgb> lab(n);
  for (std::size_t p = 0; p < n; ++p) lab[p] = linear_rgb_to_lab(img.pixel(p));

  const double step = std::sqrt(static_cast<double>(n) / static_cast<double>(n_superpixels));
  const auto nx = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(w) / step)));
  const auto ny = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(h) / step)));

  struct Center {
    Rgb lab;
    double x, y;
  };
  std::vector<Center> centers;
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) {
      const double cx = (static_cast<double>(i) + 0.5) * static_cast<double>(w) / static_cast<double>(nx);
      const double cy = (static_cast<double>(j) + 0.5) * static_cast<double>(h) / static_cast<double>(ny);
      const auto px = std::min(w - 1, static_cast<std::size_t>(cx));
      const auto py = std::min(h - 1, static_cast<std::size_t>(cy));
      centers.push_back({lab[py * w + px], cx - 0.5, cy - 0.5});
    }
  }

  std::vector<std::size_t> labels(n, 0);
  std::vector<double> dist(n);
  const double spatial = (compactness / step) * (compactness / step);
  const auto search = static_cast<std::ptrdiff_t>(std::ceil(2.0 * step));
  for (std::size_t it = 0; it < iterations; ++it) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const auto& c = centers[k];
      const auto cx = static_cast<std::ptrdiff_t>(std::lround(c.x)), cy = static_cast<std::ptrdiff_t>(std::lround(c.y));
      const auto x0 = std::max<std::ptrdiff_t>(0, cx - search), x1 = std::min<std::ptrdiff_t>(w - 1, cx + search);
      const auto y0 = std::max<std::ptrdiff_t>(0, cy - search), y1 = std::min<std::ptrdiff_t>(h - 1, cy + search);
      for (auto y = y0; y <= y1; ++y) {
        for (auto x = x0; x <= x1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
          double dc = 0.0;
          for (std::size_t ch = 0; ch < 3; ++ch) dc += (lab[p][ch] - c.lab[ch]) * (lab[p][ch] - c.lab[ch]);
          const double ddx = static_cast<double>(x) - c.x, ddy = static_cast<double>(y) - c.y;
          const double d = dc + spatial * (ddx * ddx + ddy * ddy);
          if (d < dist[p]) {
            dist[p] = d;
            labels[p] = k;
          }
        }
      }
    }
    std::vector<Center> sums(centers.size(), Center{{0, 0, 0}, 0, 0});
    std::vector<double> counts(centers.size(), 0.0);
    for (std::size_t p = 0; p < n; ++p) {
      auto& s = sums[labels[p]];
      for (std::size_t ch = 0; ch < 3; ++ch) s.lab[ch] += lab[p][ch];
      s.x += static_cast<double>(p % w);
      s.y += static_cast<double>(p / w);
      counts[labels[p]] += 1.0;
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (counts[k] == 0.0) continue;
      for (std::size_t ch = 0; ch < 3; ++ch) centers[k].lab[ch] = sums[k].lab[ch] / counts[k];
      centers[k].x = sums[k].x / counts[k];
      centers[k].y = sums[k].y / counts[k];
    }
  }

  const std::size_t min_size = std::max<std::size_t>(1, n / (4 * centers.size()));
  const std::size_t count = detail::enforce_connectivity(labels, w, h, min_size);
  SuperpixelSegmentation seg{w, h, std::move(labels), {}};
  seg.representatives = detail::superpixel_representatives(lab, seg.labels, count);
  return seg;
}

// ---------------------------------------------------------------------------
// Energy

struct FlattenEnergy {
  double total = 0.0;
  double local = 0.0;   // E_l
  double global = 0.0;  // E_g
  double data = 0.0;    // E_a
};

namespace detail {

// Unordered pixel pair with the coefficient it carries in the smooth part of E.
// Both sums in E_l and E_g run over ordered pairs, so each unordered pair
// appears twice.
struct FlattenEdge {
  std::uint32_t i;
  std::uint32_t j;
  double coeff;
};

struct FlattenGraph {
  std::vector<FlattenEdge> local;
  std::vector<FlattenEdge> global;  // coefficients exclude alpha
};

inline FlattenGraph build_flatten_graph(const LinearImage& p, const SuperpixelSegmentation& seg,
                                        const FlattenParams& params) {
  const std::size_t w = p.width(), h = p.height(), n = p.pixel_count();
  std::vector<Feature> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = flatten_feature(p.pixel(i), params.kappa);

  FlattenGraph g;
  const auto half = static_cast<std::ptrdiff_t>(params.neighborhood / 2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      // Offsets after (0,0) in raster order: each unordered pair once.
      for (std::ptrdiff_t dy = 0; dy <= half; ++dy) {
        for (std::ptrdiff_t dx = -half; dx <= half; ++dx) {
          if (dy == 0 && dx <= 0) continue;
          const auto xx = static_cast<std::ptrdiff_t>(x) + dx, yy = static_cast<std::ptrdiff_t>(y) + dy;
          if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w) || yy >= static_cast<std::ptrdiff_t>(h)) continue;
          const std::size_t j = static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx);
          g.local.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                             2.0 * affinity(f[i], f[j], params.sigma)});
        }
      }
    }
  }
  const auto& reps = seg.representatives;
  for (std::size_t a = 0; a < reps.size(); ++a) {
    for (std::size_t b = a + 1; b < reps.size(); ++b) {
      g.global.push_back({static_cast<std::uint32_t>(reps[a]), static_cast<std::uint32_t>(reps[b]),
                          2.0 * affinity(f[reps[a]], f[reps[b]], params.sigma)});
    }
  }
  return g;
}

inline double edges_l1(const std::vector<FlattenEdge>& edges, const LinearImage& q) {
  double sum = 0.0;
  for (const auto& e : edges) {
    double d = 0.0;
    for (std::size_t c = 0; c < 3; ++c) d += std::abs(q(e.i, c) - q(e.j, c));
    sum += e.coeff * d;
  }
  return sum;
}

inline double squared_distance(const LinearImage& q, const LinearImage& p) {
  double sum = 0.0;
  for (std::size_t k = 0; k < q.data().size(); ++k) {
    const double d = q.data()[k] - p.data()[k];
    sum += d * d;
  }
  return sum;
}

// Huber-smoothed |d|: the function each IRLS step provably decreases.
inline double smoothed_abs(double d, double eps) {
  const double a = std::abs(d);
  return a >= eps ? a : 0.5 * (d * d / eps + eps);
}

inline LinearImage scaled(const LinearImage& img, double factor) {
  LinearImage out = img;
  for (double& v : out.data()) v *= factor;
  return out;
}

inline double smoothed_energy(const FlattenGraph& g, const LinearImage& q, const LinearImage& p,
                              const FlattenParams& params) {
  auto edges = [&](const std::vector<FlattenEdge>& list) {
    double sum = 0.0;
    for (const auto& e : list) {
      double d = 0.0;
      for (std::size_t c = 0; c < 3; ++c) d += smoothed_abs(q(e.i, c) - q(e.j, c), kFlattenScale * params.irls_eps);
      sum += e.coeff * d;
    }
    return sum;
  };
  return edges(g.local) + params.alpha * edges(g.global) + params.beta * squared_distance(q, p);
}

}  // namespace detail

// Exact L1 energy of candidate q for input p; affinities come from p.
inline FlattenEnergy flatten_energy(const LinearImage& q, const LinearImage& p, const SuperpixelSegmentation& seg,
                                    const FlattenParams& params) {
  if (!q.same_shape(p)) throw ArgumentError("flatten_energy: candidate and input differ in shape");
  if (seg.labels.size() != p.pixel_count()) throw ArgumentError("flatten_energy: segmentation does not match input");
  const auto g = detail::build_flatten_graph(p, seg, params);
  const LinearImage qs = detail::scaled(q, kFlattenScale), ps = detail::scaled(p, kFlattenScale);
  FlattenEnergy e;
  e.local = detail::edges_l1(g.local, qs);
  e.global = detail::edges_l1(g.global, qs);
  e.data = detail::squared_distance(qs, ps);
  e.total = e.local + params.alpha * e.global + params.beta * e.data;
  return e;
}

// ---------------------------------------------------------------------------
// Solver

struct FlattenResult {
  LinearImage flat;
  SuperpixelSegmentation segmentation;
  FlattenEnergy energy;               // exact L1 energy of the output
  std::vector<double> energy_history;  // smoothed energy, initial value first
  std::vector<double> cg_residuals;    // relative residual of the last inner solve per channel and iteration
  std::size_t iterations = 0;
};

namespace detail {

// Jacobi-preconditioned CG on (beta I + L_u) x = beta p, warm-started at x.
// The CG iterates decrease the quadratic objective monotonically, which is what
// keeps the outer majorise-minimise sequence monotone even for loose tolerances.
inline double solve_channel(const std::vector<FlattenEdge>& edges, const std::vector<double>& u,
                            const std::vector<double>& rhs, double beta, std::vector<double>& x, double tol,
                            std::size_t max_iters, std::size_t outer, std::size_t channel) {
  const std::size_t n = x.size();
  std::vector<double> diag(n, beta);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    diag[edges[e].i] += u[e];
    diag[edges[e].j] += u[e];
  }
  auto apply = [&](const std::vector<double>& v, std::vector<double>& out) {
    for (std::size_t k = 0; k < n; ++k) out[k] = beta * v[k];
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const double t = u[e] * (v[edges[e].i] - v[edges[e].j]);
      out[edges[e].i] += t;
      out[edges[e].j] -= t;
    }
  };
  std::vector<double> r(n), z(n), d(n), ad(n);
  apply(x, ad);
  double rhs_norm = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    r[k] = rhs[k] - ad[k];
    rhs_norm += rhs[k] * rhs[k];
  }
  rhs_norm = std::max(std::sqrt(rhs_norm), 1e-300);
  auto residual = [&] {
    double s = 0.0;
    for (double v : r) s += v * v;
    return std::sqrt(s) / rhs_norm;
  };
  double rel = residual();
  if (rel <= tol) return rel;
  double rz = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    z[k] = r[k] / diag[k];
    d[k] = z[k];
    rz += r[k] * z[k];
  }
  for (std::size_t it = 0; it < max_iters; ++it) {
    apply(d, ad);
    double dad = 0.0;
    for (std::size_t k = 0; k < n; ++k) dad += d[k] * ad[k];
    if (!(dad > 0.0)) break;
    const double step = rz / dad;
    for (std::size_t k = 0; k < n; ++k) {
      x[k] += step * d[k];
      r[k] -= step * ad[k];
    }
    rel = residual();
    if (rel <= tol) return rel;
    double rz_next = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      z[k] = r[k] / diag[k];
      rz_next += r[k] * z[k];
    }
    const double ratio = rz_next / rz;
    rz = rz_next;
    for (std::size_t k = 0; k < n; ++k) d[k] = z[k] + ratio * d[k];
  }
  std::ostringstream msg;
  msg << "flatten: conjugate gradient did not converge (outer iteration " << outer << ", channel " << channel
      << ", relative residual " << rel << " > " << tol << " after " << max_iters << " iterations)";
  throw SolverError(msg.str());
}

}  // namespace detail

inline FlattenResult flatten(const LinearImage& p, const SuperpixelSegmentation& seg, const FlattenParams& params) {
  validate(params);
  if (seg.labels.size() != p.pixel_count()) throw ArgumentError("flatten: segmentation does not match input");
  const auto graph = detail::build_flatten_graph(p, seg, params);
  const std::size_t n = p.pixel_count();

  // Merged edge list; global coefficients carry alpha.
  std::vector<detail::FlattenEdge> edges = graph.local;
  for (auto e : graph.global) {
    e.coeff *= params.alpha;
    edges.push_back(e);
  }

  const LinearImage ps = detail::scaled(p, kFlattenScale);
  LinearImage q = ps;
  FlattenResult result{p, seg, {}, {}, {}, 0};
  result.energy_history.push_back(detail::smoothed_energy(graph, q, ps, params));

  const double eps = kFlattenScale * params.irls_eps;
  std::vector<double> u(edges.size()), rhs(n), x(n);
  for (std::size_t it = 0; it < params.max_iters; ++it) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t e = 0; e < edges.size(); ++e) {
        const double d = std::abs(q(edges[e].i, c) - q(edges[e].j, c));
        u[e] = edges[e].coeff / (2.0 * std::max(d, eps));
      }
      for (std::size_t k = 0; k < n; ++k) {
        rhs[k] = params.beta * ps(k, c);
        x[k] = q(k, c);
      }
      result.cg_residuals.push_back(
          detail::solve_channel(edges, u, rhs, params.beta, x, params.cg_tol, params.cg_max_iters, it, c));
      for (std::size_t k = 0; k < n; ++k) q(k, c) = x[k];
    }
    ++result.iterations;
    const double previous = result.energy_history.back();
    const double current = detail::smoothed_energy(graph, q, ps, params);
    result.energy_history.push_back(current);
    if (previous <= 0.0 || (previous - current) / previous < params.rel_tol) break;
  }
  result.flat = detail::scaled(q, 1.0 / kFlattenScale);
  result.energy = flatten_energy(result.flat, p, seg, params);
  return result;
}

inline FlattenResult flatten(const LinearImage& p, const FlattenParams& params) {
  validate(params);
  return flatten(p, slic_superpixels(p, params.n_superpixels, params.compactness), params);
}

}  // namespace intrinsic
