#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "intrinsic/flatten.hpp"
#include "test_support.hpp"

using namespace intrinsic;
using intrinsic::test::max_abs_diff;
using intrinsic::test::random_image;

namespace {

SuperpixelSegmentation single_superpixel(std::size_t w, std::size_t h, std::size_t rep = 0) {
  return {w, h, std::vector<std::size_t>(w * h, 0), {rep}};
}

FlattenParams small_params() {
  FlattenParams p;
  p.n_superpixels = 16;
  return p;
}

LinearImage two_tone(std::size_t w, std::size_t h, Rgb left, Rgb right, double ramp, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> noise(-ramp, ramp);
  LinearImage img(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const Rgb base = x < w / 2 ? left : right;
      const double shift = noise(rng);
      img.set_pixel(y * w + x, {base[0] + shift, base[1] + shift, base[2] + shift});
    }
  }
  return img;
}

double half_mean(const LinearImage& img, bool left, std::size_t c) {
  double s = 0.0, n = 0.0;
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = left ? 0 : img.width() / 2; x < (left ? img.width() / 2 : img.width()); ++x) {
      s += img.at(x, y, c);
      n += 1.0;
    }
  }
  return s / n;
}

// Per-channel variance within one half, summed over channels.
double half_variance(const LinearImage& img, bool left) {
  double s = 0.0, n = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    const double m = half_mean(img, left, c);
    for (std::size_t y = 0; y < img.height(); ++y) {
      for (std::size_t x = left ? 0 : img.width() / 2; x < (left ? img.width() / 2 : img.width()); ++x) {
        s += (img.at(x, y, c) - m) * (img.at(x, y, c) - m);
        n += 1.0;
      }
    }
  }
  return 3.0 * s / n;
}

}  // namespace

TEST(Affinity, Examples) {
  const Feature a{0.0, 0.0, 0.0};
  EXPECT_EQ(affinity(a, a, 0.25), 1.0);
  // |f_i - f_j|^2 = 2 sigma^2 gives exp(-1).
  const Feature b{0.25, 0.25, 0.0};
  EXPECT_NEAR(affinity(a, b, 0.25), std::exp(-1.0), 1e-15);
  EXPECT_EQ(affinity(a, b, 0.25), affinity(b, a, 0.25));
}

TEST(Affinity, FeatureScalesLightness) {
  const auto white = flatten_feature({1, 1, 1}, 1.2);
  EXPECT_NEAR(white[0], 1.2, 1e-5);
  EXPECT_NEAR(white[1], 0.0, 1e-5);
  const auto black = flatten_feature({0, 0, 0}, 1.2);
  EXPECT_EQ(black[0], 0.0);
}

TEST(Slic, SingleSuperpixelCoversImage) {
  std::mt19937_64 rng(41);
  const auto seg = slic_superpixels(random_image<3>(9, 7, rng), 1);
  EXPECT_EQ(seg.count(), 1u);
  for (auto l : seg.labels) EXPECT_EQ(l, 0u);
  EXPECT_LT(seg.representatives[0], 63u);
}

TEST(Slic, ConstantImageRepresentativesAreFirstMembers) {
  const auto seg = slic_superpixels(LinearImage(12, 12, 0.4), 4);
  EXPECT_GE(seg.count(), 1u);
  for (std::size_t k = 0; k < seg.count(); ++k) {
    std::size_t first = seg.labels.size();
    for (std::size_t p = 0; p < seg.labels.size(); ++p) {
      if (seg.labels[p] == k) {
        first = p;
        break;
      }
    }
    EXPECT_EQ(seg.representatives[k], first);
  }
}

TEST(Slic, TwoToneSplitsAtTheEdge) {
  LinearImage img(16, 8, 0.05);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 8; x < 16; ++x) img.set_pixel(y * 16 + x, {0.9, 0.6, 0.2});
  const auto seg = slic_superpixels(img, 2);
  ASSERT_EQ(seg.count(), 2u);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 16; ++x) EXPECT_EQ(seg.labels[y * 16 + x], seg.labels[x < 8 ? 0 : 8]);
  }
  EXPECT_NE(seg.labels[0], seg.labels[8]);
}

TEST(Slic, LabelsAreContiguousAndConnected) {
  std::mt19937_64 rng(42);
  const auto img = random_image<3>(24, 20, rng);
  const auto seg = slic_superpixels(img, 12);
  std::set<std::size_t> seen(seg.labels.begin(), seg.labels.end());
  EXPECT_EQ(seen.size(), seg.count());
  EXPECT_EQ(*seen.rbegin(), seg.count() - 1);
  for (std::size_t k = 0; k < seg.count(); ++k) EXPECT_EQ(seg.labels[seg.representatives[k]], k);
}

TEST(FlattenEnergy, BlackWhitePair) {
  LinearImage p(2, 1);
  p.set_pixel(0, {0, 0, 0});
  p.set_pixel(1, {1, 1, 1});
  const FlattenParams params;
  const auto e = flatten_energy(p, p, single_superpixel(2, 1), params);
  const double w = affinity(flatten_feature({0, 0, 0}, params.kappa), flatten_feature({1, 1, 1}, params.kappa), params.sigma);
  // Both ordered pairs, three channels of unit difference each.
  EXPECT_NEAR(e.local, 2.0 * w * 3.0 * kFlattenScale, 1e-15);
  EXPECT_EQ(e.global, 0.0);
  EXPECT_EQ(e.data, 0.0);

  const LinearImage grey(2, 1, 0.5);
  const auto eg = flatten_energy(grey, p, single_superpixel(2, 1), params);
  EXPECT_EQ(eg.local, 0.0);
  const double s2 = kFlattenScale * kFlattenScale;
  EXPECT_NEAR(eg.data, 6 * 0.25 * s2, 1e-9);
  EXPECT_NEAR(eg.total, params.beta * 1.5 * s2, 1e-9);
}

TEST(FlattenEnergy, GlobalTermCountsOrderedRepresentativePairs) {
  LinearImage p(3, 1);
  p.set_pixel(0, {0.2, 0.2, 0.2});
  p.set_pixel(1, {0.25, 0.2, 0.2});
  p.set_pixel(2, {0.2, 0.2, 0.3});
  FlattenParams params;
  params.neighborhood = 1;
  const SuperpixelSegmentation seg{3, 1, {0, 1, 2}, {0, 1, 2}};
  const auto e = flatten_energy(p, p, seg, params);
  EXPECT_EQ(e.local, 0.0);
  double expected = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < 3; ++c) d += std::abs(p(i, c) - p(j, c));
      expected += kFlattenScale * affinity(flatten_feature(p.pixel(i), params.kappa), flatten_feature(p.pixel(j), params.kappa),
                           params.sigma) * d;
    }
  }
  EXPECT_NEAR(e.global, expected, 1e-12);
  const SuperpixelSegmentation relabelled{3, 1, {2, 0, 1}, {1, 2, 0}};
  EXPECT_NEAR(flatten_energy(p, p, relabelled, params).global, expected, 1e-12);
}

TEST(Flatten, HugeDataWeightReturnsInput) {
  std::mt19937_64 rng(43);
  const auto img = random_image<3>(16, 16, rng);
  auto params = small_params();
  params.beta = 1e6;
  const auto result = flatten(img, params);
  EXPECT_LT(max_abs_diff(result.flat, img), 1e-3);
}

TEST(Flatten, ConstantImageIsFixedPoint) {
  const LinearImage img(10, 8, 0.3);
  const auto result = flatten(img, small_params());
  for (double v : result.flat.data()) EXPECT_NEAR(v, 0.3, 1e-15);
  EXPECT_LT(result.energy.total, 1e-20);
}

TEST(Flatten, RemovesTextureAndKeepsTheEdge) {
  std::mt19937_64 rng(44);
  const auto img = two_tone(24, 16, {0.1, 0.08, 0.05}, {0.7, 0.5, 0.4}, 0.02, rng);
  const auto result = flatten(img, small_params());
  for (std::size_t c = 0; c < 3; ++c) {
    const double edge_before = half_mean(img, false, c) - half_mean(img, true, c);
    const double edge_after = half_mean(result.flat, false, c) - half_mean(result.flat, true, c);
    EXPECT_LT(std::abs(edge_after - edge_before), 0.1 * edge_before) << c;
  }
  EXPECT_LT(half_variance(result.flat, true), 0.5 * half_variance(img, true));
  EXPECT_LT(half_variance(result.flat, false), 0.5 * half_variance(img, false));
}

TEST(Flatten, EnergyNeverIncreases) {
  std::mt19937_64 rng(45);
  for (int t = 0; t < 3; ++t) {
    const auto img = random_image<3>(20, 20, rng);
    const auto result = flatten(img, small_params());
    ASSERT_GE(result.energy_history.size(), 2u);
    const double e0 = result.energy_history.front();
    for (std::size_t k = 1; k < result.energy_history.size(); ++k) {
      EXPECT_LE(result.energy_history[k], result.energy_history[k - 1] + 1e-8 * e0) << k;
    }
    EXPECT_LE(result.energy.total, flatten_energy(img, img, result.segmentation, small_params()).total);
  }
}

TEST(Flatten, CommutesWithMirroring) {
  std::mt19937_64 rng(46);
  const auto img = random_image<3>(12, 10, rng);
  auto params = small_params();
  params.n_superpixels = 1;
  params.cg_tol = 1e-10;
  const auto a = flatten(img, single_superpixel(12, 10), params).flat;
  const auto b = flatten(mirror_horizontal(img), single_superpixel(12, 10), params).flat;
  EXPECT_LT(max_abs_diff(mirror_horizontal(a), b), 1e-6);
}

TEST(Flatten, InnerSolverFailureIsReported) {
  std::mt19937_64 rng(47);
  auto params = small_params();
  params.cg_max_iters = 1;
  params.cg_tol = 1e-15;
  try {
    flatten(random_image<3>(12, 12, rng), params);
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_NE(std::string(e.what()).find("outer iteration 0"), std::string::npos);
  }
}

TEST(Flatten, RejectsBadParameters) {
  auto params = small_params();
  params.neighborhood = 4;
  EXPECT_THROW(flatten(LinearImage(4, 4), params), ArgumentError);
  params = small_params();
  params.beta = 0.0;
  EXPECT_THROW(flatten(LinearImage(4, 4), params), ArgumentError);
  EXPECT_THROW(flatten(LinearImage(4, 4), single_superpixel(3, 4), small_params()), ArgumentError);
}
