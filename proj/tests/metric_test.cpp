#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "intrinsic/metric.hpp"

using namespace intrinsic;

namespace {

ResolvedComparison pair_at(std::size_t x1, std::size_t x2, Judgment j, double w) {
  return {{0, 1, j, w}, {x1, 0}, {x2, 0}};
}

constexpr HingeParams kFigureParams{0.1, 0.05};

}  // namespace

TEST(ClassifyPair, Examples) {
  const WhdrParams p{0.1};
  EXPECT_EQ(classify_pair(0.5, 0.5, p), Judgment::Equal);
  EXPECT_EQ(classify_pair(0.4, 0.5, p), Judgment::Darker1);  // 0.5 / 0.4 = 1.25 > 1.1
  EXPECT_EQ(classify_pair(0.5, 0.46, p), Judgment::Equal);   // 1.087 <= 1.1
  EXPECT_EQ(classify_pair(0.0, 0.0, p), Judgment::Equal);
  EXPECT_EQ(classify_pair(0.0, 0.1, p), Judgment::Darker1);
  EXPECT_THROW(classify_pair(-0.1, 0.5, p), ArgumentError);
}

TEST(Whdr, HandComputedWeights) {
  IntensityMap r(3, 1, std::vector<double>{0.4, 0.5, 0.5});
  const std::vector<ResolvedComparison> agree = {pair_at(0, 1, Judgment::Darker1, 1.0), pair_at(1, 2, Judgment::Equal, 2.0)};
  EXPECT_EQ(whdr(agree, r).value(), 0.0);

  const std::vector<ResolvedComparison> mixed = {pair_at(0, 1, Judgment::Darker1, 1.0),
                                                 pair_at(1, 2, Judgment::Darker2, 0.5)};
  EXPECT_DOUBLE_EQ(whdr(mixed, r).value(), 0.5 / 1.5);

  const std::vector<ResolvedComparison> wrong = {pair_at(0, 1, Judgment::Equal, 1.0), pair_at(1, 0, Judgment::Darker1, 3.0)};
  EXPECT_EQ(whdr(wrong, r).value(), 1.0);
}

TEST(Whdr, UndefinedWithoutWeight) {
  IntensityMap r(2, 1, 0.5);
  EXPECT_FALSE(whdr(std::vector<ResolvedComparison>{}, r).has_value());
  const std::vector<ResolvedComparison> zero = {pair_at(0, 1, Judgment::Equal, 0.0)};
  EXPECT_FALSE(whdr(zero, r).has_value());
}

TEST(Whdr, PixelOutsideMapThrows) {
  IntensityMap r(2, 1, 0.5);
  const std::vector<ResolvedComparison> bad = {pair_at(0, 5, Judgment::Equal, 1.0)};
  EXPECT_THROW(whdr(bad, r), ArgumentError);
}

TEST(Whdr, ScaleInvariantOnPowerOfTwoScales) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> val(0.01, 1.0);
  std::uniform_int_distribution<std::size_t> px(0, 15);
  std::uniform_int_distribution<int> lab(0, 2);
  IntensityMap r(16, 1);
  for (double& v : r.data()) v = val(rng);
  std::vector<ResolvedComparison> js;
  for (int i = 0; i < 40; ++i) js.push_back(pair_at(px(rng), px(rng), static_cast<Judgment>(lab(rng)), val(rng)));
  const double base = whdr(js, r).value();
  for (double c : {0.25, 0.5, 2.0, 8.0}) {
    IntensityMap scaled = r;
    for (double& v : scaled.data()) v *= c;
    EXPECT_EQ(whdr(js, scaled).value(), base) << c;
  }
}

TEST(HingeLoss, FigureExamples) {
  // Ratios are formed as (r1 + guard) / (r2 + guard), so pick r2 = 1.
  EXPECT_EQ(hinge_loss(1.0, 1.0, Judgment::Equal, kFigureParams), 0.0);
  EXPECT_NEAR(hinge_loss(1.0, 1.0, Judgment::Darker2, kFigureParams), 0.15, 1e-12);
  EXPECT_NEAR(hinge_loss(1.2, 1.0, Judgment::Equal, kFigureParams), 0.15, 1e-9);
  EXPECT_EQ(hinge_loss(0.8, 1.0, Judgment::Darker1, kFigureParams), 0.0);
  EXPECT_NEAR(hinge_loss(1.0, 1.0, Judgment::Darker1, kFigureParams), 1.0 - 1.0 / 1.15, 1e-12);
}

TEST(HingeLoss, ContinuousAndDeadZoneIffMarginBelowThreshold) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  for (int t = 0; t < 200; ++t) {
    const HingeParams p{u(rng), u(rng)};
    // Continuity: small steps in rho give small changes in loss (slope magnitude <= 1).
    for (double rho = 0.3; rho < 2.0; rho += 0.01) {
      for (auto j : {Judgment::Darker1, Judgment::Darker2, Judgment::Equal}) {
        EXPECT_LE(std::abs(hinge_loss_ratio(rho + 1e-7, j, p) - hinge_loss_ratio(rho, j, p)), 1e-7 + 1e-12);
      }
    }
    const double lo = 1.0 / (1.0 + p.delta - p.xi), hi = 1.0 + p.delta - p.xi;
    if (p.xi <= p.delta) {
      EXPECT_EQ(hinge_loss_ratio(1.0, Judgment::Equal, p), 0.0);
    } else {
      for (double rho = 0.5; rho < 1.6; rho += 0.001) EXPECT_GT(hinge_loss_ratio(rho, Judgment::Equal, p), 0.0);
      EXPECT_GT(lo, hi);
    }
  }
}

TEST(HingeSubgradient, HandDerivedActiveBranch) {
  const double r1 = 0.5, r2 = 0.5;
  const auto g = hinge_subgradient(r1, r2, Judgment::Darker2, kFigureParams);
  EXPECT_NEAR(g.d_r1, -1.0 / r2, 1e-8);
  EXPECT_NEAR(g.d_r2, r1 / (r2 * r2), 1e-8);
}

TEST(HingeSubgradient, FlatRegionIsZero) {
  const auto g = hinge_subgradient(0.5, 0.5, Judgment::Equal, kFigureParams);
  EXPECT_EQ(g.d_r1, 0.0);
  EXPECT_EQ(g.d_r2, 0.0);
  const double kink = 1.0 + kFigureParams.delta + kFigureParams.xi;
  EXPECT_EQ(hinge_slope_ratio(kink, Judgment::Darker2, kFigureParams), 0.0);
  EXPECT_EQ(hinge_slope_ratio(1.0 / (1.0 + kFigureParams.delta + kFigureParams.xi), Judgment::Darker1, kFigureParams), 0.0);
}

TEST(HingeSubgradient, MatchesCentralDifferenceAtEqualBranch) {
  const double r1 = 0.65, r2 = 0.5, h = 1e-6;
  const auto g = hinge_subgradient(r1, r2, Judgment::Equal, kFigureParams);
  const double fd1 = (hinge_loss(r1 + h, r2, Judgment::Equal, kFigureParams) -
                      hinge_loss(r1 - h, r2, Judgment::Equal, kFigureParams)) / (2 * h);
  const double fd2 = (hinge_loss(r1, r2 + h, Judgment::Equal, kFigureParams) -
                      hinge_loss(r1, r2 - h, Judgment::Equal, kFigureParams)) / (2 * h);
  EXPECT_LT(std::abs(g.d_r1 - fd1) / std::abs(fd1), 1e-4);
  EXPECT_LT(std::abs(g.d_r2 - fd2) / std::abs(fd2), 1e-4);
}

TEST(WeightedHingeSum, ZeroLossRegion) {
  IntensityMap r(2, 1, 0.5);
  const std::vector<ResolvedComparison> js = {pair_at(0, 1, Judgment::Equal, 1.0)};
  const auto s = weighted_hinge_sum(js, r, kFigureParams).value();
  EXPECT_EQ(s.loss, 0.0);
  for (double v : s.gradient.data()) EXPECT_EQ(v, 0.0);
}

TEST(WeightedHingeSum, SingletonReduces) {
  IntensityMap r(2, 1, std::vector<double>{0.4, 0.6});
  const std::vector<ResolvedComparison> js = {pair_at(0, 1, Judgment::Darker2, 2.5)};
  const auto s = weighted_hinge_sum(js, r, kFigureParams).value();
  EXPECT_DOUBLE_EQ(s.loss, hinge_loss(0.4, 0.6, Judgment::Darker2, kFigureParams));
  const auto g = hinge_subgradient(0.4, 0.6, Judgment::Darker2, kFigureParams);
  EXPECT_DOUBLE_EQ(s.gradient(0), g.d_r1);
  EXPECT_DOUBLE_EQ(s.gradient(1), g.d_r2);
}

TEST(WeightedHingeSum, SharedPixelAccumulates) {
  IntensityMap r(3, 1, std::vector<double>{0.3, 0.6, 0.9});
  const auto a = pair_at(1, 0, Judgment::Darker1, 1.0);
  const auto b = pair_at(1, 2, Judgment::Darker2, 3.0);
  const std::vector<ResolvedComparison> both = {a, b};
  const auto s = weighted_hinge_sum(both, r, kFigureParams).value();
  const auto sa = weighted_hinge_sum(std::vector<ResolvedComparison>{a}, r, kFigureParams).value();
  const auto sb = weighted_hinge_sum(std::vector<ResolvedComparison>{b}, r, kFigureParams).value();
  // Separate evaluations are each normalised by their own weight.
  EXPECT_NEAR(s.gradient(1), 0.25 * sa.gradient(1) + 0.75 * sb.gradient(1), 1e-15);
  EXPECT_NE(sa.gradient(1), 0.0);
  EXPECT_NE(sb.gradient(1), 0.0);
  EXPECT_NEAR(s.loss, 0.25 * sa.loss + 0.75 * sb.loss, 1e-15);
}

TEST(WeightedHingeSum, UndefinedWithoutWeight) {
  IntensityMap r(2, 1, 0.5);
  EXPECT_FALSE(weighted_hinge_sum(std::vector<ResolvedComparison>{}, r, kFigureParams).has_value());
}

TEST(HingeParams, Validation) {
  IntensityMap r(2, 1, 0.5);
  const std::vector<ResolvedComparison> js = {pair_at(0, 1, Judgment::Equal, 1.0)};
  EXPECT_THROW(weighted_hinge_sum(js, r, HingeParams{-0.1, 0.0}), ArgumentError);
  EXPECT_THROW(weighted_hinge_sum(js, r, HingeParams{0.1, 1.1}), ArgumentError);
  EXPECT_THROW(whdr(js, r, WhdrParams{-1.0}), ArgumentError);
}

TEST(Summarize, MeanMedianExcluded) {
  const std::vector<std::optional<double>> v = {0.1, std::nullopt, 0.3, 0.2, 0.6};
  const auto s = summarize(v);
  EXPECT_EQ(s.evaluated, 4u);
  EXPECT_EQ(s.excluded, 1u);
  EXPECT_DOUBLE_EQ(s.mean, 0.3);
  EXPECT_DOUBLE_EQ(s.median, 0.25);
}
