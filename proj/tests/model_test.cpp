#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "intrinsic/model.hpp"
#include "test_support.hpp"

using namespace intrinsic;

namespace {

PixelNet unit_net() {
  // n = 1, f = 1: W = (1,1,1), b = 0, fuse weight 1, fuse bias 0.
  return PixelNet({1, 1}, {1.0, 1.0, 1.0, 0.0, 1.0, 0.0});
}

// Central differences of L = sum_i upstream[i] * forward(net, pixels[i]).
std::vector<double> finite_difference(PixelNet net, const std::vector<Rgb>& pixels, const std::vector<double>& upstream,
                                      double h = 1e-6) {
  auto loss = [&](const PixelNet& n) {
    double l = 0.0;
    for (std::size_t i = 0; i < pixels.size(); ++i) l += upstream[i] * forward(n, pixels[i]);
    return l;
  };
  std::vector<double> grad(net.parameters().size());
  for (std::size_t k = 0; k < grad.size(); ++k) {
    const double saved = net.parameters()[k];
    net.parameters()[k] = saved + h;
    const double up = loss(net);
    net.parameters()[k] = saved - h;
    const double down = loss(net);
    net.parameters()[k] = saved;
    grad[k] = (up - down) / (2 * h);
  }
  return grad;
}

}  // namespace

TEST(PixelNet, ParameterLayout) {
  const PixelNet net({5, 32});
  EXPECT_EQ(net.parameters().size(), (3 * 32 + 32) + 4 * (32 * 32 + 32) + 5 * 32 + 1);
  EXPECT_EQ(net.weight_offset(0), 0u);
  EXPECT_EQ(net.bias_offset(0), 96u);
  EXPECT_EQ(net.weight_offset(1), 128u);
  EXPECT_EQ(net.fuse_bias_offset(), net.parameters().size() - 1);
  EXPECT_THROW(PixelNet({0, 4}), ArgumentError);
  EXPECT_THROW(PixelNet({1, 0}), ArgumentError);
}

TEST(Forward, ZeroNetworkIsOneHalf) {
  const PixelNet net({3, 4});
  EXPECT_EQ(forward(net, {0.2, 0.9, 0.1}), 0.5);
  EXPECT_EQ(forward(net, {0.0, 0.0, 0.0}), 0.5);
}

TEST(Forward, HandSetSingleUnit) {
  EXPECT_NEAR(forward(unit_net(), {0.2, 0.4, 0.6}), 1.0 / (1.0 + std::exp(-1.2)), 1e-15);
  EXPECT_NEAR(forward(unit_net(), {0.2, 0.4, 0.6}), 0.768525, 1e-6);
}

TEST(Forward, DeadReluGivesFuseBias) {
  PixelNet net({2, 3});
  auto p = net.parameters();
  for (std::size_t k = net.bias_offset(0); k < net.bias_offset(0) + 3; ++k) p[k] = -10.0;
  for (std::size_t k = net.bias_offset(1); k < net.bias_offset(1) + 3; ++k) p[k] = -10.0;
  std::fill(p.begin() + static_cast<std::ptrdiff_t>(net.fuse_weight_offset()), p.end() - 1, 0.7);
  p[net.fuse_bias_offset()] = 0.3;
  for (const Rgb x : {Rgb{0, 0, 0}, Rgb{1, 1, 1}, Rgb{0.2, 0.5, 0.9}}) EXPECT_EQ(forward(net, x), sigmoid(0.3));
}

TEST(ForwardImage, PerPixelAndPermutationEquivariant) {
  std::mt19937_64 rng(1);
  const auto net = initialize_pixel_net({3, 8}, 4);
  const auto img = test::random_image<3>(9, 7, rng);
  const auto r = forward_image(net, img);
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    EXPECT_EQ(r(p), forward(net, img.pixel(p)));
    EXPECT_GT(r(p), 0.0);
    EXPECT_LT(r(p), 1.0);
  }
  std::vector<std::size_t> perm(img.pixel_count());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  LinearImage shuffled(img.width(), img.height());
  for (std::size_t p = 0; p < perm.size(); ++p) shuffled.set_pixel(p, img.pixel(perm[p]));
  const auto rs = forward_image(net, shuffled);
  for (std::size_t p = 0; p < perm.size(); ++p) EXPECT_EQ(rs(p), r(perm[p]));

  const auto flat = forward_image(net, LinearImage(5, 5, 0.3));
  for (double v : flat.data()) EXPECT_EQ(v, flat(0));
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
  const auto net = initialize_pixel_net({2, 4}, 2);
  const auto grads = backward(net, LinearImage(3, 3, 0.4), IntensityMap(3, 3));
  for (double g : grads) EXPECT_EQ(g, 0.0);
}

TEST(Backward, HandDifferentiatedSingleUnit) {
  const auto net = unit_net();
  LinearImage img(1, 1);
  img.set_pixel(0, {0.2, 0.4, 0.6});
  const double upstream = 0.7;
  const auto grads = backward(net, img, IntensityMap(1, 1, upstream));
  const double r = sigmoid(1.2);
  const double ds = upstream * r * (1 - r);
  const std::vector<double> expected = {ds * 0.2, ds * 0.4, ds * 0.6, ds, ds * 1.2, ds};
  ASSERT_EQ(grads.size(), expected.size());
  for (std::size_t k = 0; k < grads.size(); ++k) EXPECT_NEAR(grads[k], expected[k], 1e-15) << k;
}

TEST(Backward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0), g(-1.0, 1.0);
  for (int trial = 0; trial < 6; ++trial) {
    auto net = initialize_pixel_net({1 + static_cast<std::size_t>(trial % 4), 2 + static_cast<std::size_t>(trial)}, 100 + trial);
    for (double& p : net.parameters()) p += 0.1 * g(rng);  // nonzero biases
    std::vector<Rgb> pixels(4);
    std::vector<double> upstream(4);
    for (std::size_t i = 0; i < 4; ++i) {
      pixels[i] = {u(rng), u(rng), u(rng)};
      upstream[i] = g(rng);
    }
    std::vector<double> grads(net.parameters().size(), 0.0);
    backward_pixels(net, pixels, upstream, grads);
    const auto fd = finite_difference(net, pixels, upstream);
    for (std::size_t k = 0; k < grads.size(); ++k) {
      const double scale = std::max({std::abs(grads[k]), std::abs(fd[k]), 1e-6});
      EXPECT_LT(std::abs(grads[k] - fd[k]) / scale, 1e-4) << "trial " << trial << " param " << k;
    }
  }
}

TEST(Backward, ShapeMismatchThrows) {
  const PixelNet net({1, 2});
  EXPECT_THROW(backward(net, LinearImage(2, 2), IntensityMap(3, 2)), ArgumentError);
}

TEST(Adam, ZeroGradientKeepsParameters) {
  std::vector<double> params = {0.5, -0.25};
  AdamState state(2);
  adam_step(params, std::vector<double>{0.0, 0.0}, state);
  EXPECT_EQ(params, (std::vector<double>{0.5, -0.25}));
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  std::vector<double> params = {0.0, 0.0};
  AdamState state(2);
  adam_step(params, std::vector<double>{3.0, -0.02}, state);
  // Bias-corrected moments are g and g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(params[0], -0.001 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(params[1], 0.001 * 0.02 / (0.02 + 1e-8), 1e-15);
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  std::vector<double> params = {0.0};
  AdamState state(1);
  double last = 0.0;
  for (int i = 0; i < 500; ++i) {
    const double before = params[0];
    adam_step(params, std::vector<double>{0.3}, state);
    last = params[0] - before;
  }
  EXPECT_NEAR(last, -0.001, 1e-9);
}

TEST(Adam, NonFiniteGradientReportsStep) {
  std::vector<double> params = {0.0};
  AdamState state(1);
  adam_step(params, std::vector<double>{1.0}, state);
  try {
    adam_step(params, std::vector<double>{std::nan("")}, state);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos);
  }
}

namespace {

AnnotatedImage two_pixel_equal_image() {
  AnnotatedImage item{"eq", LinearImage(2, 1, 0.4), {}};
  item.judgments.image_id = "eq";
  item.judgments.points = {{1, {0.1, 0.5}}, {2, {0.9, 0.5}}};
  item.judgments.comparisons = {{1, 2, Judgment::Equal, 1.0}};
  return item;
}

}  // namespace

TEST(Train, ZeroEpochsReturnsInitialisation) {
  const std::vector<AnnotatedImage> corpus = {two_pixel_equal_image()};
  TrainOptions opt;
  opt.config = {2, 4};
  opt.epochs = 0;
  opt.seed = 5;
  const auto result = train(corpus, opt);
  EXPECT_EQ(result.net, initialize_pixel_net({2, 4}, 5));
  EXPECT_TRUE(result.epoch_loss.empty());
}

TEST(Train, IdenticalEqualPairStaysAtZeroLoss) {
  const std::vector<AnnotatedImage> corpus = {two_pixel_equal_image()};
  TrainOptions opt;
  opt.config = {2, 4};
  opt.epochs = 3;
  opt.resolution = 16;
  const auto result = train(corpus, opt);
  ASSERT_EQ(result.epoch_loss.size(), 3u);
  for (double l : result.epoch_loss) EXPECT_EQ(l, 0.0);
  EXPECT_EQ(result.net, initialize_pixel_net({2, 4}, opt.seed));
}

TEST(Train, ErrorsOnEmptyOrUnweightedCorpus) {
  TrainOptions opt;
  EXPECT_THROW(train(std::vector<AnnotatedImage>{}, opt), TrainingError);
  auto item = two_pixel_equal_image();
  item.judgments.comparisons[0].weight = 0.0;
  EXPECT_THROW(train(std::vector<AnnotatedImage>{item}, opt), TrainingError);
}

TEST(Train, DeterministicUnderSeed) {
  std::mt19937_64 rng(2);
  std::vector<AnnotatedImage> corpus;
  for (int i = 0; i < 4; ++i) {
    AnnotatedImage item{std::to_string(i), test::random_image<3>(8, 8, rng), {}};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (PointId k = 0; k < 10; ++k) item.judgments.points[k] = {u(rng), u(rng)};
    for (PointId k = 0; k + 1 < 10; ++k) {
      item.judgments.comparisons.push_back({k, k + 1, static_cast<Judgment>(k % 3), 1.0});
    }
    corpus.push_back(std::move(item));
  }
  TrainOptions opt;
  opt.config = {2, 6};
  opt.epochs = 4;
  opt.resolution = 32;
  opt.seed = 99;
  const auto a = train(corpus, opt);
  const auto b = train(corpus, opt);
  EXPECT_EQ(a.net, b.net);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_NE(a.net, initialize_pixel_net(opt.config, opt.seed));
}

TEST(LookupTable, ZeroNetworkAndGrayAxis) {
  const auto lut = lookup_table_image(PixelNet({2, 3}), 255, 36, 8);
  EXPECT_EQ(lut.input.width(), 36u);
  EXPECT_EQ(lut.input.height(), 8u);
  EXPECT_TRUE(lut.prediction.same_shape(lut.input));
  for (double v : lut.prediction.data()) EXPECT_EQ(v, 0.5);

  const auto trained = initialize_pixel_net({2, 5}, 3);
  const auto lut2 = lookup_table_image(trained, 200, 24, 5);
  for (std::size_t x = 0; x < 24; ++x) {
    EXPECT_EQ(lut2.prediction.at(x, 0), lut2.prediction.at(0, 0));
    EXPECT_EQ(lut2.input.pixel(x, 0), (Rgb{srgb_decode(200 / 255.0), srgb_decode(200 / 255.0), srgb_decode(200 / 255.0)}));
  }
}

TEST(Weights, RoundTripAndSidecar) {
  const auto dir = std::filesystem::temp_directory_path() / "intrinsic_model_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "w.bin";
  const auto net = initialize_pixel_net({3, 5}, 12);
  save_weights(path, net);
  EXPECT_EQ(load_weights(path), net);
  EXPECT_EQ(std::filesystem::file_size(path), 8 + 12 + 8 * net.parameters().size());
  std::ifstream side(path.string() + ".json");
  const auto meta = nlohmann::json::parse(side);
  EXPECT_EQ(meta["n_layers"], 3);
  EXPECT_EQ(meta["n_filters"], 5);
}

TEST(Weights, RejectsCorruptFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "intrinsic_model_test";
  std::filesystem::create_directories(dir);
  EXPECT_THROW(load_weights(dir / "missing.bin"), IoError);
  {
    std::ofstream out(dir / "bad.bin", std::ios::binary);
    out << "NOTANET!";
  }
  EXPECT_THROW(load_weights(dir / "bad.bin"), IoError);
  save_weights(dir / "trunc.bin", PixelNet({1, 2}));
  std::filesystem::resize_file(dir / "trunc.bin", 30);
  EXPECT_THROW(load_weights(dir / "trunc.bin"), IoError);
}
