#pragma once

// Per-pixel reflectance network: n ReLU layers of f units on an RGB pixel, the
// outputs of all hidden layers concatenated and fused by a single linear unit,
// then a sigmoid. Equivalent to a fully convolutional net with 1x1 kernels.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "intrinsic/annotations.hpp"
#include "intrinsic/errors.hpp"
#include "intrinsic/image.hpp"
#include "intrinsic/metric.hpp"
#include "json.hpp"

namespace intrinsic {

struct PixelNetConfig {
  std::size_t n_layers = 5;
  std::size_t n_filters = 32;

  friend bool operator==(const PixelNetConfig&, const PixelNetConfig&) = default;
};

// Parameters live in one flat vector so optimisers and gradient buffers share
// a layout: for each hidden layer W (f x in, row-major) then b (f); then the
// fuse weights (n*f) and the fuse bias.
class PixelNet {
 public:
  PixelNet() : PixelNet(PixelNetConfig{}) {}

  explicit PixelNet(const PixelNetConfig& config) : config_(config) {
    if (config.n_layers < 1 || config.n_filters < 1) {
      throw ArgumentError("PixelNet needs at least one layer and one filter");
    }
    params_.assign(parameter_count(config), 0.0);
  }

  PixelNet(const PixelNetConfig& config, std::vector<double> params) : PixelNet(config) {
    if (params.size() != params_.size()) throw ArgumentError("PixelNet parameter vector has the wrong length");
    params_ = std::move(params);
  }

  static std::size_t parameter_count(const PixelNetConfig& c) {
    const std::size_t f = c.n_filters;
    return (3 * f + f) + (c.n_layers - 1) * (f * f + f) + c.n_layers * f + 1;
  }

  const PixelNetConfig& config() const noexcept { return config_; }
  std::size_t input_dim(std::size_t layer) const noexcept { return layer == 0 ? 3 : config_.n_filters; }

  std::size_t weight_offset(std::size_t layer) const noexcept {
    const std::size_t f = config_.n_filters;
    return layer == 0 ? 0 : (3 * f + f) + (layer - 1) * (f * f + f);
  }
  std::size_t bias_offset(std::size_t layer) const noexcept {
    return weight_offset(layer) + config_.n_filters * input_dim(layer);
  }
  std::size_t fuse_weight_offset() const noexcept { return weight_offset(config_.n_layers); }
  std::size_t fuse_bias_offset() const noexcept { return params_.size() - 1; }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  friend bool operator==(const PixelNet&, const PixelNet&) = default;

 private:
  PixelNetConfig config_;
  std::vector<double> params_;
};

// He-style uniform fan-in initialisation; biases start at zero.
inline PixelNet initialize_pixel_net(const PixelNetConfig& config, std::uint64_t seed) {
  PixelNet net(config);
  std::mt19937_64 rng(seed);
  auto params = net.parameters();
  auto fill = [&](std::size_t offset, std::size_t count, double fan_in) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const double limit = std::sqrt(6.0 / fan_in);
    for (std::size_t i = 0; i < count; ++i) params[offset + i] = limit * dist(rng);
  };
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    fill(net.weight_offset(l), config.n_filters * net.input_dim(l), static_cast<double>(net.input_dim(l)));
  }
  fill(net.fuse_weight_offset(), config.n_layers * config.n_filters,
       static_cast<double>(config.n_layers * config.n_filters));
  return net;
}

inline double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

namespace detail {

// Hidden activations of every layer for one pixel, laid out layer-major.
struct PixelActivations {
  std::vector<double> hidden;  // n_layers * n_filters, post-ReLU
  double output = 0.0;
};

inline void forward_pixel(const PixelNet& net, const Rgb& x, PixelActivations& act) {
  const auto& cfg = net.config();
  const std::size_t f = cfg.n_filters;
  const auto p = net.parameters();
  act.hidden.resize(cfg.n_layers * f);
  double s = p[net.fuse_bias_offset()];
  const double* fuse = &p[net.fuse_weight_offset()];
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::size_t in_dim = net.input_dim(l);
    const double* in = l == 0 ? x.data() : &act.hidden[(l - 1) * f];
    const double* w = &p[net.weight_offset(l)];
    const double* b = &p[net.bias_offset(l)];
    double* h = &act.hidden[l * f];
    for (std::size_t k = 0; k < f; ++k) {
      double z = b[k];
      const double* row = w + k * in_dim;
      for (std::size_t m = 0; m < in_dim; ++m) z += row[m] * in[m];
      h[k] = z > 0.0 ? z : 0.0;
      s += fuse[l * f + k] * h[k];
    }
  }
  act.output = sigmoid(s);
}

}  // namespace detail

inline double forward(const PixelNet& net, const Rgb& pixel) {
  detail::PixelActivations act;
  detail::forward_pixel(net, pixel, act);
  return act.output;
}

inline IntensityMap forward_image(const PixelNet& net, const LinearImage& img) {
  IntensityMap out(img.width(), img.height());
  detail::PixelActivations act;
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    detail::forward_pixel(net, img.pixel(p), act);
    out(p) = act.output;
  }
  return out;
}

// Accumulates d loss / d params into `grads` for the given pixels, where
// upstream[i] = d loss / d r(pixels[i]). ReLU derivative is 0 at exactly 0.
inline void backward_pixels(const PixelNet& net, std::span<const Rgb> pixels, std::span<const double> upstream,
                            std::span<double> grads) {
  if (pixels.size() != upstream.size()) throw ArgumentError("backward: pixel and gradient counts differ");
  if (grads.size() != net.parameters().size()) throw ArgumentError("backward: gradient buffer has the wrong length");
  const auto& cfg = net.config();
  const std::size_t f = cfg.n_filters;
  const auto p = net.parameters();
  detail::PixelActivations act;
  std::vector<double> dh(f), dz(f);

  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (upstream[i] == 0.0) continue;
    detail::forward_pixel(net, pixels[i], act);
    const double r = act.output;
    const double ds = upstream[i] * r * (1.0 - r);

    grads[net.fuse_bias_offset()] += ds;
    for (std::size_t j = 0; j < cfg.n_layers * f; ++j) grads[net.fuse_weight_offset() + j] += ds * act.hidden[j];

    std::fill(dz.begin(), dz.end(), 0.0);  // dz of layer l+1; none above the top layer
    for (std::size_t l = cfg.n_layers; l-- > 0;) {
      const double* fuse = &p[net.fuse_weight_offset() + l * f];
      for (std::size_t k = 0; k < f; ++k) dh[k] = ds * fuse[k];
      if (l + 1 < cfg.n_layers) {
        const double* w_next = &p[net.weight_offset(l + 1)];
        for (std::size_t j = 0; j < f; ++j) {
          if (dz[j] == 0.0) continue;
          const double* row = w_next + j * f;
          for (std::size_t k = 0; k < f; ++k) dh[k] += row[k] * dz[j];
        }
      }
      const double* h = &act.hidden[l * f];
      for (std::size_t k = 0; k < f; ++k) dz[k] = h[k] > 0.0 ? dh[k] : 0.0;

      const std::size_t in_dim = net.input_dim(l);
      const double* in = l == 0 ? pixels[i].data() : &act.hidden[(l - 1) * f];
      double* gw = &grads[net.weight_offset(l)];
      double* gb = &grads[net.bias_offset(l)];
      for (std::size_t k = 0; k < f; ++k) {
        if (dz[k] == 0.0) continue;
        gb[k] += dz[k];
        for (std::size_t m = 0; m < in_dim; ++m) gw[k * in_dim + m] += dz[k] * in[m];
      }
    }
  }
}

// Gradients of sum_p grad_map(p) * r(p) with respect to all parameters.
inline std::vector<double> backward(const PixelNet& net, const LinearImage& img, const IntensityMap& grad_map) {
  if (!img.same_shape(grad_map)) throw ArgumentError("backward: gradient map does not match image");
  std::vector<Rgb> pixels;
  std::vector<double> upstream;
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    if (grad_map(p) == 0.0) continue;
    pixels.push_back(img.pixel(p));
    upstream.push_back(grad_map(p));
  }
  std::vector<double> grads(net.parameters().size(), 0.0);
  backward_pixels(net, pixels, upstream, grads);
  return grads;
}

// ---------------------------------------------------------------------------
// ADAM

struct AdamSettings {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamSettings settings;
  std::uint64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  AdamState() = default;
  AdamState(std::size_t n, AdamSettings s = {}) : settings(s), first_moment(n, 0.0), second_moment(n, 0.0) {}
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ArgumentError("adam_step: parameter, gradient and moment shapes differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw TrainingError("non-finite gradient at optimiser step " + std::to_string(state.step + 1));
    }
  }
  const auto& s = state.settings;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = s.beta1 * m + (1.0 - s.beta1) * grads[i];
    v = s.beta2 * v + (1.0 - s.beta2) * grads[i] * grads[i];
    params[i] -= s.learning_rate * (m / c1) / (std::sqrt(v / c2) + s.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Training

struct AnnotatedImage {
  std::string id;
  LinearImage image;
  JudgmentSet judgments;
};

// What training needs from one image: its comparisons and the RGB values at
// the two judged points after resizing to the training resolution.
struct TrainingImage {
  std::string id;
  std::vector<Comparison> comparisons;
  std::vector<Rgb> rgb1;
  std::vector<Rgb> rgb2;
};

inline TrainingImage prepare_training_image(const LinearImage& img, const JudgmentSet& set,
                                            std::size_t resolution = 256) {
  const LinearImage resized = resize_bilinear(img, resolution, resolution);
  TrainingImage out{set.image_id, {}, {}, {}};
  for (const auto& rc : resolve_points(set, resolution, resolution)) {
    out.comparisons.push_back(rc.comparison);
    out.rgb1.push_back(resized.pixel(rc.pixel1.x, rc.pixel1.y));
    out.rgb2.push_back(resized.pixel(rc.pixel2.x, rc.pixel2.y));
  }
  return out;
}

struct TrainOptions {
  PixelNetConfig config;
  HingeParams hinge;
  AdamSettings adam;
  std::size_t epochs = 30;
  std::size_t batch_size = 2;
  std::size_t resolution = 256;
  std::uint64_t seed = 0;
  // Called after every epoch with (epoch index, mean training loss, network).
  std::function<void(std::size_t, double, const PixelNet&)> on_epoch;
};

struct TrainResult {
  PixelNet net;
  std::vector<double> epoch_loss;  // mean per-image hinge loss, one per epoch
  // Range and mean of the predicted r over the judged training points at the end.
  double prediction_min = 0.0;
  double prediction_max = 0.0;
  double prediction_mean = 0.0;
};

namespace detail {

struct ImageStep {
  std::optional<double> loss;
};

// Adds the normalised hinge gradient of one image to `grads`.
inline ImageStep accumulate_image(const PixelNet& net, const TrainingImage& img, const HingeParams& hinge,
                                  std::span<double> grads) {
  const std::size_t n = img.comparisons.size();
  std::vector<double> r1(n), r2(n), g1(n), g2(n);
  for (std::size_t i = 0; i < n; ++i) {
    r1[i] = forward(net, img.rgb1[i]);
    r2[i] = forward(net, img.rgb2[i]);
  }
  const auto loss = hinge_sum_samples(img.comparisons, r1, r2, hinge, g1, g2);
  if (!loss) return {};
  backward_pixels(net, img.rgb1, g1, grads);
  backward_pixels(net, img.rgb2, g2, grads);
  return {loss};
}

}  // namespace detail

inline TrainResult train_prepared(std::span<const TrainingImage> corpus, const TrainOptions& options) {
  validate(options.hinge);
  if (corpus.empty()) throw TrainingError("training corpus is empty");
  if (options.batch_size == 0) throw ArgumentError("batch size must be >= 1");
  double total_weight = 0.0;
  for (const auto& img : corpus) {
    for (const auto& c : img.comparisons) total_weight += c.weight;
  }
  if (!(total_weight > 0.0)) throw TrainingError("training corpus has no weighted comparisons");

  TrainResult result{initialize_pixel_net(options.config, options.seed), {}, 0.0, 0.0, 0.0};
  PixelNet& net = result.net;
  AdamState adam(net.parameters().size(), options.adam);
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(corpus.size());
  std::vector<double> grads(net.parameters().size());

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::fill(grads.begin(), grads.end(), 0.0);
      std::size_t contributing = 0;
      for (std::size_t b = start; b < end; ++b) {
        const auto step = detail::accumulate_image(net, corpus[order[b]], options.hinge, grads);
        if (!step.loss) continue;
        loss_sum += *step.loss;
        ++loss_count;
        ++contributing;
      }
      if (contributing == 0) continue;
      for (double& g : grads) g /= static_cast<double>(contributing);
      adam_step(net.parameters(), grads, adam);
    }
    const double mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    result.epoch_loss.push_back(mean_loss);
    if (options.on_epoch) options.on_epoch(epoch, mean_loss, net);
  }

  double lo = 1.0, hi = 0.0, sum = 0.0;
  std::size_t count = 0;
  for (const auto& img : corpus) {
    for (const auto* side : {&img.rgb1, &img.rgb2}) {
      for (const auto& px : *side) {
        const double r = forward(net, px);
        lo = std::min(lo, r);
        hi = std::max(hi, r);
        sum += r;
        ++count;
      }
    }
  }
  if (count) {
    result.prediction_min = lo;
    result.prediction_max = hi;
    result.prediction_mean = sum / static_cast<double>(count);
  }
  return result;
}

inline TrainResult train(std::span<const AnnotatedImage> corpus, const TrainOptions& options) {
  std::vector<TrainingImage> prepared;
  prepared.reserve(corpus.size());
  for (const auto& item : corpus) prepared.push_back(prepare_training_image(item.image, item.judgments, options.resolution));
  return train_prepared(prepared, options);
}

// ---------------------------------------------------------------------------
// Lookup-table visualisation

struct LookupTable {
  LinearImage input;       // hue along x, saturation along y (row 0 = gray)
  LinearImage prediction;  // predicted r replicated to three channels
};

inline LookupTable lookup_table_image(const PixelNet& net, std::uint8_t value, std::size_t hue_steps = 360,
                                      std::size_t saturation_steps = 256) {
  if (hue_steps == 0 || saturation_steps == 0) throw ArgumentError("lookup table dimensions must be >= 1");
  LinearImage input(hue_steps, saturation_steps);
  const double v = value / 255.0;
  for (std::size_t y = 0; y < saturation_steps; ++y) {
    const double s = saturation_steps > 1 ? static_cast<double>(y) / static_cast<double>(saturation_steps - 1) : 0.0;
    for (std::size_t x = 0; x < hue_steps; ++x) {
      const Rgb encoded = hsv_to_rgb(static_cast<double>(x) / static_cast<double>(hue_steps), s, v);
      for (std::size_t c = 0; c < 3; ++c) input.at(x, y, c) = srgb_decode(encoded[c]);
    }
  }
  return {input, replicate_channels(forward_image(net, input))};
}

// ---------------------------------------------------------------------------
// Weights file: "PIXELNET", u32 version, u32 n_layers, u32 n_filters, then all
// parameters as little-endian float64 in the flat layout above (hidden layers
// W then b, fuse layer last).

inline constexpr char kWeightsMagic[8] = {'P', 'I', 'X', 'E', 'L', 'N', 'E', 'T'};
inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& path) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw IoError(path, "truncated weights file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline nlohmann::json weights_metadata(const PixelNet& net) {
  return {{"format", "PIXELNET"},
          {"version", kWeightsVersion},
          {"n_layers", net.config().n_layers},
          {"n_filters", net.config().n_filters},
          {"kernel", 1},
          {"activation", "relu"},
          {"output", "sigmoid"},
          {"skip_fuse", true},
          {"parameter_count", net.parameters().size()}};
}

// Writes the binary weights and a "<path>.json" sidecar describing them.
inline void save_weights(const std::filesystem::path& path, const PixelNet& net) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot write weights file");
    out.write(kWeightsMagic, sizeof(kWeightsMagic));
    detail::write_le<std::uint32_t>(out, kWeightsVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.config().n_layers));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.config().n_filters));
    for (double v : net.parameters()) detail::write_le<double>(out, v);
    if (!out) throw IoError(path.string(), "write failed");
  }
  std::ofstream side(path.string() + ".json");
  if (!side) throw IoError(path.string() + ".json", "cannot write weights sidecar");
  side << weights_metadata(net).dump(2) << '\n';
}

inline PixelNet load_weights(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(p, "cannot open weights file");
  char magic[sizeof(kWeightsMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0) {
    throw IoError(p, "not a PIXELNET weights file");
  }
  const auto version = detail::read_le<std::uint32_t>(in, p);
  if (version != kWeightsVersion) throw IoError(p, "unsupported weights version " + std::to_string(version));
  PixelNetConfig config;
  config.n_layers = detail::read_le<std::uint32_t>(in, p);
  config.n_filters = detail::read_le<std::uint32_t>(in, p);
  if (config.n_layers == 0 || config.n_filters == 0 || config.n_layers > 1024 || config.n_filters > 65536) {
    throw IoError(p, "implausible network configuration");
  }
  std::vector<double> params(PixelNet::parameter_count(config));
  for (double& v : params) {
    v = detail::read_le<double>(in, p);
    if (!std::isfinite(v)) throw IoError(p, "non-finite parameter");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(p, "trailing bytes after parameters");
  return PixelNet(config, std::move(params));
}

}  // namespace intrinsic
