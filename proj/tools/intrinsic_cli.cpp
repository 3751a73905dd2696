// intrinsic: command-line front end.
//
//   intrinsic decompose  in.png... -o out/ [--predictor ...] [--guidance ...] [--filter ...]
//   intrinsic train      --data root -o out/ [--epochs N] [--subsample F] [--seed S]
//   intrinsic eval       reflectance_dir --judgments dir -o out/
//   intrinsic sweep      rescale|guided|bilateral|hinge ...
//   intrinsic lut        --weights w.bin -o out/ [--value V]
//   intrinsic flatten    in.png... -o out/
//
// Exit status: 0 success, 1 processing failure, 2 usage error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "intrinsic/dataset.hpp"
#include "intrinsic/intrinsic.hpp"
#include "intrinsic/parallel.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace intrinsic;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Failure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * fraction);
  return buf;
}

std::string number(double v, int digits = 10) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError(what + ": '" + s + "' is not a number");
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string part; std::getline(in, part, sep);) out.push_back(part);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

// "a,b,c" or "start:stop:step" (inclusive).
std::vector<double> parse_grid(const std::string& s, const std::string& what) {
  std::vector<double> grid;
  if (s.find(':') != std::string::npos) {
    const auto parts = split(s, ':');
    if (parts.size() != 3) throw UsageError(what + ": range must be start:stop:step");
    const double start = parse_double(parts[0], what), stop = parse_double(parts[1], what);
    const double step = parse_double(parts[2], what);
    if (!(step > 0.0) || stop < start) throw UsageError(what + ": empty or invalid range '" + s + "'");
    const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
    for (std::size_t i = 0; i < n; ++i) grid.push_back(std::min(stop, start + static_cast<double>(i) * step));
    if (stop - grid.back() > 1e-9 * std::max(1.0, std::abs(stop))) grid.push_back(stop);
  } else {
    for (const auto& part : split(s, ',')) {
      if (!part.empty()) grid.push_back(parse_double(part, what));
    }
  }
  if (grid.empty()) throw UsageError(what + ": empty grid");
  return grid;
}

std::pair<std::string, std::string> split_kind(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) return {s, ""};
  return {s.substr(0, colon), s.substr(colon + 1)};
}

// ---------------------------------------------------------------------------
// Pipeline flag parsing

Predictor parse_predictor(const std::string& s) {
  const auto [kind, arg] = split_kind(s);
  if (kind == "rescale") return RescalePredictor{arg.empty() ? 0.55 : parse_double(arg, "--predictor rescale")};
  if (kind == "net" && !arg.empty()) return NetworkPredictor{arg, nullptr};
  if (kind == "external" && !arg.empty()) return ExternalReflectance{arg};
  throw UsageError("--predictor: expected rescale:A, net:PATH or external:PATH, got '" + s + "'");
}

Guidance parse_guidance(const std::string& s, const FlattenParams& flatten_params) {
  const auto [kind, arg] = split_kind(s);
  if (kind == "input" && arg.empty()) return InputGuidance{};
  if (kind == "flat" && arg.empty()) return FlatGuidance{flatten_params};
  if (kind == "external" && !arg.empty()) return ExternalGuidance{arg};
  throw UsageError("--guidance: expected input, flat or external:PATH, got '" + s + "'");
}

// Filter defaults follow the guidance: the flat-guidance settings for flat
// images, the self-guidance settings otherwise.
FilterChoice parse_filter(const std::string& s, bool flat_guidance) {
  const auto [kind, arg] = split_kind(s);
  if (kind == "none" && arg.empty()) return NoFilter{};
  const auto values = arg.empty() ? std::vector<std::string>{} : split(arg, ',');
  if (kind == "guided" && (values.empty() || values.size() == 2)) {
    GuidedParams p = flat_guidance ? GuidedParams::flat_guidance() : GuidedParams::self_guidance();
    if (!values.empty()) {
      const double r = parse_double(values[0], "--filter guided radius");
      if (!(r >= 1.0) || r != std::floor(r)) throw UsageError("--filter guided: radius must be a positive integer");
      p = {static_cast<std::size_t>(r), parse_double(values[1], "--filter guided eps")};
    }
    return p;
  }
  if (kind == "bilateral" && (values.empty() || values.size() == 2)) {
    BilateralParams p = flat_guidance ? BilateralParams::flat_guidance() : BilateralParams::self_guidance();
    if (!values.empty()) {
      p = {parse_double(values[0], "--filter bilateral sigma_s"), parse_double(values[1], "--filter bilateral sigma_r")};
    }
    return p;
  }
  throw UsageError("--filter: expected none, guided[:R,EPS] or bilateral[:SS,SR], got '" + s + "'");
}

ordered_json to_json(const FlattenParams& p) {
  return {{"alpha", p.alpha},
          {"beta", p.beta},
          {"kappa", p.kappa},
          {"sigma", p.sigma},
          {"neighborhood", p.neighborhood},
          {"n_superpixels", p.n_superpixels},
          {"compactness", p.compactness},
          {"irls_eps", p.irls_eps},
          {"max_iters", p.max_iters},
          {"rel_tol", p.rel_tol},
          {"cg_tol", p.cg_tol},
          {"cg_max_iters", p.cg_max_iters}};
}

ordered_json to_json(const FlattenEnergy& e) {
  return {{"local", e.local}, {"global", e.global}, {"data", e.data}, {"total", e.total}};
}

ordered_json to_json(const Predictor& p) {
  if (const auto* r = std::get_if<RescalePredictor>(&p)) return {{"kind", "rescale"}, {"a", r->a}};
  if (const auto* n = std::get_if<NetworkPredictor>(&p)) return {{"kind", "net"}, {"weights", n->weights.string()}};
  return {{"kind", "external"}, {"path", std::get<ExternalReflectance>(p).path.string()}};
}

ordered_json to_json(const Guidance& g) {
  if (std::holds_alternative<InputGuidance>(g)) return {{"kind", "input"}};
  if (const auto* f = std::get_if<FlatGuidance>(&g)) return {{"kind", "flat"}, {"flatten", to_json(f->params)}};
  return {{"kind", "external"}, {"path", std::get<ExternalGuidance>(g).path.string()}};
}

ordered_json to_json(const FilterChoice& f) {
  if (const auto* g = std::get_if<GuidedParams>(&f)) {
    return {{"kind", "guided"}, {"radius", g->radius}, {"epsilon", g->epsilon}, {"domain", "intensity"}};
  }
  if (const auto* b = std::get_if<BilateralParams>(&f)) {
    return {{"kind", "bilateral"}, {"sigma_s", b->sigma_s}, {"sigma_r", b->sigma_r}, {"domain", "intensity"}};
  }
  return {{"kind", "none"}};
}

ordered_json to_json(const WhdrSummary& s) {
  return {{"mean", s.evaluated ? ordered_json(s.mean) : ordered_json()},
          {"median", s.evaluated ? ordered_json(s.median) : ordered_json()},
          {"evaluated", s.evaluated},
          {"excluded", s.excluded}};
}

void add_flatten_options(CLI::App& cmd, FlattenParams& p) {
  cmd.add_option("--flat-alpha", p.alpha, "Flattening global sparsity weight")->capture_default_str();
  cmd.add_option("--flat-beta", p.beta, "Flattening data weight")->capture_default_str();
  cmd.add_option("--flat-kappa", p.kappa, "Lightness scaling in the affinity features")->capture_default_str();
  cmd.add_option("--flat-sigma", p.sigma, "Affinity bandwidth")->capture_default_str();
  cmd.add_option("--flat-neighborhood", p.neighborhood, "Local window width (odd)")->capture_default_str();
  cmd.add_option("--superpixels", p.n_superpixels, "Superpixel count for the global term")->capture_default_str();
  cmd.add_option("--flat-iters", p.max_iters, "Maximum reweighting iterations")->capture_default_str();
}

// ---------------------------------------------------------------------------
// Output bookkeeping

struct Outputs {
  fs::path dir;
  std::vector<std::string> files;

  std::string add(const std::string& name) {
    files.push_back(name);
    return (dir / name).string();
  }
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Failure(dir.string() + ": cannot create output directory");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw IoError(path, "cannot write file");
}

void write_manifest(Outputs& out, ordered_json manifest) {
  const std::string path = out.add("manifest.json");
  manifest["files"] = out.files;
  write_text(path, manifest.dump(2) + "\n");
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

fs::path dataset_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (auto env = dataset_root_from_env()) return *env;
  throw UsageError(std::string("no dataset root: pass --data or set ") + kDatasetEnv);
}

std::vector<std::string> split_ids(const DatasetSplit& split, const std::string& which) {
  std::vector<std::string> ids;
  auto append = [&](const std::vector<std::string>& v) { ids.insert(ids.end(), v.begin(), v.end()); };
  if (which == "train" || which == "trainval") append(split.train);
  if (which == "validation" || which == "trainval") append(split.validation);
  if (which == "test") append(split.test);
  return ids;
}

std::vector<DatasetEntry> dataset_subset(const fs::path& root, const std::string& which) {
  const auto entries = scan_dataset(root);
  if (which == "all") return entries;
  return select_entries(entries, split_ids(split_narihira(entry_ids(entries)), which));
}

const std::vector<std::string> kSplitNames = {"all", "train", "validation", "test", "trainval"};

std::optional<fs::path> judgments_for(const std::string& dir, const std::string& id) {
  if (dir.empty()) return std::nullopt;
  const fs::path p = fs::path(dir) / (id + ".json");
  if (!fs::exists(p)) return std::nullopt;
  return p;
}

struct Scored {
  std::optional<double> whdr;
  std::size_t n_comparisons = 0;
  double sum_weight = 0.0;
};

Scored score(const IntensityMap& r, const JudgmentSet& set, const WhdrParams& params) {
  const auto resolved = resolve_points(set, r.width(), r.height());
  Scored s{whdr(resolved, r, params), resolved.size(), 0.0};
  for (const auto& j : resolved) s.sum_weight += j.comparison.weight;
  return s;
}

ordered_json to_json(const Scored& s) {
  return {{"whdr", s.whdr ? ordered_json(*s.whdr) : ordered_json()},
          {"n_comparisons", s.n_comparisons},
          {"sum_weight", s.sum_weight}};
}

// ---------------------------------------------------------------------------
// decompose

struct DecomposeArgs {
  std::vector<std::string> inputs;
  std::string output = ".";
  std::string predictor = "rescale:0.55";
  std::string guidance = "input";
  std::string filter = "none";
  std::optional<std::size_t> repeats;
  std::string judgments;
  double delta = 0.1;
  std::size_t jobs = 0;
  bool debug = false;
  FlattenParams flatten;
};

struct ImageRun {
  std::string id;
  bool ok = false;
  std::string error;
  std::vector<std::string> files;
  std::optional<Scored> scored;
  std::optional<FlattenEnergy> energy;
  std::vector<StageTiming> timings;
};

int cmd_decompose(const DecomposeArgs& a) {
  PipelineSpec spec;
  spec.predictor = parse_predictor(a.predictor);
  spec.guidance = parse_guidance(a.guidance, a.flatten);
  spec.filter = parse_filter(a.filter, std::holds_alternative<FlatGuidance>(spec.guidance));
  spec.repeats = a.repeats.value_or(std::holds_alternative<NoFilter>(spec.filter) ? 0 : 1);
  try {
    validate(spec);
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  const bool external_file = [&] {
    if (const auto* e = std::get_if<ExternalReflectance>(&spec.predictor)) return !fs::is_directory(e->path);
    return false;
  }();
  if (external_file && a.inputs.size() > 1) throw UsageError("--predictor external:FILE needs a single input");

  // Loaded before anything is written so a bad weights file leaves no outputs.
  if (auto* n = std::get_if<NetworkPredictor>(&spec.predictor)) {
    try {
      n->preloaded = load_predictor_network(*n);
    } catch (const std::exception& e) {
      throw Failure(e.what());
    }
  }
  ensure_dir(a.output);
  Outputs out{a.output, {}};

  std::vector<ImageRun> runs(a.inputs.size());
  const std::size_t image_jobs = a.inputs.size() > 1 ? a.jobs : 1;
  PipelineSpec base = spec;
  base.jobs = a.inputs.size() > 1 ? 1 : a.jobs;
  const auto t0 = Clock::now();
  parallel_for(a.inputs.size(), image_jobs, [&](std::size_t i) {
    ImageRun& run = runs[i];
    run.id = stem_of(a.inputs[i]);
    try {
      PipelineSpec s = base;
      if (auto* e = std::get_if<ExternalReflectance>(&s.predictor); e && fs::is_directory(e->path)) {
        e->path = e->path / (run.id + ".png");
      }
      if (auto* g = std::get_if<ExternalGuidance>(&s.guidance); g && fs::is_directory(g->path)) {
        g->path = g->path / (run.id + ".png");
      }
      const LinearImage img = read_linear_png(a.inputs[i]);
      const auto result = run_pipeline(img, s);
      run.timings = result.timings;
      run.energy = result.flatten_energy;
      auto emit = [&](const std::string& suffix) {
        run.files.push_back(run.id + suffix);
        return (out.dir / (run.id + suffix)).string();
      };
      write_intensity_png(emit("-r.png"), result.r);
      write_linear_png(emit("-R.png"), result.decomposition.reflectance);
      write_linear_png(emit("-S.png"), result.decomposition.shading);
      if (a.debug) {
        write_intensity_png(emit("-r0.png"), result.initial_r);
        if (result.guidance) write_linear_png(emit("-guidance.png"), *result.guidance);
      }
      if (const auto jpath = judgments_for(a.judgments, run.id)) {
        auto set = load_iiw_judgments(*jpath).set;
        run.scored = score(mean_intensity(result.decomposition.reflectance), set, WhdrParams{a.delta});
      }
      run.ok = true;
    } catch (const std::exception& e) {
      run.error = e.what();
    }
  });
  const double total_seconds = seconds_since(t0);

  ordered_json images = ordered_json::array();
  std::vector<std::optional<double>> scores;
  bool failed = false;
  for (const auto& run : runs) {
    ordered_json entry = {{"id", run.id}, {"ok", run.ok}};
    if (!run.ok) {
      failed = true;
      entry["error"] = run.error;
      std::cerr << "error: " << run.id << ": " << run.error << "\n";
      images.push_back(entry);
      continue;
    }
    out.files.insert(out.files.end(), run.files.begin(), run.files.end());
    entry["outputs"] = run.files;
    if (run.scored) {
      entry["evaluation"] = to_json(*run.scored);
      scores.push_back(run.scored->whdr);
      std::cout << run.id << ": WHDR " << (run.scored->whdr ? percent(*run.scored->whdr) : std::string("n/a")) << "\n";
    } else {
      std::cout << run.id << ": done\n";
    }
    if (run.energy) entry["flatten_energy"] = to_json(*run.energy);
    ordered_json timings = ordered_json::object();
    for (const auto& t : run.timings) timings[t.stage] = t.seconds;
    entry["timings"] = timings;
    images.push_back(entry);
  }

  ordered_json manifest = {{"command", "decompose"},
                           {"parameters",
                            {{"predictor", to_json(spec.predictor)},
                             {"guidance", to_json(spec.guidance)},
                             {"filter", to_json(spec.filter)},
                             {"repeats", spec.repeats},
                             {"whdr_delta", a.delta},
                             {"judgments", a.judgments},
                             {"jobs", a.jobs},
                             {"debug", a.debug}}},
                           {"seed", nullptr},
                           {"inputs", a.inputs},
                           {"images", images}};
  if (!scores.empty()) {
    const auto summary = summarize(scores);
    manifest["aggregate"] = to_json(summary);
    if (summary.evaluated) {
      std::cout << "mean WHDR " << percent(summary.mean) << ", median " << percent(summary.median) << " over "
                << summary.evaluated << " images\n";
    }
  }
  manifest["timings"] = {{"total", total_seconds}};
  write_manifest(out, manifest);
  return failed ? 1 : 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data;
  std::string output = ".";
  std::size_t epochs = 30;
  double subsample = 1.0;
  std::uint64_t seed = 0;
  std::size_t layers = 5;
  std::size_t filters = 32;
  double delta = 0.12;
  double xi = 0.08;
  std::size_t batch_size = 2;
  std::size_t resolution = 256;
  bool augment = false;
  std::size_t jobs = 0;
};

std::vector<TrainingImage> prepare_entries(const std::vector<DatasetEntry>& entries, const TrainArgs& a) {
  std::vector<TrainingImage> prepared(entries.size());
  parallel_for(entries.size(), a.jobs, [&](std::size_t i) {
    const auto item = load_entry(entries[i]);
    JudgmentSet set = item.judgments;
    if (a.augment) set = augment_transitive(set);
    if (a.subsample < 1.0) set = subsample_pairs(set, a.subsample, a.seed * 0x100000001b3ULL + i);
    prepared[i] = prepare_training_image(item.image, set, a.resolution);
  });
  return prepared;
}

// WHDR from the network evaluated at the prepared judgment points.
std::optional<double> point_whdr(const PixelNet& net, const TrainingImage& img, double delta) {
  double wrong = 0.0, total = 0.0;
  for (std::size_t k = 0; k < img.comparisons.size(); ++k) {
    const auto& c = img.comparisons[k];
    if (classify_pair(forward(net, img.rgb1[k]), forward(net, img.rgb2[k]), WhdrParams{delta}) != c.label) {
      wrong += c.weight;
    }
    total += c.weight;
  }
  if (!(total > 0.0)) return std::nullopt;
  return wrong / total;
}

int cmd_train(const TrainArgs& a) {
  const fs::path root = dataset_root(a.data);
  std::vector<DatasetEntry> entries;
  try {
    entries = scan_dataset(root);
  } catch (const std::exception& e) {
    throw Failure(e.what());
  }
  const auto split = split_narihira(entry_ids(entries));
  if (split.train.empty()) throw Failure(root.string() + ": training split is empty");

  const auto t0 = Clock::now();
  TrainArgs eval_args = a;
  eval_args.augment = false;
  eval_args.subsample = 1.0;
  const auto train_set = prepare_entries(select_entries(entries, split.train), a);
  const auto val_set = prepare_entries(select_entries(entries, split.validation), eval_args);
  const double load_seconds = seconds_since(t0);

  TrainOptions options;
  options.config = {a.layers, a.filters};
  options.hinge = {a.delta, a.xi};
  options.epochs = a.epochs;
  options.batch_size = a.batch_size;
  options.resolution = a.resolution;
  options.seed = a.seed;
  std::ostringstream curve;
  curve << "epoch,loss,val_whdr\n";
  options.on_epoch = [&](std::size_t epoch, double loss, const PixelNet& net) {
    std::vector<std::optional<double>> v;
    for (const auto& img : val_set) v.push_back(point_whdr(net, img, 0.1));
    const auto s = summarize(v);
    curve << epoch << ',' << number(loss, 17) << ',' << (s.evaluated ? number(s.mean, 17) : "") << '\n';
    std::cerr << "epoch " << epoch << ": loss " << number(loss, 6);
    if (s.evaluated) std::cerr << ", validation WHDR " << percent(s.mean);
    std::cerr << "\n";
  };

  TrainResult result;
  const auto t1 = Clock::now();
  try {
    result = train_prepared(train_set, options);
  } catch (const std::exception& e) {
    throw Failure(e.what());
  }
  const double train_seconds = seconds_since(t1);

  ensure_dir(a.output);
  Outputs out{a.output, {}};
  save_weights(out.add("weights.bin"), result.net);
  out.files.push_back("weights.bin.json");
  write_text(out.add("loss.csv"), curve.str());
  write_id_list(out.add("train.txt"), split.train);
  write_id_list(out.add("validation.txt"), split.validation);
  write_id_list(out.add("test.txt"), split.test);

  std::size_t comparisons = 0;
  for (const auto& img : train_set) comparisons += img.comparisons.size();
  ordered_json manifest = {
      {"command", "train"},
      {"parameters",
       {{"data", root.string()},
        {"epochs", a.epochs},
        {"subsample", a.subsample},
        {"augment", a.augment},
        {"n_layers", a.layers},
        {"n_filters", a.filters},
        {"hinge_delta", a.delta},
        {"hinge_xi", a.xi},
        {"batch_size", a.batch_size},
        {"resolution", a.resolution},
        {"adam", {{"learning_rate", options.adam.learning_rate}, {"beta1", options.adam.beta1}, {"beta2", options.adam.beta2}, {"epsilon", options.adam.epsilon}}},
        {"jobs", a.jobs}}},
      {"seed", a.seed},
      {"split", {{"train", split.train.size()}, {"validation", split.validation.size()}, {"test", split.test.size()}}},
      {"training_comparisons", comparisons},
      {"epoch_loss", result.epoch_loss},
      {"prediction_range", {result.prediction_min, result.prediction_max}},
      {"timings", {{"load", load_seconds}, {"train", train_seconds}}}};
  write_manifest(out, manifest);
  std::cout << "trained " << a.epochs << " epochs on " << train_set.size() << " images; weights in "
            << (out.dir / "weights.bin").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string reflectance;
  std::string judgments;
  std::string data;
  std::string split = "all";
  std::string output = ".";
  double delta = 0.1;
  std::size_t jobs = 0;
};

std::optional<fs::path> reflectance_file(const fs::path& dir, const std::string& id) {
  for (const char* suffix : {"-r.png", "-R.png", ".png"}) {
    const fs::path p = dir / (id + suffix);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

int cmd_eval(const EvalArgs& a) {
  if (!fs::is_directory(a.reflectance)) throw Failure(a.reflectance + ": reflectance directory not found");
  std::vector<DatasetEntry> entries;
  try {
    if (!a.judgments.empty()) {
      for (const auto& f : fs::directory_iterator(a.judgments)) {
        if (f.is_regular_file() && f.path().extension() == ".json") entries.push_back({f.path().stem().string(), {}, f.path()});
      }
      std::sort(entries.begin(), entries.end(), [](const auto& x, const auto& y) { return x.id < y.id; });
      if (a.split != "all") entries = select_entries(entries, split_ids(split_narihira(entry_ids(entries)), a.split));
    } else {
      entries = dataset_subset(dataset_root(a.data), a.split);
    }
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw Failure(e.what());
  }

  struct Item {
    std::string id;
    fs::path reflectance;
    fs::path judgments;
    Scored scored;
    std::string error;
  };
  std::vector<Item> items;
  for (const auto& e : entries) {
    if (auto r = reflectance_file(a.reflectance, e.id)) items.push_back({e.id, *r, e.judgments, {}, {}});
  }
  if (items.empty()) throw Failure("no image ids shared by the reflectance and judgment directories");

  const auto t0 = Clock::now();
  parallel_for(items.size(), a.jobs, [&](std::size_t i) {
    try {
      const auto r = mean_intensity(read_linear_png(items[i].reflectance.string()));
      items[i].scored = score(r, load_iiw_judgments(items[i].judgments).set, WhdrParams{a.delta});
    } catch (const std::exception& e) {
      items[i].error = e.what();
    }
  });
  const double seconds = seconds_since(t0);

  std::ostringstream csv;
  csv << "image_id,n_comparisons,sum_weight,whdr\n";
  std::vector<std::optional<double>> scores;
  ordered_json images = ordered_json::array();
  bool failed = false;
  for (const auto& item : items) {
    if (!item.error.empty()) {
      failed = true;
      std::cerr << "error: " << item.id << ": " << item.error << "\n";
      images.push_back({{"id", item.id}, {"error", item.error}});
      continue;
    }
    const auto& s = item.scored;
    csv << item.id << ',' << s.n_comparisons << ',' << number(s.sum_weight, 17) << ','
        << (s.whdr ? number(*s.whdr, 17) : "") << '\n';
    scores.push_back(s.whdr);
    ordered_json entry = {{"id", item.id}, {"reflectance", item.reflectance.filename().string()}};
    entry.update(to_json(s));
    images.push_back(entry);
  }
  const auto summary = summarize(scores);

  ensure_dir(a.output);
  Outputs out{a.output, {}};
  write_text(out.add("whdr.csv"), csv.str());
  ordered_json manifest = {{"command", "eval"},
                           {"parameters",
                            {{"reflectance", a.reflectance},
                             {"judgments", a.judgments},
                             {"split", a.split},
                             {"whdr_delta", a.delta},
                             {"reduction", "channel mean"},
                             {"jobs", a.jobs}}},
                           {"seed", nullptr},
                           {"images", images},
                           {"aggregate", to_json(summary)},
                           {"timings", {{"evaluate", seconds}}}};
  write_manifest(out, manifest);

  if (summary.evaluated) {
    std::cout << "WHDR mean " << percent(summary.mean) << ", median " << percent(summary.median) << " over "
              << summary.evaluated << " images";
  } else {
    std::cout << "no image had weighted comparisons";
  }
  if (summary.excluded) std::cout << " (" << summary.excluded << " excluded without comparisons)";
  std::cout << "\n";
  return failed ? 1 : 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string data;
  std::string split = "trainval";
  std::string output = ".";
  double delta = 0.1;
  std::size_t jobs = 0;
  // rescale
  std::string a_grid = "0:1:0.05";
  // filters
  std::string predictor = "rescale:0.55";
  std::string guidance = "input";
  std::size_t repeats = 1;
  std::string radius = "1,7,45";
  std::string eps = "3,52";
  std::string sigma_s = "7,22,28";
  std::string sigma_r = "5,15,20";
  FlattenParams flatten;
  // hinge
  std::string hinge_delta = "0.08,0.1,0.12";
  std::string hinge_xi = "0,0.04,0.08";
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  bool long_run = false;
};

using Columns = std::vector<std::pair<std::string, std::vector<double>>>;

// Runs row(i) for every dataset image (each row one WHDR per grid point) and
// writes the table with the argmin flagged.
template <typename RowFn>
int run_sweep(const std::string& kind, const SweepArgs& a, const std::vector<DatasetEntry>& entries,
              const Columns& columns, ordered_json parameters, RowFn&& row) {
  const std::size_t n_points = columns.front().second.size();
  std::vector<std::vector<std::optional<double>>> per_image(entries.size());
  std::vector<std::string> errors(entries.size());
  const auto t0 = Clock::now();
  parallel_for(entries.size(), a.jobs, [&](std::size_t i) {
    try {
      per_image[i] = row(entries[i]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  const double seconds = seconds_since(t0);
  bool failed = false;
  std::vector<std::vector<std::optional<double>>> rows;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!errors[i].empty()) {
      failed = true;
      std::cerr << "error: " << entries[i].id << ": " << errors[i] << "\n";
    } else {
      rows.push_back(std::move(per_image[i]));
    }
  }
  if (rows.empty()) throw Failure("sweep: no image could be evaluated");

  std::vector<double> index(n_points);
  for (std::size_t g = 0; g < n_points; ++g) index[g] = static_cast<double>(g);
  const auto table = sweep_table(index, rows);

  std::ostringstream csv;
  for (const auto& c : columns) csv << c.first << ',';
  csv << "mean_whdr,median_whdr,n_images,excluded,argmin\n";
  ordered_json table_json = ordered_json::array();
  for (std::size_t g = 0; g < n_points; ++g) {
    ordered_json r;
    for (const auto& c : columns) {
      csv << number(c.second[g], 12) << ',';
      r[c.first] = c.second[g];
    }
    const auto& s = table.rows[g].summary;
    csv << number(s.mean, 17) << ',' << number(s.median, 17) << ',' << s.evaluated << ',' << s.excluded << ','
        << (g == table.argmin ? 1 : 0) << '\n';
    r.update(to_json(s));
    table_json.push_back(r);
  }

  ensure_dir(a.output);
  Outputs out{a.output, {}};
  write_text(out.add("sweep-" + kind + ".csv"), csv.str());
  parameters["data_split"] = a.split;
  parameters["whdr_delta"] = a.delta;
  parameters["jobs"] = a.jobs;
  ordered_json manifest = {{"command", "sweep " + kind},
                           {"parameters", parameters},
                           {"seed", kind == "hinge" ? ordered_json(a.seed) : ordered_json()},
                           {"images", entries.size()},
                           {"table", table_json},
                           {"argmin", table.argmin},
                           {"timings", {{"sweep", seconds}}}};
  write_manifest(out, manifest);

  const auto& best = table.rows[table.argmin].summary;
  std::cout << "best:";
  for (const auto& c : columns) std::cout << ' ' << c.first << '=' << number(c.second[table.argmin], 6);
  std::cout << ", mean WHDR " << percent(best.mean) << " over " << best.evaluated << " images\n";
  return failed ? 1 : 0;
}

std::vector<DatasetEntry> sweep_entries(const SweepArgs& a) {
  const fs::path root = dataset_root(a.data);
  try {
    auto entries = dataset_subset(root, a.split);
    if (entries.empty()) throw Failure(root.string() + ": no images in split '" + a.split + "'");
    return entries;
  } catch (const Failure&) {
    throw;
  } catch (const std::exception& e) {
    throw Failure(e.what());
  }
}

int cmd_sweep_rescale(const SweepArgs& a) {
  const auto grid = parse_grid(a.a_grid, "--a");
  for (double v : grid) {
    if (!(v >= 0.0 && v <= 1.0)) throw UsageError("--a: values must lie in [0,1]");
  }
  const auto entries = sweep_entries(a);
  return run_sweep("rescale", a, entries, {{"a", grid}}, {{"a", a.a_grid}}, [&](const DatasetEntry& e) {
    const auto item = load_entry(e);
    return rescale_whdr_row(item.image, item.judgments, grid, WhdrParams{a.delta});
  });
}

template <typename Params>
int cmd_sweep_filter(const std::string& kind, const SweepArgs& a, const std::vector<Params>& lattice,
                     const Columns& columns, ordered_json parameters) {
  PipelineSpec spec;
  spec.predictor = parse_predictor(a.predictor);
  spec.guidance = parse_guidance(a.guidance, a.flatten);
  if (a.repeats == 0) throw UsageError("--repeats must be >= 1 for a filter sweep");
  for (const auto& p : lattice) {
    try {
      validate(p);
    } catch (const ArgumentError& e) {
      throw UsageError(e.what());
    }
  }
  if (auto* n = std::get_if<NetworkPredictor>(&spec.predictor)) {
    try {
      n->preloaded = load_predictor_network(*n);
    } catch (const std::exception& e) {
      throw Failure(e.what());
    }
  }
  const auto entries = sweep_entries(a);
  parameters["predictor"] = to_json(spec.predictor);
  parameters["guidance"] = to_json(spec.guidance);
  parameters["repeats"] = a.repeats;
  return run_sweep(kind, a, entries, columns, parameters, [&](const DatasetEntry& e) {
    const auto item = load_entry(e);
    PipelineSpec s = spec;
    if (auto* x = std::get_if<ExternalReflectance>(&s.predictor)) x->path = x->path / (e.id + ".png");
    if (auto* g = std::get_if<ExternalGuidance>(&s.guidance)) g->path = g->path / (e.id + ".png");
    // Predictor and guidance once per image; only the filter varies.
    s.filter = lattice.front();
    s.repeats = 0;
    const auto base = run_pipeline(item.image, s);
    LinearImage guidance = item.image;
    if (std::holds_alternative<FlatGuidance>(s.guidance)) {
      guidance = flatten(item.image, std::get<FlatGuidance>(s.guidance).params).flat;
    } else if (const auto* g = std::get_if<ExternalGuidance>(&s.guidance)) {
      guidance = detail::load_external_image(g->path, "guidance");
      if (!guidance.same_shape(item.image)) guidance = resize_bilinear(guidance, item.image.width(), item.image.height());
    }
    const auto resolved = resolve_points(item.judgments, item.image.width(), item.image.height());
    std::vector<std::optional<double>> row;
    for (const auto& p : lattice) {
      IntensityMap r = base.initial_r;
      for (std::size_t k = 0; k < a.repeats; ++k) r = apply_filter(r, guidance, FilterChoice{p}, 1);
      const auto d = recover_decomposition(item.image, r);
      row.push_back(whdr(resolved, mean_intensity(d.reflectance), WhdrParams{a.delta}));
    }
    return row;
  });
}

int cmd_sweep_guided(const SweepArgs& a) {
  const auto radii = parse_grid(a.radius, "--radius");
  const auto eps = parse_grid(a.eps, "--eps");
  std::vector<GuidedParams> lattice;
  Columns cols = {{"radius", {}}, {"eps", {}}};
  for (double r : radii) {
    if (!(r >= 1.0) || r != std::floor(r)) throw UsageError("--radius: values must be positive integers");
    for (double e : eps) {
      lattice.push_back({static_cast<std::size_t>(r), e});
      cols[0].second.push_back(r);
      cols[1].second.push_back(e);
    }
  }
  return cmd_sweep_filter("guided", a, lattice, cols, {{"radius", a.radius}, {"eps", a.eps}});
}

int cmd_sweep_bilateral(const SweepArgs& a) {
  const auto ss = parse_grid(a.sigma_s, "--sigma-s");
  const auto sr = parse_grid(a.sigma_r, "--sigma-r");
  std::vector<BilateralParams> lattice;
  Columns cols = {{"sigma_s", {}}, {"sigma_r", {}}};
  for (double s : ss) {
    for (double r : sr) {
      lattice.push_back({s, r});
      cols[0].second.push_back(s);
      cols[1].second.push_back(r);
    }
  }
  return cmd_sweep_filter("bilateral", a, lattice, cols, {{"sigma_s", a.sigma_s}, {"sigma_r", a.sigma_r}});
}

// Retrains for every (delta, xi) and scores the validation split.
int cmd_sweep_hinge(const SweepArgs& a) {
  if (!a.long_run) throw UsageError("sweep hinge retrains the network per grid point; pass --long-run to confirm");
  const auto deltas = parse_grid(a.hinge_delta, "--hinge-delta");
  const auto xis = parse_grid(a.hinge_xi, "--hinge-xi");
  Columns cols = {{"delta", {}}, {"xi", {}}};
  for (double d : deltas) {
    for (double x : xis) {
      try {
        validate(HingeParams{d, x});
      } catch (const ArgumentError& e) {
        throw UsageError(e.what());
      }
      cols[0].second.push_back(d);
      cols[1].second.push_back(x);
    }
  }
  const fs::path root = dataset_root(a.data);
  std::vector<DatasetEntry> entries;
  try {
    entries = scan_dataset(root);
  } catch (const std::exception& e) {
    throw Failure(e.what());
  }
  const auto split = split_narihira(entry_ids(entries));
  TrainArgs prep;
  prep.jobs = a.jobs;
  const auto train_set = prepare_entries(select_entries(entries, split.train), prep);
  const auto val_entries = select_entries(entries, split.validation);
  if (train_set.empty() || val_entries.empty()) throw Failure("sweep hinge needs non-empty train and validation splits");

  std::vector<PixelNet> nets;
  for (std::size_t g = 0; g < cols[0].second.size(); ++g) {
    TrainOptions options;
    options.hinge = {cols[0].second[g], cols[1].second[g]};
    options.epochs = a.epochs;
    options.seed = a.seed;
    std::cerr << "training delta=" << number(options.hinge.delta) << " xi=" << number(options.hinge.xi) << "\n";
    try {
      nets.push_back(train_prepared(train_set, options).net);
    } catch (const std::exception& e) {
      throw Failure(e.what());
    }
  }
  SweepArgs eval = a;
  eval.split = "validation";
  return run_sweep("hinge", eval, val_entries, cols,
                   {{"hinge_delta", a.hinge_delta}, {"hinge_xi", a.hinge_xi}, {"epochs", a.epochs}},
                   [&](const DatasetEntry& e) {
                     const auto item = load_entry(e);
                     const auto resolved = resolve_points(item.judgments, item.image.width(), item.image.height());
                     std::vector<std::optional<double>> row;
                     for (const auto& net : nets) {
                       IntensityMap r(item.image.width(), item.image.height());
                       for (const auto& j : resolved) {
                         for (const auto& px : {j.pixel1, j.pixel2}) r.at(px.x, px.y) = forward(net, item.image.pixel(px.x, px.y));
                       }
                       row.push_back(whdr(resolved, r, WhdrParams{a.delta}));
                     }
                     return row;
                   });
}

// ---------------------------------------------------------------------------
// lut

struct LutArgs {
  std::string weights;
  std::string output = ".";
  int value = 255;
  std::size_t hue_steps = 360;
  std::size_t saturation_steps = 256;
};

int cmd_lut(const LutArgs& a) {
  PixelNet net;
  try {
    net = load_weights(a.weights);
  } catch (const std::exception& e) {
    throw Failure(e.what());
  }
  const auto t0 = Clock::now();
  const auto lut = lookup_table_image(net, static_cast<std::uint8_t>(a.value), a.hue_steps, a.saturation_steps);
  const double seconds = seconds_since(t0);
  ensure_dir(a.output);
  Outputs out{a.output, {}};
  const std::string tag = "lut-v" + std::to_string(a.value);
  write_linear_png(out.add(tag + "-input.png"), lut.input);
  write_linear_png(out.add(tag + "-r.png"), lut.prediction);
  ordered_json manifest = {{"command", "lut"},
                           {"parameters",
                            {{"weights", a.weights},
                             {"value", a.value},
                             {"hue_steps", a.hue_steps},
                             {"saturation_steps", a.saturation_steps}}},
                           {"seed", nullptr},
                           {"network", weights_metadata(net)},
                           {"timings", {{"lut", seconds}}}};
  write_manifest(out, manifest);
  std::cout << "wrote " << tag << "-input.png and " << tag << "-r.png\n";
  return 0;
}

// ---------------------------------------------------------------------------
// flatten

struct FlattenArgs {
  std::vector<std::string> inputs;
  std::string output = ".";
  std::size_t jobs = 0;
  FlattenParams params;
};

int cmd_flatten(const FlattenArgs& a) {
  try {
    validate(a.params);
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  ensure_dir(a.output);
  Outputs out{a.output, {}};
  struct Run {
    std::string id;
    std::optional<FlattenResult> result;
    double seconds = 0.0;
    std::string error;
  };
  std::vector<Run> runs(a.inputs.size());
  parallel_for(a.inputs.size(), a.jobs, [&](std::size_t i) {
    Run& run = runs[i];
    run.id = stem_of(a.inputs[i]);
    try {
      const auto t0 = Clock::now();
      run.result = flatten(read_linear_png(a.inputs[i]), a.params);
      run.seconds = seconds_since(t0);
      write_linear_png((out.dir / (run.id + "-flat.png")).string(), run.result->flat);
      ordered_json meta = {{"input", a.inputs[i]},
                           {"parameters", to_json(a.params)},
                           {"energy", to_json(run.result->energy)},
                           {"superpixels", run.result->segmentation.count()},
                           {"iterations", run.result->iterations}};
      write_text((out.dir / (run.id + "-flat.json")).string(), meta.dump(2) + "\n");
    } catch (const std::exception& e) {
      run.error = e.what();
    }
  });
  ordered_json images = ordered_json::array();
  ordered_json timings = ordered_json::object();
  bool failed = false;
  for (const auto& run : runs) {
    if (!run.error.empty()) {
      failed = true;
      std::cerr << "error: " << run.id << ": " << run.error << "\n";
      images.push_back({{"id", run.id}, {"error", run.error}});
      continue;
    }
    out.files.push_back(run.id + "-flat.png");
    out.files.push_back(run.id + "-flat.json");
    images.push_back({{"id", run.id},
                      {"energy", to_json(run.result->energy)},
                      {"iterations", run.result->iterations}});
    timings[run.id] = run.seconds;
    std::cout << run.id << ": energy " << number(run.result->energy.total, 6) << " after "
              << run.result->iterations << " iterations\n";
  }
  ordered_json manifest = {{"command", "flatten"},
                           {"parameters", {{"flatten", to_json(a.params)}, {"jobs", a.jobs}}},
                           {"seed", nullptr},
                           {"inputs", a.inputs},
                           {"images", images},
                           {"timings", timings}};
  write_manifest(out, manifest);
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intrinsic image decomposition from sparse relative reflectance judgments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "intrinsic 1.0");

  const std::string data_help = std::string("Dataset root (default: $") + kDatasetEnv + ")";
  const std::string split_help = "Dataset split: all, train, validation, test or trainval";

  DecomposeArgs dec;
  auto* decompose = app.add_subcommand("decompose", "Decompose images into reflectance and shading");
  decompose->add_option("inputs", dec.inputs, "Input PNG images")->required()->check(CLI::ExistingFile);
  decompose->add_option("-o,--output", dec.output, "Output directory")->capture_default_str();
  decompose->add_option("--predictor", dec.predictor, "rescale:A, net:WEIGHTS or external:PATH")->capture_default_str();
  decompose->add_option("--guidance", dec.guidance, "input, flat or external:PATH")->capture_default_str();
  decompose->add_option("--filter", dec.filter, "none, guided[:R,EPS] or bilateral[:SS,SR]")->capture_default_str();
  decompose->add_option("--repeats", dec.repeats, "Filter applications (default 1 with a filter)");
  decompose->add_option("--judgments", dec.judgments, "Directory of <id>.json judgments for scoring")
      ->check(CLI::ExistingDirectory);
  decompose->add_option("--delta", dec.delta, "WHDR equality threshold")->capture_default_str()->check(CLI::NonNegativeNumber);
  decompose->add_option("-j,--jobs", dec.jobs, "Worker threads (0 = all cores)")->capture_default_str();
  decompose->add_flag("--debug", dec.debug, "Also write the unfiltered r and the guidance image");
  add_flatten_options(*decompose, dec.flatten);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the pixel network on a judgment dataset");
  train_cmd->add_option("--data", tr.data, data_help);
  train_cmd->add_option("-o,--output", tr.output, "Output directory")->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--subsample", tr.subsample, "Fraction of comparisons kept per image")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--seed", tr.seed, "Random seed")->capture_default_str();
  train_cmd->add_option("--layers", tr.layers, "Hidden layers")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--filters", tr.filters, "Filters per layer")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--hinge-delta", tr.delta, "Hinge loss threshold")->capture_default_str();
  train_cmd->add_option("--hinge-xi", tr.xi, "Hinge loss margin")->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch_size, "Images per update")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--resolution", tr.resolution, "Training resolution")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_flag("--augment", tr.augment, "Train on the transitive closure of the judgments");
  train_cmd->add_option("-j,--jobs", tr.jobs, "Loader threads (0 = all cores)")->capture_default_str();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score reflectance images against judgments");
  eval_cmd->add_option("reflectance", ev.reflectance, "Directory of <id>-r.png, <id>-R.png or <id>.png")->required();
  eval_cmd->add_option("--judgments", ev.judgments, "Directory of <id>.json (default: dataset root)")
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--data", ev.data, data_help);
  eval_cmd->add_option("--split", ev.split, split_help)->capture_default_str()->check(CLI::IsMember(kSplitNames));
  eval_cmd->add_option("-o,--output", ev.output, "Output directory")->capture_default_str();
  eval_cmd->add_option("--delta", ev.delta, "WHDR equality threshold")->capture_default_str()->check(CLI::NonNegativeNumber);
  eval_cmd->add_option("-j,--jobs", ev.jobs, "Worker threads (0 = all cores)")->capture_default_str();

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Mean WHDR over a parameter grid");
  sweep->require_subcommand(1);
  auto common_sweep = [&](CLI::App* cmd) {
    cmd->add_option("--data", sw.data, data_help);
    cmd->add_option("--split", sw.split, split_help)->capture_default_str()->check(CLI::IsMember(kSplitNames));
    cmd->add_option("-o,--output", sw.output, "Output directory")->capture_default_str();
    cmd->add_option("--delta", sw.delta, "WHDR equality threshold")->capture_default_str()->check(CLI::NonNegativeNumber);
    cmd->add_option("-j,--jobs", sw.jobs, "Worker threads (0 = all cores)")->capture_default_str();
  };
  auto filter_sweep = [&](CLI::App* cmd) {
    common_sweep(cmd);
    cmd->add_option("--predictor", sw.predictor, "rescale:A, net:WEIGHTS or external:DIR")->capture_default_str();
    cmd->add_option("--guidance", sw.guidance, "input, flat or external:DIR")->capture_default_str();
    cmd->add_option("--repeats", sw.repeats, "Filter applications")->capture_default_str();
    add_flatten_options(*cmd, sw.flatten);
  };
  auto* sweep_rescale_cmd = sweep->add_subcommand("rescale", "Rescale-to-[a,1] baseline over a");
  common_sweep(sweep_rescale_cmd);
  sweep_rescale_cmd->add_option("--a", sw.a_grid, "Grid: start:stop:step or a list")->capture_default_str();
  auto* sweep_guided_cmd = sweep->add_subcommand("guided", "Guided filter radius x eps");
  filter_sweep(sweep_guided_cmd);
  sweep_guided_cmd->add_option("--radius", sw.radius, "Window radii")->capture_default_str();
  sweep_guided_cmd->add_option("--eps", sw.eps, "Regularisation values")->capture_default_str();
  auto* sweep_bilateral_cmd = sweep->add_subcommand("bilateral", "Bilateral filter sigma_s x sigma_r");
  filter_sweep(sweep_bilateral_cmd);
  sweep_bilateral_cmd->add_option("--sigma-s", sw.sigma_s, "Spatial sigmas")->capture_default_str();
  sweep_bilateral_cmd->add_option("--sigma-r", sw.sigma_r, "Range sigmas")->capture_default_str();
  auto* sweep_hinge_cmd = sweep->add_subcommand("hinge", "Hinge delta x xi (retrains per point)");
  common_sweep(sweep_hinge_cmd);
  sweep_hinge_cmd->add_option("--hinge-delta", sw.hinge_delta, "Thresholds")->capture_default_str();
  sweep_hinge_cmd->add_option("--hinge-xi", sw.hinge_xi, "Margins")->capture_default_str();
  sweep_hinge_cmd->add_option("--epochs", sw.epochs, "Epochs per training run")->capture_default_str();
  sweep_hinge_cmd->add_option("--seed", sw.seed, "Random seed")->capture_default_str();
  sweep_hinge_cmd->add_flag("--long-run", sw.long_run, "Allow the retraining sweep");

  LutArgs lt;
  auto* lut = app.add_subcommand("lut", "Hue x saturation lookup table of a trained network");
  lut->add_option("--weights", lt.weights, "Weights file")->required();
  lut->add_option("-o,--output", lt.output, "Output directory")->capture_default_str();
  lut->add_option("--value", lt.value, "HSV value level (0-255)")->capture_default_str()->check(CLI::Range(0, 255));
  lut->add_option("--hue-steps", lt.hue_steps, "Columns")->capture_default_str()->check(CLI::PositiveNumber);
  lut->add_option("--saturation-steps", lt.saturation_steps, "Rows")->capture_default_str()->check(CLI::PositiveNumber);

  FlattenArgs fl;
  auto* flatten_cmd = app.add_subcommand("flatten", "Flatten images (remove texture, keep edges)");
  flatten_cmd->add_option("inputs", fl.inputs, "Input PNG images")->required()->check(CLI::ExistingFile);
  flatten_cmd->add_option("-o,--output", fl.output, "Output directory")->capture_default_str();
  flatten_cmd->add_option("-j,--jobs", fl.jobs, "Worker threads (0 = all cores)")->capture_default_str();
  add_flatten_options(*flatten_cmd, fl.params);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (decompose->parsed()) return cmd_decompose(dec);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (eval_cmd->parsed()) return cmd_eval(ev);
    if (sweep_rescale_cmd->parsed()) return cmd_sweep_rescale(sw);
    if (sweep_guided_cmd->parsed()) return cmd_sweep_guided(sw);
    if (sweep_bilateral_cmd->parsed()) return cmd_sweep_bilateral(sw);
    if (sweep_hinge_cmd->parsed()) return cmd_sweep_hinge(sw);
    if (lut->parsed()) return cmd_lut(lt);
    if (flatten_cmd->parsed()) return cmd_flatten(fl);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\nRun with --help for more information.\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
