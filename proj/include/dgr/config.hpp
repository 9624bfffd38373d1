#pragma once

// Run configuration: a JSON document shared by every CLI command. Unknown keys
// are rejected so typos surface as config errors instead of silent defaults.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgr/core.hpp"
#include "dgr/io.hpp"
#include "dgr/loss.hpp"
#include "dgr/optim.hpp"
#include "dgr/phantom.hpp"
#include "dgr/projector.hpp"

namespace dgr {

struct GeometryConfig {
  BeamKind beam = BeamKind::Fan2D;
  std::int64_t views = 60;
  std::int64_t detectors = 384;
  double detector_spacing = 1.5;
  double angle_start_deg = 0.0;
  double angle_extent_deg = 180.0;
  double source_to_origin = 512.0;
  double origin_to_detector = 256.0;

  ScanGeometry build() const {
    const double to_rad = std::numbers::pi / 180.0;
    return beam == BeamKind::Fan2D ? ScanGeometry::fan(views, detectors, detector_spacing, source_to_origin,
                                                       origin_to_detector, angle_start_deg * to_rad,
                                                       angle_extent_deg * to_rad)
                                   : ScanGeometry::parallel(views, detectors, detector_spacing, angle_start_deg * to_rad,
                                                            angle_extent_deg * to_rad);
  }
};

struct LossConfig {
  bool l1 = true;
  bool ssim = true;
  bool tv = true;
  std::optional<double> lambda1, lambda2, lambda3;  // explicit overrides

  /// Enabled terms pick a preset ({L1}, {L1,SSIM} or all three); explicit
  /// lambdas then override individual weights of enabled terms.
  LossWeights weights() const {
    LossWeights w{0.0, 0.0, 0.0};
    if (l1 && ssim && tv) w = LossWeights::full();
    else if (l1 && ssim) w = LossWeights::l1_ssim();
    else if (l1 && !tv) w = LossWeights::l1_only();
    else w = {l1 ? 1.0 : 0.0, ssim ? 0.2 : 0.0, tv ? 1.0 : 0.0};
    if (l1 && lambda1) w.lambda1 = *lambda1;
    if (ssim && lambda2) w.lambda2 = *lambda2;
    if (tv && lambda3) w.lambda3 = *lambda3;
    return w;
  }
};

struct BenchCase {
  std::size_t n_gaussians = 50000;
  int box = 17;
  Dims3 dims{128, 128, 128};
};

struct BenchConfig {
  std::vector<std::string> paths{"decomp", "nodecomp"};
  std::vector<BenchCase> cases{BenchCase{}};
  int warm_iterations = 10;
};

struct PathsConfig {
  std::string volume;         // input volume (project, metrics recon)
  std::string truth;          // ground truth (metrics, reconstruct trace)
  std::string sinogram;       // input sinogram (fbp, reconstruct)
  std::string initial_cloud;  // resume / cloud init
  std::string initial_state;  // optimizer moments for resume
  std::string out_dir = "out";
};

struct RunConfig {
  PathsConfig paths;
  Dims3 dims{256, 256, 1};
  PhantomKind phantom = PhantomKind::SheppLogan2D;
  GeometryConfig geometry;
  RaySamplingConfig sampling;
  NoiseModel noise;
  BoxConfig box = BoxConfig::cube(17);
  LossConfig loss;
  AdamParams adam;
  std::int64_t max_iters = 1000;
  bool densify_enabled = true;
  DensifyParams densify;  // theta <= 0 selects the volume default
  InitMode init = InitMode::Fbp;
  std::size_t init_count = 150000;
  InitParams init_params;
  FbpFilter fbp_filter = FbpFilter::Ramp;
  StopRule stop = StopRule::Iterations;
  double holdout_views = 0.1;
  std::int64_t validation_interval = 10;
  std::int64_t patience = 5;
  std::int64_t metrics_interval = 10;
  std::int64_t snapshot_interval = 0;  // 0: final snapshot only
  double window = 1.0, level = 0.5;    // slice export
  std::uint64_t seed = 0;
  bool deterministic = false;
  BenchConfig bench;

  ReconstructionConfig reconstruction() const {
    ReconstructionConfig rc;
    rc.dims = dims;
    rc.box = box;
    rc.weights = loss.weights();
    rc.adam = adam;
    rc.max_iters = max_iters;
    rc.densify_enabled = densify_enabled;
    rc.densify = densify;
    rc.init = init;
    rc.init_count = init_count;
    rc.init_params = init_params;
    rc.init_filter = fbp_filter;
    rc.seed = seed;
    rc.deterministic = deterministic;
    rc.sampling = sampling;
    rc.stop = stop;
    rc.holdout_fraction = holdout_views;
    rc.validation_interval = validation_interval;
    rc.patience = patience;
    rc.metrics_interval = metrics_interval;
    return rc;
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::string& where, std::set<std::string> known) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline Dims3 parse_dims(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("dims must be an array [w, h, c]");
  return {j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
}

inline BoxConfig parse_box(const nlohmann::json& j) {
  if (j.is_number_integer()) return BoxConfig::cube(j.get<int>());
  if (j.is_array() && j.size() == 3) return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
  throw ConfigError("box must be an odd integer or [w0, h0, c0]");
}

inline PhantomKind parse_phantom(const std::string& s) {
  if (s == "shepp-logan-2d") return PhantomKind::SheppLogan2D;
  if (s == "shepp-logan-3d") return PhantomKind::SheppLogan3D;
  throw ConfigError("unknown phantom kind '" + s + "'");
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::read_opt;
  using detail::reject_unknown;
  RunConfig c;
  reject_unknown(j, "config", {"paths", "dims", "phantom", "geometry", "sampling", "noise", "box", "loss", "optimizer",
                               "densify", "init", "stop", "metrics_interval", "snapshot_interval", "display", "seed",
                               "deterministic", "bench"});
  try {
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      reject_unknown(p, "paths", {"volume", "truth", "sinogram", "initial_cloud", "initial_state", "out_dir"});
      read_opt(p, "volume", c.paths.volume);
      read_opt(p, "truth", c.paths.truth);
      read_opt(p, "sinogram", c.paths.sinogram);
      read_opt(p, "initial_cloud", c.paths.initial_cloud);
      read_opt(p, "initial_state", c.paths.initial_state);
      read_opt(p, "out_dir", c.paths.out_dir);
    }
    if (j.contains("dims")) c.dims = detail::parse_dims(j["dims"]);
    if (j.contains("phantom")) c.phantom = detail::parse_phantom(j["phantom"].get<std::string>());
    if (j.contains("geometry")) {
      const auto& g = j["geometry"];
      reject_unknown(g, "geometry", {"beam", "views", "detectors", "detector_spacing", "angle_start_deg",
                                     "angle_extent_deg", "source_to_origin", "origin_to_detector"});
      if (g.contains("beam")) {
        const auto beam = g["beam"].get<std::string>();
        if (beam == "fan") c.geometry.beam = BeamKind::Fan2D;
        else if (beam == "parallel") c.geometry.beam = BeamKind::Parallel2D;
        else throw ConfigError("geometry.beam must be 'fan' or 'parallel'");
      }
      read_opt(g, "views", c.geometry.views);
      read_opt(g, "detectors", c.geometry.detectors);
      read_opt(g, "detector_spacing", c.geometry.detector_spacing);
      read_opt(g, "angle_start_deg", c.geometry.angle_start_deg);
      read_opt(g, "angle_extent_deg", c.geometry.angle_extent_deg);
      read_opt(g, "source_to_origin", c.geometry.source_to_origin);
      read_opt(g, "origin_to_detector", c.geometry.origin_to_detector);
    }
    if (j.contains("sampling")) {
      reject_unknown(j["sampling"], "sampling", {"step_length"});
      read_opt(j["sampling"], "step_length", c.sampling.step_length);
    }
    if (j.contains("noise")) {
      const auto& n = j["noise"];
      reject_unknown(n, "noise", {"kind", "sigma", "photons"});
      const auto kind = n.value("kind", std::string("none"));
      if (kind == "none") c.noise = NoiseModel::none();
      else if (kind == "gaussian") c.noise = NoiseModel{NoiseModel::Kind::Gaussian, n.value("sigma", 0.0), 0.0};
      else if (kind == "poisson") c.noise = NoiseModel{NoiseModel::Kind::Poisson, 0.0, n.value("photons", 0.0)};
      else throw ConfigError("noise.kind must be none, gaussian or poisson");
    }
    if (j.contains("box")) c.box = detail::parse_box(j["box"]);
    if (j.contains("loss")) {
      const auto& l = j["loss"];
      reject_unknown(l, "loss", {"l1", "ssim", "tv", "lambda1", "lambda2", "lambda3"});
      read_opt(l, "l1", c.loss.l1);
      read_opt(l, "ssim", c.loss.ssim);
      read_opt(l, "tv", c.loss.tv);
      if (l.contains("lambda1")) c.loss.lambda1 = l["lambda1"].get<double>();
      if (l.contains("lambda2")) c.loss.lambda2 = l["lambda2"].get<double>();
      if (l.contains("lambda3")) c.loss.lambda3 = l["lambda3"].get<double>();
    }
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      reject_unknown(o, "optimizer", {"lr_initial", "lr_final", "beta1", "beta2", "eps", "max_iters", "sigma_min"});
      read_opt(o, "lr_initial", c.adam.lr_initial);
      read_opt(o, "lr_final", c.adam.lr_final);
      read_opt(o, "beta1", c.adam.beta1);
      read_opt(o, "beta2", c.adam.beta2);
      read_opt(o, "eps", c.adam.eps);
      read_opt(o, "sigma_min", c.adam.sigma_min);
      read_opt(o, "max_iters", c.max_iters);
    }
    if (j.contains("densify")) {
      const auto& d = j["densify"];
      reject_unknown(d, "densify", {"enabled", "n_max", "tau", "theta", "interval", "grad_prune"});
      read_opt(d, "enabled", c.densify_enabled);
      read_opt(d, "n_max", c.densify.n_max);
      read_opt(d, "tau", c.densify.tau);
      read_opt(d, "theta", c.densify.theta);
      read_opt(d, "interval", c.densify.interval);
      read_opt(d, "grad_prune", c.densify.grad_prune_enabled);
    }
    if (j.contains("init")) {
      const auto& i = j["init"];
      reject_unknown(i, "init", {"mode", "count", "sigma", "intensity", "filter"});
      const auto mode = i.value("mode", std::string("fbp"));
      if (mode == "fbp") c.init = InitMode::Fbp;
      else if (mode == "random") c.init = InitMode::Random;
      else if (mode == "cloud") c.init = InitMode::Cloud;
      else throw ConfigError("init.mode must be fbp, random or cloud");
      read_opt(i, "count", c.init_count);
      read_opt(i, "sigma", c.init_params.sigma);
      read_opt(i, "intensity", c.init_params.random_intensity);
      if (i.contains("filter")) {
        const auto f = i["filter"].get<std::string>();
        if (f == "ramp") c.fbp_filter = FbpFilter::Ramp;
        else if (f == "hann") c.fbp_filter = FbpFilter::Hann;
        else throw ConfigError("init.filter must be ramp or hann");
      }
    }
    if (j.contains("stop")) {
      const auto& s = j["stop"];
      reject_unknown(s, "stop", {"rule", "holdout_views", "interval", "patience"});
      const auto rule = s.value("rule", std::string("iterations"));
      if (rule == "iterations") c.stop = StopRule::Iterations;
      else if (rule == "validation") c.stop = StopRule::Validation;
      else throw ConfigError("stop.rule must be iterations or validation");
      read_opt(s, "holdout_views", c.holdout_views);
      read_opt(s, "interval", c.validation_interval);
      read_opt(s, "patience", c.patience);
    }
    read_opt(j, "metrics_interval", c.metrics_interval);
    read_opt(j, "snapshot_interval", c.snapshot_interval);
    if (j.contains("display")) {
      reject_unknown(j["display"], "display", {"window", "level"});
      read_opt(j["display"], "window", c.window);
      read_opt(j["display"], "level", c.level);
    }
    read_opt(j, "seed", c.seed);
    read_opt(j, "deterministic", c.deterministic);
    if (j.contains("bench")) {
      const auto& b = j["bench"];
      reject_unknown(b, "bench", {"paths", "cases", "warm_iterations"});
      read_opt(b, "paths", c.bench.paths);
      read_opt(b, "warm_iterations", c.bench.warm_iterations);
      if (b.contains("cases")) {
        c.bench.cases.clear();
        for (const auto& e : b["cases"]) {
          reject_unknown(e, "bench case", {"n", "box", "dims"});
          BenchCase bc;
          read_opt(e, "n", bc.n_gaussians);
          read_opt(e, "box", bc.box);
          if (e.contains("dims")) bc.dims = detail::parse_dims(e["dims"]);
          c.bench.cases.push_back(bc);
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

/// Which inputs a command needs; drives the path-existence checks.
struct Requirements {
  bool geometry = false;
  bool volume = false;
  bool sinogram = false;
  bool truth = false;
  bool reconstruction = false;
};

namespace detail {
inline void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path is not set");
  if (!std::filesystem::is_regular_file(path)) throw ConfigError(what + " '" + path + "' does not exist");
  if (!std::filesystem::is_regular_file(sidecar_path(path).string()))
    throw ConfigError(what + " sidecar '" + sidecar_path(path).string() + "' does not exist");
}
}  // namespace detail

/// Checks everything the modules would reject later, before any compute.
inline void validate(const RunConfig& c, const Requirements& req) {
  if (!c.dims.positive()) throw ConfigError("dims must be positive, got " + to_string(c.dims));
  if (req.geometry || req.reconstruction) {
    if (c.geometry.views < 1) throw ConfigError("geometry.views must be >= 1");
    if (!(c.geometry.angle_extent_deg > 0.0)) throw ConfigError("geometry.angle_extent_deg must be > 0");
    if (!(c.geometry.angle_start_deg >= 0.0 && c.geometry.angle_start_deg + c.geometry.angle_extent_deg <= 360.0))
      throw ConfigError("view angles must stay inside [0, 360) degrees");
    c.geometry.build().validate_for(c.dims);
    if (!(c.sampling.step_length > 0.0)) throw ConfigError("sampling.step_length must be > 0");
  }
  if (c.noise.kind == NoiseModel::Kind::Gaussian && !(c.noise.sigma >= 0.0))
    throw ConfigError("noise.sigma must be >= 0");
  if (c.noise.kind == NoiseModel::Kind::Poisson && !(c.noise.photon_count > 0.0))
    throw ConfigError("noise.photons must be > 0");
  if (req.volume) detail::require_file(c.paths.volume, "input volume");
  if (req.sinogram) detail::require_file(c.paths.sinogram, "input sinogram");
  if (req.truth) detail::require_file(c.paths.truth, "ground-truth volume");
  if (req.reconstruction) {
    c.box.validate();
    const ReconstructionConfig rc = resolved(c.reconstruction());
    rc.weights.validate();
    rc.adam.validate();
    if (c.max_iters < 0) throw ConfigError("optimizer.max_iters must be >= 0");
    if (c.init == InitMode::Cloud) detail::require_file(c.paths.initial_cloud, "initial cloud");
    else if (c.init_count < 1) throw ConfigError("init.count must be >= 1");
    if (c.densify_enabled) rc.densify.validate(c.init == InitMode::Cloud ? 0 : c.init_count);
    if (!c.paths.initial_state.empty()) detail::require_file(c.paths.initial_state, "optimizer state");
    if (!(c.init_params.sigma > 0.0)) throw ConfigError("init.sigma must be > 0");
    if (!(c.init_params.random_intensity >= 0.0)) throw ConfigError("init.intensity must be >= 0");
    if (c.stop == StopRule::Validation) {
      if (!(c.holdout_views > 0.0 && c.holdout_views < 1.0)) throw ConfigError("holdout_views must be in (0, 1)");
      if (c.geometry.views < 2) throw ConfigError("a validation hold-out needs at least two views");
      if (c.validation_interval < 1 || c.patience < 1) throw ConfigError("stop.interval and stop.patience must be >= 1");
    }
    if (c.snapshot_interval < 0) throw ConfigError("snapshot_interval must be >= 0");
  }
}

}  // namespace dgr
