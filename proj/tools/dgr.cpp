// dgr command-line tool. Exit codes: 0 ok, 1 I/O or other failure,
// 2 configuration error, 3 numeric failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dgr/dgr.hpp"

namespace {

dgr::Dims3 parse_dims_text(const std::string& text) {
  std::int64_t w = 0, h = 0, c = 0;
  char x1 = 0, x2 = 0;
  std::istringstream in(text);
  if (!(in >> w >> x1 >> h >> x2 >> c) || x1 != 'x' || x2 != 'x' || !in.eof())
    throw dgr::ConfigError("dims must look like WxHxC, got '" + text + "'");
  return {w, h, c};
}

struct Overrides {
  std::optional<std::string> dims, kind, volume, sinogram, truth, beam, filter, init, stop, loss, resume, resume_state;
  std::optional<std::int64_t> views, detectors, iters, init_count, snapshot_interval;
  std::optional<double> spacing, angle_start, angle_extent, dso, dod, noise_sigma, photons, holdout, max_value;
  std::optional<double> lr0, lrf;
  std::optional<int> box;
  std::optional<std::size_t> n_max;
  bool no_grad_prune = false, no_densify = false;
  std::vector<std::size_t> bench_n;
  std::vector<std::string> bench_dims, bench_paths;
  std::vector<int> bench_box;
  std::optional<int> bench_warm;
};

void add_geometry_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--beam", o.beam, "fan or parallel");
  cmd->add_option("--views", o.views, "number of view angles");
  cmd->add_option("--detectors", o.detectors, "detector bins");
  cmd->add_option("--detector-spacing", o.spacing, "bin spacing (voxels)");
  cmd->add_option("--angle-start", o.angle_start, "first view angle (degrees)");
  cmd->add_option("--angle-extent", o.angle_extent, "angular range [start, start+extent) in degrees");
  cmd->add_option("--source-to-origin", o.dso, "fan source distance (voxels)");
  cmd->add_option("--origin-to-detector", o.dod, "fan detector distance (voxels)");
}

void apply(const Overrides& o, dgr::RunConfig& c) {
  if (o.dims) c.dims = parse_dims_text(*o.dims);
  if (o.kind) c.phantom = dgr::detail::parse_phantom(*o.kind);
  if (o.volume) c.paths.volume = *o.volume;
  if (o.sinogram) c.paths.sinogram = *o.sinogram;
  if (o.truth) c.paths.truth = *o.truth;
  if (o.beam) {
    if (*o.beam == "fan") c.geometry.beam = dgr::BeamKind::Fan2D;
    else if (*o.beam == "parallel") c.geometry.beam = dgr::BeamKind::Parallel2D;
    else throw dgr::ConfigError("--beam must be fan or parallel");
  }
  if (o.views) c.geometry.views = *o.views;
  if (o.detectors) c.geometry.detectors = *o.detectors;
  if (o.spacing) c.geometry.detector_spacing = *o.spacing;
  if (o.angle_start) c.geometry.angle_start_deg = *o.angle_start;
  if (o.angle_extent) c.geometry.angle_extent_deg = *o.angle_extent;
  if (o.dso) c.geometry.source_to_origin = *o.dso;
  if (o.dod) c.geometry.origin_to_detector = *o.dod;
  if (o.noise_sigma) c.noise = dgr::NoiseModel::gaussian(*o.noise_sigma);
  if (o.photons) c.noise = dgr::NoiseModel::poisson(*o.photons);
  if (o.filter) {
    if (*o.filter == "ramp") c.fbp_filter = dgr::FbpFilter::Ramp;
    else if (*o.filter == "hann") c.fbp_filter = dgr::FbpFilter::Hann;
    else throw dgr::ConfigError("--filter must be ramp or hann");
  }
  if (o.iters) c.max_iters = *o.iters;
  if (o.box) c.box = dgr::BoxConfig::cube(*o.box);
  if (o.init) {
    if (*o.init == "fbp") c.init = dgr::InitMode::Fbp;
    else if (*o.init == "random") c.init = dgr::InitMode::Random;
    else throw dgr::ConfigError("--init must be fbp or random (use --resume for a cloud)");
  }
  if (o.init_count) {
    if (*o.init_count < 1) throw dgr::ConfigError("--init-count must be >= 1");
    c.init_count = std::size_t(*o.init_count);
  }
  if (o.resume) c.paths.initial_cloud = *o.resume;
  if (o.resume_state) c.paths.initial_state = *o.resume_state;
  if (o.stop) {
    if (*o.stop == "iterations") c.stop = dgr::StopRule::Iterations;
    else if (*o.stop == "validation") c.stop = dgr::StopRule::Validation;
    else throw dgr::ConfigError("--stop must be iterations or validation");
  }
  if (o.holdout) c.holdout_views = *o.holdout;
  if (o.loss) {
    if (*o.loss == "l1") c.loss = {true, false, false, {}, {}, {}};
    else if (*o.loss == "l1+ssim") c.loss = {true, true, false, {}, {}, {}};
    else if (*o.loss == "l1+ssim+tv") c.loss = {true, true, true, {}, {}, {}};
    else throw dgr::ConfigError("--loss must be l1, l1+ssim or l1+ssim+tv");
  }
  if (o.lr0) c.adam.lr_initial = *o.lr0;
  if (o.lrf) c.adam.lr_final = *o.lrf;
  if (o.n_max) c.densify.n_max = *o.n_max;
  if (o.no_grad_prune) c.densify.grad_prune_enabled = false;
  if (o.no_densify) c.densify_enabled = false;
  if (o.snapshot_interval) c.snapshot_interval = *o.snapshot_interval;
  if (!o.bench_n.empty() || !o.bench_dims.empty() || !o.bench_box.empty()) {
    const auto ns = o.bench_n.empty() ? std::vector<std::size_t>{50000} : o.bench_n;
    const auto bs = o.bench_box.empty() ? std::vector<int>{17} : o.bench_box;
    const auto ds = o.bench_dims.empty() ? std::vector<std::string>{"128x128x128"} : o.bench_dims;
    c.bench.cases.clear();
    for (const auto& d : ds)
      for (int b : bs)
        for (std::size_t n : ns) c.bench.cases.push_back({n, b, parse_dims_text(d)});
  }
  if (!o.bench_paths.empty()) c.bench.paths = o.bench_paths;
  if (o.bench_warm) c.bench.warm_iterations = *o.bench_warm;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discretized Gaussian representation CT reconstruction"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  app.add_option("--config", config_path, "run configuration (JSON)");
  app.add_option("--seed", seed, "global RNG seed");
  app.add_flag("--deterministic", deterministic, "serial scatter; bitwise-reproducible outputs");
  app.add_option("--out", out_dir, "output directory");

  Overrides o;
  auto* phantom = app.add_subcommand("phantom", "rasterise a Shepp-Logan phantom");
  phantom->add_option("--kind", o.kind, "shepp-logan-2d or shepp-logan-3d");
  phantom->add_option("--dims", o.dims, "WxHxC");

  auto* project = app.add_subcommand("project", "simulate a sinogram from a volume");
  project->add_option("--volume", o.volume, "input volume");
  project->add_option("--dims", o.dims, "WxHxC");
  project->add_option("--noise-sigma", o.noise_sigma, "additive Gaussian noise std-dev");
  project->add_option("--photons", o.photons, "Poisson noise incident photon count");
  add_geometry_flags(project, o);

  auto* fbp = app.add_subcommand("fbp", "filtered back projection baseline");
  fbp->add_option("--sinogram", o.sinogram, "input sinogram");
  fbp->add_option("--truth", o.truth, "ground truth for metrics");
  fbp->add_option("--dims", o.dims, "WxHxC");
  fbp->add_option("--filter", o.filter, "ramp or hann");
  add_geometry_flags(fbp, o);

  auto* recon = app.add_subcommand("reconstruct", "Gaussian reconstruction");
  recon->add_option("--sinogram", o.sinogram, "measured sinogram");
  recon->add_option("--truth", o.truth, "ground truth for the metric trace");
  recon->add_option("--dims", o.dims, "WxHxC");
  recon->add_option("--iters", o.iters, "iteration budget");
  recon->add_option("--box", o.box, "cubic box size (odd)");
  recon->add_option("--init", o.init, "fbp or random");
  recon->add_option("--init-count", o.init_count, "initial Gaussian count");
  recon->add_option("--resume", o.resume, "cloud snapshot to start from");
  recon->add_option("--resume-state", o.resume_state, "optimizer snapshot matching --resume");
  recon->add_option("--stop", o.stop, "iterations or validation");
  recon->add_option("--holdout-views", o.holdout, "validation view fraction (default 0.1)");
  recon->add_option("--loss", o.loss, "l1, l1+ssim or l1+ssim+tv");
  recon->add_option("--lr", o.lr0, "initial learning rate");
  recon->add_option("--lr-final", o.lrf, "final learning rate");
  recon->add_option("--n-max", o.n_max, "densification budget");
  recon->add_flag("--no-grad-prune", o.no_grad_prune, "prune only oversized Gaussians");
  recon->add_flag("--no-densify", o.no_densify, "disable adaptive density control");
  recon->add_option("--snapshot-interval", o.snapshot_interval, "write cloud/optimizer snapshots every k iterations");
  recon->add_option("--filter", o.filter, "FBP filter for initialisation");
  add_geometry_flags(recon, o);

  auto* metrics = app.add_subcommand("metrics", "PSNR/SSIM of a reconstruction");
  metrics->add_option("--recon", o.volume, "reconstructed volume");
  metrics->add_option("--truth", o.truth, "ground-truth volume");
  metrics->add_option("--max", o.max_value, "declared MAX (default: truth maximum)");

  auto* bench = app.add_subcommand("bench", "time reconstruct vs reconstruct_nodecomp");
  bench->add_option("--n", o.bench_n, "Gaussian counts");
  bench->add_option("--box", o.bench_box, "box sizes");
  bench->add_option("--dims", o.bench_dims, "volume sizes WxHxC");
  bench->add_option("--paths", o.bench_paths, "decomp, nodecomp, direct");
  bench->add_option("--warm", o.bench_warm, "timed calls per row");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  dgr::RunConfig cfg;
  try {
    if (config_path) cfg = dgr::load_run_config(*config_path);
    apply(o, cfg);
    if (seed) cfg.seed = *seed;
    if (deterministic) cfg.deterministic = true;
    if (out_dir) cfg.paths.out_dir = *out_dir;

    if (phantom->parsed()) dgr::cmd_phantom(cfg, std::cout);
    else if (project->parsed()) dgr::cmd_project(cfg, std::cout);
    else if (fbp->parsed()) dgr::cmd_fbp(cfg, std::cout);
    else if (recon->parsed()) dgr::cmd_reconstruct(cfg, std::cout);
    else if (metrics->parsed()) dgr::cmd_metrics(cfg, o.max_value, std::cout);
    else if (bench->parsed()) dgr::cmd_bench(cfg, std::cout);
  } catch (const dgr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const dgr::NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    try {
      const auto path = dgr::out_path(cfg, "failed_cloud.f64");
      dgr::write_cloud(path, e.cloud(), e.iteration());
      std::cerr << "offending cloud written to " << path.string() << '\n';
    } catch (const std::exception&) {
    }
    return 3;
  } catch (const dgr::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
