#pragma once

// CLI command bodies. Each validates its configuration before touching data,
// writes its outputs under cfg.paths.out_dir and returns what it wrote.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgr/config.hpp"
#include "dgr/fvr.hpp"
#include "dgr/io.hpp"
#include "dgr/metrics.hpp"
#include "dgr/optim.hpp"
#include "dgr/phantom.hpp"
#include "dgr/projector.hpp"

namespace dgr {

inline fs::path out_path(const RunConfig& cfg, const std::string& name) { return fs::path(cfg.paths.out_dir) / name; }

inline fs::path cmd_phantom(const RunConfig& cfg, std::ostream& os) {
  validate(cfg, {});
  const Volume vol = shepp_logan(cfg.phantom, cfg.dims);
  const fs::path path = out_path(cfg, "phantom.f32");
  write_volume(path, vol);
  write_slice_pgm(out_path(cfg, "phantom.pgm"), vol, cfg.dims.c / 2, cfg.window, cfg.level);
  os << "phantom " << to_string(cfg.dims) << " -> " << path.string() << '\n';
  return path;
}

inline fs::path cmd_project(const RunConfig& cfg, std::ostream& os) {
  validate(cfg, {.geometry = true, .volume = true});
  const Volume vol = read_volume(cfg.paths.volume);
  if (vol.dims() != cfg.dims)
    throw ConfigError("volume dims " + to_string(vol.dims()) + " do not match config dims " + to_string(cfg.dims));
  const ScanGeometry geom = cfg.geometry.build();
  const ScatterMode scatter = cfg.deterministic ? ScatterMode::Deterministic : ScatterMode::Atomic;
  Sinogram<float> sino = forward_project(vol, geom, ProjectorOptions{cfg.sampling, scatter});
  sino = add_noise(sino, cfg.noise, cfg.seed);
  const fs::path path = out_path(cfg, "sinogram.f32");
  write_sinogram(path, sino);
  os << "sinogram " << to_string(sino.dims()) << " -> " << path.string() << '\n';
  return path;
}

namespace detail {
inline std::optional<Volume> read_truth(const RunConfig& cfg) {
  if (cfg.paths.truth.empty()) return std::nullopt;
  Volume truth = read_volume(cfg.paths.truth);
  if (truth.dims() != cfg.dims) throw ConfigError("ground-truth dims do not match config dims");
  return truth;
}

inline void print_quality(std::ostream& os, const std::string& label, const QualityReport& q) {
  os << std::fixed << std::setprecision(4) << label << " PSNR " << q.psnr << " dB, SSIM " << q.ssim << '\n';
  for (const auto& p : q.planes)
    os << "  " << to_string(p.plane) << " mean slice PSNR " << p.mean_psnr << " dB, SSIM " << p.mean_ssim << '\n';
  os.unsetf(std::ios::floatfield);
}

inline Sinogram<float> read_measured(const RunConfig& cfg, const ScanGeometry& geom) {
  Sinogram<float> sino = read_sinogram(cfg.paths.sinogram);
  if (sino.dims() != geom.sino_dims(cfg.dims.c))
    throw ConfigError("sinogram dims " + to_string(sino.dims()) + " do not match geometry " +
                      to_string(geom.sino_dims(cfg.dims.c)));
  return sino;
}
}  // namespace detail

inline fs::path cmd_fbp(const RunConfig& cfg, std::ostream& os) {
  validate(cfg, {.geometry = true, .sinogram = true, .truth = !cfg.paths.truth.empty()});
  const ScanGeometry geom = cfg.geometry.build();
  const Sinogram<float> sino = detail::read_measured(cfg, geom);
  const auto truth = detail::read_truth(cfg);
  const Volume vol = fbp(sino, geom, cfg.dims, cfg.fbp_filter);
  const fs::path path = out_path(cfg, "fbp.f32");
  write_volume(path, vol);
  write_slice_pgm(out_path(cfg, "fbp.pgm"), vol, cfg.dims.c / 2, cfg.window, cfg.level);
  os << "fbp -> " << path.string() << '\n';
  if (truth) detail::print_quality(os, "fbp", evaluate_quality(vol, *truth, std::nullopt, cfg.dims.c > 1));
  return path;
}

inline void write_trace_csv(const fs::path& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "iteration,loss,l1,ssim_loss,tv,psnr,ssim,validation_loss,n_gaussians,wall_seconds,clones,splits,prunes,"
         "n_after\n";
  out << std::setprecision(10);
  auto num = [&](double v) -> std::ostream& {
    if (std::isfinite(v)) out << v;
    return out;
  };
  for (const auto& r : trace) {
    out << r.iteration << ',';
    num(r.loss) << ',';
    num(r.l1) << ',';
    num(r.ssim_loss) << ',';
    num(r.tv) << ',';
    num(r.psnr) << ',';
    num(r.ssim) << ',';
    num(r.validation_loss) << ',' << r.n_gaussians << ',';
    num(r.wall_seconds) << ',';
    if (r.densify) out << r.densify->clones << ',' << r.densify->splits << ',' << r.densify->prunes << ',' << r.densify->n_after;
    else out << ",,,";
    out << '\n';
  }
}

struct ReconstructOutputs {
  fs::path volume, cloud, state, trace;
  ReconstructionResult result;
};

/// Full pipeline. A cloud snapshot whose sidecar records iteration k resumes the
/// schedule at k; pairing it with the optimizer snapshot written alongside it
/// reproduces the uninterrupted run's next loss under --deterministic.
inline ReconstructOutputs cmd_reconstruct(const RunConfig& cfg, std::ostream& os) {
  RunConfig run = cfg;
  if (!run.paths.initial_cloud.empty()) run.init = InitMode::Cloud;
  validate(run, {.sinogram = true, .truth = !run.paths.truth.empty(), .reconstruction = true});
  const ScanGeometry geom = run.geometry.build();
  const Sinogram<float> measured = detail::read_measured(run, geom);
  const auto truth = detail::read_truth(run);

  ReconstructionConfig rc = run.reconstruction();
  if (run.init == InitMode::Cloud) {
    auto snap = read_cloud(run.paths.initial_cloud);
    rc.initial_cloud = std::move(snap.cloud);
    rc.start_iteration = snap.iteration;
    if (!run.paths.initial_state.empty()) {
      rc.initial_state = read_optimizer_state(run.paths.initial_state);
      if (rc.initial_state->step != rc.start_iteration)
        log_warning("optimizer snapshot step differs from the cloud snapshot iteration");
    }
  }
  const fs::path snapshots = out_path(run, "snapshots");
  if (run.snapshot_interval > 0) {
    rc.on_checkpoint = [&](std::int64_t next, const GaussianCloud& cloud, const OptimizerState& state) {
      if (next % run.snapshot_interval != 0) return;
      const std::string tag = std::to_string(next);
      write_cloud(snapshots / ("cloud_" + tag + ".f64"), cloud, next);
      write_optimizer_state(snapshots / ("state_" + tag + ".f64"), state);
    };
  }
  rc.on_iteration = [&](const TraceRow& r) {
    if (r.densify)
      os << "iter " << r.iteration << ": densify +" << r.densify->clones << " clones, " << r.densify->splits
         << " splits, -" << r.densify->prunes << " pruned, N=" << r.densify->n_after << '\n';
    if (std::isfinite(r.psnr))
      os << "iter " << r.iteration << ": loss " << r.loss << ", PSNR " << r.psnr << ", SSIM " << r.ssim << '\n';
  };

  ReconstructOutputs out;
  out.result = run_reconstruction(measured, geom, rc, truth ? &*truth : nullptr);
  const std::int64_t final_iteration = rc.start_iteration + out.result.iterations_run;
  out.volume = out_path(run, "recon.f32");
  out.cloud = out_path(run, "cloud.f64");
  out.state = out_path(run, "state.f64");
  out.trace = out_path(run, "trace.csv");
  write_volume(out.volume, out.result.volume);
  write_cloud(out.cloud, out.result.cloud, final_iteration);
  write_optimizer_state(out.state, out.result.state);
  write_trace_csv(out.trace, out.result.trace);
  write_slice_pgm(out_path(run, "recon.pgm"), out.result.volume, run.dims.c / 2, run.window, run.level);
  os << "reconstruct: " << out.result.iterations_run << " iterations, " << out.result.cloud.size() << " Gaussians -> "
     << out.volume.string() << '\n';
  if (truth) detail::print_quality(os, "dgr", evaluate_quality(out.result.volume, *truth, std::nullopt, run.dims.c > 1));
  return out;
}

/// Volume and per-plane quality of paths.volume against paths.truth.
inline QualityReport cmd_metrics(const RunConfig& cfg, std::optional<double> max_value, std::ostream& os) {
  validate(cfg, {.volume = true, .truth = true});
  const Volume recon = read_volume(cfg.paths.volume);
  const Volume truth = read_volume(cfg.paths.truth);
  if (recon.dims() != truth.dims())
    throw ConfigError("dims mismatch: " + to_string(recon.dims()) + " vs " + to_string(truth.dims()));
  const QualityReport q = evaluate_quality(recon, truth, max_value);
  detail::print_quality(os, "volume", q);
  nlohmann::json j{{"psnr", q.psnr}, {"ssim", q.ssim}, {"mse", q.mse}, {"max", q.max_value}};
  for (const auto& p : q.planes) j["planes"][to_string(p.plane)] = {{"psnr", p.mean_psnr}, {"ssim", p.mean_ssim}};
  fs::create_directories(cfg.paths.out_dir);
  std::ofstream(out_path(cfg, "metrics.json")) << j.dump(2) << '\n';
  return q;
}

struct BenchRow {
  std::string path;
  std::size_t n_gaussians = 0;
  BoxConfig box;
  Dims3 dims;
  double seconds_per_iteration = 0.0;
};

namespace detail {
/// Peak resident set size in bytes, or 0 where /proc is unavailable.
inline std::size_t peak_rss_bytes() {
  std::ifstream status("/proc/self/status");
  std::string line;
  while (std::getline(status, line))
    if (line.rfind("VmHWM:", 0) == 0) return std::size_t(std::stoull(line.substr(6))) * 1024;
  return 0;
}
}  // namespace detail

/// Mean wall time per call over `warm_iterations` calls after one warm-up call,
/// for every (case, path) pair. CSV goes to out_dir/bench.csv.
inline std::vector<BenchRow> cmd_bench(const RunConfig& cfg, std::ostream& os) {
  validate(cfg, {});
  const auto& b = cfg.bench;
  if (b.warm_iterations < 1) throw ConfigError("bench.warm_iterations must be >= 1");
  if (b.cases.empty() || b.paths.empty()) throw ConfigError("bench needs at least one case and one path");
  for (const auto& p : b.paths)
    if (p != "decomp" && p != "nodecomp" && p != "direct") throw ConfigError("unknown bench path '" + p + "'");
  for (const auto& c : b.cases) {
    if (!c.dims.positive() || c.n_gaussians < 1) throw ConfigError("bench cases need positive dims and n");
    const BoxConfig box = BoxConfig::cube(c.box).fitted_to(c.dims);
    for (int d = 0; d < 3; ++d)
      if (box[d] > c.dims[d]) throw ConfigError("bench box " + box.to_string() + " exceeds dims " + to_string(c.dims));
  }

  const FvrOptions opt{cfg.deterministic ? ScatterMode::Deterministic : ScatterMode::Atomic, false};
  std::vector<BenchRow> rows;
  for (const auto& c : b.cases) {
    const BoxConfig box = BoxConfig::cube(c.box).fitted_to(c.dims);
    const GaussianCloud cloud = init_cloud_random(c.dims, c.n_gaussians, cfg.seed, box, {1.0, 1.0});
    for (const auto& p : b.paths) {
      auto call = [&] {
        if (p == "decomp") return reconstruct<float>(cloud, box, c.dims, opt);
        if (p == "nodecomp") return reconstruct_nodecomp<float>(cloud, box, c.dims, opt);
        return reconstruct_direct<float>(cloud, c.dims, opt);
      };
      call();
      const auto t0 = std::chrono::steady_clock::now();
      for (int i = 0; i < b.warm_iterations; ++i) call();
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rows.push_back({p, c.n_gaussians, box, c.dims, secs / b.warm_iterations});
    }
  }

  fs::create_directories(cfg.paths.out_dir);
  std::ofstream csv(out_path(cfg, "bench.csv"), std::ios::trunc);
  csv << "path,n_gaussians,box,dims,seconds_per_iteration\n";
  for (const auto& r : rows) {
    std::ostringstream line;
    line << r.path << ',' << r.n_gaussians << ',' << r.box.to_string() << ',' << to_string(r.dims) << ','
         << std::setprecision(6) << r.seconds_per_iteration;
    csv << line.str() << '\n';
    os << line.str() << '\n';
  }
  os << "peak resident memory: " << double(detail::peak_rss_bytes()) / (1024.0 * 1024.0) << " MiB\n";
  return rows;
}

}  // namespace dgr
