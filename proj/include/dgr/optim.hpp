#pragma once

// Global optimisation: every iteration renders the whole cloud, projects it,
// evaluates the composite loss against the measured sinogram and updates all
// Gaussian parameters jointly with Adam.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dgr/core.hpp"
#include "dgr/densify.hpp"
#include "dgr/fvr.hpp"
#include "dgr/log.hpp"
#include "dgr/loss.hpp"
#include "dgr/metrics.hpp"
#include "dgr/projector.hpp"

namespace dgr {

struct AdamParams {
  double lr_initial = 3e-4;
  double lr_final = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double sigma_min = 0.3;
  double sigma_max = 51.0;  // 3 * box extent
  /// Voxels per optimiser unit for mu and sigma. Moments and steps for the
  /// spatial parameters live in this scaled frame; intensity is unscaled.
  double frame_scale = 1.0;

  void validate() const {
    if (!(lr_initial > 0.0 && lr_final > 0.0)) throw ConfigError("learning rates must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("Adam eps must be > 0");
    if (!(sigma_min > 0.0 && sigma_max >= sigma_min)) throw ConfigError("sigma clamp bounds are inconsistent");
    if (!(frame_scale > 0.0)) throw ConfigError("frame scale must be > 0");
  }
};

/// Adam moments laid out like the cloud, plus the step counter and the
/// exponential learning-rate schedule lr(t) = lr0 * (lr_f / lr0)^(t / T).
struct OptimizerState {
  std::vector<Vec3> m_mu, v_mu;
  std::vector<double> m_sigma, v_sigma;
  std::vector<double> m_intensity, v_intensity;
  std::int64_t step = 0;
  std::int64_t max_iters = 1000;

  OptimizerState() = default;
  explicit OptimizerState(std::size_t n, std::int64_t schedule_length = 1000)
      : m_mu(n, Vec3{0, 0, 0}),
        v_mu(n, Vec3{0, 0, 0}),
        m_sigma(n, 0.0),
        v_sigma(n, 0.0),
        m_intensity(n, 0.0),
        v_intensity(n, 0.0),
        max_iters(schedule_length) {}

  std::size_t size() const { return m_sigma.size(); }

  double learning_rate(const AdamParams& p) const {
    if (max_iters <= 0) return p.lr_initial;
    const double t = std::min(1.0, double(step) / double(max_iters));
    return p.lr_initial * std::pow(p.lr_final / p.lr_initial, t);
  }

  /// Keeps the moments of surviving Gaussians and zero-initialises new ones.
  void remap(const std::vector<std::optional<std::size_t>>& origin) {
    OptimizerState next(origin.size(), max_iters);
    next.step = step;
    for (std::size_t k = 0; k < origin.size(); ++k) {
      if (!origin[k]) continue;
      const std::size_t i = *origin[k];
      next.m_mu[k] = m_mu[i];
      next.v_mu[k] = v_mu[i];
      next.m_sigma[k] = m_sigma[i];
      next.v_sigma[k] = v_sigma[i];
      next.m_intensity[k] = m_intensity[i];
      next.v_intensity[k] = v_intensity[i];
    }
    *this = std::move(next);
  }

  bool finite() const {
    auto ok = [](double v) { return std::isfinite(v); };
    for (std::size_t i = 0; i < size(); ++i) {
      for (int d = 0; d < 3; ++d)
        if (!ok(m_mu[i][d]) || !ok(v_mu[i][d])) return false;
      if (!ok(m_sigma[i]) || !ok(v_sigma[i]) || !ok(m_intensity[i]) || !ok(v_intensity[i])) return false;
    }
    return true;
  }
};

/// Bias-corrected Adam update of mu, sigma and I at the scheduled learning rate,
/// followed by projection: sigma into [sigma_min, sigma_max], I >= 0.
inline void adam_step(GaussianCloud& cloud, const ParamGradients& grads, OptimizerState& state,
                      const AdamParams& p = {}) {
  const std::size_t n = cloud.size();
  if (grads.size() != n || state.size() != n)
    throw ConfigError("adam_step: cloud (" + std::to_string(n) + "), gradients (" + std::to_string(grads.size()) +
                      ") and optimizer state (" + std::to_string(state.size()) + ") disagree in length");
  const double lr = state.learning_rate(p);
  ++state.step;
  const double bc1 = 1.0 - std::pow(p.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(p.beta2, double(state.step));
  auto update = [&](double& param, double g, double& m, double& v) {
    m = p.beta1 * m + (1.0 - p.beta1) * g;
    v = p.beta2 * v + (1.0 - p.beta2) * g * g;
    param -= lr * (m / bc1) / (std::sqrt(v / bc2) + p.eps);
  };
  const double s = p.frame_scale;
  auto update_spatial = [&](double& param, double g, double& m, double& v) {
    double scaled = param / s;
    update(scaled, g * s, m, v);
    param = scaled * s;
  };
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < std::int64_t(n); ++ii) {
    const auto i = std::size_t(ii);
    for (int d = 0; d < 3; ++d) update_spatial(cloud.mu[i][d], grads.d_mu[i][d], state.m_mu[i][d], state.v_mu[i][d]);
    update_spatial(cloud.sigma[i], grads.d_sigma[i], state.m_sigma[i], state.v_sigma[i]);
    update(cloud.intensity[i], grads.d_intensity[i], state.m_intensity[i], state.v_intensity[i]);
    cloud.sigma[i] = std::clamp(cloud.sigma[i], p.sigma_min, p.sigma_max);
    cloud.intensity[i] = std::max(cloud.intensity[i], 0.0);
  }
}

struct InitParams {
  double sigma = 1.5;
  double random_intensity = 1e-3;
};

namespace detail {

/// Voxel mass of one Gaussian rendered with `box` on the lattice of `dims`, centre on a voxel.
inline double rendered_mass(double sigma, const BoxConfig& box) {
  double mass = 1.0;
  for (int d = 0; d < 3; ++d) {
    double s = 0.0;
    for (int o = -box.half(d); o <= box.half(d); ++o) s += std::exp(-0.5 * double(o * o) / (sigma * sigma));
    mass *= s;
  }
  return mass;
}

inline double jitter(std::mt19937_64& rng, std::int64_t extent) {
  if (extent <= 1) return 0.0;
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace detail

/// Centres uniform over the volume interior (margin = half box per axis; flat
/// axes sit at coordinate 0), sigma 1.5, intensity 1e-3.
inline GaussianCloud init_cloud_random(const Dims3& dims, std::size_t n, std::uint64_t seed,
                                       const BoxConfig& box = BoxConfig::cube(17), const InitParams& ip = {}) {
  if (n < 1) throw ConfigError("initial Gaussian count must be >= 1");
  const BoxConfig fitted = box.fitted_to(dims);
  std::mt19937_64 rng(seed);
  GaussianCloud cloud;
  cloud.reserve(n);
  std::array<std::uniform_real_distribution<double>, 3> axis;
  for (int d = 0; d < 3; ++d) {
    const double extent = double(dims[d]);
    double margin = double(fitted.half(d));
    if (2.0 * margin >= extent - 1.0) margin = 0.0;
    axis[std::size_t(d)] = std::uniform_real_distribution<double>(margin, std::max(margin, extent - 1.0 - margin));
  }
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 m{};
    for (int d = 0; d < 3; ++d) m[d] = dims[d] > 1 ? axis[std::size_t(d)](rng) : 0.0;
    cloud.push_back(m, ip.sigma, ip.random_intensity);
  }
  return cloud;
}

/// Centres drawn with probability proportional to max(FBP, 0) and jittered
/// uniformly inside the voxel (flat axes excluded). Intensities are the sampled
/// voxel values scaled so the expected rendered mass equals the clamped FBP mass.
template <class Real>
GaussianCloud init_cloud_fbp(const VolumeGrid<Real>& fbp_vol, std::size_t n, std::uint64_t seed,
                             const BoxConfig& box = BoxConfig::cube(17), const InitParams& ip = {}) {
  if (n < 1) throw ConfigError("initial Gaussian count must be >= 1");
  const Dims3 dims = fbp_vol.dims();
  std::vector<double> weight(std::size_t(dims.size()));
  double sum = 0.0, sum_sq = 0.0;
  for (std::int64_t i = 0; i < dims.size(); ++i) {
    const double v = double(fbp_vol[i]);
    if (!std::isfinite(v)) throw ConfigError("FBP volume contains non-finite values");
    weight[std::size_t(i)] = std::max(v, 0.0);
    sum += weight[std::size_t(i)];
    sum_sq += weight[std::size_t(i)] * weight[std::size_t(i)];
  }
  if (!(sum > 0.0)) {
    log_warning("FBP volume has no positive voxels; falling back to uniform initialisation");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::int64_t> pick(0, dims.size() - 1);
    GaussianCloud cloud;
    cloud.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Index3 p = dims.coords(pick(rng));
      Vec3 m{};
      for (int d = 0; d < 3; ++d) m[d] = double(p[d]) + detail::jitter(rng, dims[d]);
      cloud.push_back(m, ip.sigma, ip.random_intensity);
    }
    return cloud;
  }
  const BoxConfig fitted = box.fitted_to(dims);
  // E[sampled value] = sum(v^2)/sum(v) under value-proportional sampling.
  const double expected_mass = double(n) * (sum_sq / sum) * detail::rendered_mass(ip.sigma, fitted);
  const double scale = sum / expected_mass;

  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::int64_t> pick(weight.begin(), weight.end());
  GaussianCloud cloud;
  cloud.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t idx = pick(rng);
    const Index3 p = dims.coords(idx);
    Vec3 m{};
    for (int d = 0; d < 3; ++d) m[d] = double(p[d]) + detail::jitter(rng, dims[d]);
    cloud.push_back(m, ip.sigma, weight[std::size_t(idx)] * scale);
  }
  return cloud;
}

enum class InitMode { Fbp, Random, Cloud };
enum class StopRule { Iterations, Validation };

struct TraceRow {
  std::int64_t iteration = 0;
  double loss = 0.0;
  double l1 = 0.0;
  double ssim_loss = 0.0;
  double tv = 0.0;
  double psnr = std::numeric_limits<double>::quiet_NaN();  // vs ground truth, when given
  double ssim = std::numeric_limits<double>::quiet_NaN();
  double validation_loss = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_gaussians = 0;
  double wall_seconds = 0.0;
  std::optional<DensifyReport> densify;  // origin mapping dropped
};

struct ReconstructionConfig {
  Dims3 dims{};
  BoxConfig box = BoxConfig::cube(17);
  LossWeights weights{};
  AdamParams adam{};
  std::int64_t max_iters = 1000;
  /// Optimise mu and sigma in a frame where half the largest volume extent is
  /// one unit; densify's gradient statistic is measured in the same frame.
  bool normalized_frame = true;

  bool densify_enabled = true;
  DensifyParams densify{};  // theta <= 0 selects the volume default

  InitMode init = InitMode::Fbp;
  std::size_t init_count = 150000;
  InitParams init_params{};
  FbpFilter init_filter = FbpFilter::Ramp;
  std::optional<GaussianCloud> initial_cloud;          // InitMode::Cloud
  std::optional<OptimizerState> initial_state;         // resume
  std::int64_t start_iteration = 0;

  std::uint64_t seed = 0;
  bool deterministic = false;
  RaySamplingConfig sampling{};

  StopRule stop = StopRule::Iterations;
  double holdout_fraction = 0.1;
  std::int64_t validation_interval = 10;
  std::int64_t patience = 5;
  double validation_tolerance = 1e-4;

  std::int64_t metrics_interval = 10;  // ground-truth metrics cadence (and the final iteration)

  std::function<void(const TraceRow&)> on_iteration;
  /// Called after the update of iteration `it`, with the cloud and state the next iteration starts from.
  std::function<void(std::int64_t next_iteration, const GaussianCloud&, const OptimizerState&)> on_checkpoint;
};

struct ReconstructionResult {
  Volume volume;
  GaussianCloud cloud;
  OptimizerState state;
  std::vector<TraceRow> trace;
  std::int64_t iterations_run = 0;
  bool converged = false;
};

/// Non-finite loss; carries the cloud of the offending iteration.
class NumericFailure : public NumericError {
 public:
  NumericFailure(std::int64_t iteration, GaussianCloud cloud, const std::string& what)
      : NumericError(what), iteration_(iteration), cloud_(std::move(cloud)) {}
  std::int64_t iteration() const { return iteration_; }
  const GaussianCloud& cloud() const { return cloud_; }

 private:
  std::int64_t iteration_;
  GaussianCloud cloud_;
};

namespace detail {

struct ViewSplit {
  ScanGeometry train, validation;
  std::vector<std::int64_t> train_views, validation_views;
};

/// Holds out round(fraction * m) evenly spread views (at least one).
inline ViewSplit split_views(const ScanGeometry& g, double fraction) {
  const std::int64_t m = g.views();
  std::int64_t held = std::max<std::int64_t>(1, std::llround(fraction * double(m)));
  held = std::min(held, m - 1);
  if (held < 1) throw ConfigError("a validation hold-out needs at least two views");
  ViewSplit s{g, g, {}, {}};
  s.train.angles.clear();
  s.validation.angles.clear();
  std::vector<bool> is_val(std::size_t(m), false);
  for (std::int64_t k = 0; k < held; ++k) is_val[std::size_t((2 * k + 1) * m / (2 * held))] = true;
  for (std::int64_t v = 0; v < m; ++v) {
    auto& views = is_val[std::size_t(v)] ? s.validation_views : s.train_views;
    auto& geom = is_val[std::size_t(v)] ? s.validation : s.train;
    views.push_back(v);
    geom.angles.push_back(g.angles[std::size_t(v)]);
  }
  return s;
}

template <class Real>
Sinogram<Real> select_views(const Sinogram<Real>& s, const std::vector<std::int64_t>& views) {
  const SinoDims d = s.dims();
  Sinogram<Real> out(SinoDims{std::int64_t(views.size()), d.detectors, d.slices});
  for (std::int64_t z = 0; z < d.slices; ++z)
    for (std::size_t k = 0; k < views.size(); ++k)
      for (std::int64_t b = 0; b < d.detectors; ++b) out(std::int64_t(k), b, z) = s(views[k], b, z);
  return out;
}

}  // namespace detail

/// Derives the run-time defaults that depend on the volume: box fitted to flat
/// axes, sigma ceiling, densify theta and active axes.
inline ReconstructionConfig resolved(ReconstructionConfig cfg) {
  if (!cfg.dims.positive()) throw ConfigError("reconstruction dims must be positive");
  cfg.box = cfg.box.fitted_to(cfg.dims);
  for (int d = 0; d < 3; ++d)
    if (cfg.box[d] > cfg.dims[d])
      throw ConfigError("box " + cfg.box.to_string() + " does not fit volume " + to_string(cfg.dims));
  cfg.adam.sigma_max = 3.0 * double(cfg.box.extent());
  if (cfg.normalized_frame) cfg.adam.frame_scale = 0.5 * double(std::max({cfg.dims.w, cfg.dims.h, cfg.dims.c}));
  const DensifyParams defaults = DensifyParams::for_volume(cfg.dims, cfg.box);
  if (!(cfg.densify.theta > 0.0)) cfg.densify.theta = defaults.theta;
  cfg.densify.box_size = cfg.box.extent();
  cfg.densify.active_axes = defaults.active_axes;
  return cfg;
}

/// Runs the optimisation loop from the configured initialisation.
inline ReconstructionResult run_reconstruction(const Sinogram<float>& measured, const ScanGeometry& geom,
                                               const ReconstructionConfig& config, const Volume* truth = nullptr) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  const ReconstructionConfig cfg = resolved(config);
  const Dims3 dims = cfg.dims;
  geom.validate_for(dims);
  cfg.weights.validate();
  cfg.adam.validate();
  if (measured.dims() != geom.sino_dims(dims.c))
    throw ConfigError("measured sinogram dims " + to_string(measured.dims()) + " do not match geometry " +
                      to_string(geom.sino_dims(dims.c)));
  if (truth && truth->dims() != dims) throw ConfigError("ground-truth volume dims do not match reconstruction dims");
  if (cfg.max_iters < 0) throw ConfigError("iteration budget must be >= 0");

  const ScatterMode scatter = cfg.deterministic ? ScatterMode::Deterministic : ScatterMode::Atomic;
  const FvrOptions fvr_opt{scatter, false};
  const ProjectorOptions proj_opt{cfg.sampling, scatter};

  ScanGeometry train_geom = geom;
  Sinogram<float> train_measured = measured;
  std::optional<detail::ViewSplit> split;
  Sinogram<float> val_measured;
  if (cfg.stop == StopRule::Validation) {
    split = detail::split_views(geom, cfg.holdout_fraction);
    train_geom = split->train;
    train_measured = detail::select_views(measured, split->train_views);
    val_measured = detail::select_views(measured, split->validation_views);
  }

  ReconstructionResult result;
  GaussianCloud& cloud = result.cloud;
  switch (cfg.init) {
    case InitMode::Cloud:
      if (!cfg.initial_cloud) throw ConfigError("cloud initialisation requested without a cloud");
      cloud = *cfg.initial_cloud;
      break;
    case InitMode::Random:
      cloud = init_cloud_random(dims, cfg.init_count, cfg.seed, cfg.box, cfg.init_params);
      break;
    case InitMode::Fbp: {
      const auto initial = fbp(train_measured, train_geom, dims, cfg.init_filter);
      cloud = init_cloud_fbp(initial, cfg.init_count, cfg.seed, cfg.box, cfg.init_params);
      break;
    }
  }
  require_valid(cloud);
  if (cfg.densify_enabled) cfg.densify.validate(cloud.size());
  log_info("reconstruction: " + std::to_string(cloud.size()) + " Gaussians, box " + cfg.box.to_string() +
           ", truncation bound " + std::to_string(truncation_bound(cloud, cfg.box)));

  OptimizerState& state = result.state;
  state = cfg.initial_state ? *cfg.initial_state : OptimizerState(cloud.size(), cfg.max_iters);
  state.max_iters = cfg.max_iters;
  if (state.size() != cloud.size()) throw ConfigError("resumed optimizer state does not match the cloud");
  ParamGradients grads(cloud.size());

  double best_val = std::numeric_limits<double>::infinity();
  std::int64_t stale_evals = 0;
  std::uint64_t densify_seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;

  for (std::int64_t it = cfg.start_iteration; it < cfg.max_iters; ++it) {
    const Volume volume = reconstruct<float>(cloud, cfg.box, dims, fvr_opt);
    const Sinogram<float> projected = forward_project(volume, train_geom, proj_opt);
    auto loss = total_loss(projected, train_measured, volume, cfg.weights);
    if (!std::isfinite(loss.total))
      throw NumericFailure(it, cloud,
                           "non-finite loss at iteration " + std::to_string(it) + " (l1 " + std::to_string(loss.l1) +
                               ", ssim " + std::to_string(loss.ssim) + ", tv " + std::to_string(loss.tv) + ", N " +
                               std::to_string(cloud.size()) + ")");

    Volume dL_dV = back_project(loss.grad_pred, train_geom, dims, proj_opt);
    if (cfg.weights.lambda3 > 0.0)
      for (std::int64_t i = 0; i < dL_dV.size(); ++i) dL_dV[i] += loss.grad_vol[i];
    backward(cloud, cfg.box, dL_dV, grads);

    TraceRow row;
    row.iteration = it;
    row.loss = loss.total;
    row.l1 = loss.l1;
    row.ssim_loss = loss.ssim;
    row.tv = loss.tv;
    row.n_gaussians = cloud.size();
    const bool last = it + 1 == cfg.max_iters;
    if (truth && (last || (cfg.metrics_interval > 0 && it % cfg.metrics_interval == 0))) {
      row.psnr = psnr(volume, *truth);
      row.ssim = ssim(volume, *truth);
    }
    if (split && (it % cfg.validation_interval == 0 || last)) {
      const auto val_proj = forward_project(volume, split->validation, proj_opt);
      row.validation_loss = l1_loss(val_proj, val_measured).value;
    }

    adam_step(cloud, grads, state, cfg.adam);

    if (cfg.densify_enabled && (it + 1) % cfg.densify.interval == 0 && !last) {
      ParamGradients stats = grads;
      for (double& a : stats.accum_pos_grad_norm) a *= cfg.adam.frame_scale;
      auto event = densify_and_prune(cloud, stats, cfg.densify, densify_seed + std::uint64_t(it));
      if (event.cloud.empty()) {
        log_warning("densification would remove every Gaussian; event skipped at iteration " + std::to_string(it));
        grads.reset_statistics();
      } else {
        state.remap(event.report.origin);
        cloud = std::move(event.cloud);
        grads = ParamGradients(cloud.size());
        event.report.origin.clear();
        row.densify = std::move(event.report);
      }
    }
    row.wall_seconds = std::chrono::duration<double>(clock::now() - t_start).count();
    result.trace.push_back(row);
    result.iterations_run = it + 1 - cfg.start_iteration;
    if (cfg.on_iteration) cfg.on_iteration(result.trace.back());
    if (cfg.on_checkpoint) cfg.on_checkpoint(it + 1, cloud, state);

    if (split && std::isfinite(row.validation_loss)) {
      if (row.validation_loss < best_val * (1.0 - cfg.validation_tolerance)) {
        best_val = row.validation_loss;
        stale_evals = 0;
      } else if (++stale_evals >= cfg.patience) {
        result.converged = true;
        log_info("validation loss converged at iteration " + std::to_string(it));
        break;
      }
    }
  }
  result.volume = reconstruct<float>(cloud, cfg.box, dims, fvr_opt);
  return result;
}

}  // namespace dgr
