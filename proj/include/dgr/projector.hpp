#pragma once

// Per-slice 2D projection operator T: VolumeGrid -> Sinogram, its exact adjoint,
// filtered back projection and measurement-noise simulation.
//
// Rays are sampled at integer multiples of step_length along the ray parameter
// and the slice is read with bilinear interpolation (samples live at integer
// voxel coordinates, zero outside). The slice centre is ((w-1)/2, (h-1)/2).
// For a view angle theta, u = (cos, sin) is the detector axis and
// d = (-sin, cos) the central ray direction; a fan source sits at
// centre - source_to_origin * d and a flat detector at centre + origin_to_detector * d.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dgr/core.hpp"
#include "dgr/parallel.hpp"

namespace dgr {

struct RaySamplingConfig {
  double step_length = 0.5;

  void validate() const {
    if (!(step_length > 0.0 && step_length <= 1.0)) throw ConfigError("ray step length must lie in (0, 1]");
  }
};

struct ProjectorOptions {
  RaySamplingConfig sampling{};
  ScatterMode scatter = ScatterMode::Atomic;
};

enum class FbpFilter { Ramp, Hann };

namespace detail {

struct Ray {
  double ox, oy;  // origin
  double dx, dy;  // unit direction
};

inline Ray make_ray(const ScanGeometry& g, const Dims3& dims, std::int64_t view, std::int64_t bin) {
  const double cx = 0.5 * double(dims.w - 1), cy = 0.5 * double(dims.h - 1);
  const double theta = g.angles[std::size_t(view)];
  const double ux = std::cos(theta), uy = std::sin(theta);
  const double dx = -uy, dy = ux;
  const double s = (double(bin) - 0.5 * double(g.detectors - 1)) * g.detector_spacing;
  if (g.kind == BeamKind::Parallel2D) return {cx + s * ux, cy + s * uy, dx, dy};
  const double sx = cx - g.source_to_origin * dx, sy = cy - g.source_to_origin * dy;
  const double qx = cx + g.origin_to_detector * dx + s * ux, qy = cy + g.origin_to_detector * dy + s * uy;
  const double len = std::hypot(qx - sx, qy - sy);
  return {sx, sy, (qx - sx) / len, (qy - sy) / len};
}

/// Parameter interval over which a ray can touch the bilinear support (-1, w) x (-1, h).
inline bool clip_ray(const Ray& r, const Dims3& dims, double& t0, double& t1) {
  t0 = -std::numeric_limits<double>::infinity();
  t1 = std::numeric_limits<double>::infinity();
  const double lo[2] = {-1.0, -1.0};
  const double hi[2] = {double(dims.w), double(dims.h)};
  const double o[2] = {r.ox, r.oy};
  const double d[2] = {r.dx, r.dy};
  for (int a = 0; a < 2; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] <= lo[a] || o[a] >= hi[a]) return false;
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 < t1;
}

/// Calls visit(pixel_index, weight) for every bilinear tap of every sample on the
/// ray; weights already include the step length.
template <class Visit>
void trace_ray(const Ray& r, const Dims3& dims, double step, Visit&& visit) {
  double t0, t1;
  if (!clip_ray(r, dims, t0, t1)) return;
  const auto k0 = std::int64_t(std::floor(t0 / step)) + 1;
  const auto k1 = std::int64_t(std::ceil(t1 / step)) - 1;
  const std::int64_t w = dims.w, h = dims.h;
  for (std::int64_t k = k0; k <= k1; ++k) {
    const double t = double(k) * step;
    const double px = r.ox + t * r.dx, py = r.oy + t * r.dy;
    const double fx0 = std::floor(px), fy0 = std::floor(py);
    const auto x0 = std::int64_t(fx0), y0 = std::int64_t(fy0);
    const double fx = px - fx0, fy = py - fy0;
    const bool xa = x0 >= 0 && x0 < w, xb = x0 + 1 >= 0 && x0 + 1 < w;
    if (y0 >= 0 && y0 < h) {
      if (xa) visit(x0 + w * y0, step * (1 - fx) * (1 - fy));
      if (xb) visit(x0 + 1 + w * y0, step * fx * (1 - fy));
    }
    if (y0 + 1 >= 0 && y0 + 1 < h) {
      if (xa) visit(x0 + w * (y0 + 1), step * (1 - fx) * fy);
      if (xb) visit(x0 + 1 + w * (y0 + 1), step * fx * fy);
    }
  }
}

inline void check_projection(const ScanGeometry& g, const Dims3& dims, const RaySamplingConfig& s) {
  if (!dims.positive()) throw ConfigError("volume must be non-empty");
  g.validate_for(dims);
  s.validate();
}

}  // namespace detail

/// Line integrals of every z-slice along every (view, bin) ray.
template <class Real>
Sinogram<Real> forward_project(const VolumeGrid<Real>& volume, const ScanGeometry& geom,
                               const ProjectorOptions& opt = {}) {
  const Dims3 dims = volume.dims();
  detail::check_projection(geom, dims, opt.sampling);
  Sinogram<Real> sino(geom.sino_dims(dims.c));
  const std::int64_t views = geom.views(), bins = geom.detectors, slices = dims.c;
  const std::int64_t slice_size = dims.w * dims.h;
  const double step = opt.sampling.step_length;
  const auto vol = volume.data();
#pragma omp parallel for collapse(2) schedule(dynamic)
  for (std::int64_t z = 0; z < slices; ++z) {
    for (std::int64_t v = 0; v < views; ++v) {
      const Real* slice = vol.data() + z * slice_size;
      for (std::int64_t b = 0; b < bins; ++b) {
        double sum = 0.0;
        detail::trace_ray(detail::make_ray(geom, dims, v, b), dims, step,
                          [&](std::int64_t p, double wgt) { sum += wgt * double(slice[p]); });
        sino(v, b, z) = Real(sum);
      }
    }
  }
  return sino;
}

/// Exact adjoint of forward_project: every sample scatters its bilinear weights.
template <class Real>
VolumeGrid<Real> back_project(const Sinogram<Real>& sino, const ScanGeometry& geom, const Dims3& dims,
                              const ProjectorOptions& opt = {}) {
  detail::check_projection(geom, dims, opt.sampling);
  if (sino.dims() != geom.sino_dims(dims.c))
    throw ConfigError("sinogram dims " + to_string(sino.dims()) + " do not match geometry/volume " +
                      to_string(geom.sino_dims(dims.c)));
  const std::int64_t views = geom.views(), bins = geom.detectors, slices = dims.c;
  const std::int64_t slice_size = dims.w * dims.h;
  const double step = opt.sampling.step_length;
  std::vector<double> acc(std::size_t(dims.size()), 0.0);

  auto ray_body = [&](std::int64_t z, std::int64_t v, auto&& add) {
    double* slice = acc.data() + z * slice_size;
    for (std::int64_t b = 0; b < bins; ++b) {
      const double y = double(sino(v, b, z));
      if (y == 0.0) continue;
      detail::trace_ray(detail::make_ray(geom, dims, v, b), dims, step,
                        [&](std::int64_t p, double wgt) { add(slice[p], wgt * y); });
    }
  };

  if (detail::serial_scatter(opt.scatter)) {
    auto plain = [](double& t, double x) { t += x; };
    for (std::int64_t z = 0; z < slices; ++z)
      for (std::int64_t v = 0; v < views; ++v) ray_body(z, v, plain);
  } else {
    auto atomic = [](double& t, double x) { detail::atomic_add(t, x); };
#pragma omp parallel for collapse(2) schedule(dynamic)
    for (std::int64_t z = 0; z < slices; ++z)
      for (std::int64_t v = 0; v < views; ++v) ray_body(z, v, atomic);
  }
  VolumeGrid<Real> out(dims);
  detail::convert_into<Real>(acc, out.data());
  return out;
}

namespace detail {

/// Discrete ramp (Ram-Lak) kernel h[k] for |k| < n, optionally Hann-apodised in
/// the frequency domain. Entry k is stored at index k + n - 1.
inline std::vector<double> ramp_kernel(std::int64_t n, double tau, FbpFilter filter) {
  const double pi = std::numbers::pi;
  auto ram_lak = [&](std::int64_t k) -> double {
    if (k == 0) return 1.0 / (4.0 * tau * tau);
    if (k % 2 == 0) return 0.0;
    return -1.0 / (pi * pi * double(k) * double(k) * tau * tau);
  };
  std::vector<double> kernel(std::size_t(2 * n - 1));
  if (filter == FbpFilter::Ramp) {
    for (std::int64_t k = -(n - 1); k <= n - 1; ++k) kernel[std::size_t(k + n - 1)] = ram_lak(k);
    return kernel;
  }
  std::int64_t len = 1;
  while (len < 2 * n) len <<= 1;
  std::vector<double> spatial(static_cast<std::size_t>(len));
  for (std::int64_t q = 0; q < len; ++q) spatial[std::size_t(q)] = ram_lak(q < len / 2 ? q : q - len);
  std::vector<double> cos_table(static_cast<std::size_t>(len));
  for (std::int64_t q = 0; q < len; ++q) cos_table[std::size_t(q)] = std::cos(2.0 * pi * double(q) / double(len));
  // The kernel is real and even, so its DFT is the cosine transform.
  std::vector<double> response(static_cast<std::size_t>(len));
  for (std::int64_t f = 0; f < len; ++f) {
    double acc = 0.0;
    for (std::int64_t q = 0; q < len; ++q) acc += spatial[std::size_t(q)] * cos_table[std::size_t((f * q) % len)];
    const double nu = double(f < len / 2 ? f : len - f) / double(len / 2);
    response[std::size_t(f)] = acc * 0.5 * (1.0 + std::cos(pi * nu));
  }
  for (std::int64_t k = -(n - 1); k <= n - 1; ++k) {
    const std::int64_t q = (k + len) % len;
    double acc = 0.0;
    for (std::int64_t f = 0; f < len; ++f) acc += response[std::size_t(f)] * cos_table[std::size_t((f * q) % len)];
    kernel[std::size_t(k + n - 1)] = acc / double(len);
  }
  return kernel;
}

inline std::vector<double> filter_row(const std::vector<double>& row, const std::vector<double>& kernel, double tau) {
  const auto n = std::int64_t(row.size());
  std::vector<double> out(row.size(), 0.0);
  for (std::int64_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::int64_t k = 0; k < n; ++k) acc += row[std::size_t(k)] * kernel[std::size_t(j - k + n - 1)];
    out[std::size_t(j)] = acc * tau;
  }
  return out;
}

inline double lerp_row(const std::vector<double>& q, double pos) {
  const double f0 = std::floor(pos);
  const auto j = std::int64_t(f0);
  const double t = pos - f0;
  const auto n = std::int64_t(q.size());
  double v = 0.0;
  if (j >= 0 && j < n) v += (1.0 - t) * q[std::size_t(j)];
  if (j + 1 >= 0 && j + 1 < n) v += t * q[std::size_t(j + 1)];
  return v;
}

}  // namespace detail

/// Filtered back projection. Parallel beam: ramp filter per view and back-project.
/// Fan beam (flat detector): cosine pre-weighting on the virtual detector through
/// the origin, ramp filter, 1/U^2 distance-weighted back-projection. Each view is
/// weighted by its angular step, halved when the scan covers more than pi.
template <class Real>
VolumeGrid<Real> fbp(const Sinogram<Real>& sino, const ScanGeometry& geom, const Dims3& dims,
                     FbpFilter filter = FbpFilter::Ramp) {
  geom.validate_for(dims);
  if (geom.views() < 2) throw ConfigError("FBP needs at least two views");
  if (sino.dims() != geom.sino_dims(dims.c))
    throw ConfigError("sinogram dims " + to_string(sino.dims()) + " do not match geometry/volume");

  const std::int64_t m = geom.views(), n = geom.detectors;
  const double pi = std::numbers::pi;
  const double step = (geom.angles.back() - geom.angles.front()) / double(m - 1);
  const double weight = step * std::min(1.0, pi / (step * double(m)) + 1e-12);

  const bool fan = geom.kind == BeamKind::Fan2D;
  const double mag = fan ? geom.source_to_origin / (geom.source_to_origin + geom.origin_to_detector) : 1.0;
  const double tau = geom.detector_spacing * mag;  // spacing on the virtual detector
  const double dso = geom.source_to_origin;
  const auto kernel = detail::ramp_kernel(n, tau, filter);
  const double cx = 0.5 * double(dims.w - 1), cy = 0.5 * double(dims.h - 1);
  const double centre_bin = 0.5 * double(n - 1);

  VolumeGrid<Real> out(dims);
  std::vector<double> acc(std::size_t(dims.w * dims.h));
  for (std::int64_t z = 0; z < dims.c; ++z) {
    std::vector<std::vector<double>> filtered(static_cast<std::size_t>(m));
#pragma omp parallel for schedule(static)
    for (std::int64_t v = 0; v < m; ++v) {
      std::vector<double> row(static_cast<std::size_t>(n));
      for (std::int64_t b = 0; b < n; ++b) {
        double p = double(sino(v, b, z));
        if (fan) {
          const double s = (double(b) - centre_bin) * tau;
          p *= dso / std::sqrt(dso * dso + s * s);
        }
        row[std::size_t(b)] = p;
      }
      filtered[std::size_t(v)] = detail::filter_row(row, kernel, tau);
    }
#pragma omp parallel for schedule(static)
    for (std::int64_t y = 0; y < dims.h; ++y) {
      for (std::int64_t x = 0; x < dims.w; ++x) {
        const double px = double(x) - cx, py = double(y) - cy;
        double sum = 0.0;
        for (std::int64_t v = 0; v < m; ++v) {
          const double theta = geom.angles[std::size_t(v)];
          const double ux = std::cos(theta), uy = std::sin(theta);
          const double along_u = px * ux + py * uy;
          if (!fan) {
            sum += detail::lerp_row(filtered[std::size_t(v)], along_u / tau + centre_bin);
          } else {
            const double along_d = -px * uy + py * ux;
            const double U = (dso + along_d) / dso;
            const double s = along_u / U;
            sum += detail::lerp_row(filtered[std::size_t(v)], s / tau + centre_bin) / (U * U);
          }
        }
        acc[std::size_t(x + dims.w * y)] = sum * weight;
      }
    }
    for (std::int64_t i = 0; i < dims.w * dims.h; ++i) out[z * dims.w * dims.h + i] = Real(acc[std::size_t(i)]);
  }
  return out;
}

struct NoiseModel {
  enum class Kind { None, Gaussian, Poisson };
  Kind kind = Kind::None;
  double sigma = 0.0;         // gaussian
  double photon_count = 0.0;  // poisson

  static NoiseModel none() { return {}; }
  static NoiseModel gaussian(double sigma) { return {Kind::Gaussian, sigma, 0.0}; }
  static NoiseModel poisson(double photons) { return {Kind::Poisson, 0.0, photons}; }

  void validate() const {
    if (kind == Kind::Gaussian && !(sigma >= 0.0)) throw ConfigError("gaussian noise sigma must be >= 0");
    if (kind == Kind::Poisson && !(photon_count > 0.0)) throw ConfigError("poisson photon count must be > 0");
  }
};

/// Measurement noise. Gaussian adds iid N(0, sigma^2). Poisson draws counts
/// k ~ Poisson(N0 exp(-p)) and returns -log(max(k,1) / N0). Reproducible given seed.
template <class Real>
Sinogram<Real> add_noise(const Sinogram<Real>& sino, const NoiseModel& model, std::uint64_t seed) {
  model.validate();
  Sinogram<Real> out = sino;
  if (model.kind == NoiseModel::Kind::None || (model.kind == NoiseModel::Kind::Gaussian && model.sigma == 0.0))
    return out;
  std::mt19937_64 rng(seed);
  if (model.kind == NoiseModel::Kind::Gaussian) {
    std::normal_distribution<double> normal(0.0, model.sigma);
    for (auto& v : out.data()) v = Real(double(v) + normal(rng));
  } else {
    const double n0 = model.photon_count;
    for (auto& v : out.data()) {
      const double mean = n0 * std::exp(-double(v));
      std::int64_t k = 0;
      if (mean > 0.0) k = std::poisson_distribution<std::int64_t>(mean)(rng);
      k = std::max<std::int64_t>(k, 1);
      v = Real(-std::log(double(k) / n0));
    }
  }
  return out;
}

}  // namespace dgr
