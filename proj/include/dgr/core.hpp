#pragma once

// Domain types shared by every dgr module: volumes, sinograms, the Gaussian
// cloud, box/offset-grid confinement and scan geometry.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dgr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input or configuration, detected before any compute starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A computation produced non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

using Vec3 = std::array<double, 3>;
using Index3 = std::array<std::int64_t, 3>;

struct Dims3 {
  std::int64_t w = 0;
  std::int64_t h = 0;
  std::int64_t c = 0;

  constexpr std::int64_t operator[](int axis) const { return axis == 0 ? w : axis == 1 ? h : c; }
  constexpr std::int64_t size() const { return w * h * c; }
  constexpr bool positive() const { return w > 0 && h > 0 && c > 0; }

  /// idx(x,y,z) = x + w*(y + h*z), x fastest.
  constexpr std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x + w * (y + h * z);
  }
  constexpr Index3 coords(std::int64_t idx) const {
    return {idx % w, (idx / w) % h, idx / (w * h)};
  }
  constexpr bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= 0 && x < w && y >= 0 && y < h && z >= 0 && z < c;
  }
  /// Voxel-space body diagonal.
  double diagonal() const {
    return std::sqrt(double(w) * double(w) + double(h) * double(h) + double(c) * double(c));
  }

  friend constexpr bool operator==(const Dims3&, const Dims3&) = default;
};

inline std::string to_string(const Dims3& d) {
  return std::to_string(d.w) + "x" + std::to_string(d.h) + "x" + std::to_string(d.c);
}

/// Dense w*h*c scalar field. Stored precision is Real; kernels accumulate in double.
template <class Real = float>
class VolumeGrid {
 public:
  using value_type = Real;

  VolumeGrid() = default;
  explicit VolumeGrid(Dims3 dims, Real fill = Real(0)) : dims_(dims), data_(checked_size(dims), fill) {}
  VolumeGrid(Dims3 dims, std::vector<Real> data) : dims_(dims), data_(std::move(data)) {
    if (std::int64_t(data_.size()) != checked_size(dims))
      throw ConfigError("volume data length " + std::to_string(data_.size()) + " does not match dims " +
                        to_string(dims));
  }

  const Dims3& dims() const { return dims_; }
  std::int64_t size() const { return std::int64_t(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real& operator[](std::int64_t i) { return data_[std::size_t(i)]; }
  const Real& operator[](std::int64_t i) const { return data_[std::size_t(i)]; }
  Real& operator()(std::int64_t x, std::int64_t y, std::int64_t z) { return data_[std::size_t(dims_.index(x, y, z))]; }
  const Real& operator()(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return data_[std::size_t(dims_.index(x, y, z))];
  }

  template <class Other>
  VolumeGrid<Other> cast() const {
    return VolumeGrid<Other>(dims_, std::vector<Other>(data_.begin(), data_.end()));
  }

  friend bool operator==(const VolumeGrid&, const VolumeGrid&) = default;

 private:
  static std::int64_t checked_size(const Dims3& d) {
    if (!d.positive()) throw ConfigError("volume dims must be positive, got " + to_string(d));
    return d.size();
  }

  Dims3 dims_{};
  std::vector<Real> data_;
};

using Volume = VolumeGrid<float>;

struct SinoDims {
  std::int64_t views = 0;
  std::int64_t detectors = 0;
  std::int64_t slices = 0;

  constexpr std::int64_t size() const { return views * detectors * slices; }
  constexpr bool positive() const { return views > 0 && detectors > 0 && slices > 0; }
  /// Detector bin fastest, then view, then slice.
  constexpr std::int64_t index(std::int64_t view, std::int64_t bin, std::int64_t slice) const {
    return bin + detectors * (view + views * slice);
  }
  friend constexpr bool operator==(const SinoDims&, const SinoDims&) = default;
};

inline std::string to_string(const SinoDims& d) {
  return std::to_string(d.views) + "x" + std::to_string(d.detectors) + "x" + std::to_string(d.slices);
}

/// m views x n detector bins x p slices of line integrals.
template <class Real = float>
class Sinogram {
 public:
  using value_type = Real;

  Sinogram() = default;
  explicit Sinogram(SinoDims dims, Real fill = Real(0)) : dims_(dims), data_(checked_size(dims), fill) {}
  Sinogram(SinoDims dims, std::vector<Real> data) : dims_(dims), data_(std::move(data)) {
    if (std::int64_t(data_.size()) != checked_size(dims))
      throw ConfigError("sinogram data length " + std::to_string(data_.size()) + " does not match dims " +
                        to_string(dims));
  }

  const SinoDims& dims() const { return dims_; }
  std::int64_t size() const { return std::int64_t(data_.size()); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real& operator[](std::int64_t i) { return data_[std::size_t(i)]; }
  const Real& operator[](std::int64_t i) const { return data_[std::size_t(i)]; }
  Real& operator()(std::int64_t view, std::int64_t bin, std::int64_t slice) {
    return data_[std::size_t(dims_.index(view, bin, slice))];
  }
  const Real& operator()(std::int64_t view, std::int64_t bin, std::int64_t slice) const {
    return data_[std::size_t(dims_.index(view, bin, slice))];
  }

  template <class Other>
  Sinogram<Other> cast() const {
    return Sinogram<Other>(dims_, std::vector<Other>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Sinogram&, const Sinogram&) = default;

 private:
  static std::int64_t checked_size(const SinoDims& d) {
    if (!d.positive()) throw ConfigError("sinogram dims must be positive, got " + to_string(d));
    return d.size();
  }

  SinoDims dims_{};
  std::vector<Real> data_;
};

/// N isotropic Gaussians. mu is in continuous voxel coordinates: voxel (x,y,z)
/// owns [x,x+1)^3 and is sampled at its integer corner, so floor(mu) is the
/// containing voxel.
struct GaussianCloud {
  std::vector<Vec3> mu;
  std::vector<double> sigma;
  std::vector<double> intensity;

  std::size_t size() const { return sigma.size(); }
  bool empty() const { return sigma.empty(); }

  void reserve(std::size_t n) {
    mu.reserve(n);
    sigma.reserve(n);
    intensity.reserve(n);
  }
  void push_back(const Vec3& m, double s, double i) {
    mu.push_back(m);
    sigma.push_back(s);
    intensity.push_back(i);
  }
  double total_intensity() const {
    double t = 0.0;
    for (double v : intensity) t += v;
    return t;
  }

  friend bool operator==(const GaussianCloud&, const GaussianCloud&) = default;
};

struct CloudViolation {
  std::optional<std::size_t> index;  // empty for whole-cloud violations
  std::string field;
  std::string message;
};

struct CloudReport {
  std::vector<CloudViolation> violations;
  bool ok() const { return violations.empty(); }
};

/// Reports every invariant violation (length mismatch, sigma <= 0, intensity < 0,
/// non-finite values). Never throws.
inline CloudReport validate_cloud(const GaussianCloud& cloud) {
  CloudReport report;
  const auto n_mu = cloud.mu.size(), n_sigma = cloud.sigma.size(), n_int = cloud.intensity.size();
  if (n_mu != n_sigma || n_mu != n_int) {
    report.violations.push_back({std::nullopt, "length",
                                 "length mismatch: mu " + std::to_string(n_mu) + ", sigma " + std::to_string(n_sigma) +
                                     ", intensity " + std::to_string(n_int)});
  }
  if (n_mu == 0 && n_sigma == 0 && n_int == 0) report.violations.push_back({std::nullopt, "length", "empty cloud"});

  for (std::size_t i = 0; i < n_mu; ++i) {
    const auto& m = cloud.mu[i];
    if (!std::isfinite(m[0]) || !std::isfinite(m[1]) || !std::isfinite(m[2]))
      report.violations.push_back({i, "mu", "non-finite position"});
  }
  for (std::size_t i = 0; i < n_sigma; ++i) {
    const double s = cloud.sigma[i];
    if (!(s > 0.0) || !std::isfinite(s))
      report.violations.push_back({i, "sigma", "sigma must be finite and > 0, got " + std::to_string(s)});
  }
  for (std::size_t i = 0; i < n_int; ++i) {
    const double v = cloud.intensity[i];
    if (!(v >= 0.0) || !std::isfinite(v))
      report.violations.push_back({i, "intensity", "intensity must be finite and >= 0, got " + std::to_string(v)});
  }
  return report;
}

inline void require_valid(const GaussianCloud& cloud) {
  auto report = validate_cloud(cloud);
  if (report.ok()) return;
  const auto& v = report.violations.front();
  std::string where = v.index ? " at index " + std::to_string(*v.index) : "";
  throw ConfigError("invalid Gaussian cloud (" + std::to_string(report.violations.size()) + " violations); first: " +
                    v.field + where + ": " + v.message);
}

/// Odd-sided confinement cuboid centred on a voxel.
struct BoxConfig {
  int w0 = 17;
  int h0 = 17;
  int c0 = 17;

  static constexpr BoxConfig cube(int k) { return {k, k, k}; }

  constexpr int operator[](int axis) const { return axis == 0 ? w0 : axis == 1 ? h0 : c0; }
  constexpr int half(int axis) const { return ((*this)[axis] - 1) / 2; }
  constexpr std::int64_t volume() const { return std::int64_t(w0) * h0 * c0; }
  constexpr int extent() const { return std::max({w0, h0, c0}); }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if ((*this)[a] <= 0 || (*this)[a] % 2 == 0)
        throw ConfigError("box dimensions must be odd and positive, got " + to_string());
    }
  }

  /// Collapses axes along which the volume is a single voxel thick; every other
  /// axis must already fit inside the volume.
  BoxConfig fitted_to(const Dims3& dims) const {
    validate();
    BoxConfig out = *this;
    if (dims.w == 1) out.w0 = 1;
    if (dims.h == 1) out.h0 = 1;
    if (dims.c == 1) out.c0 = 1;
    return out;
  }

  std::string to_string() const {
    return std::to_string(w0) + "x" + std::to_string(h0) + "x" + std::to_string(c0);
  }

  friend constexpr bool operator==(const BoxConfig&, const BoxConfig&) = default;
};

/// Every lattice offset of a centred box, ordered lexicographically by (z, y, x).
struct OffsetGrid {
  BoxConfig box;
  std::vector<std::array<int, 3>> offsets;

  std::size_t size() const { return offsets.size(); }
};

inline OffsetGrid make_offset_grid(const BoxConfig& box) {
  box.validate();
  OffsetGrid grid{box, {}};
  grid.offsets.reserve(std::size_t(box.volume()));
  const int hx = box.half(0), hy = box.half(1), hz = box.half(2);
  for (int z = -hz; z <= hz; ++z)
    for (int y = -hy; y <= hy; ++y)
      for (int x = -hx; x <= hx; ++x) grid.offsets.push_back({x, y, z});
  return grid;
}

enum class BeamKind { Parallel2D, Fan2D };

/// Per-slice 2D acquisition. Angles are counterclockwise from +x. Detector bin j
/// sits at (j - (n-1)/2) * spacing along the detector axis.
struct ScanGeometry {
  BeamKind kind = BeamKind::Parallel2D;
  std::int64_t detectors = 0;
  double detector_spacing = 1.0;
  std::vector<double> angles;
  double source_to_origin = 0.0;    // fan only
  double origin_to_detector = 0.0;  // fan only

  std::int64_t views() const { return std::int64_t(angles.size()); }

  /// m views evenly spaced over [start, start + extent).
  static std::vector<double> even_angles(std::int64_t m, double start, double extent) {
    std::vector<double> a(std::size_t(std::max<std::int64_t>(m, 0)));
    for (std::int64_t k = 0; k < m; ++k) a[std::size_t(k)] = start + extent * double(k) / double(m);
    return a;
  }

  static ScanGeometry parallel(std::int64_t views, std::int64_t detectors, double spacing,
                               double start = 0.0, double extent = std::numbers::pi) {
    ScanGeometry g;
    g.kind = BeamKind::Parallel2D;
    g.detectors = detectors;
    g.detector_spacing = spacing;
    g.angles = even_angles(views, start, extent);
    return g;
  }

  static ScanGeometry fan(std::int64_t views, std::int64_t detectors, double spacing, double source_to_origin,
                          double origin_to_detector, double start = 0.0, double extent = std::numbers::pi) {
    ScanGeometry g;
    g.kind = BeamKind::Fan2D;
    g.detectors = detectors;
    g.detector_spacing = spacing;
    g.angles = even_angles(views, start, extent);
    g.source_to_origin = source_to_origin;
    g.origin_to_detector = origin_to_detector;
    return g;
  }

  SinoDims sino_dims(std::int64_t slices) const { return {views(), detectors, slices}; }

  void validate() const {
    if (views() < 1) throw ConfigError("geometry needs at least one view");
    if (detectors < 1) throw ConfigError("geometry needs at least one detector bin");
    if (!(detector_spacing > 0.0)) throw ConfigError("detector spacing must be > 0");
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t k = 0; k < angles.size(); ++k) {
      if (!(angles[k] >= 0.0 && angles[k] < two_pi)) throw ConfigError("view angles must lie in [0, 2pi)");
      if (k > 0 && !(angles[k] > angles[k - 1])) throw ConfigError("view angles must be strictly increasing");
    }
    if (kind == BeamKind::Fan2D && (!(source_to_origin > 0.0) || !(origin_to_detector > 0.0)))
      throw ConfigError("fan-beam distances must be positive");
  }

  /// Additionally checks that a fan source stays outside the slice's circumscribed circle.
  void validate_for(const Dims3& dims) const {
    validate();
    if (kind == BeamKind::Fan2D) {
      const double radius = 0.5 * std::hypot(double(dims.w), double(dims.h));
      if (!(source_to_origin > radius))
        throw ConfigError("fan source (distance " + std::to_string(source_to_origin) +
                          ") lies inside the reconstruction circle of radius " + std::to_string(radius));
    }
  }
};

/// Per-Gaussian gradients plus the positional-gradient statistics used by densification.
struct ParamGradients {
  std::vector<Vec3> d_mu;
  std::vector<double> d_sigma;
  std::vector<double> d_intensity;
  std::vector<double> accum_pos_grad_norm;
  std::int64_t iters_since_densify = 0;

  ParamGradients() = default;
  explicit ParamGradients(std::size_t n)
      : d_mu(n, Vec3{0, 0, 0}), d_sigma(n, 0.0), d_intensity(n, 0.0), accum_pos_grad_norm(n, 0.0) {}

  std::size_t size() const { return d_sigma.size(); }

  void reset_statistics() {
    std::fill(accum_pos_grad_norm.begin(), accum_pos_grad_norm.end(), 0.0);
    iters_since_densify = 0;
  }
};

}  // namespace dgr
