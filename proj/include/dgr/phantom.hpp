#pragma once

// Modified (high-contrast) Shepp-Logan phantoms, rasterised at voxel sample
// points. Values lie in [0, 1]: skull 1.0, brain 0.2, background 0.0.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "dgr/core.hpp"

namespace dgr {

enum class PhantomKind { SheppLogan2D, SheppLogan3D };

namespace detail {

struct Ellipsoid {
  double value;
  double a, b, c;     // semi-axes
  double x0, y0, z0;  // centre
  double phi_deg;     // rotation about z
};

// Normalised to [-1, 1]^3. The 2D phantom uses the z = 0 cross-section with c = inf.
inline constexpr std::array<Ellipsoid, 10> kSheppLogan = {{
    {1.0, 0.6900, 0.920, 0.810, 0.00, 0.0000, 0.00, 0.0},
    {-0.8, 0.6624, 0.874, 0.780, 0.00, -0.0184, 0.00, 0.0},
    {-0.2, 0.1100, 0.310, 0.220, 0.22, 0.0000, 0.00, -18.0},
    {-0.2, 0.1600, 0.410, 0.280, -0.22, 0.0000, 0.00, 18.0},
    {0.1, 0.2100, 0.250, 0.410, 0.00, 0.3500, -0.15, 0.0},
    {0.1, 0.0460, 0.046, 0.050, 0.00, 0.1000, 0.25, 0.0},
    {0.1, 0.0460, 0.046, 0.050, 0.00, -0.1000, 0.25, 0.0},
    {0.1, 0.0460, 0.023, 0.050, -0.08, -0.6050, 0.00, 0.0},
    {0.1, 0.0230, 0.023, 0.020, 0.00, -0.6060, 0.00, 0.0},
    {0.1, 0.0230, 0.046, 0.020, 0.06, -0.6050, 0.00, 0.0},
}};

inline double normalised(std::int64_t i, std::int64_t n) { return (2.0 * double(i) - double(n - 1)) / double(n); }

inline double shepp_logan_value(double x, double y, double z, bool three_d) {
  double v = 0.0;
  for (const auto& e : kSheppLogan) {
    const double phi = e.phi_deg * std::numbers::pi / 180.0;
    const double cp = std::cos(phi), sp = std::sin(phi);
    const double dx = x - e.x0, dy = y - e.y0;
    const double xr = cp * dx + sp * dy, yr = -sp * dx + cp * dy;
    double r = (xr * xr) / (e.a * e.a) + (yr * yr) / (e.b * e.b);
    if (three_d) {
      const double dz = z - e.z0;
      r += dz * dz / (e.c * e.c);
    }
    if (r <= 1.0) v += e.value;
  }
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace detail

/// Deterministic phantom. The 2D kind repeats the same slice along z; in-plane
/// axes (and z for the 3D kind) must be at least 32 voxels.
inline Volume shepp_logan(PhantomKind kind, const Dims3& dims) {
  const bool three_d = kind == PhantomKind::SheppLogan3D;
  if (dims.w < 32 || dims.h < 32 || (three_d && dims.c < 32))
    throw ConfigError("phantom dims must be >= 32 per axis, got " + to_string(dims));
  if (!dims.positive()) throw ConfigError("phantom dims must be positive");
  Volume vol(dims);
  for (std::int64_t z = 0; z < dims.c; ++z) {
    const double zn = three_d ? detail::normalised(z, dims.c) : 0.0;
    for (std::int64_t y = 0; y < dims.h; ++y) {
      const double yn = detail::normalised(y, dims.h);
      for (std::int64_t x = 0; x < dims.w; ++x)
        vol(x, y, z) = float(detail::shepp_logan_value(detail::normalised(x, dims.w), yn, zn, three_d));
    }
  }
  return vol;
}

}  // namespace dgr
