#pragma once

// Reference implementations used only by the tests. Each one is written
// independently of the library code it checks: dense loops, no factorisation,
// no shared helpers.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "dgr/core.hpp"

namespace oracle {

/// Dense Gaussian sum over every voxel, no box, no clipping.
inline std::vector<double> gaussian_sum(const dgr::GaussianCloud& cloud, const dgr::Dims3& d) {
  std::vector<double> v(std::size_t(d.size()), 0.0);
  for (std::int64_t z = 0; z < d.c; ++z)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x) {
        double s = 0.0;
        for (std::size_t i = 0; i < cloud.size(); ++i) {
          const double dx = double(x) - cloud.mu[i][0], dy = double(y) - cloud.mu[i][1], dz = double(z) - cloud.mu[i][2];
          s += cloud.intensity[i] * std::exp(-0.5 * (dx * dx + dy * dy + dz * dz) / (cloud.sigma[i] * cloud.sigma[i]));
        }
        v[std::size_t(x + d.w * (y + d.h * z))] = s;
      }
  return v;
}

/// Dense Gaussian sum restricted to each Gaussian's box around floor(mu).
inline std::vector<double> boxed_gaussian_sum(const dgr::GaussianCloud& cloud, const dgr::BoxConfig& box,
                                              const dgr::Dims3& d) {
  std::vector<double> v(std::size_t(d.size()), 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double fx = std::floor(cloud.mu[i][0]), fy = std::floor(cloud.mu[i][1]), fz = std::floor(cloud.mu[i][2]);
    for (std::int64_t z = 0; z < d.c; ++z)
      for (std::int64_t y = 0; y < d.h; ++y)
        for (std::int64_t x = 0; x < d.w; ++x) {
          if (std::abs(double(x) - fx) > box.half(0) || std::abs(double(y) - fy) > box.half(1) ||
              std::abs(double(z) - fz) > box.half(2))
            continue;
          const double dx = double(x) - cloud.mu[i][0], dy = double(y) - cloud.mu[i][1],
                       dz = double(z) - cloud.mu[i][2];
          v[std::size_t(x + d.w * (y + d.h * z))] +=
              cloud.intensity[i] * std::exp(-0.5 * (dx * dx + dy * dy + dz * dz) / (cloud.sigma[i] * cloud.sigma[i]));
        }
  }
  return v;
}

inline double mse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / double(a.size());
}

inline double psnr(const std::vector<double>& a, const std::vector<double>& b, double max_value) {
  return 10.0 * std::log10(max_value * max_value / mse(a, b));
}

/// Mean SSIM with a truncated, renormalised 3D Gaussian window, evaluated by
/// direct summation over each voxel's neighbourhood.
inline double ssim(const std::vector<double>& x, const std::vector<double>& y, const dgr::Dims3& d, double range,
                   int radius = 5, double wsigma = 1.5) {
  const double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
  auto at = [&](const std::vector<double>& v, std::int64_t a, std::int64_t b, std::int64_t c) {
    return v[std::size_t(a + d.w * (b + d.h * c))];
  };
  auto axis_range = [&](std::int64_t p, std::int64_t e, std::int64_t& lo, std::int64_t& hi) {
    if (e == 1) {
      lo = hi = 0;
      return;
    }
    lo = std::max<std::int64_t>(0, p - radius);
    hi = std::min<std::int64_t>(e - 1, p + radius);
  };
  double total = 0.0;
  for (std::int64_t k = 0; k < d.c; ++k)
    for (std::int64_t j = 0; j < d.h; ++j)
      for (std::int64_t i = 0; i < d.w; ++i) {
        std::int64_t x0, x1, y0, y1, z0, z1;
        axis_range(i, d.w, x0, x1);
        axis_range(j, d.h, y0, y1);
        axis_range(k, d.c, z0, z1);
        double wsum = 0, mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (std::int64_t c = z0; c <= z1; ++c)
          for (std::int64_t b = y0; b <= y1; ++b)
            for (std::int64_t a = x0; a <= x1; ++a) {
              const double r2 = double((a - i) * (a - i) + (b - j) * (b - j) + (c - k) * (c - k));
              const double w = std::exp(-0.5 * r2 / (wsigma * wsigma));
              const double xv = at(x, a, b, c), yv = at(y, a, b, c);
              wsum += w;
              mx += w * xv;
              my += w * yv;
              sxx += w * xv * xv;
              syy += w * yv * yv;
              sxy += w * xv * yv;
            }
        mx /= wsum;
        my /= wsum;
        const double vx = sxx / wsum - mx * mx, vy = syy / wsum - my * my, cxy = sxy / wsum - mx * my;
        total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
  return total / double(d.size());
}

/// Anisotropic TV, mean over voxels, forward differences, no wrap.
inline double tv(const std::vector<double>& v, const dgr::Dims3& d) {
  double s = 0.0;
  for (std::int64_t z = 0; z < d.c; ++z)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x) {
        const double c = v[std::size_t(x + d.w * (y + d.h * z))];
        if (x + 1 < d.w) s += std::abs(v[std::size_t(x + 1 + d.w * (y + d.h * z))] - c);
        if (y + 1 < d.h) s += std::abs(v[std::size_t(x + d.w * (y + 1 + d.h * z))] - c);
        if (z + 1 < d.c) s += std::abs(v[std::size_t(x + d.w * (y + d.h * (z + 1)))] - c);
      }
  return s / double(d.size());
}

/// Central finite difference of f at x along coordinate k.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                 std::size_t k, double h) {
  const double x0 = x[k];
  x[k] = x0 + h;
  const double fp = f(x);
  x[k] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double e : v) s += e * e;
  return std::sqrt(s);
}

/// ||a - b|| / max(||a||, ||b||, tiny).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return norm(d) / std::max({norm(a), norm(b), 1e-300});
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(a.size());
  mb /= double(b.size());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline std::vector<double> uniform_vector(std::size_t n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& e : v) e = u(rng);
  return v;
}

}  // namespace oracle
