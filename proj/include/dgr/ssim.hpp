#pragma once

// Windowed SSIM with an analytic gradient, shared by the projection-domain loss
// and the image-quality metrics.
//
// Local statistics use a separable Gaussian window (11 taps, sigma 1.5 per axis).
// Near borders, or when an axis is shorter than the window, the window is
// truncated to the valid samples and renormalised, so every local statistic is a
// proper weighted mean. Axes of extent 1 are left unfiltered.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "dgr/core.hpp"

namespace dgr {

struct SsimParams {
  int radius = 5;  // 11-tap window
  double window_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

namespace detail {

/// Truncated, renormalised Gaussian smoothing F along the axes of a w*h*c block,
/// together with its transpose.
class WindowFilter {
 public:
  WindowFilter(const Dims3& dims, const SsimParams& p) : dims_(dims), radius_(p.radius) {
    taps_.resize(std::size_t(2 * radius_ + 1));
    for (int k = -radius_; k <= radius_; ++k)
      taps_[std::size_t(k + radius_)] = std::exp(-0.5 * double(k * k) / (p.window_sigma * p.window_sigma));
    for (int a = 0; a < 3; ++a) {
      const std::int64_t e = dims[a];
      auto& z = norm_[a];
      z.resize(std::size_t(e));
      for (std::int64_t i = 0; i < e; ++i) {
        double s = 0.0;
        for (std::int64_t k = std::max<std::int64_t>(0, i - radius_); k <= std::min(e - 1, i + radius_); ++k)
          s += tap(k - i);
        z[std::size_t(i)] = s;
      }
    }
  }

  std::vector<double> apply(std::span<const double> in) const { return run(in, false); }
  std::vector<double> apply_transpose(std::span<const double> in) const { return run(in, true); }

 private:
  double tap(std::int64_t k) const { return taps_[std::size_t(k + radius_)]; }

  std::vector<double> run(std::span<const double> in, bool transpose) const {
    std::vector<double> cur(in.begin(), in.end()), next(in.size());
    const std::int64_t stride[3] = {1, dims_.w, dims_.w * dims_.h};
    for (int a = 0; a < 3; ++a) {
      const std::int64_t e = dims_[a];
      if (e == 1) continue;
      const auto& z = norm_[a];
      const std::int64_t s = stride[a];
      const std::int64_t lines = dims_.size() / e;
      for (std::int64_t line = 0; line < lines; ++line) {
        // Decompose the line number into the start offset of this 1D line.
        const std::int64_t inner = line % s, outer = line / s;
        const std::int64_t start = inner + outer * s * e;
        for (std::int64_t i = 0; i < e; ++i) {
          double acc = 0.0;
          const std::int64_t k0 = std::max<std::int64_t>(0, i - radius_), k1 = std::min(e - 1, i + radius_);
          if (!transpose) {
            for (std::int64_t k = k0; k <= k1; ++k) acc += tap(k - i) * cur[std::size_t(start + k * s)];
            next[std::size_t(start + i * s)] = acc / z[std::size_t(i)];
          } else {
            for (std::int64_t k = k0; k <= k1; ++k)
              acc += tap(i - k) * cur[std::size_t(start + k * s)] / z[std::size_t(k)];
            next[std::size_t(start + i * s)] = acc;
          }
        }
      }
      std::swap(cur, next);
    }
    return cur;
  }

  Dims3 dims_;
  int radius_;
  std::vector<double> taps_;
  std::array<std::vector<double>, 3> norm_;
};

}  // namespace detail

/// Mean SSIM of x against y over a w*h*c block with C1 = (k1 L)^2, C2 = (k2 L)^2.
/// When grad_x is non-empty it receives d(mean SSIM)/dx.
inline double ssim(std::span<const double> x, std::span<const double> y, const Dims3& dims, double dynamic_range,
                   std::span<double> grad_x = {}, const SsimParams& params = {}) {
  const auto n = std::size_t(dims.size());
  if (x.size() != n || y.size() != n) throw ConfigError("ssim: input sizes do not match dims");
  if (!grad_x.empty() && grad_x.size() != n) throw ConfigError("ssim: gradient buffer size mismatch");
  const double c1 = (params.k1 * dynamic_range) * (params.k1 * dynamic_range);
  const double c2 = (params.k2 * dynamic_range) * (params.k2 * dynamic_range);

  const detail::WindowFilter filter(dims, params);
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter.apply(x), my = filter.apply(y);
  const auto exx = filter.apply(xx), eyy = filter.apply(yy), exy = filter.apply(xy);

  std::vector<double> ga, gb, gc;
  const bool want_grad = !grad_x.empty();
  if (want_grad) {
    ga.resize(n);
    gb.resize(n);
    gc.resize(n);
  }
  const double inv_count = 1.0 / double(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double vx = exx[i] - mx[i] * mx[i], vy = eyy[i] - my[i] * my[i], cxy = exy[i] - mx[i] * my[i];
    const double a1 = 2.0 * mx[i] * my[i] + c1, a2 = 2.0 * cxy + c2;
    const double b1 = mx[i] * mx[i] + my[i] * my[i] + c1, b2 = vx + vy + c2;
    const double s = (a1 * a2) / (b1 * b2);
    total += s;
    if (want_grad) {
      ga[i] = inv_count * (2.0 * my[i] * a2 / (b1 * b2) - s * 2.0 * mx[i] / b1);  // dS/dmu_x
      gb[i] = inv_count * (-s / b2);                                             // dS/dvar_x
      gc[i] = inv_count * (2.0 * a1 / (b1 * b2));                                // dS/dcov_xy
    }
  }
  if (want_grad) {
    std::vector<double> lin(n);
    for (std::size_t i = 0; i < n; ++i) lin[i] = ga[i] - 2.0 * gb[i] * mx[i] - gc[i] * my[i];
    const auto t_lin = filter.apply_transpose(lin);
    const auto t_b = filter.apply_transpose(gb);
    const auto t_c = filter.apply_transpose(gc);
    for (std::size_t i = 0; i < n; ++i) grad_x[i] = t_lin[i] + 2.0 * x[i] * t_b[i] + y[i] * t_c[i];
  }
  return total * inv_count;
}

}  // namespace dgr
