#pragma once

// Composite objective: lambda1 * L1(P_hat, P) + lambda2 * (1 - SSIM(P_hat, P))
// + lambda3 * TV(V). Every term returns its value and its gradient with respect
// to its own input.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dgr/core.hpp"
#include "dgr/ssim.hpp"

namespace dgr {

struct LossWeights {
  double lambda1 = 0.6;  // L1, projection domain
  double lambda2 = 0.2;  // SSIM, projection domain
  double lambda3 = 1.0;  // TV, volume domain

  /// Three-term default.
  static constexpr LossWeights full() { return {0.6, 0.2, 1.0}; }
  /// Two-term variant without TV.
  static constexpr LossWeights l1_ssim() { return {0.8, 0.2, 0.0}; }
  static constexpr LossWeights l1_only() { return {1.0, 0.0, 0.0}; }

  void validate() const {
    if (!(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0)) throw ConfigError("loss weights must be >= 0");
    if (!(lambda1 > 0.0 || lambda2 > 0.0 || lambda3 > 0.0))
      throw ConfigError("at least one loss weight must be positive");
  }
};

template <class Real>
struct SinogramLoss {
  double value = 0.0;
  Sinogram<Real> grad;
};

template <class Real>
struct VolumeLoss {
  double value = 0.0;
  VolumeGrid<Real> grad;
};

template <class Real>
struct TotalLoss {
  double total = 0.0;
  double l1 = 0.0;    // unweighted component values; 0 when skipped
  double ssim = 0.0;  // the SSIM loss 1 - SSIM
  double tv = 0.0;
  Sinogram<Real> grad_pred;
  VolumeGrid<Real> grad_vol;
};

namespace detail {
template <class Real>
void check_sino_pair(const Sinogram<Real>& a, const Sinogram<Real>& b) {
  if (a.dims() != b.dims())
    throw ConfigError("sinogram dims mismatch: " + to_string(a.dims()) + " vs " + to_string(b.dims()));
}
}  // namespace detail

/// Mean absolute error; gradient sign(pred - ref) / count, 0 at ties.
template <class Real>
SinogramLoss<Real> l1_loss(const Sinogram<Real>& pred, const Sinogram<Real>& ref) {
  detail::check_sino_pair(pred, ref);
  SinogramLoss<Real> out{0.0, Sinogram<Real>(pred.dims())};
  const auto n = pred.size();
  const double inv = 1.0 / double(n);
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = double(pred[i]) - double(ref[i]);
    sum += std::abs(d);
    out.grad[i] = Real(d > 0.0 ? inv : d < 0.0 ? -inv : 0.0);
  }
  out.value = sum * inv;
  return out;
}

/// 1 - mean SSIM over slices; each slice's views x detectors sinogram is an image.
/// The dynamic range L is the reference maximum.
template <class Real>
SinogramLoss<Real> ssim_loss(const Sinogram<Real>& pred, const Sinogram<Real>& ref, const SsimParams& params = {}) {
  detail::check_sino_pair(pred, ref);
  const SinoDims sd = pred.dims();
  double range = double(*std::max_element(ref.data().begin(), ref.data().end()));
  if (!(range > 0.0)) range = 1.0;
  const Dims3 img{sd.detectors, sd.views, 1};
  const auto per_slice = std::size_t(sd.views * sd.detectors);
  SinogramLoss<Real> out{0.0, Sinogram<Real>(sd)};
  std::vector<double> x(per_slice), y(per_slice), g(per_slice);
  double mean_ssim = 0.0;
  for (std::int64_t z = 0; z < sd.slices; ++z) {
    const std::size_t off = std::size_t(z) * per_slice;
    for (std::size_t i = 0; i < per_slice; ++i) {
      x[i] = double(pred.data()[off + i]);
      y[i] = double(ref.data()[off + i]);
    }
    mean_ssim += ssim(x, y, img, range, g, params);
    for (std::size_t i = 0; i < per_slice; ++i) out.grad.data()[off + i] = Real(-g[i] / double(sd.slices));
  }
  mean_ssim /= double(sd.slices);
  out.value = 1.0 - mean_ssim;
  return out;
}

/// Anisotropic TV: mean over voxels of sum over axes of |forward difference|,
/// with no difference taken across the last index. Axes of extent 1 are skipped.
template <class Real>
VolumeLoss<Real> tv_loss(const VolumeGrid<Real>& vol) {
  const Dims3 d = vol.dims();
  if (d.w < 2 && d.h < 2 && d.c < 2) throw ConfigError("TV needs at least one axis with extent >= 2");
  VolumeLoss<Real> out{0.0, VolumeGrid<Real>(d)};
  std::vector<double> grad(std::size_t(d.size()), 0.0);
  const double inv = 1.0 / double(d.size());
  const std::int64_t stride[3] = {1, d.w, d.w * d.h};
  double sum = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] < 2) continue;
    for (std::int64_t z = 0; z < d.c; ++z)
      for (std::int64_t y = 0; y < d.h; ++y)
        for (std::int64_t x = 0; x < d.w; ++x) {
          const std::int64_t pos[3] = {x, y, z};
          if (pos[a] == d[a] - 1) continue;
          const std::int64_t i = d.index(x, y, z), j = i + stride[a];
          const double diff = double(vol[j]) - double(vol[i]);
          sum += std::abs(diff);
          const double s = diff > 0.0 ? inv : diff < 0.0 ? -inv : 0.0;
          grad[std::size_t(j)] += s;
          grad[std::size_t(i)] -= s;
        }
  }
  for (std::int64_t i = 0; i < d.size(); ++i) out.grad[i] = Real(grad[std::size_t(i)]);
  out.value = sum * inv;
  return out;
}

/// Weighted sum of the three terms; zero-weight terms are not evaluated.
template <class Real>
TotalLoss<Real> total_loss(const Sinogram<Real>& pred, const Sinogram<Real>& ref, const VolumeGrid<Real>& vol,
                           const LossWeights& w, const SsimParams& ssim_params = {}) {
  w.validate();
  detail::check_sino_pair(pred, ref);
  TotalLoss<Real> out{0.0, 0.0, 0.0, 0.0, Sinogram<Real>(pred.dims()), VolumeGrid<Real>(vol.dims())};
  auto accumulate = [](std::span<Real> dst, std::span<const Real> src, double weight) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = Real(double(dst[i]) + weight * double(src[i]));
  };
  if (w.lambda1 > 0.0) {
    auto l1 = l1_loss(pred, ref);
    out.l1 = l1.value;
    out.total += w.lambda1 * l1.value;
    accumulate(out.grad_pred.data(), l1.grad.data(), w.lambda1);
  }
  if (w.lambda2 > 0.0) {
    auto s = ssim_loss(pred, ref, ssim_params);
    out.ssim = s.value;
    out.total += w.lambda2 * s.value;
    accumulate(out.grad_pred.data(), s.grad.data(), w.lambda2);
  }
  if (w.lambda3 > 0.0) {
    auto tv = tv_loss(vol);
    out.tv = tv.value;
    out.total += w.lambda3 * tv.value;
    accumulate(out.grad_vol.data(), tv.grad.data(), w.lambda3);
  }
  return out;
}

}  // namespace dgr
