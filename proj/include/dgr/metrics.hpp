#pragma once

// Reconstruction quality: PSNR = 10 log10(MAX^2 / MSE) and windowed SSIM, both
// over the whole volume and as per-slice means along the three anatomical planes.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dgr/core.hpp"
#include "dgr/ssim.hpp"

namespace dgr {

/// Reported when MSE is zero (or PSNR would exceed it).
inline constexpr double kPsnrCap = 200.0;

enum class Plane { Axial, Coronal, Sagittal };

inline const char* to_string(Plane p) {
  switch (p) {
    case Plane::Axial: return "axial";
    case Plane::Coronal: return "coronal";
    case Plane::Sagittal: return "sagittal";
  }
  return "?";
}

struct PlaneMetrics {
  Plane plane = Plane::Axial;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::int64_t slices = 0;
};

struct QualityReport {
  double max_value = 0.0;
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  std::vector<PlaneMetrics> planes;
};

inline double psnr_from_mse(double mse, double max_value) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_value * max_value / mse));
}

namespace detail {

template <class Real>
void check_same_dims(const VolumeGrid<Real>& a, const VolumeGrid<Real>& b) {
  if (a.dims() != b.dims())
    throw ConfigError("dims mismatch: " + to_string(a.dims()) + " vs " + to_string(b.dims()));
}

template <class Real>
std::vector<double> as_double(const VolumeGrid<Real>& v) {
  return {v.data().begin(), v.data().end()};
}

template <class Real>
double resolve_max(const VolumeGrid<Real>& truth, std::optional<double> declared) {
  const double m = declared ? *declared : double(*std::max_element(truth.data().begin(), truth.data().end()));
  if (!(m > 0.0)) throw ConfigError("PSNR needs a positive MAX; declare one when the reference is non-positive");
  return m;
}

inline double mse(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / double(a.size());
}

/// Extracts slice `k` of `plane` as a 2D image laid out with dims {a, b, 1}.
inline std::vector<double> extract_slice(const std::vector<double>& v, const Dims3& d, Plane plane, std::int64_t k,
                                         Dims3& out_dims) {
  std::vector<double> img;
  switch (plane) {
    case Plane::Axial:
      out_dims = {d.w, d.h, 1};
      img.reserve(std::size_t(d.w * d.h));
      for (std::int64_t y = 0; y < d.h; ++y)
        for (std::int64_t x = 0; x < d.w; ++x) img.push_back(v[std::size_t(d.index(x, y, k))]);
      break;
    case Plane::Coronal:
      out_dims = {d.w, d.c, 1};
      img.reserve(std::size_t(d.w * d.c));
      for (std::int64_t z = 0; z < d.c; ++z)
        for (std::int64_t x = 0; x < d.w; ++x) img.push_back(v[std::size_t(d.index(x, k, z))]);
      break;
    case Plane::Sagittal:
      out_dims = {d.h, d.c, 1};
      img.reserve(std::size_t(d.h * d.c));
      for (std::int64_t z = 0; z < d.c; ++z)
        for (std::int64_t y = 0; y < d.h; ++y) img.push_back(v[std::size_t(d.index(k, y, z))]);
      break;
  }
  return img;
}

}  // namespace detail

template <class Real>
double psnr(const VolumeGrid<Real>& recon, const VolumeGrid<Real>& truth, std::optional<double> max_value = {}) {
  detail::check_same_dims(recon, truth);
  const double m = detail::resolve_max(truth, max_value);
  return psnr_from_mse(detail::mse(detail::as_double(recon), detail::as_double(truth)), m);
}

/// Volume-level SSIM (3D window) with dynamic range MAX.
template <class Real>
double ssim(const VolumeGrid<Real>& recon, const VolumeGrid<Real>& truth, std::optional<double> max_value = {}) {
  detail::check_same_dims(recon, truth);
  const double m = detail::resolve_max(truth, max_value);
  return ssim(detail::as_double(recon), detail::as_double(truth), truth.dims(), m);
}

template <class Real>
PlaneMetrics plane_metrics(const VolumeGrid<Real>& recon, const VolumeGrid<Real>& truth, Plane plane,
                           std::optional<double> max_value = {}) {
  detail::check_same_dims(recon, truth);
  const double m = detail::resolve_max(truth, max_value);
  const auto r = detail::as_double(recon), t = detail::as_double(truth);
  const Dims3& d = truth.dims();
  const std::int64_t count = plane == Plane::Axial ? d.c : plane == Plane::Coronal ? d.h : d.w;
  PlaneMetrics out{plane, 0.0, 0.0, count};
  for (std::int64_t k = 0; k < count; ++k) {
    Dims3 sd;
    const auto rs = detail::extract_slice(r, d, plane, k, sd);
    const auto ts = detail::extract_slice(t, d, plane, k, sd);
    out.mean_psnr += psnr_from_mse(detail::mse(rs, ts), m);
    out.mean_ssim += ssim(rs, ts, sd, m);
  }
  out.mean_psnr /= double(count);
  out.mean_ssim /= double(count);
  return out;
}

template <class Real>
QualityReport evaluate_quality(const VolumeGrid<Real>& recon, const VolumeGrid<Real>& truth,
                               std::optional<double> max_value = {}, bool per_plane = true) {
  detail::check_same_dims(recon, truth);
  QualityReport rep;
  rep.max_value = detail::resolve_max(truth, max_value);
  rep.mse = detail::mse(detail::as_double(recon), detail::as_double(truth));
  rep.psnr = psnr_from_mse(rep.mse, rep.max_value);
  rep.ssim = ssim(recon, truth, rep.max_value);
  if (per_plane)
    for (Plane p : {Plane::Axial, Plane::Coronal, Plane::Sagittal})
      rep.planes.push_back(plane_metrics(recon, truth, p, rep.max_value));
  return rep;
}

}  // namespace dgr
