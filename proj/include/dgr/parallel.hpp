#pragma once

#include <cstdint>
#include <span>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dgr {

/// How scatter-add kernels aggregate contributions into shared outputs.
///  - Atomic: parallel over work items, atomic accumulation (order unspecified).
///  - Deterministic: contributions applied sequentially in work-item order, so
///    repeated runs are bitwise identical regardless of thread count.
enum class ScatterMode { Atomic, Deterministic };

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace detail {

/// True when a scatter kernel must run its loop serially.
inline bool serial_scatter(ScatterMode mode) { return mode == ScatterMode::Deterministic || max_threads() == 1; }

inline void atomic_add(double& target, double value) {
#pragma omp atomic
  target += value;
}

template <class Real>
void convert_into(std::span<const double> src, std::span<Real> dst) {
  const auto n = std::int64_t(src.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) dst[std::size_t(i)] = Real(src[std::size_t(i)]);
}

}  // namespace detail
}  // namespace dgr
