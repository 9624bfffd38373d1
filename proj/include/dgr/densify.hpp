#pragma once

// Adaptive density control: clone small Gaussians with large positional
// gradients, split large ones, prune stale or oversized ones, all under a
// global budget n_max.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dgr/core.hpp"

namespace dgr {

struct DensifyParams {
  std::size_t n_max = 500000;
  double tau = 2e-4;     // positional-gradient threshold
  double theta = 0.0;    // small/large scale threshold (voxels)
  int box_size = 17;     // prune when sigma > 3 * box_size
  std::int64_t interval = 100;
  bool grad_prune_enabled = true;
  /// Axes along which split children are displaced; flat axes keep the parent's coordinate.
  std::array<bool, 3> active_axes{true, true, true};

  /// Defaults for a volume: theta = 0.005 * body diagonal, flat axes inactive.
  static DensifyParams for_volume(const Dims3& dims, const BoxConfig& box) {
    DensifyParams p;
    p.theta = 0.005 * dims.diagonal();
    p.box_size = box.extent();
    p.active_axes = {dims.w > 1, dims.h > 1, dims.c > 1};
    return p;
  }

  void validate(std::size_t current_n) const {
    if (n_max < current_n)
      throw ConfigError("densify n_max (" + std::to_string(n_max) + ") is below the current cloud size (" +
                        std::to_string(current_n) + ")");
    if (!(tau > 0.0)) throw ConfigError("densify tau must be > 0");
    if (!(theta > 0.0)) throw ConfigError("densify theta must be > 0");
    if (box_size <= 0) throw ConfigError("densify box size must be > 0");
    if (interval <= 0) throw ConfigError("densify interval must be > 0");
  }
};

struct DensifyReport {
  std::size_t n_before = 0;
  std::size_t clones = 0;
  std::size_t splits = 0;  // parents replaced by two children
  std::size_t prunes = 0;
  std::size_t n_after = 0;
  /// For each output Gaussian, the input index whose optimizer state it keeps;
  /// empty for clones and split children, which start from zero state.
  std::vector<std::optional<std::size_t>> origin;
};

struct DensifyResult {
  GaussianCloud cloud;
  DensifyReport report;
};

namespace detail {

/// Indices of the k largest scores among `candidates`, ties broken by lower index.
inline std::vector<std::size_t> top_k(std::vector<std::size_t> candidates, const std::vector<double>& score,
                                      std::size_t k) {
  k = std::min(k, candidates.size());
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  candidates.resize(k);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

}  // namespace detail

/// One densification event. avg_grad is the accumulated |dL/dmu| divided by the
/// iterations since the previous event. Pure in (cloud, grads, params, seed).
inline DensifyResult densify_and_prune(const GaussianCloud& cloud, const ParamGradients& grads,
                                       const DensifyParams& params, std::uint64_t seed) {
  require_valid(cloud);
  params.validate(0);
  const std::size_t n = cloud.size();
  if (grads.accum_pos_grad_norm.size() != n) throw ConfigError("gradient statistics do not match the cloud");
  if (grads.iters_since_densify <= 0) throw ConfigError("densify needs at least one accumulated iteration");

  std::vector<double> avg(n);
  for (std::size_t i = 0; i < n; ++i) avg[i] = grads.accum_pos_grad_norm[i] / double(grads.iters_since_densify);

  DensifyReport rep;
  rep.n_before = n;
  GaussianCloud work = cloud;
  std::size_t current = n;
  auto available = [&] { return params.n_max > current ? params.n_max - current : std::size_t(0); };

  // Clone: small Gaussians in under-reconstructed regions. Oversized Gaussians
  // are only ever pruned.
  const double sigma_limit = 3.0 * double(params.box_size);
  std::vector<std::size_t> clone_candidates, split_candidates;
  for (std::size_t i = 0; i < n; ++i) {
    if (cloud.sigma[i] > sigma_limit) continue;
    if (avg[i] >= params.tau && cloud.sigma[i] <= params.theta) clone_candidates.push_back(i);
    if (avg[i] >= params.tau && cloud.sigma[i] > params.theta) split_candidates.push_back(i);
  }
  const auto cloned = detail::top_k(clone_candidates, avg, available());
  GaussianCloud clones;
  for (std::size_t i : cloned) {
    work.intensity[i] = cloud.intensity[i] / 2.0;
    clones.push_back(cloud.mu[i], cloud.sigma[i], work.intensity[i]);
  }
  current += cloned.size();
  rep.clones = cloned.size();

  // Split: large Gaussians become two children drawn from the parent density.
  const auto split = detail::top_k(split_candidates, avg, available());
  std::vector<bool> is_split(n, false);
  GaussianCloud children;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double shrink = std::cbrt(2.0);
  for (std::size_t i : split) {
    is_split[i] = true;
    for (int c = 0; c < 2; ++c) {
      Vec3 pos = cloud.mu[i];
      for (int d = 0; d < 3; ++d)
        if (params.active_axes[std::size_t(d)]) pos[d] += cloud.sigma[i] * normal(rng);
      children.push_back(pos, cloud.sigma[i] / shrink, cloud.intensity[i]);
    }
  }
  current += split.size();
  rep.splits = split.size();

  // Prune and assemble. New Gaussians carry no gradient history, so only the
  // size rule applies to them.
  GaussianCloud out;
  out.reserve(current);
  for (std::size_t i = 0; i < n; ++i) {
    if (is_split[i]) continue;
    const bool stale = params.grad_prune_enabled && avg[i] <= params.tau && !std::binary_search(cloned.begin(), cloned.end(), i);
    if (stale || work.sigma[i] > sigma_limit) {
      ++rep.prunes;
      continue;
    }
    out.push_back(work.mu[i], work.sigma[i], work.intensity[i]);
    rep.origin.emplace_back(i);
  }
  for (const GaussianCloud* extra : {&clones, &children}) {
    for (std::size_t k = 0; k < extra->size(); ++k) {
      if (extra->sigma[k] > sigma_limit) {
        ++rep.prunes;
        continue;
      }
      out.push_back(extra->mu[k], extra->sigma[k], extra->intensity[k]);
      rep.origin.emplace_back(std::nullopt);
    }
  }
  rep.n_after = out.size();
  return {std::move(out), std::move(rep)};
}

}  // namespace dgr
