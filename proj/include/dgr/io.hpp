#pragma once

// File formats. Every array is a raw little-endian file in linear-index order
// with a JSON sidecar at "<path>.json" describing it:
//   volume    float32, dims [w, h, c], x fastest
//   sinogram  float32, dims [views, detectors, slices], detector bin fastest
//   cloud     float64, N records of (mu_x, mu_y, mu_z, sigma, intensity)
//   optimizer float64, N records of the six Adam moment groups (m/v for mu xyz, sigma, I)

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgr/core.hpp"
#include "dgr/optim.hpp"

namespace dgr {

namespace fs = std::filesystem;

inline fs::path sidecar_path(const fs::path& data) { return fs::path(data.string() + ".json"); }

namespace detail {

template <class T>
T byteswap_value(T v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

template <class T>
void write_raw(const fs::path& path, std::span<const T> values) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), std::streamsize(values.size() * sizeof(T)));
  } else {
    for (T v : values) {
      const T s = byteswap_value(v);
      out.write(reinterpret_cast<const char*>(&s), sizeof(T));
    }
  }
  if (!out) throw Error("failed writing " + path.string());
}

template <class T>
std::vector<T> read_raw(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = std::size_t(in.tellg());
  if (bytes != count * sizeof(T))
    throw ConfigError(path.string() + " holds " + std::to_string(bytes) + " bytes, expected " +
                      std::to_string(count * sizeof(T)));
  in.seekg(0);
  std::vector<T> values(count);
  in.read(reinterpret_cast<char*>(values.data()), std::streamsize(bytes));
  if constexpr (std::endian::native != std::endian::little)
    for (auto& v : values) v = byteswap_value(v);
  return values;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("missing sidecar " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline nlohmann::json read_sidecar(const fs::path& data, const std::string& kind) {
  auto j = read_json(sidecar_path(data));
  if (j.value("kind", std::string()) != kind)
    throw ConfigError(sidecar_path(data).string() + " does not describe a " + kind);
  return j;
}

template <class T>
std::pair<double, double> value_range(std::span<const T> v) {
  if (v.empty()) return {0.0, 0.0};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {double(*lo), double(*hi)};
}

}  // namespace detail

inline void write_volume(const fs::path& path, const Volume& vol, const Vec3& spacing = {1.0, 1.0, 1.0}) {
  detail::write_raw<float>(path, vol.data());
  const auto [lo, hi] = detail::value_range<float>(vol.data());
  detail::write_json(sidecar_path(path), {{"kind", "volume"},
                                          {"dtype", "float32"},
                                          {"endianness", "little"},
                                          {"dims", {vol.dims().w, vol.dims().h, vol.dims().c}},
                                          {"spacing", {spacing[0], spacing[1], spacing[2]}},
                                          {"min", lo},
                                          {"max", hi}});
}

inline Volume read_volume(const fs::path& path) {
  const auto meta = detail::read_sidecar(path, "volume");
  const auto d = meta.at("dims").get<std::array<std::int64_t, 3>>();
  const Dims3 dims{d[0], d[1], d[2]};
  if (!dims.positive()) throw ConfigError("volume sidecar has non-positive dims");
  return Volume(dims, detail::read_raw<float>(path, std::size_t(dims.size())));
}

inline void write_sinogram(const fs::path& path, const Sinogram<float>& sino) {
  detail::write_raw<float>(path, sino.data());
  const auto [lo, hi] = detail::value_range<float>(sino.data());
  const auto& d = sino.dims();
  detail::write_json(sidecar_path(path), {{"kind", "sinogram"},
                                          {"dtype", "float32"},
                                          {"endianness", "little"},
                                          {"dims", {d.views, d.detectors, d.slices}},
                                          {"spacing", {1.0, 1.0, 1.0}},
                                          {"min", lo},
                                          {"max", hi}});
}

inline Sinogram<float> read_sinogram(const fs::path& path) {
  const auto meta = detail::read_sidecar(path, "sinogram");
  const auto d = meta.at("dims").get<std::array<std::int64_t, 3>>();
  const SinoDims dims{d[0], d[1], d[2]};
  if (!dims.positive()) throw ConfigError("sinogram sidecar has non-positive dims");
  return Sinogram<float>(dims, detail::read_raw<float>(path, std::size_t(dims.size())));
}

struct CloudSnapshot {
  GaussianCloud cloud;
  std::int64_t iteration = 0;
};

inline void write_cloud(const fs::path& path, const GaussianCloud& cloud, std::int64_t iteration = 0) {
  std::vector<double> packed;
  packed.reserve(cloud.size() * 5);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    packed.insert(packed.end(), {cloud.mu[i][0], cloud.mu[i][1], cloud.mu[i][2], cloud.sigma[i], cloud.intensity[i]});
  }
  detail::write_raw<double>(path, packed);
  detail::write_json(sidecar_path(path), {{"kind", "gaussian_cloud"},
                                          {"dtype", "float64"},
                                          {"endianness", "little"},
                                          {"count", cloud.size()},
                                          {"fields", {"mu_x", "mu_y", "mu_z", "sigma", "intensity"}},
                                          {"iteration", iteration}});
}

inline CloudSnapshot read_cloud(const fs::path& path) {
  const auto meta = detail::read_sidecar(path, "gaussian_cloud");
  const auto n = meta.at("count").get<std::size_t>();
  const auto packed = detail::read_raw<double>(path, n * 5);
  CloudSnapshot snap;
  snap.iteration = meta.value("iteration", std::int64_t(0));
  snap.cloud.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = packed.data() + 5 * i;
    snap.cloud.push_back({r[0], r[1], r[2]}, r[3], r[4]);
  }
  require_valid(snap.cloud);
  return snap;
}

inline void write_optimizer_state(const fs::path& path, const OptimizerState& s) {
  std::vector<double> packed;
  packed.reserve(s.size() * 10);
  for (std::size_t i = 0; i < s.size(); ++i) {
    packed.insert(packed.end(), {s.m_mu[i][0], s.m_mu[i][1], s.m_mu[i][2], s.v_mu[i][0], s.v_mu[i][1], s.v_mu[i][2],
                                 s.m_sigma[i], s.v_sigma[i], s.m_intensity[i], s.v_intensity[i]});
  }
  detail::write_raw<double>(path, packed);
  detail::write_json(sidecar_path(path), {{"kind", "optimizer_state"},
                                          {"dtype", "float64"},
                                          {"endianness", "little"},
                                          {"count", s.size()},
                                          {"step", s.step},
                                          {"max_iters", s.max_iters}});
}

inline OptimizerState read_optimizer_state(const fs::path& path) {
  const auto meta = detail::read_sidecar(path, "optimizer_state");
  const auto n = meta.at("count").get<std::size_t>();
  const auto packed = detail::read_raw<double>(path, n * 10);
  OptimizerState s(n, meta.at("max_iters").get<std::int64_t>());
  s.step = meta.at("step").get<std::int64_t>();
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = packed.data() + 10 * i;
    s.m_mu[i] = {r[0], r[1], r[2]};
    s.v_mu[i] = {r[3], r[4], r[5]};
    s.m_sigma[i] = r[6];
    s.v_sigma[i] = r[7];
    s.m_intensity[i] = r[8];
    s.v_intensity[i] = r[9];
  }
  return s;
}

/// 8-bit binary PGM of one axial slice; values are mapped linearly from
/// [level - window/2, level + window/2] to [0, 255].
inline void write_slice_pgm(const fs::path& path, const Volume& vol, std::int64_t z, double window, double level) {
  const Dims3& d = vol.dims();
  if (z < 0 || z >= d.c) throw ConfigError("slice index out of range");
  if (!(window > 0.0)) throw ConfigError("display window must be > 0");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "P5\n" << d.w << ' ' << d.h << "\n255\n";
  const double lo = level - 0.5 * window;
  // Image rows run top to bottom, so y is flipped to keep +y pointing up.
  for (std::int64_t y = d.h - 1; y >= 0; --y)
    for (std::int64_t x = 0; x < d.w; ++x) {
      const double t = std::clamp((double(vol(x, y, z)) - lo) / window, 0.0, 1.0);
      out.put(char(static_cast<unsigned char>(std::lround(t * 255.0))));
    }
}

}  // namespace dgr
