#include <gtest/gtest.h>

#include <random>

#include "dgr/fvr.hpp"
#include "oracles.hpp"

using namespace dgr;

namespace {

GaussianCloud single(const Vec3& mu, double sigma, double intensity) {
  GaussianCloud c;
  c.push_back(mu, sigma, intensity);
  return c;
}

GaussianCloud random_cloud(std::size_t n, std::uint64_t seed, const Dims3& d, double margin, double smin, double smax) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> s(smin, smax), inten(0.1, 1.0);
  GaussianCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 m{};
    for (int a = 0; a < 3; ++a)
      m[a] = std::uniform_real_distribution<double>(margin, double(d[a]) - 1.0 - margin)(rng);
    c.push_back(m, s(rng), inten(rng));
  }
  return c;
}

}  // namespace

TEST(Fvr, IntegerCentreGivesAnalyticValues) {
  const auto v = reconstruct<double>(single({8, 8, 8}, 1.0, 1.0), BoxConfig::cube(17), {17, 17, 17});
  EXPECT_DOUBLE_EQ(v(8, 8, 8), 1.0);
  EXPECT_NEAR(v(9, 8, 8), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(v(8, 10, 8), std::exp(-2.0), 1e-15);
}

TEST(Fvr, HalfOffsetIsSymmetric) {
  const auto v = reconstruct<double>(single({8.5, 8, 8}, 1.0, 1.0), BoxConfig::cube(17), {17, 17, 17});
  EXPECT_NEAR(v(8, 8, 8), std::exp(-0.125), 1e-15);
  EXPECT_NEAR(v(9, 8, 8), std::exp(-0.125), 1e-15);
}

TEST(Fvr, MatchesBoxedOracleExactlyUpToRounding) {
  const Dims3 d{20, 18, 16};
  const BoxConfig box{7, 5, 9};
  const auto cloud = random_cloud(15, 3, d, -2.0, 0.5, 2.0);  // some centres near or past the border
  const auto v = reconstruct<double>(cloud, box, d, {ScatterMode::Atomic, false});
  const auto ref = oracle::boxed_gaussian_sum(cloud, box, d);
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(v.data()[i] - ref[i]));
  EXPECT_LT(worst, 1e-12);
}

TEST(Fvr, DecompositionIdentityHoldsInDoublePrecision) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0), s(0.1, 5.0);
  std::uniform_int_distribution<int> off(-8, 8);
  for (int t = 0; t < 10000; ++t) {
    const Vec3 dmu{u(rng), u(rng), u(rng)};
    const std::array<int, 3> b{off(rng), off(rng), off(rng)};
    const double sigma = s(rng);
    const double direct = direct_sq_distance(b, dmu, sigma);
    const double decomposed = decomposed_sq_distance(b, dmu, sigma);
    EXPECT_LE(std::abs(direct - decomposed), 1e-12 * std::max(direct, 1e-300) + 1e-300) << t;
  }
}

TEST(Fvr, WorkspaceOffsetSquaresAreExactIntegers) {
  const auto ws = make_fvr_workspace(BoxConfig{5, 3, 7});
  for (std::size_t k = 0; k < ws.offset_grid.size(); ++k) {
    const auto& o = ws.offset_grid.offsets[k];
    EXPECT_EQ(ws.offset_sq[k], o[0] * o[0] + o[1] * o[1] + o[2] * o[2]);
  }
}

TEST(Fvr, AgreesWithDirectSumForWellConfinedGaussians) {
  const Dims3 d{32, 32, 32};
  const auto cloud = random_cloud(20, 7, d, 8.0, 0.5, 1.5);
  const auto fast = reconstruct<double>(cloud, BoxConfig::cube(17), d);
  const auto direct = reconstruct_direct<double>(cloud, d);
  const auto ref = oracle::gaussian_sum(cloud, d);
  double vmax = 0.0, worst = 0.0, worst_direct = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    vmax = std::max(vmax, ref[i]);
    worst = std::max(worst, std::abs(fast.data()[i] - ref[i]));
    worst_direct = std::max(worst_direct, std::abs(direct.data()[i] - ref[i]));
  }
  EXPECT_LE(worst, 1e-4 * vmax);
  EXPECT_LT(worst_direct, 1e-12);
}

TEST(Fvr, NarrowGaussiansAgreeWithDirectToAbsoluteTolerance) {
  const Dims3 d{24, 24, 24};
  auto cloud = random_cloud(12, 5, d, 3.0, 0.6, 0.6);
  const auto fast = reconstruct<float>(cloud, BoxConfig::cube(17), d);
  const auto direct = reconstruct_direct<float>(cloud, d);
  for (std::int64_t i = 0; i < fast.size(); ++i) EXPECT_NEAR(fast[i], direct[i], 1e-5);
}

TEST(Fvr, DirectMatchesFastAtIntegerCentre) {
  const auto c = single({8, 8, 8}, 1.3, 0.7);
  EXPECT_EQ(reconstruct_direct<float>(c, {17, 17, 17})(8, 8, 8),
            reconstruct<float>(c, BoxConfig::cube(17), {17, 17, 17})(8, 8, 8));
}

TEST(Fvr, ZeroIntensityGivesZeroVolume) {
  const auto c = single({4.2, 5.1, 3.3}, 1.0, 0.0);
  const auto direct = reconstruct_direct<float>(c, {9, 9, 9});
  const auto fast = reconstruct<float>(c, BoxConfig::cube(5), {9, 9, 9});
  for (float v : direct.data()) EXPECT_EQ(v, 0.0f);
  for (float v : fast.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Fvr, DirectRefusesOverBudget) {
  FvrOptions opt;
  opt.direct_budget = 1000;
  try {
    reconstruct_direct<float>(random_cloud(2, 1, {16, 16, 16}, 1, 1, 1), {16, 16, 16}, opt);
    FAIL() << "expected refusal";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("1000"), std::string::npos);
  }
}

TEST(Fvr, NodecompMatchesDecomposed) {
  const Dims3 d{40, 36, 32};
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto cloud = random_cloud(200, seed, d, -1.0, 0.4, 3.0);
    const auto a = reconstruct<float>(cloud, BoxConfig::cube(17), d, {ScatterMode::Deterministic, false});
    const auto b = reconstruct_nodecomp<float>(cloud, BoxConfig::cube(17), d, {ScatterMode::Deterministic, false});
    for (std::int64_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-5);
  }
}

TEST(Fvr, NodecompExactForIntegerCentre) {
  const auto c = single({10, 9, 8}, 1.7, 0.9);
  const auto a = reconstruct<float>(c, BoxConfig::cube(17), {20, 20, 20});
  const auto b = reconstruct_nodecomp<float>(c, BoxConfig::cube(17), {20, 20, 20});
  EXPECT_TRUE(a == b);
}

TEST(Fvr, LinearInIntensity) {
  const Dims3 d{20, 20, 20};
  auto cloud = random_cloud(30, 9, d, 0.0, 0.5, 2.0);
  const auto v1 = reconstruct<double>(cloud, BoxConfig::cube(9), d);
  for (auto& i : cloud.intensity) i *= 2.0;
  const auto v2 = reconstruct<double>(cloud, BoxConfig::cube(9), d);
  for (std::int64_t i = 0; i < v1.size(); ++i) EXPECT_NEAR(v2[i], 2.0 * v1[i], 1e-13);
}

TEST(Fvr, TranslationCovariance) {
  const Dims3 d{30, 30, 30};
  auto cloud = random_cloud(5, 4, d, 10.0, 0.6, 1.2);
  const auto v1 = reconstruct<double>(cloud, BoxConfig::cube(7), d);
  for (auto& m : cloud.mu) m = {m[0] + 2, m[1] - 1, m[2] + 3};
  const auto v2 = reconstruct<double>(cloud, BoxConfig::cube(7), d);
  for (std::int64_t z = 4; z < 26; ++z)
    for (std::int64_t y = 4; y < 26; ++y)
      for (std::int64_t x = 4; x < 26; ++x) EXPECT_NEAR(v2(x + 2, y - 1, z + 3), v1(x, y, z), 1e-14);
}

TEST(Fvr, DeterministicModeIsBitwiseReproducible) {
  const Dims3 d{32, 32, 8};
  const auto cloud = random_cloud(500, 12, d, 0.0, 0.5, 2.0);
  const FvrOptions opt{ScatterMode::Deterministic, false};
  const auto a = reconstruct<float>(cloud, BoxConfig{9, 9, 5}, d, opt);
  const auto b = reconstruct<float>(cloud, BoxConfig{9, 9, 5}, d, opt);
  EXPECT_TRUE(a == b);
}

TEST(Fvr, OutOfVolumeCentresAreClippedNotRejected) {
  const auto c = single({-3.5, 4, 4}, 1.0, 1.0);
  const auto v = reconstruct<double>(c, BoxConfig::cube(9), {9, 9, 9}, {ScatterMode::Atomic, false});
  const auto ref = oracle::boxed_gaussian_sum(c, BoxConfig::cube(9), {9, 9, 9});
  for (std::int64_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], ref[std::size_t(i)], 1e-14);
  EXPECT_GT(v(0, 4, 4), 0.0);
}

TEST(Fvr, RejectsOversizedBoxAndEmptyCloud) {
  EXPECT_THROW(reconstruct<float>(single({2, 2, 2}, 1, 1), BoxConfig::cube(17), {16, 16, 16}), ConfigError);
  EXPECT_THROW(reconstruct<float>(GaussianCloud{}, BoxConfig::cube(3), {16, 16, 16}), ConfigError);
}

TEST(FvrBackward, ZeroUpstreamGivesZeroGradients) {
  const auto cloud = random_cloud(10, 2, {16, 16, 16}, 2, 0.5, 1.5);
  const auto g = backward(cloud, BoxConfig::cube(7), VolumeGrid<double>(Dims3{16, 16, 16}));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    EXPECT_EQ(g.d_intensity[i], 0.0);
    EXPECT_EQ(g.d_sigma[i], 0.0);
    EXPECT_EQ(g.d_mu[i], (Vec3{0, 0, 0}));
  }
}

TEST(FvrBackward, IntensityGradientAtIntegerCentre) {
  VolumeGrid<double> up(Dims3{17, 17, 17});
  up(8, 8, 8) = 1.0;
  const auto g = backward(single({8, 8, 8}, 1.0, 0.3), BoxConfig::cube(17), up);
  EXPECT_DOUBLE_EQ(g.d_intensity[0], 1.0);
}

TEST(FvrBackward, MatchesFiniteDifferencesOfHalfSquaredNorm) {
  const Dims3 d{20, 20, 20};
  const BoxConfig box = BoxConfig::cube(11);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> frac(0.2, 0.8);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec3 mu{9 + frac(rng), 10 + frac(rng), 8 + frac(rng)};
    const double sigma = 0.8 + 0.2 * trial, inten = 0.5 + 0.1 * trial;
    auto loss = [&](const std::vector<double>& p) {
      const auto v = reconstruct<double>(single({p[0], p[1], p[2]}, p[3], p[4]), box, d);
      double s = 0.0;
      for (double e : v.data()) s += 0.5 * e * e;
      return s;
    };
    const std::vector<double> p{mu[0], mu[1], mu[2], sigma, inten};
    const auto v = reconstruct<double>(single(mu, sigma, inten), box, d);
    const auto g = backward(single(mu, sigma, inten), box, v);  // dL/dV = V
    const std::vector<double> analytic{g.d_mu[0][0], g.d_mu[0][1], g.d_mu[0][2], g.d_sigma[0], g.d_intensity[0]};
    for (std::size_t k = 0; k < 5; ++k) {
      const double fd = oracle::central_difference(loss, p, k, 1e-3);
      EXPECT_NEAR(analytic[k], fd, 1e-3 * std::max(std::abs(fd), 1e-6)) << "param " << k;
    }
  }
}

TEST(FvrBackward, AccumulatesPositionalStatistics) {
  const Dims3 d{16, 16, 16};
  const auto cloud = random_cloud(4, 8, d, 3, 0.7, 1.3);
  const auto up = VolumeGrid<double>(d, 0.25);
  ParamGradients g(cloud.size());
  backward(cloud, BoxConfig::cube(7), up, g);
  const auto first = g.accum_pos_grad_norm;
  backward(cloud, BoxConfig::cube(7), up, g);
  EXPECT_EQ(g.iters_since_densify, 2);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    EXPECT_GE(first[i], 0.0);
    EXPECT_NEAR(g.accum_pos_grad_norm[i], 2.0 * first[i], 1e-15);
    EXPECT_NEAR(first[i], std::hypot(g.d_mu[i][0], g.d_mu[i][1], g.d_mu[i][2]), 1e-15);
  }
}

TEST(FvrBackward, RejectsMismatchedUpstream) {
  EXPECT_THROW(backward(single({4, 4, 4}, 1, 1), BoxConfig::cube(3), Dims3{8, 8, 8}, VolumeGrid<double>(Dims3{8, 8, 7})),
               ConfigError);
}
