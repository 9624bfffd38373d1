#include <gtest/gtest.h>

#include <map>
#include <random>

#include "checks.hpp"
#include "dgr/optim.hpp"
#include "dgr/phantom.hpp"
#include "oracles.hpp"

using namespace dgr;

namespace {

GaussianCloud one(double mu, double sigma, double intensity) {
  GaussianCloud c;
  c.push_back({mu, mu, mu}, sigma, intensity);
  return c;
}

ParamGradients grad_of(std::size_t n, double g) {
  ParamGradients p(n);
  for (std::size_t i = 0; i < n; ++i) {
    p.d_mu[i] = {g, -g, 0.0};
    p.d_sigma[i] = g;
    p.d_intensity[i] = g;
  }
  return p;
}

// Small 2D problem used by the loop tests.
struct SmallProblem {
  Dims3 dims{32, 32, 1};
  ScanGeometry geom = ScanGeometry::parallel(24, 48, 1.0);
  Volume truth = shepp_logan(PhantomKind::SheppLogan2D, dims);
  Sinogram<float> measured = forward_project(truth, geom);

  ReconstructionConfig config(std::int64_t iters) const {
    ReconstructionConfig c;
    c.dims = dims;
    c.box = BoxConfig::cube(9);
    c.max_iters = iters;
    c.init_count = 800;
    c.densify.n_max = 4000;
    c.densify.interval = 20;
    c.seed = 3;
    return c;
  }
};

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  // Bias-corrected first step: m/(sqrt v) = sign(g).
  auto c = one(5.25, 1.0, 0.5);
  OptimizerState s(1, 1000);
  AdamParams p;
  p.eps = 1e-300;
  adam_step(c, grad_of(1, 0.37), s, p);
  EXPECT_NEAR(c.mu[0][0], 5.25 - 3e-4, 1e-15);
  EXPECT_NEAR(c.mu[0][1], 5.25 + 3e-4, 1e-15);
  EXPECT_EQ(c.mu[0][2], 5.25);
  EXPECT_NEAR(c.sigma[0], 1.0 - 3e-4, 1e-15);
  EXPECT_NEAR(c.intensity[0], 0.5 - 3e-4, 1e-15);
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, MatchesReferenceRecursionOverManySteps) {
  auto c = one(3.0, 2.0, 0.8);
  OptimizerState s(1, 50);
  const AdamParams p;
  double x = 0.8, m = 0.0, v = 0.0;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 1; t <= 50; ++t) {
    const double g = n(rng) * 0.01;
    auto gr = grad_of(1, 0.0);
    gr.d_intensity[0] = g;
    const double lr = 3e-4 * std::pow(0.1, double(t - 1) / 50.0);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    x = std::max(x, 0.0);
    adam_step(c, gr, s, p);
    ASSERT_NEAR(c.intensity[0], x, 1e-14) << t;
  }
}

TEST(Adam, FrameScaleMultipliesSpatialSteps) {
  auto c = one(40.0, 2.0, 0.5);
  OptimizerState s(1, 1000);
  AdamParams p;
  p.eps = 0.0;
  p.frame_scale = 64.0;
  adam_step(c, grad_of(1, 1e-6), s, p);
  EXPECT_NEAR(c.mu[0][0], 40.0 - 64.0 * 3e-4, 1e-12);
  EXPECT_NEAR(c.sigma[0], 2.0 - 64.0 * 3e-4, 1e-12);
  EXPECT_NEAR(c.intensity[0], 0.5 - 3e-4, 1e-15);
}

TEST(Adam, ScheduleDecaysExponentially) {
  OptimizerState s(0, 1000);
  const AdamParams p;
  EXPECT_DOUBLE_EQ(s.learning_rate(p), 3e-4);
  s.step = 500;
  EXPECT_NEAR(s.learning_rate(p), std::sqrt(3e-4 * 3e-5), 1e-15);
  s.step = 1000;
  EXPECT_NEAR(s.learning_rate(p), 3e-5, 1e-18);
  s.step = 5000;
  EXPECT_NEAR(s.learning_rate(p), 3e-5, 1e-18);
}

TEST(Adam, ProjectionClampsSigmaAndIntensity) {
  GaussianCloud c;
  c.push_back({1, 1, 1}, 0.3, 1e-5);
  c.push_back({1, 1, 1}, 50.9999, 0.5);
  OptimizerState s(2, 1000);
  AdamParams p;
  p.lr_initial = p.lr_final = 0.1;
  auto g = grad_of(2, 1.0);
  g.d_sigma[1] = -1.0;
  adam_step(c, g, s, p);
  EXPECT_EQ(c.sigma[0], 0.3);
  EXPECT_EQ(c.intensity[0], 0.0);
  EXPECT_EQ(c.sigma[1], 51.0);
  EXPECT_TRUE(s.finite());
}

TEST(Adam, MinimisesAQuadratic) {
  auto c = one(0.0, 1.0, 0.9);
  OptimizerState s(1, 4000);
  AdamParams p;
  p.lr_initial = 1e-2;
  p.lr_final = 1e-4;
  for (int t = 0; t < 4000; ++t) {
    auto g = grad_of(1, 0.0);
    g.d_intensity[0] = 2.0 * (c.intensity[0] - 0.25);
    adam_step(c, g, s, p);
  }
  EXPECT_NEAR(c.intensity[0], 0.25, 1e-3);
}

TEST(Adam, RejectsLengthMismatch) {
  auto c = one(1, 1, 1);
  OptimizerState s(2);
  EXPECT_THROW(adam_step(c, grad_of(1, 0.1), s), ConfigError);
}

TEST(OptimizerState, RemapKeepsSurvivorsAndZeroesNewcomers) {
  OptimizerState s(3, 100);
  s.step = 17;
  for (std::size_t i = 0; i < 3; ++i) s.m_intensity[i] = double(i + 1);
  s.remap({2, std::nullopt, 0});
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.step, 17);
  EXPECT_EQ(s.m_intensity[0], 3.0);
  EXPECT_EQ(s.m_intensity[1], 0.0);
  EXPECT_EQ(s.m_intensity[2], 1.0);
}

TEST(Init, RandomCloudStaysInsideTheInterior) {
  const Dims3 d{40, 30, 20};
  const auto c = init_cloud_random(d, 2000, 5, BoxConfig::cube(9));
  ASSERT_EQ(c.size(), 2000u);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      EXPECT_GE(c.mu[i][a], 4.0);
      EXPECT_LE(c.mu[i][a], double(d[a]) - 5.0);
    }
    EXPECT_EQ(c.sigma[i], 1.5);
    EXPECT_EQ(c.intensity[i], 1e-3);
  }
  const auto again = init_cloud_random(d, 2000, 5, BoxConfig::cube(9));
  EXPECT_EQ(again.mu, c.mu);
  const auto flat = init_cloud_random({40, 30, 1}, 10, 5, BoxConfig::cube(9));
  for (const auto& m : flat.mu) EXPECT_EQ(m[2], 0.0);
  EXPECT_THROW(init_cloud_random(d, 0, 1), ConfigError);
}

TEST(Init, FbpCloudSamplesProportionallyToValue) {
  // Three positive voxel values in ratio 1:2:5 plus a negative voxel that must never be drawn.
  const Dims3 d{4, 1, 1};
  VolumeGrid<float> v(d);
  v[0] = 1.0f, v[1] = 2.0f, v[2] = 5.0f, v[3] = -3.0f;
  const std::size_t n = 40000;
  const auto c = init_cloud_fbp(v, n, 11, BoxConfig::cube(1));
  std::array<double, 4> count{};
  for (const auto& m : c.mu) {
    const auto x = std::size_t(std::floor(m[0]));
    ASSERT_LT(x, 4u);
    count[x] += 1;
    EXPECT_GE(m[0] - double(x), 0.0);
    EXPECT_EQ(m[1], 0.0);
  }
  EXPECT_EQ(count[3], 0.0);
  const std::array<double, 3> p{1.0 / 8, 2.0 / 8, 5.0 / 8};
  double chi2 = 0.0;
  for (std::size_t k = 0; k < 3; ++k) chi2 += std::pow(count[k] - double(n) * p[k], 2) / (double(n) * p[k]);
  EXPECT_LT(chi2, 13.8);  // chi-square, 2 dof, p = 0.001
}

TEST(Init, FbpCloudMassApproximatesFbpMass) {
  const Dims3 d{48, 48, 1};
  const auto truth = shepp_logan(PhantomKind::SheppLogan2D, d);
  const auto box = BoxConfig::cube(9).fitted_to(d);
  const auto c = init_cloud_fbp(truth, 20000, 2, box);
  const auto rendered = reconstruct<double>(c, box, d);
  double a = 0.0, b = 0.0;
  for (std::int64_t i = 0; i < d.size(); ++i) a += rendered[i], b += std::max(0.0f, truth[i]);
  EXPECT_NEAR(a / b, 1.0, 0.03);
  for (double s : c.sigma) EXPECT_EQ(s, 1.5);
}

TEST(Resolved, FitsBoxAndDerivesDefaults) {
  ReconstructionConfig c;
  c.dims = {256, 256, 1};
  const auto r = resolved(c);
  EXPECT_EQ(r.box, (BoxConfig{17, 17, 1}));
  EXPECT_EQ(r.adam.sigma_max, 51.0);
  EXPECT_EQ(r.adam.frame_scale, 128.0);
  EXPECT_NEAR(r.densify.theta, 0.005 * std::sqrt(2.0 * 256 * 256 + 1), 1e-12);
  c.dims = {8, 8, 8};
  EXPECT_THROW(resolved(c), ConfigError);
}

TEST(Reconstruction, ZeroBudgetReturnsTheInitialisation) {
  const SmallProblem prob;
  auto cfg = prob.config(0);
  cfg.deterministic = true;
  const auto r = run_reconstruction(prob.measured, prob.geom, cfg);
  EXPECT_EQ(r.iterations_run, 0);
  EXPECT_TRUE(r.trace.empty());
  const auto expect = reconstruct<float>(r.cloud, BoxConfig::cube(9).fitted_to(prob.dims), prob.dims,
                                         {ScatterMode::Deterministic, false});
  EXPECT_TRUE(r.volume == expect);
  const auto init = init_cloud_fbp(fbp(prob.measured, prob.geom, prob.dims), 800, 3,
                                   BoxConfig::cube(9).fitted_to(prob.dims));
  EXPECT_EQ(r.cloud.mu, init.mu);
  EXPECT_EQ(r.cloud.intensity, init.intensity);
}

TEST(Reconstruction, LossDecreasesAndInvariantsHold) {
  const SmallProblem prob;
  auto cfg = prob.config(150);
  cfg.adam.lr_initial = 3e-3;
  cfg.adam.lr_final = 3e-4;
  cfg.densify.interval = 50;
  bool ok = true;
  cfg.on_checkpoint = [&](std::int64_t next, const GaussianCloud& c, const OptimizerState& s) {
    ok = ok && s.size() == c.size() && s.finite();
    // Split children may sit below the clamp until the next Adam step.
    if (next % cfg.densify.interval == 0) return;
    for (std::size_t i = 0; i < c.size(); ++i)
      ok = ok && c.sigma[i] >= 0.3 && c.sigma[i] <= 27.0 && c.intensity[i] >= 0.0;
  };
  const auto r = run_reconstruction(prob.measured, prob.geom, cfg, &prob.truth);
  EXPECT_TRUE(ok);
  ASSERT_EQ(r.trace.size(), 150u);
  auto window = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t k = from; k < from + 10; ++k) s += r.trace[k].loss;
    return s / 10.0;
  };
  EXPECT_LT(window(140), 0.7 * window(0));
  EXPECT_GT(r.trace.back().psnr, r.trace.front().psnr);
  EXPECT_EQ(r.state.size(), r.cloud.size());
  bool densified = false;
  for (const auto& row : r.trace) densified = densified || row.densify.has_value();
  EXPECT_TRUE(densified);
}

TEST(Reconstruction, DeterministicModeIsReproducible) {
  const SmallProblem prob;
  auto cfg = prob.config(30);
  cfg.deterministic = true;
  const auto a = run_reconstruction(prob.measured, prob.geom, cfg);
  const auto b = run_reconstruction(prob.measured, prob.geom, cfg);
  EXPECT_TRUE(a.volume == b.volume);
  EXPECT_EQ(a.cloud.mu, b.cloud.mu);
}

TEST(Reconstruction, ResumeReproducesAnUninterruptedRun) {
  const SmallProblem prob;
  auto cfg = prob.config(40);
  cfg.deterministic = true;
  cfg.densify.interval = 20;  // the split point coincides with a densify event
  const auto full = run_reconstruction(prob.measured, prob.geom, cfg);

  std::optional<GaussianCloud> mid_cloud;
  std::optional<OptimizerState> mid_state;
  auto first = cfg;
  first.on_checkpoint = [&](std::int64_t next, const GaussianCloud& c, const OptimizerState& s) {
    if (next == 20) mid_cloud = c, mid_state = s;
  };
  run_reconstruction(prob.measured, prob.geom, first);
  ASSERT_TRUE(mid_cloud && mid_state);

  auto second = cfg;
  second.init = InitMode::Cloud;
  second.initial_cloud = mid_cloud;
  second.initial_state = mid_state;
  second.start_iteration = 20;
  const auto resumed = run_reconstruction(prob.measured, prob.geom, second);
  ASSERT_EQ(resumed.volume.size(), full.volume.size());
  double worst = 0.0, vmax = 0.0;
  for (std::int64_t i = 0; i < full.volume.size(); ++i) {
    worst = std::max(worst, double(std::abs(resumed.volume[i] - full.volume[i])));
    vmax = std::max(vmax, double(std::abs(full.volume[i])));
  }
  EXPECT_LE(worst, 1e-6 * vmax);
}

TEST(Reconstruction, ValidationStopRuleTerminates) {
  const SmallProblem prob;
  auto cfg = prob.config(2000);
  cfg.stop = StopRule::Validation;
  cfg.densify_enabled = false;
  cfg.adam.lr_initial = 3e-3;
  cfg.adam.lr_final = 1e-5;
  cfg.validation_interval = 5;
  cfg.patience = 3;
  cfg.validation_tolerance = 1e-2;
  const auto r = run_reconstruction(prob.measured, prob.geom, cfg);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(r.iterations_run, 2000);
  EXPECT_TRUE(std::isfinite(r.trace.front().validation_loss));
}

TEST(Reconstruction, NonFiniteLossAbortsWithTheOffendingCloud) {
  const SmallProblem prob;
  auto bad = prob.measured;
  bad.data()[5] = std::numeric_limits<float>::quiet_NaN();
  auto cfg = prob.config(5);
  cfg.init = InitMode::Random;
  try {
    run_reconstruction(bad, prob.geom, cfg);
    FAIL() << "expected NumericFailure";
  } catch (const NumericFailure& e) {
    EXPECT_EQ(e.iteration(), 0);
    EXPECT_EQ(e.cloud().size(), 800u);
  }
}

TEST(Reconstruction, RejectsInconsistentInputs) {
  const SmallProblem prob;
  auto cfg = prob.config(1);
  const Volume wrong(Dims3{32, 30, 1});
  EXPECT_THROW(run_reconstruction(prob.measured, prob.geom, cfg, &wrong), ConfigError);
  cfg.dims = {32, 32, 2};
  EXPECT_THROW(run_reconstruction(prob.measured, prob.geom, cfg), ConfigError);
  cfg = prob.config(1);
  cfg.densify.n_max = 10;
  EXPECT_THROW(run_reconstruction(prob.measured, prob.geom, cfg), ConfigError);
  cfg = prob.config(-1);
  EXPECT_THROW(run_reconstruction(prob.measured, prob.geom, cfg), ConfigError);
}

TEST(CompositeGradient, MatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto e = checks::composite_gradient_errors(seed);
    EXPECT_LE(e.mu, 1e-3) << seed;
    EXPECT_LE(e.sigma, 1e-3) << seed;
    EXPECT_LE(e.intensity, 1e-3) << seed;
  }
}
