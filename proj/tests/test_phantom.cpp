#include <gtest/gtest.h>

#include "gensart/phantom.hpp"

using namespace gensart;

TEST(Phantom, ZeroCountIsEmpty) {
  VolumeGrid grid({64, 64}, 1.0);
  PhantomSpec s;
  s.count = 0;
  for (double v : make_phantom(s, grid, Domain::ball(32)).values) EXPECT_EQ(v, 0.0);
}

TEST(Phantom, Deterministic) {
  VolumeGrid grid({64, 64}, 1.0);
  PhantomSpec s;
  s.seed = 42;
  EXPECT_EQ(make_phantom(s, grid, Domain::ball(32)).values, make_phantom(s, grid, Domain::ball(32)).values);
  s.seed = 43;
  VolumeGrid other = make_phantom(s, grid, Domain::ball(32));
  s.seed = 42;
  EXPECT_NE(other.values, make_phantom(s, grid, Domain::ball(32)).values);
}

TEST(Phantom, RandomEllipsesCoverage) {
  VolumeGrid grid({256, 256}, 2.0);
  Domain dom = Domain::ball(256);
  PhantomSpec s;
  s.count = 10;
  s.seed = 1;
  VolumeGrid f = make_phantom(s, grid, dom);
  auto mask = domain_mask(dom, grid);
  double nz = 0.0, inside = 0.0;
  for (size_t i = 0; i < f.size(); ++i) {
    if (!mask[i]) {
      EXPECT_EQ(f.values[i], 0.0);
      continue;
    }
    inside += 1;
    nz += f.values[i] != 0.0;
    EXPECT_GE(f.values[i], s.value_min);
    EXPECT_LE(f.values[i], s.value_max);
  }
  const double frac = nz / inside;
  EXPECT_GE(frac, 0.05);
  EXPECT_LE(frac, 0.60);
  EXPECT_NEAR(frac, 0.348, 0.005);  // frozen
}

TEST(Phantom, SheppLoganRange) {
  VolumeGrid grid({128, 128}, 1.0);
  PhantomSpec s;
  s.kind = PhantomSpec::Kind::SheppLogan;
  s.value_max = 0.02;
  VolumeGrid f = make_phantom(s, grid, Domain::ball(64));
  double mx = 0.0;
  for (double v : f.values) {
    EXPECT_GE(v, 0.0);
    mx = std::max(mx, v);
  }
  EXPECT_NEAR(mx, 0.02, 1e-12);
}

TEST(Phantom, BallsNeed3d) {
  VolumeGrid grid({32, 32}, 1.0);
  PhantomSpec s;
  s.kind = PhantomSpec::Kind::Balls3d;
  EXPECT_THROW(make_phantom(s, grid, Domain::ball(16)), ConfigError);
}

namespace {

struct Sim {
  VolumeGrid f{{64, 64}, 1.0};
  Domain dom = Domain::ball(32);
  std::vector<Geometry> views;

  Sim() {
    PhantomSpec s;
    s.seed = 3;
    f = make_phantom(s, f, dom);
    for (double th : uniform_angles(30)) views.push_back(parallel_2d(th, 70, 1.0));
  }
};

}  // namespace

TEST(Simulate, NoiselessIdentityIsSupersampledProjection) {
  Sim s;
  auto sino = simulate_data(s.f, s.dom, s.views, {}, {});
  Projector P2(s.f, s.dom, 2);
  for (size_t j = 0; j < s.views.size(); ++j) EXPECT_EQ(sino[j], P2.project(s.views[j], s.f.values));
  EXPECT_THROW(simulate_data(s.f, s.dom, s.views, {}, {}, 1), ConfigError);
}

TEST(Simulate, GaussianRelativeLevel) {
  Sim s;
  auto clean = simulate_data(s.f, s.dom, s.views, {}, {});
  NoiseSpec ns;
  ns.gaussian_rel = 0.02;
  auto noisy = simulate_data(s.f, s.dom, s.views, {}, ns);
  double e = 0.0, g = 0.0;
  for (size_t j = 0; j < clean.size(); ++j) {
    e += std::pow(diff_norm2(noisy[j], clean[j]), 2);
    g += std::pow(norm2(clean[j]), 2);
  }
  const double ratio = std::sqrt(e / g);
  EXPECT_GE(ratio, 0.019);
  EXPECT_LE(ratio, 0.021);
}

TEST(Simulate, DeadPixelsAreConstantStripes) {
  Sim s;
  NoiseSpec ns;
  ns.dead_pixel_frac = 0.02;
  ns.dead_value = -1.0;
  auto sino = simulate_data(s.f, s.dom, s.views, {}, ns);
  const size_t m = s.views[0].pixels();
  size_t dead = 0;
  for (size_t i = 0; i < m; ++i) {
    bool all = true;
    for (const auto& p : sino) all = all && p[i] == -1.0;
    dead += all;
  }
  EXPECT_EQ(dead, static_cast<size_t>(std::floor(0.02 * m)));
  EXPECT_EQ(dead_pixels(500, 0.02, 9).size(), 10u);
}

TEST(Simulate, PoissonResamplingPreservesMean) {
  std::vector<Vec> sino(400, Vec{5.0, 40.0});
  NoiseSpec ns;
  ns.poisson_exposure = 2.0;
  ns.seed = 11;
  add_noise(sino, ns);
  for (int i = 0; i < 2; ++i) {
    const double mean_true = i == 0 ? 5.0 : 40.0;
    double m = 0.0;
    for (const auto& p : sino) m += p[i];
    m /= sino.size();
    // std of the sample mean of Poisson(t g)/t: sqrt(g/t/n)
    EXPECT_LE(std::abs(m - mean_true), 3 * std::sqrt(mean_true / 2.0 / sino.size()));
  }
}

TEST(Simulate, BeerLambertFormation) {
  Sim s;
  FormationSpec form;
  form.kind = FormationSpec::Kind::BeerLambert;
  form.intensity = 100.0;
  auto lin = simulate_data(s.f, s.dom, s.views, {}, {});
  auto bl = simulate_data(s.f, s.dom, s.views, form, {});
  for (size_t i = 0; i < bl[0].size(); ++i) EXPECT_NEAR(bl[0][i], 100.0 * std::exp(-lin[0][i]), 1e-10);
}
