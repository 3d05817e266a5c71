#include <random>

#include <Eigen/QR>
#include <gtest/gtest.h>

#include "gensart/gensart.hpp"

using namespace gensart;

namespace {

struct Bench {
  VolumeGrid grid;
  Projector P;
  Geometry g;
  Vec truth;

  explicit Bench(Geometry geom, int n = 32)
      : grid({n, n}, 1.0 / n), P(grid, Domain::ball(0.5)), g(std::move(geom)), truth(grid.size()) {
    for (size_t i = 0; i < truth.size(); ++i) {
      Point x = grid.center(i);
      truth[i] = (x.head<2>().norm() < 0.3 ? 1.0 : 0.0) + 0.5 * (std::abs(x[0] - 0.1) < 0.08);
    }
    apply_mask(truth, P.mask());
  }

  View view(Vec data, FidelitySpec::Kind kind = FidelitySpec::Kind::L2) const {
    FidelitySpec s;
    s.kind = kind;
    s.data = std::move(data);
    return make_view(P, g, s);
  }
};

Geometry par(int n = 32) { return parallel_2d(0.35, n + 4, 1.0 / n); }
Geometry fan(int n = 32) { return fan_2d(0.35, 1.5, 2 * n, 2 * std::asin(0.5 / 1.5) * 1.02 / (2 * n)); }

Vec random_vec(size_t n, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(lo, hi);
  Vec v(n);
  for (double& x : v) x = U(rng);
  return v;
}

double max_diff(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(GenSart, ConsistentDataKeepsReference) {
  for (const Geometry& geom : {par(), fan()}) {
    Bench s(geom);
    View v = s.view(s.P.project(s.g, s.truth));
    Vec ones(s.grid.size(), 1.0);
    EXPECT_LE(max_diff(gensart_l2(s.P, v, s.truth, 2.0).f, s.truth), 1e-12);
    EXPECT_LE(max_diff(gensart_weighted_projector(s.P, v, s.truth, ones, 2.0).f, s.truth), 1e-12);
    EXPECT_LE(max_diff(gensart_weighted_l2(s.P, v, s.truth, ones, 2.0).f, s.truth), 1e-12);
    EXPECT_LE(max_diff(gensart_w12(s.P, v, s.truth, 2.0, 0.5).f, s.truth), 1e-12);
    if (geom.parallel()) {
      EXPECT_LE(max_diff(gensart_lq(s.P, v, s.truth, 2.0, 1.5).f, s.truth), 1e-12);
    }
  }
}

TEST(GenSart, SmallAlphaIsSart) {
  Bench s(par());
  View v = s.view(s.P.project(s.g, s.truth));
  Vec f0(s.grid.size(), 0.0);
  Vec f = gensart_l2(s.P, v, f0, 1e-8).f;
  // SART form: f0 + P*((g − P f0) / ũ) on the support
  Vec q(s.g.pixels(), 0.0);
  for (size_t i = 0; i < q.size(); ++i)
    if (v.unit.support[i]) q[i] = v.fidelity.data[i] / v.unit.u_tilde[i];
  Vec sart = s.P.adjoint(s.g, q);
  EXPECT_LE(max_diff(f, sart), 1e-6 * (1 + max_diff(sart, f0)));
}

TEST(GenSart, UnitWeightsReduceToL2) {
  for (const Geometry& geom : {par(), fan()}) {
    Bench s(geom);
    FidelitySpec fid;
    fid.data = random_vec(s.g.pixels(), 3);
    // the weighted forms project the weight, so compare against projected ũ
    View v = make_view(s.P, s.g, fid, UnitMethod::Projected);
    Vec f_ref = random_vec(s.grid.size(), 4), ones(s.grid.size(), 1.0);
    apply_mask(f_ref, s.P.mask());
    Vec l2 = gensart_l2(s.P, v, f_ref, 0.7).f;
    EXPECT_LE(max_diff(gensart_weighted_projector(s.P, v, f_ref, ones, 0.7).f, l2), 1e-9);
    EXPECT_LE(max_diff(gensart_weighted_l2(s.P, v, f_ref, ones, 0.7).f, l2), 1e-9);
  }
}

TEST(GenSart, W12WithoutGradientTermIsL2ForParallel) {
  Bench s(par());
  View v = s.view(random_vec(s.g.pixels(), 7));
  Vec f_ref(s.grid.size(), 0.1);
  apply_mask(f_ref, s.P.mask());
  EXPECT_LE(max_diff(gensart_w12(s.P, v, f_ref, 1.3, 0.0).f, gensart_l2(s.P, v, f_ref, 1.3).f), 1e-10);
}

TEST(GenSart, LqWithQ2IsL2) {
  Bench s(par());
  for (auto kind : {FidelitySpec::Kind::L2, FidelitySpec::Kind::Huber}) {
    View v = s.view(random_vec(s.g.pixels(), 8), kind);
    Vec f_ref(s.grid.size(), 0.0);
    EXPECT_LE(max_diff(gensart_lq(s.P, v, f_ref, 0.9, 2.0).f, gensart_l2(s.P, v, f_ref, 0.9).f), 1e-10);
  }
}

TEST(GenSart, LqRejectsBadInputs) {
  Bench sp(par()), sf(fan());
  View vp = sp.view(Vec(sp.g.pixels(), 0.0)), vf = sf.view(Vec(sf.g.pixels(), 0.0));
  Vec f(sp.grid.size(), 0.0);
  EXPECT_THROW(gensart_lq(sp.P, vp, f, 1.0, 0.5), ConfigError);
  EXPECT_THROW(gensart_lq(sf.P, vf, f, 1.0, 1.5), ConfigError);
}

TEST(GenSart, WeightedProjectorIsNearlyOptimal) {
  // J(f) = ‖P(λf) − g‖² + α‖f − f_ref‖²; its minimiser lies in f_ref + λ·Range(P*). The closed form
  // relies on P(λ² w P* q) = P(λ² w) q, which holds only up to discretization, so compare the
  // achieved decrease with the exact discrete minimum over that subspace.
  double prev = 1.0;
  for (int n : {16, 32}) {
    Bench s(par(n), n);
    Vec lambda = random_vec(s.grid.size(), 10, 0.5, 2.0);
    View v = s.view(random_vec(s.g.pixels(), 11, 0.0, 1.0));
    Vec f_ref = random_vec(s.grid.size(), 12);
    apply_mask(f_ref, s.P.mask());
    const double alpha = 0.3;
    const size_t m = s.g.pixels();
    // residual r(f) with J = ‖r‖²
    auto residual = [&](const Vec& f) {
      Vec lf(f.size());
      for (size_t i = 0; i < f.size(); ++i) lf[i] = lambda[i] * f[i];
      Vec p = s.P.project(s.g, lf);
      Eigen::VectorXd r(m + f.size());
      for (size_t i = 0; i < m; ++i)
        r(i) = v.unit.support[i] ? std::sqrt(s.g.pitch_u) * (p[i] - v.fidelity.data[i]) : 0.0;
      for (size_t i = 0; i < f.size(); ++i) r(m + i) = std::sqrt(alpha * s.grid.cell_volume()) * (f[i] - f_ref[i]);
      return r;
    };
    Eigen::VectorXd r0 = residual(f_ref);
    Eigen::MatrixXd A(r0.size(), m);
    for (size_t k = 0; k < m; ++k) {
      Vec e(m, 0.0);
      e[k] = 1.0;
      Vec d = s.P.adjoint(s.g, e), fk = f_ref;
      for (size_t i = 0; i < fk.size(); ++i) fk[i] += lambda[i] * d[i];
      A.col(k) = residual(fk) - r0;
    }
    Eigen::VectorXd c = A.colPivHouseholderQr().solve(-r0);
    const double j_min = (r0 + A * c).squaredNorm(), j_ref = r0.squaredNorm();
    const double j = residual(gensart_weighted_projector(s.P, v, f_ref, lambda, alpha).f).squaredNorm();
    EXPECT_GE(j, j_min * (1 - 1e-12));
    // measured 0.031 (n=16), 0.026 (n=32) with a voxel-wise random λ
    const double excess = (j - j_min) / (j_ref - j_min);
    EXPECT_LE(excess, 0.05) << "n=" << n;
    EXPECT_LT(excess, prev);
    prev = excess;
  }
}

TEST(GenSart, StepDispatchMatchesDirectCall) {
  Bench s(par());
  View v = s.view(random_vec(s.g.pixels(), 13));
  Vec f_ref(s.grid.size(), 0.0);
  PenaltySpec pen;
  pen.family = PenaltySpec::Family::Lq;
  pen.q = 1.5;
  EXPECT_EQ(gensart_step(s.P, v, f_ref, pen, 0.4).f, gensart_lq(s.P, v, f_ref, 0.4, 1.5).f);
}

TEST(GenSart, RobustFidelityShrinksOutlierInfluence) {
  // One corrupted pixel; α = 1 keeps τ small so Huber sits on its linear branch there.
  Bench s(par());
  Vec g = s.P.project(s.g, s.truth);
  size_t bad = g.size() / 2;
  g[bad] += 50.0;
  Vec f0 = s.truth;
  double d_l2 = diff_norm2(gensart_l2(s.P, s.view(g), f0, 1.0).f, f0);
  FidelitySpec h;
  h.kind = FidelitySpec::Kind::Huber;
  h.data = g;
  h.nu = 0.1;
  double d_h = diff_norm2(gensart_l2(s.P, make_view(s.P, s.g, h), f0, 1.0).f, f0);
  h.kind = FidelitySpec::Kind::StudentT;
  double d_t = diff_norm2(gensart_l2(s.P, make_view(s.P, s.g, h), f0, 1.0).f, f0);
  EXPECT_LT(d_h, 0.1 * d_l2);
  EXPECT_LT(d_t, d_h);
}
