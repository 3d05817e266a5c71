// One PASS/FAIL line per acceptance criterion; tolerances and time limits are pinned below.
#include <chrono>
#include <cstdio>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "gensart/baselines.hpp"
#include "gensart/io.hpp"
#include "gensart/oracles.hpp"
#include "gensart/phantom.hpp"
#include "gensart/polyct.hpp"
#include "gensart/xpct.hpp"

using namespace gensart;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void report(int id, const char* name, bool ok, double secs, double limit, const std::string& detail) {
  const bool pass = ok && secs < limit;
  failures += !pass;
  std::printf("%s  %d  %-22s %6.1fs (limit %gs)  %s\n", pass ? "PASS" : "FAIL", id, name, secs, limit, detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

double masked_psnr(const Vec& a, const Vec& truth, const std::vector<std::uint8_t>& mask) {
  return io::compare(a, truth, mask).psnr;
}

// ---------------------------------------------------------------------------------------------

void pp_star() {
  auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (bool fan : {false, true}) {
    double prev = INFINITY, at256 = 0.0;
    detail += fan ? " fan:" : "parallel:";
    for (int N : {128, 256, 512}) {
      const double h = 1.0 / N;
      VolumeGrid grid({N, N}, h);
      Projector P(grid, Domain::ball(0.45));
      Geometry g = fan ? fan_2d(0.3, 1.5, 2 * N, 2 * std::asin(0.5 / 1.5) / (1.5 * N)) : parallel_2d(0.3, N + 4, h);
      auto up = unit_projections(P, g);
      // smooth, oscillating probe on the projection support
      Vec p(g.pixels());
      for (size_t i = 0; i < p.size(); ++i) {
        const double s = g.coord_u(i) / (fan ? 0.35 : 0.45);
        p[i] = up.support[i] ? 1 + 0.5 * std::sin(13 * s + 0.4) + 0.3 * std::cos(29 * s + 1.0) + 0.2 * std::sin(41 * s) : 0.0;
      }
      Vec q = P.project(g, P.adjoint(g, p)), r(p.size());
      for (size_t i = 0; i < p.size(); ++i) r[i] = up.u_tilde[i] * p[i];
      const double err = diff_norm2(q, r) / norm2(r);
      ok = ok && err < prev;
      prev = err;
      if (N == 256) at256 = err;
      detail += fmt(" %.4f", err);
    }
    ok = ok && at256 <= 0.05;
  }
  report(1, "pp*-identity", ok, seconds_since(t0), 30, detail + "  (N=128,256,512; need <=0.05 at 256, decreasing)");
}

void prox_oracle() {
  auto t0 = Clock::now();
  bool ok = true;
  double wx = 0.0, wo = 0.0;
  for (auto kind : all_fidelity_kinds) {
    auto r = prox_oracle_suite(kind, 1000, 2024);
    ok = ok && r.max_x_err <= 1e-5 && r.max_obj_err <= 1e-8;
    wx = std::max(wx, r.max_x_err);
    wo = std::max(wo, r.max_obj_err);
  }
  report(2, "prox-oracle", ok, seconds_since(t0), 10,
         fmt("6 kinds x 1000 cases: max |x - x_grid| %.2e (<=1e-5), max objective excess %.2e (<=1e-8)", wx, wo));
}

void cycle_oracle() {
  auto t0 = Clock::now();
  double worst = 0.0;
  for (int s = 0; s < 50; ++s)
    worst = std::max(worst, symmetric_cycle_oracle(random_block_system(2024 + 1000 + s, 5 + s % 26)).discrepancy);
  report(3, "symmetric-cycle-oracle", worst <= 1e-8, seconds_since(t0), 10,
         fmt("50 systems, n in [5,30]: max rel. gap %.2e (<=1e-8)", worst));
}

// ---------------------------------------------------------------------------------------------

void robust_experiment() {
  auto t0 = Clock::now();
  const int N = 256, n_angles = 180;
  const double h = 2.0, alpha_tik = 300, alpha = 2 * alpha_tik;
  VolumeGrid grid({N, N}, h);
  Domain dom = Domain::ball(N * h / 2);
  PhantomSpec ps;
  ps.count = 10;
  ps.seed = 1;
  VolumeGrid truth = make_phantom(ps, grid, dom);
  std::vector<Geometry> views;
  for (double th : uniform_angles(n_angles)) views.push_back(parallel_2d(th, N, h));
  NoiseSpec ns;
  ns.gaussian_rel = 0.02;
  ns.dead_pixel_frac = 0.02;
  ns.seed = 7;
  auto sino = simulate_data(truth, dom, views, {}, ns);
  Vec all;
  for (const auto& p : sino) all.insert(all.end(), p.begin(), p.end());
  const double nu = default_nu(all);

  Projector P(grid, dom);
  const auto& mask = P.mask();
  const double fbp = masked_psnr(fbp_reconstruct(P, views, sino), truth.values, mask);

  double psnr[3];
  long proj[3], adj[3];
  const FidelitySpec::Kind kinds[] = {FidelitySpec::Kind::L2, FidelitySpec::Kind::Huber, FidelitySpec::Kind::StudentT};
  for (int k = 0; k < 3; ++k) {
    std::vector<View> vs;
    for (size_t j = 0; j < views.size(); ++j) {
      FidelitySpec fs;
      fs.kind = kinds[k];
      fs.nu = nu;
      fs.data = sino[j];
      vs.push_back(make_view(P, views[j], fs));
    }
    IterationPlan plan;
    plan.symmetric = true;
    plan.cycles = 1;
    plan.alpha = alpha;
    PenaltySpec pen;
    pen.alpha = alpha;
    P.reset_counters();
    auto r = run(plan, vs.size(), Vec(grid.size(), 0.0), GenSartStepper{P, vs, pen});
    proj[k] = P.project_calls();
    adj[k] = P.adjoint_calls();
    psnr[k] = masked_psnr(r.f, truth.values, mask);
  }
  P.reset_counters();
  auto pd = tikhonov_huber_pd(P, views, sino, alpha_tik, nu);
  const long pd_proj = P.project_calls(), pd_adj = P.adjoint_calls();
  const double pd_psnr = masked_psnr(pd.f, truth.values, mask);
  const double secs = seconds_since(t0);

  const double l2 = psnr[0], hub = psnr[1], st = psnr[2];
  const bool order = st - hub >= 0.5 && hub - l2 >= 0.5 && l2 - fbp >= 0.5;
  const bool band = std::abs(hub - pd_psnr) <= 1.0;
  report(4, "robust-experiment", order && band, secs, 300,
         fmt("PSNR dB: student_t %.2f > huber %.2f > l2 %.2f > fbp %.2f (gaps >=0.5); huber_pd %.2f (|diff| %.2f <=1)", st,
             hub, l2, fbp, pd_psnr, std::abs(hub - pd_psnr)));

  bool counts = true;
  for (int k = 0; k < 3; ++k) counts = counts && proj[k] == 2 * n_angles && adj[k] == 2 * n_angles;
  const bool ratio = pd_proj >= 10 * 2 * n_angles && pd_adj >= 10 * 2 * n_angles;
  report(5, "call-counts", counts && ratio, secs, 300,
         fmt("symmetric cycle: %ld project / %ld adjoint (need %d each); huber_pd: %ld / %ld in %ld iterations (>=10x)",
             proj[1], adj[1], 2 * n_angles, pd_proj, pd_adj, pd.iterations));
}

// ---------------------------------------------------------------------------------------------

double gradient_energy(const VolumeGrid& g, const Vec& f) {
  const int nx = g.nx(), ny = g.ny(), nz = g.nz();
  double e = 0.0;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        const size_t i = (static_cast<size_t>(z) * ny + y) * nx + x;
        if (x + 1 < nx) e += std::pow(f[i + 1] - f[i], 2);
        if (y + 1 < ny) e += std::pow(f[i + nx] - f[i], 2);
        if (z + 1 < nz) e += std::pow(f[i + static_cast<size_t>(nx) * ny] - f[i], 2);
      }
  return e;
}

double xpct_cg_vs_dense() {
  VolumeGrid grid({16, 16}, 1.0);
  Projector P(grid, Domain::ball(8));
  Geometry g = parallel_2d(0.4, 20, 1.0);
  auto up = unit_projections(P, g);
  Vec f(grid.size());
  for (size_t i = 0; i < f.size(); ++i) f[i] = 0.02 * (grid.center(i).head<2>().norm() < 5);
  apply_mask(f, P.mask());
  XpctModel F(g.n_u, 1, 0.05);
  Vec p0 = P.project(g, f);
  Vec data = F.forward(P.project(g, Vec(f.size(), 0.03)));
  NewtonOptions opt;
  opt.alpha = 0.2;
  opt.gamma = 0.7;
  opt.cg_rtol = 1e-14;
  opt.cg_max_iter = 1000;
  auto T = F.linearize(p0);
  Vec r = data;
  axpy(-1.0, F.forward(p0), r);
  Vec dp = newton_projection_solve(g, up, *T, r, opt);

  const int m = static_cast<int>(up.size());
  ProjectionPenalty pen(g, up, opt.alpha, opt.gamma);
  Eigen::MatrixXd Tm(m, m), Pm(m, m);
  for (int k = 0; k < m; ++k) {
    Vec e(m, 0.0);
    e[k] = 1.0;
    Vec c = T->apply(e), pc = pen.apply(e);
    for (int i = 0; i < m; ++i) {
      Tm(i, k) = c[i];
      Pm(i, k) = pc[i];
    }
  }
  Eigen::VectorXd su(m), a(m), rv(m);
  for (int i = 0; i < m; ++i) {
    su(i) = up.support[i] ? std::sqrt(up.u[i]) : 0.0;
    a(i) = pen.measure[i];
    rv(i) = r[i];
  }
  Eigen::MatrixXd M = su.asDiagonal() * Tm.transpose() * a.asDiagonal() * Tm * su.asDiagonal() + Pm;
  Eigen::VectorXd b = su.asDiagonal() * (Tm.transpose() * (a.asDiagonal() * rv));
  for (int i = 0; i < m; ++i)
    if (!up.support[i]) {
      M.row(i).setZero();
      M.col(i).setZero();
      M(i, i) = 1.0;
      b(i) = 0.0;
    }
  Eigen::VectorXd x = M.ldlt().solve(b);
  double err = 0.0;
  for (int i = 0; i < m; ++i) err = std::max(err, std::abs(x(i) - dp[i]));
  return err / x.lpNorm<Eigen::Infinity>();
}

void xpct() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> Nd(0, 1);

  // unitarity of the propagator
  FresnelPropagator D(64, 64, 0.01);
  CVec psi(D.size());
  for (auto& z : psi) z = {Nd(rng), Nd(rng)};
  auto cnorm = [](const CVec& v) {
    double s = 0.0;
    for (auto z : v) s += std::norm(z);
    return std::sqrt(s);
  };
  const double unit = std::abs(cnorm(D(psi)) / cnorm(psi) - 1.0);

  // F' against central differences
  XpctModel F(64, 64, 0.01);
  Vec p(F.pixels()), hdir(F.pixels());
  for (int v = 0; v < 64; ++v)
    for (int u = 0; u < 64; ++u) {
      p[v * 64 + u] = 0.6 * std::sin(0.2 * u + 0.3) * std::cos(0.15 * v);
      hdir[v * 64 + u] = std::cos(0.31 * u - 0.1 * v);
    }
  const double eps = 1e-6;
  Vec pp = p, pm = p;
  axpy(eps, hdir, pp);
  axpy(-eps, hdir, pm);
  Vec fd = F.forward(pp);
  axpy(-1.0, F.forward(pm), fd);
  for (double& v : fd) v /= 2 * eps;
  Vec an = F.linearize(p)->apply(hdir);
  const double fd_err = diff_norm2(fd, an) / norm2(an);

  const double cg_err = xpct_cg_vs_dense();

  // one cycle on a synthetic 64³ / 30-view data set, γ = 0 and γ = 0.8
  const int n = 64, n_views = 30;
  const double fresnel = 0.01, alpha = 125;
  VolumeGrid grid({n, n, n}, 1.0);
  Domain dom = Domain::cylinder(n / 2.0, n / 2.0);
  PhantomSpec ps;
  ps.kind = PhantomSpec::Kind::Balls3d;
  ps.count = 8;
  ps.seed = 3;
  ps.value_min = 0.01;
  ps.value_max = 0.02;
  VolumeGrid truth = make_phantom(ps, grid, dom);
  std::vector<Geometry> views;
  for (double th : uniform_angles(n_views)) views.push_back(parallel_3d(th, n, n, 1.0));
  FormationSpec form;
  form.kind = FormationSpec::Kind::Xpct;
  form.fresnel = fresnel;
  NoiseSpec ns;
  ns.poisson_exposure = 1000;
  auto sino = simulate_data(truth, dom, views, form, ns);
  Projector P(grid, dom);
  XpctModel model(n, n, fresnel);
  std::vector<UnitProjections> ups;
  for (const auto& g : views) ups.push_back(unit_projections(P, g));
  double r0 = 0.0;
  for (const auto& s : sino) r0 += dot(s, s);
  r0 = std::sqrt(r0);
  double ratio[2], energy[2];
  for (int k = 0; k < 2; ++k) {
    NewtonOptions o;
    o.alpha = alpha;
    o.gamma = k == 0 ? 0.0 : 0.8;
    IterationPlan plan;
    plan.alpha = alpha;
    auto r = run(plan, views.size(), Vec(grid.size(), 0.0), NewtonStepper{P, views, ups, model, sino, o});
    double r1 = 0.0;
    for (size_t j = 0; j < views.size(); ++j) {
      Vec res = sino[j];
      axpy(-1.0, model.forward(P.project(views[j], r.f)), res);
      r1 += dot(res, res);
    }
    ratio[k] = r0 / std::sqrt(r1);
    energy[k] = gradient_energy(grid, r.f);
  }
  const bool ok = unit <= 1e-10 && fd_err <= 1e-5 && cg_err <= 1e-8 && ratio[0] >= 2 && ratio[1] >= 2 && energy[1] <= energy[0];
  report(6, "xpct", ok, seconds_since(t0), 600,
         fmt("unitarity %.1e (<=1e-10), F' fd %.1e (<=1e-5), cg vs dense %.1e (<=1e-8), residual reduction %.2f / %.2f "
             "(>=2), grad energy g=0.8 %.3f <= g=0 %.3f",
             unit, fd_err, cg_err, ratio[0], ratio[1], energy[1], energy[0]));
}

// ---------------------------------------------------------------------------------------------

void polyct() {
  auto t0 = Clock::now();
  const int n = 32;
  VolumeGrid grid({n, n}, 1.0 / n);
  Projector P(grid, Domain::ball(0.5));
  Vec f(grid.size()), h(grid.size());
  for (size_t i = 0; i < f.size(); ++i) {
    Point x = grid.center(i);
    f[i] = 0.3 * (x.head<2>().norm() < 0.35) + 0.1 * (std::abs(x[0]) < 0.1);
    h[i] = 1 + std::sin(5 * x[0] + 0.4) * std::cos(3 * x[1]);
  }
  apply_mask(f, P.mask());
  apply_mask(h, P.mask());
  auto view = [&](double th) { return parallel_2d(th, 3 * n / 2 + 2, 1.0 / n); };
  auto spec = SpectrumModel::flat();
  auto mat = MaterialDecomposition::water_bone();

  // derivative vs central differences (direction kept inside f >= 0)
  double fd_err = 0.0;
  Vec hf = h;
  for (size_t i = 0; i < hf.size(); ++i)
    if (f[i] == 0) hf[i] = 0;
  for (double th : {0.0, 0.4, 1.1}) {
    auto g = view(th);
    const double eps = 1e-6;
    Vec fp = f, fm = f;
    axpy(eps, hf, fp);
    axpy(-eps, hf, fm);
    Vec fd = polyct_forward(P, g, fp, spec, mat).G;
    axpy(-1.0, polyct_forward(P, g, fm, spec, mat).G, fd);
    for (double& v : fd) v /= 2 * eps;
    Vec an = polyct_derivative(P, g, f, hf, spec, mat);
    fd_err = std::max(fd_err, diff_norm2(fd, an) / norm2(an));
  }

  // pull-through identity: exact along grid axes, discretization-level otherwise
  auto pull = [&](double th) {
    auto g = view(th);
    Vec lam = polyct_lambda(P, g, f, spec, mat);
    for (size_t i = 0; i < lam.size(); ++i) lam[i] *= -h[i];
    Vec a = P.project(g, lam), d = polyct_derivative(P, g, f, h, spec, mat);
    return diff_norm2(a, d) / norm2(d);
  };
  const double pull_axis = pull(0.0), pull_oblique = pull(0.3);

  // monochromatic reduction to the weighted-projector linear step
  double mono_err = 0.0;
  {
    auto pmat = MaterialDecomposition::photo_only();
    auto mono = SpectrumModel::mono(70.0, 1.0);
    for (double th : {0.0, 0.6}) {
      auto g = view(th);
      auto up = unit_projections(P, g);
      Vec f_true = f;
      for (double& v : f_true) v *= 1.3;
      Vec data = polyct_forward(P, g, f_true, mono, pmat).G;
      PolyOptions opt;
      opt.alpha = 0.05;
      opt.nonnegative = false;
      opt.denominator = PolyOptions::Denominator::Direct;
      Vec poly = polyct_newton_step(P, g, up, data, f, mono, pmat, opt).f;
      Vec Gk = polyct_forward(P, g, f, mono, pmat).G;
      Vec lam = P.back_project(g, Gk);
      FidelitySpec fid;
      fid.data.resize(g.pixels());
      for (size_t i = 0; i < fid.data.size(); ++i) fid.data[i] = Gk[i] - data[i];
      View v = make_view(P, g, fid);
      Vec delta = gensart_weighted_projector(P, v, Vec(f.size(), 0.0), lam, opt.alpha).f;
      double err = 0.0, scale = 0.0;
      for (size_t i = 0; i < poly.size(); ++i) {
        err = std::max(err, std::abs(poly[i] - (f[i] + delta[i])));
        scale = std::max(scale, std::abs(delta[i]));
      }
      mono_err = std::max(mono_err, err / scale);
    }
  }

  // projector passes per step
  long calls = 0;
  {
    auto g = view(0.5);
    auto up = unit_projections(P, g);
    Vec data = polyct_forward(P, g, f, spec, mat).G;
    P.reset_counters();
    polyct_newton_step(P, g, up, data, Vec(f.size(), 0.0), spec, mat, {});
    calls = P.project_calls() + P.adjoint_calls();
  }
  const bool ok = fd_err <= 1e-5 && pull_axis <= 1e-10 && mono_err <= 1e-8 && calls == 3;
  report(7, "polyct", ok, seconds_since(t0), 60,
         fmt("derivative fd %.1e (<=1e-5), pull-through %.1e (<=1e-10, axis-aligned view; oblique view %.1e for "
             "information), mono reduction %.1e (<=1e-8), calls/step %ld (=3)",
             fd_err, pull_axis, pull_oblique, mono_err, calls));
}

// ---------------------------------------------------------------------------------------------

void lq_jensen() {
  auto t0 = Clock::now();
  const int N = 64;
  VolumeGrid grid({N, N}, 1.0 / N);
  Projector P(grid, Domain::ball(0.5));
  Geometry g = parallel_2d(0.0, N, 1.0 / N);  // one detector pixel per grid row
  auto up = unit_projections(P, g);
  const auto& mask = P.mask();
  Vec ones(grid.size(), 0.0);
  for (size_t i = 0; i < ones.size(); ++i) ones[i] = mask[i];
  const Vec ray_weight = P.project(g, ones);

  std::mt19937_64 rng(8);
  std::normal_distribution<double> Nd(0, 1);
  double worst = INFINITY, kern = 0.0;
  for (int draw = 0; draw < 200; ++draw) {
    Vec p(g.pixels(), 0.0);
    for (size_t i = 0; i < p.size(); ++i)
      if (up.support[i]) p[i] = Nd(rng) / std::sqrt(up.u[i]);
    Vec base = P.back_project(g, p);
    // f0 ∈ Kern: random field minus its ray-wise mean, sized from 1e-4 to 1x the back-projection
    const double scale = std::pow(10.0, -4.0 * std::uniform_real_distribution<double>(0, 1)(rng)) * norm2(base) /
                         std::sqrt(static_cast<double>(base.size()));
    Vec r(grid.size());
    for (size_t i = 0; i < r.size(); ++i) r[i] = mask[i] ? scale * Nd(rng) : 0.0;
    Vec mean = P.project(g, r);
    for (size_t i = 0; i < mean.size(); ++i) mean[i] = ray_weight[i] > 0 ? mean[i] / ray_weight[i] : 0.0;
    Vec f0 = r;
    axpy(-1.0, P.back_project(g, mean), f0);
    apply_mask(f0, mask);
    kern = std::max(kern, norm2(P.project(g, f0)) / norm2(P.project(g, r)));
    for (double q : {1.0, 1.5, 2.0, 3.0}) {
      double lhs = 0.0, rhs = 0.0;
      for (size_t i = 0; i < base.size(); ++i) {
        if (!mask[i]) continue;
        lhs += std::pow(std::abs(base[i] + f0[i]), q);
        rhs += std::pow(std::abs(base[i]), q);
      }
      worst = std::min(worst, (lhs - rhs) / rhs);
    }
  }
  report(8, "lq-jensen", worst >= -1e-10, seconds_since(t0), 10,
         fmt("200 draws x q in {1,1.5,2,3}: min (|b+f0|_q^q - |b|_q^q)/|b|_q^q = %.2e (>= -1e-10); |P f0|/|P r| = %.1e",
             worst, kern));
}

}  // namespace

int main() {
  pp_star();
  prox_oracle();
  cycle_oracle();
  robust_experiment();
  xpct();
  polyct();
  lq_jensen();
  std::printf("%s\n", failures == 0 ? "ALL PASS" : (std::to_string(failures) + " FAILED").c_str());
  return failures == 0 ? 0 : 1;
}
