#pragma once

#include <complex>
#include <memory>

#include <fftw3.h>

#include "gensart.hpp"

namespace gensart {

using cplx = std::complex<double>;
using CVec = std::vector<cplx>;

/// D(ψ) = F⁻¹(m_𝔣 · Fψ), m_𝔣(ξ) = exp(−i|ξ|²/(4π𝔣)) with ξ in radians per pixel.
/// 1D when nv == 1.  Plans are created once (FFTW_ESTIMATE, unaligned) and reused.
class FresnelPropagator {
 public:
  FresnelPropagator(int nu, int nv, double fresnel) : nu_(nu), nv_(nv), fresnel_(fresnel) {
    require(nu > 0 && nv > 0, "Fresnel grid must be non-empty");
    require(fresnel > 0, "Fresnel number must be positive");
    kernel_.resize(size());
    for (int v = 0; v < nv; ++v)
      for (int u = 0; u < nu; ++u) {
        double xu = freq(u, nu), xv = nv == 1 ? 0.0 : freq(v, nv);
        kernel_[static_cast<size_t>(v) * nu + u] = std::polar(1.0, -(xu * xu + xv * xv) / (4 * std::numbers::pi * fresnel));
      }
    CVec tmp(size());
    auto* p = reinterpret_cast<fftw_complex*>(tmp.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    if (nv == 1) {
      fwd_ = fftw_plan_dft_1d(nu, p, p, FFTW_FORWARD, flags);
      bwd_ = fftw_plan_dft_1d(nu, p, p, FFTW_BACKWARD, flags);
    } else {
      fwd_ = fftw_plan_dft_2d(nv, nu, p, p, FFTW_FORWARD, flags);
      bwd_ = fftw_plan_dft_2d(nv, nu, p, p, FFTW_BACKWARD, flags);
    }
  }
  FresnelPropagator(const FresnelPropagator&) = delete;
  FresnelPropagator& operator=(const FresnelPropagator&) = delete;
  ~FresnelPropagator() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
  }

  size_t size() const { return static_cast<size_t>(nu_) * nv_; }
  int nu() const { return nu_; }
  int nv() const { return nv_; }
  double fresnel() const { return fresnel_; }
  const CVec& kernel() const { return kernel_; }

  /// In-place propagation; inverse applies the conjugate multiplier (D⁻¹ = D*).
  void propagate(CVec& psi, bool inverse = false) const {
    require(psi.size() == size(), "field size does not match the propagator grid");
    auto* p = reinterpret_cast<fftw_complex*>(psi.data());
    fftw_execute_dft(fwd_, p, p);
    const double scale = 1.0 / static_cast<double>(size());
    for (size_t i = 0; i < psi.size(); ++i) psi[i] *= (inverse ? std::conj(kernel_[i]) : kernel_[i]) * scale;
    fftw_execute_dft(bwd_, p, p);
  }

  CVec operator()(CVec psi) const {
    propagate(psi);
    return psi;
  }

 private:
  static double freq(int k, int n) { return 2 * std::numbers::pi * (k < (n + 1) / 2 ? k : k - n) / n; }

  int nu_, nv_;
  double fresnel_;
  CVec kernel_;
  fftw_plan fwd_ = nullptr, bwd_ = nullptr;
};

/// Linearized image formation T = F'[p] (real-linear, detector → data).
struct Linearization {
  virtual ~Linearization() = default;
  virtual Vec apply(std::span<const double> h) const = 0;
  virtual Vec adjoint(std::span<const double> q) const = 0;
};

/// Image-formation map F: projection → data, same detector grid.
struct ImageFormation {
  virtual ~ImageFormation() = default;
  virtual Vec forward(std::span<const double> p) const = 0;
  virtual std::unique_ptr<Linearization> linearize(std::span<const double> p) const = 0;
};

/// F = identity (test hook: reduces the Newton step to plain GenSART).
struct IdentityFormation : ImageFormation {
  struct Lin : Linearization {
    Vec apply(std::span<const double> h) const override { return Vec(h.begin(), h.end()); }
    Vec adjoint(std::span<const double> q) const override { return Vec(q.begin(), q.end()); }
  };
  Vec forward(std::span<const double> p) const override { return Vec(p.begin(), p.end()); }
  std::unique_ptr<Linearization> linearize(std::span<const double>) const override { return std::make_unique<Lin>(); }
};

/// Near-field phase contrast F(p) = |D(exp(−ip))|² − 1 with zero-padding by `pad` before propagation.
class XpctModel : public ImageFormation {
 public:
  XpctModel(int nu, int nv, double fresnel, int pad = 2)
      : nu_(nu), nv_(nv), pu_(pad * nu), pv_(nv == 1 ? 1 : pad * nv), prop_(pu_, pv_, fresnel) {
    require(pad >= 1, "padding factor must be >= 1");
    ou_ = (pu_ - nu_) / 2;
    ov_ = (pv_ - nv_) / 2;
  }

  const FresnelPropagator& propagator() const { return prop_; }
  size_t pixels() const { return static_cast<size_t>(nu_) * nv_; }

  Vec forward(std::span<const double> p) const override {
    CVec psi = embed_phase(p);
    prop_.propagate(psi);
    Vec out(pixels());
    crop(psi, out, [](cplx z) { return std::norm(z) - 1.0; });
    return out;
  }

  struct Lin : Linearization {
    const XpctModel* m;
    CVec phi, psi;  // e^{−ip} and D(e^{−ip}) on the padded grid
    Vec apply(std::span<const double> h) const override {
      CVec z(phi.size(), cplx(0, 0));
      m->for_each_inner([&](size_t in, size_t pad) { z[pad] = phi[pad] * h[in]; });
      m->prop_.propagate(z);
      Vec out(m->pixels());
      m->for_each_inner([&](size_t in, size_t pad) { out[in] = 2 * std::imag(std::conj(psi[pad]) * z[pad]); });
      return out;
    }
    Vec adjoint(std::span<const double> q) const override {
      CVec z(phi.size(), cplx(0, 0));
      m->for_each_inner([&](size_t in, size_t pad) { z[pad] = cplx(0, 1) * psi[pad] * q[in]; });
      m->prop_.propagate(z, true);
      Vec out(m->pixels());
      m->for_each_inner([&](size_t in, size_t pad) { out[in] = 2 * std::real(std::conj(phi[pad]) * z[pad]); });
      return out;
    }
  };

  std::unique_ptr<Linearization> linearize(std::span<const double> p) const override {
    auto lin = std::make_unique<Lin>();
    lin->m = this;
    lin->phi = embed_phase(p);
    lin->psi = lin->phi;
    prop_.propagate(lin->psi);
    return lin;
  }

 private:
  template <class Fn>
  void for_each_inner(Fn&& fn) const {
    for (int v = 0; v < nv_; ++v)
      for (int u = 0; u < nu_; ++u)
        fn(static_cast<size_t>(v) * nu_ + u, static_cast<size_t>(v + ov_) * pu_ + (u + ou_));
  }

  CVec embed_phase(std::span<const double> p) const {
    require(p.size() == pixels(), "projection size does not match the XPCT detector");
    CVec psi(static_cast<size_t>(pu_) * pv_, cplx(1, 0));
    for_each_inner([&](size_t in, size_t pad) { psi[pad] = std::polar(1.0, -p[in]); });
    return psi;
  }

  template <class Fn>
  void crop(const CVec& psi, Vec& out, Fn&& fn) const {
    for_each_inner([&](size_t in, size_t pad) { out[in] = fn(psi[pad]); });
  }

  int nu_, nv_, pu_, pv_, ou_ = 0, ov_ = 0;
  FresnelPropagator prop_;
};

struct NewtonOptions {
  double alpha = 500.0;
  double gamma = 0.0;
  bool nonnegative = false;
  double cg_rtol = 1e-6;
  int cg_max_iter = 300;
};

/// Projection-space Newton increment: (U^{1/2}T*T U^{1/2} + α(1−γ)I + αγ U^{-1/2}∇*U_∇∇U^{-1/2}) Δp = U^{1/2} T* r.
/// Pixel measures weight both data and penalty terms (they cancel for uniform detectors).
inline Vec newton_projection_solve(const Geometry& g, const UnitProjections& up, const Linearization& T,
                                   std::span<const double> r, const NewtonOptions& opt, CgReport* report = nullptr) {
  ProjectionPenalty pen(g, up, opt.alpha, opt.gamma);
  const size_t m = up.size();
  Vec su(m);
  for (size_t i = 0; i < m; ++i) su[i] = up.support[i] ? std::sqrt(up.u[i]) : 0.0;
  auto A = [&](std::span<const double> x) {
    Vec h(m);
    for (size_t i = 0; i < m; ++i) h[i] = su[i] * x[i];
    Vec th = T.apply(h);
    for (size_t i = 0; i < m; ++i) th[i] *= pen.measure[i];
    Vec back = T.adjoint(th);
    Vec y = pen.apply(x);
    for (size_t i = 0; i < m; ++i) y[i] = up.support[i] ? y[i] + su[i] * back[i] : x[i];
    return y;
  };
  Vec wr(r.begin(), r.end());
  for (size_t i = 0; i < m; ++i) wr[i] *= pen.measure[i];
  Vec b = T.adjoint(wr);
  for (size_t i = 0; i < m; ++i) b[i] *= su[i];
  Vec dp(m, 0.0);
  CgReport rep = conjugate_gradient(A, b, dp, opt.cg_rtol, opt.cg_max_iter);
  if (report) *report = rep;
  return dp;
}

/// One Newton-Kaczmarz GenSART step for a nonlinear image formation on a parallel view.
inline StepResult newton_kaczmarz_step(const Projector& P, const Geometry& g, const UnitProjections& up,
                                       const ImageFormation& model, std::span<const double> g_obs,
                                       std::span<const double> f_k, const NewtonOptions& opt) {
  require(g.parallel(), "the Newton-Kaczmarz phase-contrast step needs parallel geometry");
  require(opt.alpha > 0, "alpha must be positive");
  require(opt.gamma >= 0 && opt.gamma <= 1, "gamma must lie in [0, 1]");
  Vec p = P.project(g, f_k);
  Vec r(g_obs.begin(), g_obs.end());
  axpy(-1.0, model.forward(p), r);
  StepResult out;
  out.residual = norm2(r);
  auto T = model.linearize(p);
  CgReport rep;
  Vec dp = newton_projection_solve(g, up, *T, r, opt, &rep);
  out.inner_iterations = rep.iterations;
  if (!rep.converged && rep.rel_residual > 1e-3)
    throw SolverError("Newton CG stagnated (rel. residual " + std::to_string(rep.rel_residual) + ")");
  Vec upd = P.back_project(g, masked_divide(dp, up.u, 0.5));
  out.f.assign(f_k.begin(), f_k.end());
  axpy(1.0, upd, out.f);
  if (opt.nonnegative)
    for (double& v : out.f) v = std::max(v, 0.0);
  out.objective = out.residual * out.residual;
  return out;
}

/// Kaczmarz stepper adaptor (f_ref is ignored: the Newton step linearizes at f_k).
struct NewtonStepper {
  const Projector& P;
  const std::vector<Geometry>& views;
  const std::vector<UnitProjections>& units;
  const ImageFormation& model;
  const std::vector<Vec>& data;
  NewtonOptions opt;

  StepResult operator()(size_t j, const Vec& f_k, const Vec&, double) const {
    return newton_kaczmarz_step(P, views[j], units[j], model, data[j], f_k, opt);
  }
};

}  // namespace gensart
