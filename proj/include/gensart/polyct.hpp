#pragma once

#include "gensart.hpp"

namespace gensart {

/// Klein-Nishina total cross-section shape, k = ε / (m_e c²), m_e c² = 510.998950 keV.
inline double klein_nishina(double energy_kev) {
  const double k = energy_kev / 510.99895;
  const double l = std::log1p(2 * k);
  return (1 + k) / (k * k) * (2 * (1 + k) / (1 + 2 * k) - l / k) + l / (2 * k) - (1 + 3 * k) / ((1 + 2 * k) * (1 + 2 * k));
}

/// Discrete spectrum with trapezoidal weights and energy dependences Φ = ε₀³/ε³, Θ = f_KN(ε)/f_KN(ε₀).
struct SpectrumModel {
  Vec energy;     // keV, increasing
  Vec intensity;  // I₀(ε_e) ≥ 0
  Vec weight;     // quadrature weights
  double e_ref = 70.0;
  Vec Phi, Theta;

  static SpectrumModel make(Vec energy, Vec intensity, double e_ref) {
    require(!energy.empty() && energy.size() == intensity.size(), "spectrum needs matching energy/intensity samples");
    require(e_ref > 0, "reference energy must be positive");
    SpectrumModel s;
    s.energy = std::move(energy);
    s.intensity = std::move(intensity);
    s.e_ref = e_ref;
    const size_t n = s.energy.size();
    s.weight.assign(n, n == 1 ? 1.0 : 0.0);
    for (size_t e = 0; e + 1 < n; ++e) {
      double de = s.energy[e + 1] - s.energy[e];
      require(de > 0, "spectrum energies must increase");
      s.weight[e] += 0.5 * de;
      s.weight[e + 1] += 0.5 * de;
    }
    const double kn0 = klein_nishina(e_ref);
    for (size_t e = 0; e < n; ++e) {
      require(s.energy[e] > 0 && s.intensity[e] >= 0 && std::isfinite(s.intensity[e]), "invalid spectrum sample");
      s.Phi.push_back(std::pow(e_ref / s.energy[e], 3));
      s.Theta.push_back(klein_nishina(s.energy[e]) / kn0);
    }
    return s;
  }

  /// Flat toy spectrum on [lo, hi] keV with ∫I₀ dε = 1.
  static SpectrumModel flat(int n = 20, double lo = 30, double hi = 120, double e_ref = 70) {
    Vec e(n), I(n, 1.0 / (hi - lo));
    for (int k = 0; k < n; ++k) e[k] = n == 1 ? lo : lo + (hi - lo) * k / (n - 1);
    return make(std::move(e), std::move(I), e_ref);
  }

  static SpectrumModel mono(double energy, double intensity = 1.0) { return make({energy}, {intensity}, energy); }

  size_t size() const { return energy.size(); }
};

/// Monotone C¹ cubic (Fritsch-Carlson) through (x_m, y_m), linear beyond the last anchor.
class MonotoneCubic {
 public:
  MonotoneCubic() = default;
  MonotoneCubic(Vec x, Vec y) : x_(std::move(x)), y_(std::move(y)) {
    const size_t n = x_.size();
    require(n >= 2 && y_.size() == n, "interpolant needs at least two anchors");
    Vec d(n - 1);
    for (size_t i = 0; i + 1 < n; ++i) {
      require(x_[i + 1] > x_[i], "anchors must be strictly increasing");
      d[i] = (y_[i + 1] - y_[i]) / (x_[i + 1] - x_[i]);
    }
    m_.assign(n, 0.0);
    m_[0] = d[0];
    m_[n - 1] = d[n - 2];
    for (size_t i = 1; i + 1 < n; ++i) m_[i] = d[i - 1] * d[i] <= 0 ? 0.0 : 0.5 * (d[i - 1] + d[i]);
    for (size_t i = 0; i + 1 < n; ++i) {
      if (d[i] == 0) {
        m_[i] = m_[i + 1] = 0;
        continue;
      }
      double a = m_[i] / d[i], b = m_[i + 1] / d[i], s = a * a + b * b;
      if (s > 9) {
        double t = 3 / std::sqrt(s);
        m_[i] = t * a * d[i];
        m_[i + 1] = t * b * d[i];
      }
    }
  }

  /// Value and derivative at x ≥ x_0.
  std::pair<double, double> eval(double x) const {
    const size_t n = x_.size();
    if (x >= x_[n - 1]) return {y_[n - 1] + m_[n - 1] * (x - x_[n - 1]), m_[n - 1]};
    size_t i = static_cast<size_t>(std::upper_bound(x_.begin(), x_.end(), x) - x_.begin());
    i = std::clamp<size_t>(i, 1, n - 1) - 1;
    const double h = x_[i + 1] - x_[i], t = (x - x_[i]) / h;
    const double t2 = t * t, t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t, h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
    const double v = h00 * y_[i] + h10 * h * m_[i] + h01 * y_[i + 1] + h11 * h * m_[i + 1];
    const double dv = ((6 * t2 - 6 * t) * y_[i] + (3 * t2 - 4 * t + 1) * h * m_[i] + (-6 * t2 + 6 * t) * y_[i + 1] +
                       (3 * t2 - 2 * t) * h * m_[i + 1]) / h;
    return {v, dv};
  }

 private:
  Vec x_, y_, m_;
};

/// Photo-electric (φ) and Compton (θ) parts of the attenuation at the reference energy, as functions of f.
struct MaterialDecomposition {
  MonotoneCubic phi, theta;

  static MaterialDecomposition make(Vec f, Vec phi_m, Vec theta_m) {
    require(!f.empty() && f[0] == 0 && phi_m[0] == 0 && theta_m[0] == 0, "anchors must start at (0, 0)");
    return {MonotoneCubic(f, std::move(phi_m)), MonotoneCubic(f, std::move(theta_m))};
  }
  /// Toy water/bone table (attenuation in 1/length units at 70 keV).
  static MaterialDecomposition water_bone() { return make({0.0, 0.2, 0.5}, {0.0, 0.02, 0.15}, {0.0, 0.18, 0.35}); }
  /// φ(f) = f, θ = 0.
  static MaterialDecomposition photo_only() { return make({0.0, 1.0}, {0.0, 1.0}, {0.0, 0.0}); }

  struct Fields {
    Vec phi, theta, dphi, dtheta;
  };
  Fields eval(std::span<const double> f) const {
    Fields out{Vec(f.size()), Vec(f.size()), Vec(f.size()), Vec(f.size())};
    for (size_t i = 0; i < f.size(); ++i) {
      if (f[i] < 0) throw ConfigError("polychromatic model needs non-negative attenuation (negative entry found)");
      std::tie(out.phi[i], out.dphi[i]) = phi.eval(f[i]);
      std::tie(out.theta[i], out.dtheta[i]) = theta.eval(f[i]);
    }
    return out;
  }
};

/// G and its energy-weighted partials on one detector, from projections a = P(φ(f)), b = P(θ(f)).
struct PolyData {
  Vec G, GPhi, GTheta;
};

inline PolyData poly_from_projections(const SpectrumModel& s, std::span<const double> a, std::span<const double> b) {
  PolyData d{Vec(a.size(), 0.0), Vec(a.size(), 0.0), Vec(a.size(), 0.0)};
  for (size_t e = 0; e < s.size(); ++e) {
    const double c = s.weight[e] * s.intensity[e];
    for (size_t i = 0; i < a.size(); ++i) {
      double v = c * std::exp(-s.Phi[e] * a[i] - s.Theta[e] * b[i]);
      d.G[i] += v;
      d.GPhi[i] += s.Phi[e] * v;
      d.GTheta[i] += s.Theta[e] * v;
    }
  }
  return d;
}

/// G_j(f) = Σ_e w_e I₀ exp(−Φ_e P(φ(f)) − Θ_e P(θ(f))); one two-channel projector pass.
inline PolyData polyct_forward(const Projector& P, const Geometry& g, std::span<const double> f,
                               const SpectrumModel& s, const MaterialDecomposition& mat) {
  auto fl = mat.eval(f);
  auto pr = P.project_multi(g, {fl.phi, fl.theta});
  return poly_from_projections(s, pr[0], pr[1]);
}

/// λ_j(f) = φ'(f) P^B(G^Φ) + θ'(f) P^B(G^Θ); the derivative is G'h = −P(λ h).
inline Vec polyct_lambda(const Projector& P, const Geometry& g, std::span<const double> f, const SpectrumModel& s,
                         const MaterialDecomposition& mat, PolyData* data = nullptr) {
  auto fl = mat.eval(f);
  auto pr = P.project_multi(g, {fl.phi, fl.theta});
  PolyData d = poly_from_projections(s, pr[0], pr[1]);
  auto bp = P.back_project_multi(g, {d.GPhi, d.GTheta});
  Vec lam(f.size());
  for (size_t i = 0; i < lam.size(); ++i) lam[i] = fl.dphi[i] * bp[0][i] + fl.dtheta[i] * bp[1][i];
  if (data) *data = std::move(d);
  return lam;
}

/// Direct chain-rule derivative: G'h = −G^Φ P(φ'h) − G^Θ P(θ'h).
inline Vec polyct_derivative(const Projector& P, const Geometry& g, std::span<const double> f,
                             std::span<const double> h, const SpectrumModel& s, const MaterialDecomposition& mat) {
  auto fl = mat.eval(f);
  Vec ph(f.size()), th(f.size());
  for (size_t i = 0; i < f.size(); ++i) {
    ph[i] = fl.dphi[i] * h[i];
    th[i] = fl.dtheta[i] * h[i];
  }
  auto pr = P.project_multi(g, {fl.phi, fl.theta, ph, th});
  PolyData d = poly_from_projections(s, pr[0], pr[1]);
  Vec out(g.pixels());
  for (size_t i = 0; i < out.size(); ++i) out[i] = -d.GPhi[i] * pr[2][i] - d.GTheta[i] * pr[3][i];
  return out;
}

struct PolyOptions {
  double alpha = 1.0;
  /// PullThrough: P(w λ²) from the first pass (3 passes per step). Direct: extra projection of w λ² (4 passes).
  enum class Denominator { PullThrough, Direct } denominator = Denominator::PullThrough;
  bool nonnegative = true;  // keep f in the model's domain
};

/// f_{k+1} = f_k − λ P*(r / (P(w λ²) + α)), r = g − G(f_k).
inline StepResult polyct_newton_step(const Projector& P, const Geometry& g, const UnitProjections& up,
                                     std::span<const double> g_obs, std::span<const double> f_k,
                                     const SpectrumModel& s, const MaterialDecomposition& mat, const PolyOptions& opt) {
  require(opt.alpha > 0, "alpha must be positive");
  require(g_obs.size() == g.pixels(), "data size does not match the detector");
  auto fl = mat.eval(f_k);
  const size_t n = f_k.size(), m = g.pixels();
  Vec w = P.ray_density(g);
  std::vector<Vec> pr;
  if (opt.denominator == PolyOptions::Denominator::PullThrough) {
    Vec a(n), b(n), c(n);
    for (size_t i = 0; i < n; ++i) {
      a[i] = w[i] * fl.dphi[i] * fl.dphi[i];
      b[i] = w[i] * fl.dphi[i] * fl.dtheta[i];
      c[i] = w[i] * fl.dtheta[i] * fl.dtheta[i];
    }
    pr = P.project_multi(g, {fl.phi, fl.theta, a, b, c});
  } else {
    pr = P.project_multi(g, {fl.phi, fl.theta});
  }
  PolyData d = poly_from_projections(s, pr[0], pr[1]);
  auto bp = P.back_project_multi(g, {d.GPhi, d.GTheta});
  Vec lam(n);
  for (size_t i = 0; i < n; ++i) lam[i] = fl.dphi[i] * bp[0][i] + fl.dtheta[i] * bp[1][i];
  Vec denom(m);
  if (opt.denominator == PolyOptions::Denominator::PullThrough) {
    for (size_t i = 0; i < m; ++i)
      denom[i] = d.GPhi[i] * d.GPhi[i] * pr[2][i] + 2 * d.GPhi[i] * d.GTheta[i] * pr[3][i] +
                 d.GTheta[i] * d.GTheta[i] * pr[4][i];
  } else {
    Vec wl2(n);
    for (size_t i = 0; i < n; ++i) wl2[i] = w[i] * lam[i] * lam[i];
    denom = P.project(g, wl2);
  }
  StepResult out;
  Vec q(m, 0.0);
  double rr = 0.0;
  for (size_t i = 0; i < m; ++i) {
    if (!up.support[i]) continue;
    double r = g_obs[i] - d.G[i];
    rr += r * r;
    q[i] = r / (denom[i] + opt.alpha);
  }
  out.residual = std::sqrt(rr);
  out.objective = rr;
  Vec upd = P.adjoint(g, q);
  out.f.assign(f_k.begin(), f_k.end());
  for (size_t i = 0; i < n; ++i) out.f[i] -= lam[i] * upd[i];
  if (opt.nonnegative)
    for (double& v : out.f) v = std::max(v, 0.0);
  return out;
}

}  // namespace gensart
