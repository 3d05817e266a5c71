#pragma once

#include "projector.hpp"

namespace gensart {

/// u = P(1_Ω), ũ = P(w_P 1_Ω) on one detector, with the shared support {u > 0}.
struct UnitProjections {
  Vec u;
  Vec u_tilde;
  std::vector<std::uint8_t> support;

  size_t size() const { return u.size(); }
};

enum class UnitMethod { Auto, Analytic, Projected };

namespace detail {

inline void finalize_support(UnitProjections& up) {
  double umax = 0.0;
  for (double v : up.u) umax = std::max(umax, v);
  const double thr = 1e-12 * umax;
  up.support.assign(up.u.size(), 0);
  for (size_t i = 0; i < up.u.size(); ++i) {
    if (up.u[i] > thr && up.u[i] > 0 && up.u_tilde[i] > 0) {
      up.support[i] = 1;
    } else {
      up.u[i] = 0.0;
      up.u_tilde[i] = 0.0;
    }
  }
}

}  // namespace detail

/// Closed-form chord integrals through analytic Ω (centre ray of each pixel).
inline UnitProjections unit_projections_analytic(const Geometry& g, const Domain& dom) {
  require(dom.analytic(), "analytic unit projections need a box/ball/cylinder domain");
  UnitProjections up;
  up.u.assign(g.pixels(), 0.0);
  up.u_tilde.assign(g.pixels(), 0.0);
  for (size_t i = 0; i < g.pixels(); ++i) {
    Ray r = g.ray(static_cast<double>(i % g.n_u), static_cast<double>(i / g.n_u));
    auto c = dom.chord(r.origin, r.dir, g.dim);
    if (!c) continue;
    double t0 = (*c)[0], t1 = (*c)[1];
    up.u[i] = t1 - t0;
    if (g.parallel()) {
      up.u_tilde[i] = up.u[i];
    } else {
      require(t0 > 0, "source lies inside the domain");
      up.u_tilde[i] = g.dim == 2 ? std::log(t1 / t0) : 1.0 / t0 - 1.0 / t1;
    }
  }
  detail::finalize_support(up);
  return up;
}

/// u = project(1_Ω), ũ = project(w_P 1_Ω) with the discrete projector (one multi-channel pass).
inline UnitProjections unit_projections_projected(const Projector& P, const Geometry& g) {
  Vec one(P.volume_size(), 0.0);
  for (size_t i = 0; i < one.size(); ++i) one[i] = P.mask()[i] ? 1.0 : 0.0;
  UnitProjections up;
  if (g.parallel()) {
    up.u = P.project(g, one);
    up.u_tilde = up.u;
  } else {
    Vec w = P.ray_density(g);
    auto r = P.project_multi(g, {one, w});
    up.u = std::move(r[0]);
    up.u_tilde = std::move(r[1]);
  }
  detail::finalize_support(up);
  return up;
}

/// Analytic for box/ball/cylinder Ω in parallel mode, projected otherwise.
inline UnitProjections unit_projections(const Projector& P, const Geometry& g, UnitMethod m = UnitMethod::Auto) {
  if (m == UnitMethod::Auto) m = (P.domain().analytic() && g.parallel()) ? UnitMethod::Analytic : UnitMethod::Projected;
  if (m == UnitMethod::Analytic) return unit_projections_analytic(g, P.domain());
  return unit_projections_projected(P, g);
}

/// p / u^μ on {u > 0}, exactly 0 elsewhere.
inline Vec masked_divide(std::span<const double> p, std::span<const double> u, double mu) {
  Vec out(p.size(), 0.0);
  for (size_t i = 0; i < p.size(); ++i)
    if (u[i] > 0) out[i] = p[i] / std::pow(u[i], mu);
  return out;
}

/// Zeroes values outside the support (Convention: data lives on 𝔻_P only).
inline void restrict_to_support(std::span<double> p, const UnitProjections& up) {
  for (size_t i = 0; i < p.size(); ++i)
    if (!up.support[i]) p[i] = 0.0;
}

/// Forward differences on the detector between neighbouring pixels that are both in the support.
struct DetectorGradient {
  struct Edge {
    size_t i, k;
    double inv_spacing;
    double weight;  // pixel measure of the edge
  };
  std::vector<Edge> edges;
  size_t pixels = 0;

  DetectorGradient() = default;
  DetectorGradient(const Geometry& g, const std::vector<std::uint8_t>& support) : pixels(g.pixels()) {
    for (int iv = 0; iv < g.n_v; ++iv)
      for (int iu = 0; iu < g.n_u; ++iu) {
        size_t i = static_cast<size_t>(iv) * g.n_u + iu;
        if (!support[i]) continue;
        if (iu + 1 < g.n_u && support[i + 1]) edges.push_back({i, i + 1, 1.0 / g.pitch_u, g.pixel_measure(iv)});
        if (iv + 1 < g.n_v && support[i + g.n_u]) {
          double m = 0.5 * (g.pixel_measure(iv) + g.pixel_measure(iv + 1));
          edges.push_back({i, i + g.n_u, 1.0 / g.pitch_v, m});
        }
      }
  }

  Vec apply(std::span<const double> q) const {
    Vec d(edges.size());
    for (size_t e = 0; e < edges.size(); ++e) d[e] = (q[edges[e].k] - q[edges[e].i]) * edges[e].inv_spacing;
    return d;
  }

  Vec adjoint(std::span<const double> d) const {
    Vec q(pixels, 0.0);
    for (size_t e = 0; e < edges.size(); ++e) {
      q[edges[e].k] += d[e] * edges[e].inv_spacing;
      q[edges[e].i] -= d[e] * edges[e].inv_spacing;
    }
    return q;
  }

  /// Edge weights U_∇: mean of u over the two pixels.
  Vec edge_average(std::span<const double> u) const {
    Vec w(edges.size());
    for (size_t e = 0; e < edges.size(); ++e) w[e] = 0.5 * (u[edges[e].i] + u[edges[e].k]);
    return w;
  }
};

}  // namespace gensart
