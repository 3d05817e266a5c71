#pragma once

#include "cg.hpp"
#include "fidelity.hpp"

namespace gensart {

/// One tomographic view with its data fidelity and cached unit projections.
struct View {
  Geometry geom;
  FidelitySpec fidelity;
  UnitProjections unit;
};

inline View make_view(const Projector& P, const Geometry& g, FidelitySpec fid, UnitMethod m = UnitMethod::Auto) {
  validate(g, P.domain(), P.grid());
  fid.validate();
  require(fid.data.size() == g.pixels(), "data size does not match the detector");
  View v{g, std::move(fid), unit_projections(P, g, m)};
  return v;
}

struct PenaltySpec {
  enum class Family { L2, WeightedL2, WeightedProjector, SobolevW12, Lq };
  Family family = Family::L2;
  double alpha = 1.0;
  Vec weight;  // w (WeightedL2) or λ (WeightedProjector), volume-shaped
  double gamma = 0.0;
  double q = 2.0;

  void validate(const Geometry& g, size_t nvox) const {
    require(alpha > 0, "alpha must be positive");
    if (family == Family::WeightedL2 || family == Family::WeightedProjector) {
      require(weight.size() == nvox, "penalty weight must match the volume size");
      require(all_finite(weight), "penalty weight must be finite");
    }
    if (family == Family::WeightedL2)
      for (double w : weight) require(w > 0, "weighted L2 needs w bounded below by a positive constant");
    if (family == Family::SobolevW12) require(gamma >= 0 && gamma <= 1, "gamma must lie in [0, 1]");
    if (family == Family::Lq) {
      require(q >= 1, "Lq penalty needs q >= 1");
      require(g.parallel(), "Lq penalty is only supported for parallel geometry");
    }
  }
};

struct StepResult {
  Vec f;
  double residual = 0.0;   // ‖P f_ref − g‖₂ on the support
  double objective = 0.0;  // projection-space objective at the optimum
  int inner_iterations = 0;
};

struct InnerSolverOptions {
  double rtol = 1e-8;
  int max_iter = 200;
};

namespace detail {

inline double support_residual(const View& v, std::span<const double> p) {
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i)
    if (v.unit.support[i]) s += (p[i] - v.fidelity.data[i]) * (p[i] - v.fidelity.data[i]);
  return std::sqrt(s);
}

inline Vec pixel_measures(const Geometry& g) {
  Vec a(g.pixels());
  for (size_t i = 0; i < a.size(); ++i) a[i] = g.pixel_measure(static_cast<int>(i / g.n_u));
  return a;
}

/// Shared pointwise scheme: τ = denom/(2α), f = f_ref + scale ⊙ P*((x* − p_ref)/denom).
inline StepResult pointwise_update(const Projector& P, const View& v, std::span<const double> f_ref,
                                   const Vec& p_ref, const Vec& denom, double alpha, const Vec* scale) {
  Vec tau(denom.size());
  std::vector<std::uint8_t> supp = v.unit.support;
  for (size_t i = 0; i < tau.size(); ++i) {
    if (!(denom[i] > 0)) supp[i] = 0;
    tau[i] = denom[i] / (2 * alpha);
  }
  auto sol = solve_pointwise(v.fidelity, p_ref, tau, supp, &v.geom);
  StepResult out;
  out.residual = support_residual(v, p_ref);
  out.objective = sol.objective;
  Vec q(denom.size(), 0.0);
  for (size_t i = 0; i < q.size(); ++i)
    if (supp[i]) q[i] = sol.step[i] / denom[i];
  Vec upd = P.adjoint(v.geom, q);
  out.f.assign(f_ref.begin(), f_ref.end());
  for (size_t i = 0; i < upd.size(); ++i) out.f[i] += scale ? (*scale)[i] * upd[i] : upd[i];
  return out;
}

}  // namespace detail

/// L2 penalty: f = f_ref + P*(ũ^{-1/2} Δp), Δp = argmin S(p_ref + ũ^{1/2} p) + α‖p‖².
inline StepResult gensart_l2(const Projector& P, const View& v, std::span<const double> f_ref, double alpha) {
  require(alpha > 0, "alpha must be positive");
  Vec p_ref = P.project(v.geom, f_ref);
  return detail::pointwise_update(P, v, f_ref, p_ref, v.unit.u_tilde, alpha, nullptr);
}

/// Weighted projector f ↦ P(λ f): f = f_ref + λ P*((x* − p_ref)/P(w_P λ²)), p_ref = P(λ f_ref).
inline StepResult gensart_weighted_projector(const Projector& P, const View& v, std::span<const double> f_ref,
                                             std::span<const double> lambda, double alpha) {
  require(alpha > 0, "alpha must be positive");
  require(lambda.size() == f_ref.size(), "lambda must match the volume size");
  Vec w = P.ray_density(v.geom);
  Vec lf(f_ref.size()), wl2(f_ref.size());
  for (size_t i = 0; i < lf.size(); ++i) {
    lf[i] = lambda[i] * f_ref[i];
    wl2[i] = w[i] * lambda[i] * lambda[i];
  }
  auto pr = P.project_multi(v.geom, {lf, wl2});  // p_ref and λ_P ũ in one pass
  Vec scale(lambda.begin(), lambda.end());
  return detail::pointwise_update(P, v, f_ref, pr[0], pr[1], alpha, &scale);
}

/// Weighted L2 penalty α‖w^{-1/2}(f − f_ref)‖²: f = f_ref + w P*((x* − p_ref)/P(w w_P)).
inline StepResult gensart_weighted_l2(const Projector& P, const View& v, std::span<const double> f_ref,
                                      std::span<const double> wgt, double alpha) {
  require(alpha > 0, "alpha must be positive");
  require(wgt.size() == f_ref.size(), "weight must match the volume size");
  Vec wp = P.ray_density(v.geom);
  for (size_t i = 0; i < wp.size(); ++i) wp[i] *= wgt[i];
  auto pr = P.project_multi(v.geom, {f_ref, wp});
  Vec scale(wgt.begin(), wgt.end());
  return detail::pointwise_update(P, v, f_ref, pr[0], pr[1], alpha, &scale);
}

/// Quadratic penalty α(1−γ)‖p‖² + αγ‖U_∇^{1/2} ∇(u^{-1/2} p)‖² in projection space (Euclidean form,
/// pixel measures included). apply() returns half the gradient.
struct ProjectionPenalty {
  Vec measure;      // a_i
  Vec inv_sqrt_u;   // u^{-1/2} on the support, 0 elsewhere
  DetectorGradient grad;
  Vec edge_weight;  // a_e U_∇(e)
  double c0 = 0.0, c1 = 0.0;

  ProjectionPenalty(const Geometry& g, const UnitProjections& up, double alpha, double gamma)
      : measure(detail::pixel_measures(g)), inv_sqrt_u(masked_divide(Vec(up.size(), 1.0), up.u, 0.5)),
        c0(alpha * (1 - gamma)), c1(alpha * gamma) {
    if (c1 > 0) {
      grad = DetectorGradient(g, up.support);
      edge_weight = grad.edge_average(up.u);
      for (size_t e = 0; e < edge_weight.size(); ++e) edge_weight[e] *= grad.edges[e].weight;
    }
  }

  Vec apply(std::span<const double> p) const {
    Vec out(p.size());
    for (size_t i = 0; i < p.size(); ++i) out[i] = c0 * measure[i] * p[i];
    if (c1 > 0) {
      Vec q(p.size());
      for (size_t i = 0; i < p.size(); ++i) q[i] = inv_sqrt_u[i] * p[i];
      Vec d = grad.apply(q);
      for (size_t e = 0; e < d.size(); ++e) d[e] *= edge_weight[e];
      Vec back = grad.adjoint(d);
      for (size_t i = 0; i < p.size(); ++i) out[i] += c1 * inv_sqrt_u[i] * back[i];
    }
    return out;
  }

  double value(std::span<const double> p) const {
    Vec ap = apply(p);
    return dot(p, ap);
  }
};

/// Δp for S(p_ref + u^{1/2} p) + penalty (γ > 0 couples pixels).
/// Quadratic fidelities: CG on the normal equation. Others: accelerated proximal gradient.
inline Vec solve_w12_projection(const View& v, std::span<const double> p_ref, double alpha, double gamma,
                                InnerSolverOptions opt, int* iterations = nullptr, double* objective = nullptr) {
  const auto& up = v.unit;
  const auto& fid = v.fidelity;
  const size_t m = p_ref.size();
  ProjectionPenalty pen(v.geom, up, alpha, gamma);
  Vec sqrt_u(m);
  for (size_t i = 0; i < m; ++i) sqrt_u[i] = up.support[i] ? std::sqrt(up.u[i]) : 0.0;
  Vec p(m, 0.0);
  if (fid.quadratic()) {
    Vec d(m, 0.0), b(m, 0.0);  // fidelity curvature a u / σ²
    for (size_t i = 0; i < m; ++i) {
      if (!up.support[i]) continue;
      double s2 = fid.sigma_at(i) * fid.sigma_at(i);
      d[i] = pen.measure[i] * up.u[i] / s2;
      b[i] = pen.measure[i] * sqrt_u[i] * (fid.data[i] - p_ref[i]) / s2;
    }
    auto A = [&](std::span<const double> x) {
      Vec y = pen.apply(x);
      for (size_t i = 0; i < m; ++i) y[i] = up.support[i] ? y[i] + d[i] * x[i] : x[i];
      return y;
    };
    auto rep = conjugate_gradient(A, b, p, opt.rtol, opt.max_iter);
    if (!rep.converged && rep.rel_residual > 1e-4)
      throw SolverError("projection-space CG did not converge (rel. residual " + std::to_string(rep.rel_residual) + ")");
    if (iterations) *iterations = rep.iterations;
  } else {
    // FISTA with restart; prox of the fidelity in p-variables is a scalar prox with step t u / a.
    // Power iteration for the Lipschitz constant of ∇(penalty) = 2 apply().
    Vec x(m, 0.0);
    for (size_t i = 0; i < m; ++i) x[i] = up.support[i] ? std::sin(1.0 + 0.37 * i) : 0.0;
    double L = 0.0;
    for (int it = 0; it < 40; ++it) {
      double nx = norm2(x);
      if (nx == 0) break;
      for (double& xi : x) xi /= nx;
      Vec y = pen.apply(x);
      L = 2 * norm2(y);
      x = std::move(y);
    }
    const double t = 1.0 / std::max(L * 1.05, 1e-300);
    auto obj = [&](const Vec& pp) {
      double s = 0.0;
      for (size_t i = 0; i < m; ++i)
        if (up.support[i]) s += pen.measure[i] * fidelity_value(fid, i, p_ref[i] + sqrt_u[i] * pp[i]);
      return s + pen.value(pp);
    };
    Vec z = p, prev = p;
    double theta = 1.0, fprev = obj(p);
    int it = 0;
    for (; it < 2000; ++it) {
      Vec gz = pen.apply(z);
      Vec next(m, 0.0);
      for (size_t i = 0; i < m; ++i) {
        if (!up.support[i]) continue;
        double zi = z[i] - 2 * t * gz[i];
        double xs = prox_scalar(fid, i, p_ref[i] + sqrt_u[i] * zi, t * up.u[i] / pen.measure[i]);
        next[i] = (xs - p_ref[i]) / sqrt_u[i];
      }
      double fn = obj(next);
      if (fn > fprev) {  // restart momentum; a plain step that fails to descend means we are done
        if (theta == 1.0) break;
        theta = 1.0;
        z = prev;
        continue;
      }
      double change = diff_norm2(next, prev);
      double th_new = 0.5 * (1 + std::sqrt(1 + 4 * theta * theta));
      for (size_t i = 0; i < m; ++i) z[i] = next[i] + (theta - 1) / th_new * (next[i] - prev[i]);
      theta = th_new;
      prev = std::move(next);
      fprev = fn;
      if (change <= opt.rtol * std::max(1.0, norm2(prev))) break;
    }
    p = prev;
    if (iterations) *iterations = it;
  }
  if (objective) {
    double s = 0.0;
    for (size_t i = 0; i < m; ++i)
      if (up.support[i]) s += pen.measure[i] * fidelity_value(fid, i, p_ref[i] + sqrt_u[i] * p[i]);
    *objective = s + pen.value(p);
  }
  return p;
}

/// W^{1,2}-type penalty: Δp from S(p_ref + u^{1/2}p) + α(1−γ)‖p‖² + αγ‖u^{1/2}∇(u^{-1/2}p)‖²,
/// f = f_ref + P^B(u^{-1/2} Δp).
inline StepResult gensart_w12(const Projector& P, const View& v, std::span<const double> f_ref, double alpha,
                              double gamma, InnerSolverOptions opt = {}) {
  require(alpha > 0, "alpha must be positive");
  require(gamma >= 0 && gamma <= 1, "gamma must lie in [0, 1]");
  Vec p_ref = P.project(v.geom, f_ref);
  StepResult out;
  out.residual = detail::support_residual(v, p_ref);
  Vec q(p_ref.size(), 0.0);
  if (gamma == 0) {
    Vec tau(p_ref.size());
    for (size_t i = 0; i < tau.size(); ++i) tau[i] = v.unit.u[i] / (2 * alpha);
    auto sol = solve_pointwise(v.fidelity, p_ref, tau, v.unit.support, &v.geom);
    out.objective = sol.objective;
    q = masked_divide(sol.step, v.unit.u, 1.0);
  } else {
    Vec dp = solve_w12_projection(v, p_ref, alpha, gamma, opt, &out.inner_iterations, &out.objective);
    q = masked_divide(dp, v.unit.u, 0.5);
  }
  Vec upd = P.back_project(v.geom, q);
  out.f.assign(f_ref.begin(), f_ref.end());
  axpy(1.0, upd, out.f);
  return out;
}

/// argmin_x s(x) + c|x − r|^q for pixel i (q ≥ 1).
inline double lq_scalar(const FidelitySpec& s, size_t i, double r, double c, double q) {
  if (q == 2.0) return prox_scalar(s, i, r, 1.0 / (2 * c));
  auto phi = [&](double x) {
    double v = fidelity_value(s, i, x) + c * std::pow(std::abs(x - r), q);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  // Unconstrained minimiser of s (all kinds are unimodal).
  double xs = NAN;
  const double g = s.data[i];
  switch (s.kind) {
    case FidelitySpec::Kind::L2:
    case FidelitySpec::Kind::WeightedL2:
    case FidelitySpec::Kind::Huber:
    case FidelitySpec::Kind::StudentT: xs = g; break;
    case FidelitySpec::Kind::PoissonDark: {
      double a = s.exposure * s.intensity_at(i);
      if (a > 0 && s.omega_at(i) > 0) xs = g / a;
      break;
    }
    case FidelitySpec::Kind::PoissonBright: {
      double a = s.exposure * s.intensity_at(i);
      if (a > 0 && g > 0 && s.omega_at(i) > 0) xs = std::log(a / g);
      break;
    }
  }
  double lo = r, hi = r;
  if (std::isfinite(xs)) {
    lo = std::min(r, xs);
    hi = std::max(r, xs);
  } else {
    // Expand downhill from r.
    double step = 1.0;
    int dir = phi(r + 1e-6) < phi(r) ? 1 : (phi(r - 1e-6) < phi(r) ? -1 : 0);
    if (dir == 0) return r;
    double best = phi(r);
    for (int k = 0; k < 80; ++k, step *= 2) {
      double v = phi(r + dir * step);
      if (!(v < best)) break;
      best = v;
    }
    (dir > 0 ? hi : lo) = r + dir * step;
  }
  if (hi - lo <= 0) return r;
  const int n = 400;
  double best_x = lo, best_v = phi(lo);
  int best_k = 0;
  for (int k = 1; k <= n; ++k) {
    double x = lo + (hi - lo) * k / n;
    double v = phi(x);
    if (v < best_v) {
      best_v = v;
      best_x = x;
      best_k = k;
    }
  }
  double a = lo + (hi - lo) * std::max(0, best_k - 1) / n, b = lo + (hi - lo) * std::min(n, best_k + 1) / n;
  const double gr = 0.5 * (std::sqrt(5.0) - 1);
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a), f1 = phi(x1), f2 = phi(x2);
  for (int it = 0; it < 200 && b - a > 1e-14 * (1 + std::abs(a)); ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = phi(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = phi(x2);
    }
  }
  double xm = 0.5 * (a + b);
  // Kink at r (q = 1) and the scan optimum are candidates too.
  double cand[3] = {xm, best_x, r};
  double out = xm, vout = phi(xm);
  for (double x : cand)
    if (phi(x) < vout) {
      vout = phi(x);
      out = x;
    }
  return out;
}

/// Lq penalty α‖u^{1/q−1/2} p‖_q^q (parallel only): f = f_ref + P*(u^{-1/2} Δp).
inline StepResult gensart_lq(const Projector& P, const View& v, std::span<const double> f_ref, double alpha, double q) {
  require(alpha > 0, "alpha must be positive");
  require(q >= 1, "Lq penalty needs q >= 1");
  require(v.geom.parallel(), "Lq penalty is only supported for parallel geometry");
  if (q == 2.0) return gensart_l2(P, v, f_ref, alpha);
  Vec p_ref = P.project(v.geom, f_ref);
  StepResult out;
  out.residual = detail::support_residual(v, p_ref);
  Vec step(p_ref.size(), 0.0);
  for (size_t i = 0; i < step.size(); ++i) {
    if (!v.unit.support[i]) continue;
    double c = alpha * std::pow(v.unit.u[i], 1 - q);
    double x = lq_scalar(v.fidelity, i, p_ref[i], c, q);
    step[i] = x - p_ref[i];
    out.objective += v.geom.pixel_measure(static_cast<int>(i / v.geom.n_u)) *
                     (fidelity_value(v.fidelity, i, x) + c * std::pow(std::abs(step[i]), q));
  }
  Vec upd = P.adjoint(v.geom, masked_divide(step, v.unit.u, 1.0));
  out.f.assign(f_ref.begin(), f_ref.end());
  axpy(1.0, upd, out.f);
  return out;
}

/// Dispatch on the penalty family.
inline StepResult gensart_step(const Projector& P, const View& v, std::span<const double> f_ref,
                               const PenaltySpec& pen, double alpha, InnerSolverOptions opt = {}) {
  switch (pen.family) {
    case PenaltySpec::Family::L2: return gensart_l2(P, v, f_ref, alpha);
    case PenaltySpec::Family::WeightedL2: return gensart_weighted_l2(P, v, f_ref, pen.weight, alpha);
    case PenaltySpec::Family::WeightedProjector: return gensart_weighted_projector(P, v, f_ref, pen.weight, alpha);
    case PenaltySpec::Family::SobolevW12: return gensart_w12(P, v, f_ref, alpha, pen.gamma, opt);
    case PenaltySpec::Family::Lq: return gensart_lq(P, v, f_ref, alpha, pen.q);
  }
  return gensart_l2(P, v, f_ref, alpha);
}

}  // namespace gensart
