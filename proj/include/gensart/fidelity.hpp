#pragma once

#include <array>
#include <complex>
#include <limits>

#include "unit_projections.hpp"

namespace gensart {

/// Integral-form data fidelity S(p) = ∫ s(x, p(x)) dx on one detector.
struct FidelitySpec {
  enum class Kind { L2, WeightedL2, Huber, StudentT, PoissonDark, PoissonBright };
  Kind kind = Kind::L2;
  Vec data;          // g^obs, or g^obs_cont for the Poisson kinds
  double nu = 1.0;   // Huber / Student-t scale
  Vec sigma;         // WeightedL2 per-pixel std (empty = 1)
  double exposure = 1.0;  // t
  Vec intensity;     // I_j per pixel (empty = 1)
  Vec omega;         // sensitivity sum ω (empty = 1)

  double sigma_at(size_t i) const { return sigma.empty() ? 1.0 : sigma[i]; }
  double intensity_at(size_t i) const { return intensity.empty() ? 1.0 : intensity[i]; }
  double omega_at(size_t i) const { return omega.empty() ? 1.0 : omega[i]; }
  bool poisson() const { return kind == Kind::PoissonDark || kind == Kind::PoissonBright; }
  bool quadratic() const { return kind == Kind::L2 || kind == Kind::WeightedL2; }

  void validate() const {
    require(nu > 0, "fidelity nu must be positive");
    require(exposure > 0, "exposure t must be positive");
    for (double s : sigma) require(s > 0, "sigma must be positive");
    for (double v : intensity) require(v >= 0, "intensity must be non-negative");
    for (double v : omega) require(v >= 0, "omega must be non-negative");
    if (poisson())
      for (double v : data) require(v >= 0, "Poisson counts must be non-negative");
  }
};

inline const char* kind_name(FidelitySpec::Kind k) {
  switch (k) {
    case FidelitySpec::Kind::L2: return "l2";
    case FidelitySpec::Kind::WeightedL2: return "weighted_l2";
    case FidelitySpec::Kind::Huber: return "huber";
    case FidelitySpec::Kind::StudentT: return "student_t";
    case FidelitySpec::Kind::PoissonDark: return "poisson_dark";
    case FidelitySpec::Kind::PoissonBright: return "poisson_bright";
  }
  return "?";
}

/// KL(b; a) = a - b - b ln(a/b), with 0 ln(·/0) = 0 and +∞ for a ≤ 0 < b.
inline double kl_divergence(double b, double a) {
  if (a < 0 || std::isinf(a)) return std::numeric_limits<double>::infinity();
  if (b <= 0) return a;
  if (a == 0) return std::numeric_limits<double>::infinity();
  return a - b - b * std::log(a / b);
}

inline double huber(double z, double nu) {
  double a = std::abs(z);
  return a <= nu ? z * z : 2 * nu * a - nu * nu;
}

inline double student_t(double z, double nu) { return nu * nu * std::log1p(z * z / (nu * nu)); }

/// s(x_i, y) for pixel i.
inline double fidelity_value(const FidelitySpec& s, size_t i, double y) {
  const double g = s.data[i];
  switch (s.kind) {
    case FidelitySpec::Kind::L2: return (y - g) * (y - g);
    case FidelitySpec::Kind::WeightedL2: {
      double z = (y - g) / s.sigma_at(i);
      return z * z;
    }
    case FidelitySpec::Kind::Huber: return huber(y - g, s.nu);
    case FidelitySpec::Kind::StudentT: return student_t(y - g, s.nu);
    case FidelitySpec::Kind::PoissonDark: {
      double w = s.omega_at(i);
      return w == 0 ? 0.0 : w * kl_divergence(g, s.exposure * s.intensity_at(i) * y);
    }
    case FidelitySpec::Kind::PoissonBright: {
      double w = s.omega_at(i);
      return w == 0 ? 0.0 : w * kl_divergence(g, s.exposure * s.intensity_at(i) * std::exp(-y));
    }
  }
  return 0.0;
}

/// Σ s(x_i, p_i) · pixel measure over the support (or all pixels if `support` is empty).
inline double eval_fidelity(const FidelitySpec& s, std::span<const double> p, const Geometry* g = nullptr,
                            const std::vector<std::uint8_t>* support = nullptr) {
  double total = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (support && !(*support)[i]) continue;
    double a = g ? g->pixel_measure(static_cast<int>(i / g->n_u)) : 1.0;
    total += a * fidelity_value(s, i, p[i]);
  }
  return total;
}

namespace detail {

/// Real roots of x^3 + a x^2 + b x + c, polished by Newton.
inline std::vector<double> cubic_roots(double a, double b, double c) {
  std::vector<double> r;
  const double q = (a * a - 3 * b) / 9, rr = (2 * a * a * a - 9 * a * b + 27 * c) / 54;
  const double q3 = q * q * q;
  if (rr * rr < q3) {
    const double th = std::acos(std::clamp(rr / std::sqrt(q3), -1.0, 1.0));
    const double m = -2 * std::sqrt(q);
    for (int k = 0; k < 3; ++k) r.push_back(m * std::cos((th + 2 * std::numbers::pi * (k - 1)) / 3) - a / 3);
  } else {
    double A = -std::copysign(std::cbrt(std::abs(rr) + std::sqrt(rr * rr - q3)), rr);
    double B = A == 0 ? 0 : q / A;
    r.push_back(A + B - a / 3);
  }
  for (double& x : r)
    for (int it = 0; it < 3; ++it) {
      double f = ((x + a) * x + b) * x + c, df = (3 * x + 2 * a) * x + b;
      if (df == 0) break;
      double nx = x - f / df;
      if (!std::isfinite(nx)) break;
      x = nx;
    }
  return r;
}

}  // namespace detail

/// argmin_x s(x_i, x) + (x - y)^2 / (2τ).
inline double prox_scalar(const FidelitySpec& s, size_t i, double y, double tau) {
  const double g = s.data[i];
  switch (s.kind) {
    case FidelitySpec::Kind::L2: return (y + 2 * tau * g) / (1 + 2 * tau);
    case FidelitySpec::Kind::WeightedL2: {
      double s2 = s.sigma_at(i) * s.sigma_at(i);
      return (s2 * y + 2 * tau * g) / (s2 + 2 * tau);
    }
    case FidelitySpec::Kind::Huber: {
      double z = y - g;
      return g + z - 2 * s.nu * tau * z / std::max(std::abs(z), s.nu * (1 + 2 * tau));
    }
    case FidelitySpec::Kind::StudentT: {
      // (x^2 + ν^2)(x - z) + 2τν^2 x = 0 for the shifted variable x.
      const double z = y - g, nu2 = s.nu * s.nu;
      auto roots = detail::cubic_roots(-z, nu2 * (1 + 2 * tau), -nu2 * z);
      double best = z, best_obj = std::numeric_limits<double>::infinity();
      for (double x : roots) {
        double obj = student_t(x, s.nu) + (x - z) * (x - z) / (2 * tau);
        double tol = 1e-14 * (1 + std::abs(obj));
        if (obj < best_obj - tol || (std::abs(obj - best_obj) <= tol && std::abs(x - z) < std::abs(best - z))) {
          best = x;
          best_obj = obj;
        }
      }
      return g + best;
    }
    case FidelitySpec::Kind::PoissonDark: {
      // ω(a y - b ln y) + (y - v)^2/(2τ), a = tI, b = counts.
      const double w = s.omega_at(i), a = s.exposure * s.intensity_at(i), b = g;
      if (w == 0 || (a == 0 && b > 0)) return y;  // fidelity constant in y
      const double c = y - w * a * tau;
      if (b == 0) return std::max(c, 0.0);
      const double disc = std::sqrt(c * c + 4 * w * b * tau);
      // Stable root of x^2 - c x - ωbτ = 0.
      return c >= 0 ? 0.5 * (c + disc) : 2 * w * b * tau / (disc - c);
    }
    case FidelitySpec::Kind::PoissonBright: {
      // ω(a e^{-x} + b x) + (x - y)^2/(2τ); h(x) = ω(b - a e^{-x}) + (x - y)/τ is increasing.
      const double w = s.omega_at(i), a = s.exposure * s.intensity_at(i), b = g;
      if (w == 0) return y;
      auto h = [&](double x) { return w * (b - a * std::exp(-x)) + (x - y) / tau; };
      double lo, hi;
      const double hy = h(y);
      if (hy == 0) return y;
      if (hy > 0) {
        lo = y - tau * w * b;
        hi = y;
      } else {
        lo = y;
        hi = y + tau * w * a * std::exp(-y);
      }
      double x = y;
      for (int it = 0; it < 30; ++it) {
        double hx = h(x);
        if (hx > 0) hi = std::min(hi, x);
        else lo = std::max(lo, x);
        double dh = w * a * std::exp(-x) + 1 / tau;
        double nx = x - hx / dh;
        if (!(nx > lo && nx < hi)) nx = 0.5 * (lo + hi);
        if (std::abs(nx - x) <= 1e-15 * (1 + std::abs(x))) return nx;
        x = nx;
      }
      for (int it = 0; it < 200 && hi - lo > 1e-15 * (1 + std::abs(lo)); ++it) {
        double m = 0.5 * (lo + hi);
        (h(m) > 0 ? hi : lo) = m;
      }
      return 0.5 * (lo + hi);
    }
  }
  return y;
}

/// Pointwise solve of argmin_p S(p_ref + m p) + α ‖c^{1/2} p‖² on the support.
///
/// With x = p_ref + m p each pixel is a prox with step τ = m² / (2 α c). Returns the
/// shifted optimum x* - p_ref (= m Δp); callers rescale.  Also reports the objective.
struct PointwiseSolution {
  Vec step;  // x* - p_ref
  double objective = 0.0;
};

inline PointwiseSolution solve_pointwise(const FidelitySpec& s, std::span<const double> p_ref,
                                         std::span<const double> tau, const std::vector<std::uint8_t>& support,
                                         const Geometry* g = nullptr) {
  PointwiseSolution out;
  out.step.assign(p_ref.size(), 0.0);
  for (size_t i = 0; i < p_ref.size(); ++i) {
    if (!support[i] || !(tau[i] > 0)) continue;
    double x = prox_scalar(s, i, p_ref[i], tau[i]);
    out.step[i] = x - p_ref[i];
    double a = g ? g->pixel_measure(static_cast<int>(i / g->n_u)) : 1.0;
    out.objective += a * (fidelity_value(s, i, x) + out.step[i] * out.step[i] / (2 * tau[i]));
  }
  return out;
}

/// Δp = ũ^{-1/2} (prox_{s}(p_ref, ũ/(2α)) - p_ref) on {ũ > 0}; zero elsewhere.
inline Vec solve_projection_problem(const FidelitySpec& s, std::span<const double> p_ref,
                                    std::span<const double> u_factor, double alpha) {
  require(alpha > 0, "alpha must be positive");
  Vec dp(p_ref.size(), 0.0);
  for (size_t i = 0; i < p_ref.size(); ++i) {
    if (!(u_factor[i] > 0)) continue;
    double x = prox_scalar(s, i, p_ref[i], u_factor[i] / (2 * alpha));
    dp[i] = (x - p_ref[i]) / std::sqrt(u_factor[i]);
  }
  return dp;
}

/// Count binning → continuous density. sens[i] holds ω_i sampled on a fine grid with cell measure `cell`.
struct CountDensity {
  Vec g_cont;
  Vec omega;
};

inline CountDensity bin_counts_to_density(std::span<const double> counts, const std::vector<Vec>& sens, double cell) {
  require(counts.size() == sens.size(), "one sensitivity per pixel required");
  const size_t n = sens.empty() ? 0 : sens[0].size();
  CountDensity out{Vec(n, 0.0), Vec(n, 0.0)};
  Vec num(n, 0.0);
  for (size_t i = 0; i < counts.size(); ++i) {
    require(counts[i] >= 0, "counts must be non-negative");
    require(sens[i].size() == n, "sensitivities must share one grid");
    double integral = 0.0;
    for (double v : sens[i]) integral += v * cell;
    for (size_t x = 0; x < n; ++x) {
      out.omega[x] += sens[i][x];
      if (integral > 0) num[x] += counts[i] * sens[i][x] / integral;
    }
  }
  for (size_t x = 0; x < n; ++x) out.g_cont[x] = out.omega[x] > 0 ? num[x] / out.omega[x] : 0.0;
  return out;
}

/// ν default: 20% of the data standard deviation.
inline double default_nu(std::span<const double> data) {
  double m = 0.0;
  for (double v : data) m += v;
  m /= std::max<size_t>(1, data.size());
  double v2 = 0.0;
  for (double v : data) v2 += (v - m) * (v - m);
  return 0.2 * std::sqrt(v2 / std::max<size_t>(1, data.size()));
}

}  // namespace gensart
