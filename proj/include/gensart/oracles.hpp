#pragma once

#include <random>

#include "baselines.hpp"

namespace gensart {

/// Brute-force minimiser of a 1D objective on [lo, hi]: dense grid, then repeated zooming.
template <class Obj>
std::pair<double, double> grid_minimize(Obj&& obj, double lo, double hi, int points = 4001, double xtol = 1e-13) {
  auto safe = [&](double x) {
    double v = obj(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };
  double best = lo, best_v = safe(lo);
  for (int level = 0; level < 60; ++level) {
    const double h = (hi - lo) / (points - 1);
    for (int k = 0; k < points; ++k) {
      double x = lo + h * k, v = safe(x);
      if (v < best_v) {
        best_v = v;
        best = x;
      }
    }
    if (h < xtol * (1 + std::abs(best))) break;
    lo = best - 2 * h;
    hi = best + 2 * h;
  }
  return {best, best_v};
}

struct ProxCase {
  FidelitySpec spec;  // one pixel
  double y = 0.0, tau = 1.0;
};

/// Random one-pixel prox problem of the given kind.
inline ProxCase random_prox_case(FidelitySpec::Kind kind, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto logu = [&](double a, double b) { return a * std::pow(b / a, U(rng)); };
  ProxCase c;
  c.spec.kind = kind;
  c.tau = logu(1e-2, 1e2);
  c.y = 10 * U(rng) - 5;
  c.spec.data = {10 * U(rng) - 5};
  c.spec.nu = logu(0.05, 5);
  switch (kind) {
    case FidelitySpec::Kind::WeightedL2: c.spec.sigma = {logu(0.1, 10)}; break;
    case FidelitySpec::Kind::PoissonDark:
    case FidelitySpec::Kind::PoissonBright: {
      c.spec.data = {U(rng) < 0.1 ? 0.0 : std::floor(50 * U(rng))};
      c.spec.exposure = logu(0.5, 2);
      c.spec.intensity = {logu(0.2, 10)};
      c.spec.omega = {logu(0.5, 2)};
      if (kind == FidelitySpec::Kind::PoissonBright) c.y = 6 * U(rng) - 1;
      break;
    }
    default: break;
  }
  return c;
}

struct ProxCheck {
  double x = 0.0, x_grid = 0.0;
  double x_err = 0.0;    // |x − x_grid| / max(1, |x_grid|)
  double obj_err = 0.0;  // max(0, J(x) − J(x_grid)) / max(1, |J(x_grid)|)
};

inline ProxCheck check_prox_case(const ProxCase& c) {
  const auto& s = c.spec;
  auto J = [&](double x) { return fidelity_value(s, 0, x) + (x - c.y) * (x - c.y) / (2 * c.tau); };
  // The minimiser lies between y and a minimiser of s; bracket both with some slack.
  const double g = s.data[0];
  double lo = std::min(c.y, g), hi = std::max(c.y, g);
  if (s.kind == FidelitySpec::Kind::PoissonDark) {
    double a = s.exposure * s.intensity_at(0);
    lo = 0.0;
    hi = std::max(c.y, g / a);
  } else if (s.kind == FidelitySpec::Kind::PoissonBright) {
    double a = s.exposure * s.intensity_at(0);
    lo = c.y - c.tau * s.omega_at(0) * g;
    hi = c.y + c.tau * s.omega_at(0) * a * std::exp(-c.y);
  }
  const double pad = 0.05 * (hi - lo) + 1e-3;
  if (s.kind != FidelitySpec::Kind::PoissonDark) lo -= pad;
  hi += pad;
  ProxCheck out;
  out.x = prox_scalar(s, 0, c.y, c.tau);
  auto [xg, vg] = grid_minimize(J, lo, hi);
  out.x_grid = xg;
  out.x_err = std::abs(out.x - xg) / std::max(1.0, std::abs(xg));
  out.obj_err = std::max(0.0, J(out.x) - vg) / std::max(1.0, std::abs(vg));
  return out;
}

struct ProxSuiteResult {
  FidelitySpec::Kind kind;
  int cases = 0;
  double max_x_err = 0.0, max_obj_err = 0.0;
};

inline ProxSuiteResult prox_oracle_suite(FidelitySpec::Kind kind, int cases, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ProxSuiteResult r{kind, cases};
  for (int k = 0; k < cases; ++k) {
    auto chk = check_prox_case(random_prox_case(kind, rng));
    r.max_x_err = std::max(r.max_x_err, chk.x_err);
    r.max_obj_err = std::max(r.max_obj_err, chk.obj_err);
  }
  return r;
}

inline constexpr FidelitySpec::Kind all_fidelity_kinds[] = {
    FidelitySpec::Kind::L2,       FidelitySpec::Kind::WeightedL2,  FidelitySpec::Kind::Huber,
    FidelitySpec::Kind::StudentT, FidelitySpec::Kind::PoissonDark, FidelitySpec::Kind::PoissonBright};

/// Gaussian block system: N ∈ [1, max_blocks] blocks of 1..max_rows rows, n unknowns, α log-uniform in [0.5, 20].
inline BlockLinearSystem random_block_system(std::uint64_t seed, int n, int max_blocks = 5, int max_rows = 8) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N01(0.0, 1.0);
  std::uniform_int_distribution<int> nb(1, max_blocks), nr(1, max_rows);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  BlockLinearSystem sys;
  const int blocks = nb(rng);
  for (int j = 0; j < blocks; ++j) {
    const int m = nr(rng);
    Eigen::MatrixXd A(m, n);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) A(r, c) = N01(rng);
    Eigen::VectorXd g(m);
    for (int r = 0; r < m; ++r) g(r) = N01(rng);
    sys.A.push_back(std::move(A));
    sys.g.push_back(std::move(g));
  }
  sys.f0.resize(n);
  for (int c = 0; c < n; ++c) sys.f0(c) = N01(rng);
  sys.alpha = 0.5 * std::pow(40.0, U(rng));
  return sys;
}

}  // namespace gensart
