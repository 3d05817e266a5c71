#pragma once

#include "common.hpp"

namespace gensart {

struct CgReport {
  int iterations = 0;
  double rel_residual = 0.0;
  bool converged = false;
};

/// Matrix-free conjugate gradients for an SPD operator `apply(x) -> Ax`; x holds the initial guess.
template <class Apply>
CgReport conjugate_gradient(Apply&& apply, std::span<const double> b, Vec& x, double rtol, int max_iter) {
  CgReport rep;
  const double bnorm = norm2(b);
  if (x.size() != b.size()) x.assign(b.size(), 0.0);
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    rep.converged = true;
    return rep;
  }
  Vec r(b.begin(), b.end());
  axpy(-1.0, apply(x), r);
  Vec p = r;
  double rr = dot(r, r);
  for (rep.iterations = 0; rep.iterations < max_iter; ++rep.iterations) {
    rep.rel_residual = std::sqrt(rr) / bnorm;
    if (rep.rel_residual <= rtol) break;
    Vec Ap = apply(p);
    double pAp = dot(p, Ap);
    if (!(pAp > 0) || !std::isfinite(pAp)) throw SolverError("CG breakdown: operator not positive definite");
    double a = rr / pAp;
    axpy(a, p, x);
    axpy(-a, Ap, r);
    double rr_new = dot(r, r);
    double beta = rr_new / rr;
    rr = rr_new;
    for (size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
  }
  rep.rel_residual = std::sqrt(rr) / bnorm;
  rep.converged = rep.rel_residual <= rtol;
  return rep;
}

}  // namespace gensart
