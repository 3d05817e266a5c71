#pragma once

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/eigen.hpp>
#include <fftw3.h>

#include "kaczmarz.hpp"

namespace gensart {

enum class RampFilter { RamLak, SheppLogan };

/// Spatially sampled ramp kernel convolved through FFT (zero-padded to avoid wrap-around).
inline Vec ramp_filter(std::span<const double> p, double pitch, RampFilter kind) {
  const int n = static_cast<int>(p.size());
  int L = 1;
  while (L < 2 * n) L <<= 1;
  std::vector<double> h(L, 0.0), x(L, 0.0);
  for (int k = 0; k < L; ++k) {
    int m = k <= L / 2 ? k : k - L;
    if (kind == RampFilter::RamLak) {
      if (m == 0) h[k] = 1.0 / (4 * pitch * pitch);
      else if (m % 2) h[k] = -1.0 / (std::numbers::pi * std::numbers::pi * m * m * pitch * pitch);
    } else {
      h[k] = -2.0 / (std::numbers::pi * std::numbers::pi * pitch * pitch * (4.0 * m * m - 1));
    }
  }
  std::copy(p.begin(), p.end(), x.begin());
  const int nc = L / 2 + 1;
  std::vector<std::complex<double>> H(nc), X(nc);
  auto plan_h = fftw_plan_dft_r2c_1d(L, h.data(), reinterpret_cast<fftw_complex*>(H.data()), FFTW_ESTIMATE);
  auto plan_x = fftw_plan_dft_r2c_1d(L, x.data(), reinterpret_cast<fftw_complex*>(X.data()), FFTW_ESTIMATE);
  fftw_execute(plan_h);
  fftw_execute(plan_x);
  for (int k = 0; k < nc; ++k) X[k] *= H[k] * (pitch / L);
  auto plan_b = fftw_plan_dft_c2r_1d(L, reinterpret_cast<fftw_complex*>(X.data()), x.data(), FFTW_ESTIMATE);
  fftw_execute(plan_b);
  fftw_destroy_plan(plan_h);
  fftw_destroy_plan(plan_x);
  fftw_destroy_plan(plan_b);
  return Vec(x.begin(), x.begin() + n);
}

/// Filtered back-projection for parallel 2D views spread uniformly over [0, π): f = (π/N) Σ P^B(h ⋆ p_j).
inline Vec fbp_reconstruct(const Projector& P, const std::vector<Geometry>& views, const std::vector<Vec>& sino,
                           RampFilter filter = RampFilter::RamLak) {
  require(!views.empty() && views.size() == sino.size(), "FBP needs one projection per view");
  const double th0 = std::atan2(views[0].direction[1], views[0].direction[0]);
  for (size_t j = 0; j < views.size(); ++j) {
    double d = std::atan2(views[j].direction[1], views[j].direction[0]) - th0 - std::numbers::pi * j / views.size();
    d = std::remainder(d, 2 * std::numbers::pi);
    require(std::abs(d) < 1e-6, "FBP needs uniformly spaced angles over [0, pi)");
  }
  Vec f(P.volume_size(), 0.0);
  for (size_t j = 0; j < views.size(); ++j) {
    require(views[j].parallel() && views[j].dim == 2, "FBP is implemented for parallel 2D views");
    Vec q = ramp_filter(sino[j], views[j].pitch_u, filter);
    axpy(std::numbers::pi / views.size(), P.back_project(views[j], q), f);
  }
  return f;
}

struct BaselineReport {
  Vec f;
  int iterations = 0;
  double criterion = 0.0;  // CG rel. residual or PD relative gap
  bool converged = false;
};

/// argmin Σ_j ‖P_j f − g_j‖² + α‖f‖² by CG on (P*P + α) f = P*g.
inline BaselineReport tikhonov_l2(const Projector& P, const std::vector<Geometry>& views, const std::vector<Vec>& sino,
                                  double alpha, double rtol = 1e-6, int max_iter = 500) {
  require(alpha > 0, "alpha must be positive");
  Vec b = adjoint_all(P, views, sino);
  auto A = [&](std::span<const double> x) {
    Vec y = adjoint_all(P, views, project_all(P, views, x));
    axpy(alpha, x, y);
    return y;
  };
  BaselineReport rep;
  rep.f.assign(b.size(), 0.0);
  auto cg = conjugate_gradient(A, b, rep.f, rtol, max_iter);
  rep.iterations = cg.iterations;
  rep.criterion = cg.rel_residual;
  rep.converged = cg.converged;
  return rep;
}

/// Operator norm of the stacked projector via power iteration on P*P.
inline double projector_norm(const Projector& P, const std::vector<Geometry>& views, int iterations = 30) {
  Vec x(P.volume_size());
  for (size_t i = 0; i < x.size(); ++i) x[i] = P.mask()[i] ? 1.0 + 0.1 * std::sin(0.7 * i) : 0.0;
  double lam = 0.0;
  for (int it = 0; it < iterations; ++it) {
    double nx = norm2(x);
    if (nx == 0) return 0.0;
    for (double& v : x) v /= nx;
    Vec y = adjoint_all(P, views, project_all(P, views, x));
    lam = dot(x, y);
    x = std::move(y);
  }
  return std::sqrt(lam);
}

struct PdOptions {
  double gap_tol = 0.01;  // relative primal-dual gap
  int max_iter = 500;
  int power_iterations = 30;
};

/// argmin Σ_j ∫ s_H(P_j f − g_j) + α‖f‖² by the linearly convergent primal-dual scheme
/// (both G = α‖·‖² and F* are strongly convex, moduli 2α and 1/2).
inline BaselineReport tikhonov_huber_pd(const Projector& P, const std::vector<Geometry>& views,
                                        const std::vector<Vec>& sino, double alpha, double nu, PdOptions opt = {}) {
  require(alpha > 0 && nu > 0, "alpha and nu must be positive");
  const size_t nv = views.size();
  const double L = projector_norm(P, views, opt.power_iterations) * 1.01;
  const double gam = 2 * alpha, del = 0.5;
  const double mu = 2 * std::sqrt(gam * del) / L;
  const double tau = mu / (2 * gam), sigma = mu / (2 * del), theta = 1 / (1 + mu);
  const double cell = P.grid().cell_volume();
  std::vector<FidelitySpec> fid(nv);
  for (size_t j = 0; j < nv; ++j) {
    fid[j].kind = FidelitySpec::Kind::Huber;
    fid[j].nu = nu;
    fid[j].data = sino[j];
  }
  BaselineReport rep;
  Vec x(P.volume_size(), 0.0);
  std::vector<Vec> Kx(nv), Kxbar(nv), y(nv);
  for (size_t j = 0; j < nv; ++j) {
    Kx[j].assign(views[j].pixels(), 0.0);
    Kxbar[j] = Kx[j];
    y[j].assign(views[j].pixels(), 0.0);
  }
  for (rep.iterations = 1; rep.iterations <= opt.max_iter; ++rep.iterations) {
    // Dual: prox_{σF*}(v) = v − σ prox_{F/σ}(v/σ), F* is finite only on |y| ≤ 2ν.
    for (size_t j = 0; j < nv; ++j)
      for (size_t i = 0; i < y[j].size(); ++i) {
        double v = y[j][i] + sigma * Kxbar[j][i];
        double yn = v - sigma * prox_scalar(fid[j], i, v / sigma, 1 / sigma);
        y[j][i] = std::clamp(yn, -2 * nu, 2 * nu);
      }
    Vec Ky = adjoint_all(P, views, y);
    for (size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - tau * Ky[i]) / (1 + 2 * alpha * tau);
    auto Kx_new = project_all(P, views, x);
    for (size_t j = 0; j < nv; ++j)
      for (size_t i = 0; i < Kx[j].size(); ++i) Kxbar[j][i] = Kx_new[j][i] + theta * (Kx_new[j][i] - Kx[j][i]);
    Kx = std::move(Kx_new);
    // Duality gap at (x^{n+1}, y^{n+1}).
    double primal = alpha * cell * dot(x, x), dual = 0.0;
    for (size_t j = 0; j < nv; ++j) {
      for (size_t i = 0; i < y[j].size(); ++i) {
        double a = views[j].pixel_measure(static_cast<int>(i / views[j].n_u));
        primal += a * huber(Kx[j][i] - sino[j][i], nu);
        dual -= a * (y[j][i] * y[j][i] / 4 + y[j][i] * sino[j][i]);
      }
    }
    dual -= cell * dot(Ky, Ky) / (4 * alpha);
    rep.criterion = (primal - dual) / std::max(std::abs(primal), 1e-300);
    if (!std::isfinite(rep.criterion)) throw SolverError("primal-dual iteration diverged", rep.iterations);
    if (rep.criterion <= opt.gap_tol) {
      rep.converged = true;
      break;
    }
  }
  rep.iterations = std::min(rep.iterations, opt.max_iter);
  rep.f = std::move(x);
  return rep;
}

/// Stacked linear blocks A_j with data g_j for the symmetric-cycle equivalence check.
struct BlockLinearSystem {
  std::vector<Eigen::MatrixXd> A;
  std::vector<Eigen::VectorXd> g;
  Eigen::VectorXd f0;
  double alpha = 1.0;

  size_t unknowns() const { return static_cast<size_t>(f0.size()); }
};

/// Exact regularized Kaczmarz step on a dense block: f_ref + A^T(AA^T + αI)^{-1}(g − A f_ref).
struct DenseBlockStepper {
  const BlockLinearSystem& sys;

  StepResult operator()(size_t j, const Vec&, const Vec& f_ref, double alpha) const {
    const auto& A = sys.A[j];
    Eigen::Map<const Eigen::VectorXd> fr(f_ref.data(), static_cast<Eigen::Index>(f_ref.size()));
    Eigen::VectorXd r = sys.g[j] - A * fr;
    Eigen::MatrixXd M = A * A.transpose();
    M.diagonal().array() += alpha;
    Eigen::VectorXd z = M.ldlt().solve(r);
    Eigen::VectorXd fn = fr + A.transpose() * z;
    StepResult out;
    out.f.assign(fn.data(), fn.data() + fn.size());
    out.residual = r.norm();
    out.objective = (A * fn - sys.g[j]).squaredNorm() + alpha * (fn - fr).squaredNorm();
    return out;
  }
};

/// Block factors of the bulk weight: D = blockdiag(I + A_jA_j^T/(2α)) and L block lower-triangular with I on
/// the diagonal and −(1/α) A_i A_j^T below it (i > j).  W = D^{1/2} L^{-1}.
template <class T>
std::pair<Eigen::Matrix<T, -1, -1>, Eigen::Matrix<T, -1, -1>> bulk_factors(const BlockLinearSystem& sys) {
  using M = Eigen::Matrix<T, -1, -1>;
  const size_t N = sys.A.size();
  std::vector<Eigen::Index> off(N + 1, 0);
  for (size_t j = 0; j < N; ++j) off[j + 1] = off[j] + sys.A[j].rows();
  const Eigen::Index m = off[N];
  const T alpha = sys.alpha;
  std::vector<M> A(N);
  for (size_t j = 0; j < N; ++j) A[j] = sys.A[j].cast<T>();
  M D = M::Zero(m, m), L = M::Identity(m, m);
  for (size_t i = 0; i < N; ++i) {
    M Di = A[i] * A[i].transpose() / T(2 * alpha);
    Di.diagonal().array() += T(1);
    D.block(off[i], off[i], Di.rows(), Di.cols()) = Di;
    for (size_t j = 0; j < i; ++j)
      L.block(off[i], off[j], A[i].rows(), A[j].rows()) = -(A[i] * A[j].transpose()) / alpha;
  }
  return {std::move(D), std::move(L)};
}

/// W itself (double precision), with the block square roots from symmetric eigendecompositions.
inline Eigen::MatrixXd bulk_weight(const BlockLinearSystem& sys) {
  auto [D, L] = bulk_factors<double>(sys);
  Eigen::Index o = 0;
  for (const auto& a : sys.A) {
    const Eigen::Index r = a.rows();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(D.block(o, o, r, r));
    D.block(o, o, r, r) = es.operatorSqrt();
    o += r;
  }
  Eigen::MatrixXd Linv = L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(L.rows(), L.cols()));
  return D * Linv;
}

struct OracleResult {
  Eigen::VectorXd f_cycle, f_bulk;
  double discrepancy = 0.0;
};

/// Minimiser of ‖W(A f − g)‖² + (α/2)‖f − f0‖² via W^TW = L^{-T} D L^{-1}, assembled in 50-digit
/// arithmetic: L^{-1} grows like (‖A‖²/α)^N and a double-precision assembly loses digits long before
/// the Kaczmarz cycle itself does.
inline Eigen::VectorXd bulk_minimizer(const BlockLinearSystem& sys) {
  using T = boost::multiprecision::cpp_bin_float_50;
  using M = Eigen::Matrix<T, -1, -1>;
  using V = Eigen::Matrix<T, -1, 1>;
  Eigen::Index m = 0;
  for (auto& a : sys.A) m += a.rows();
  M Atot(m, sys.f0.size());
  V gtot(m);
  m = 0;
  for (size_t j = 0; j < sys.A.size(); ++j) {
    Atot.middleRows(m, sys.A[j].rows()) = sys.A[j].cast<T>();
    gtot.segment(m, sys.A[j].rows()) = sys.g[j].cast<T>();
    m += sys.A[j].rows();
  }
  auto [D, L] = bulk_factors<T>(sys);
  M Z = L.template triangularView<Eigen::Lower>().solve(Atot);
  V z = L.template triangularView<Eigen::Lower>().solve(gtot);
  M H = Z.transpose() * D * Z;
  const T half_alpha = T(sys.alpha) / 2;
  for (Eigen::Index i = 0; i < H.rows(); ++i) H(i, i) += half_alpha;
  V rhs = Z.transpose() * (D * z);
  for (Eigen::Index i = 0; i < rhs.size(); ++i) rhs(i) += half_alpha * T(sys.f0(i));
  V f = H.llt().solve(rhs);
  Eigen::VectorXd out(f.size());
  for (Eigen::Index i = 0; i < f.size(); ++i) out(i) = static_cast<double>(f(i));
  return out;
}

/// One symmetric Kaczmarz cycle (double precision) vs the bulk minimiser.
inline OracleResult symmetric_cycle_oracle(const BlockLinearSystem& sys) {
  require(!sys.A.empty() && sys.A.size() == sys.g.size(), "block system needs matching blocks and data");
  require(sys.alpha > 0, "alpha must be positive");
  for (size_t j = 0; j < sys.A.size(); ++j)
    require(sys.A[j].cols() == sys.f0.size() && sys.A[j].rows() == sys.g[j].size(), "block dimensions mismatch");
  IterationPlan plan;
  plan.order = IterationPlan::Order::Sequential;
  plan.symmetric = true;
  plan.alpha = sys.alpha;
  Vec f0(sys.f0.data(), sys.f0.data() + sys.f0.size());
  auto res = run(plan, sys.A.size(), f0, DenseBlockStepper{sys});
  OracleResult out;
  out.f_cycle = Eigen::Map<Eigen::VectorXd>(res.f.data(), static_cast<Eigen::Index>(res.f.size()));
  out.f_bulk = bulk_minimizer(sys);
  out.discrepancy = (out.f_cycle - out.f_bulk).norm() / std::max(out.f_bulk.norm(), 1e-300);
  return out;
}

}  // namespace gensart
