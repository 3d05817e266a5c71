#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <utility>

#include "gensart.hpp"

namespace gensart {

/// Multilevel processing order: floor(N · vdc(r)) over r, duplicates skipped.
/// For N = 2^m this is bit reversal, e.g. N = 8 → 0 4 2 6 1 5 3 7.
inline std::vector<size_t> multilevel_order(size_t n) {
  std::vector<size_t> out;
  if (n == 0) return out;
  int bits = 0;
  while ((size_t{1} << bits) < n) ++bits;
  const size_t total = size_t{1} << bits;
  std::vector<char> seen(n, 0);
  for (size_t r = 0; r < total; ++r) {
    size_t rev = 0;
    for (int b = 0; b < bits; ++b)
      if (r & (size_t{1} << b)) rev |= size_t{1} << (bits - 1 - b);
    size_t idx = (rev * n) / total;
    if (!seen[idx]) {
      seen[idx] = 1;
      out.push_back(idx);
    }
  }
  return out;
}

/// Volume-space term R handled by operator splitting after each GenSART step.
struct SplittingTerm {
  std::string name;
  std::function<void(std::span<double>, double)> prox;      // f ← prox_{σR}(f)
  std::function<Vec(std::span<const double>)> gradient;     // ∇R(f)
};

enum class SplitMode { Backward, Forward };

inline SplittingTerm nonnegativity_term() {
  return {"nonnegativity", [](std::span<double> f, double) {
            for (double& v : f) v = std::max(v, 0.0);
          },
          nullptr};
}

/// R(f) = β‖f − f_s‖² (both prox and gradient available).
inline SplittingTerm quadratic_term(double beta, Vec f_s) {
  auto fs = std::make_shared<Vec>(std::move(f_s));
  return {"quadratic",
          [beta, fs](std::span<double> f, double sigma) {
            for (size_t i = 0; i < f.size(); ++i) f[i] = (f[i] + 2 * sigma * beta * (*fs)[i]) / (1 + 2 * sigma * beta);
          },
          [beta, fs](std::span<const double> f) {
            Vec g(f.size());
            for (size_t i = 0; i < f.size(); ++i) g[i] = 2 * beta * (f[i] - (*fs)[i]);
            return g;
          }};
}

/// R(f) = β Σ sqrt(|∇f|² + ε²) with forward differences (gradient only).
inline SplittingTerm smoothed_tv_term(std::vector<int> dims, double beta, double eps) {
  return {"smoothed_tv", nullptr, [dims, beta, eps](std::span<const double> f) {
            const int d = static_cast<int>(dims.size());
            std::vector<size_t> stride(d);
            size_t s = 1;
            for (int k = d - 1; k >= 0; --k) {
              stride[k] = s;
              s *= dims[k];
            }
            Vec g(f.size(), 0.0);
            std::vector<int> idx(d);
            for (size_t i = 0; i < f.size(); ++i) {
              size_t r = i;
              for (int k = 0; k < d; ++k) {
                idx[k] = static_cast<int>(r / stride[k]);
                r %= stride[k];
              }
              double n2 = eps * eps;
              double diff[3] = {0, 0, 0};
              for (int k = 0; k < d; ++k)
                if (idx[k] + 1 < dims[k]) {
                  diff[k] = f[i + stride[k]] - f[i];
                  n2 += diff[k] * diff[k];
                }
              double inv = beta / std::sqrt(n2);
              for (int k = 0; k < d; ++k)
                if (idx[k] + 1 < dims[k]) {
                  g[i + stride[k]] += inv * diff[k];
                  g[i] -= inv * diff[k];
                }
            }
            return g;
          }};
}

/// f_{k+1} = prox_{σR}(f_half) (backward) or f_half − σ∇R(f_half) (forward).
inline Vec splitting_step(std::span<const double> f_half, const SplittingTerm& term, double sigma, SplitMode mode) {
  require(sigma > 0, "splitting step size must be positive");
  Vec f(f_half.begin(), f_half.end());
  if (mode == SplitMode::Backward) {
    require(static_cast<bool>(term.prox), "splitting term '" + term.name + "' has no proximal map");
    term.prox(f, sigma);
  } else {
    require(static_cast<bool>(term.gradient), "splitting term '" + term.name + "' has no gradient");
    axpy(-sigma, term.gradient(f_half), f);
  }
  return f;
}

inline Vec apply_box(std::span<const double> f, double f_min, double f_max) {
  require(f_min <= f_max, "box constraint needs f_min <= f_max");
  Vec out(f.begin(), f.end());
  for (double& v : out) v = std::clamp(v, f_min, f_max);
  return out;
}

/// α₁‖f − f_k‖² + α₂‖f − f_s‖² = (α₁+α₂)‖f − f_ref‖² + const.
inline std::pair<Vec, double> merge_static_regularizer(std::span<const double> f_k, std::span<const double> f_s,
                                                       double a1, double a2) {
  require(a1 > 0 && a2 >= 0, "merge needs alpha1 > 0 and alpha2 >= 0");
  Vec ref(f_k.size());
  for (size_t i = 0; i < ref.size(); ++i) ref[i] = (a1 * f_k[i] + a2 * f_s[i]) / (a1 + a2);
  return {std::move(ref), a1 + a2};
}

struct IterationPlan {
  enum class Order { Sequential, Multilevel, Custom };
  Order order = Order::Multilevel;
  std::vector<size_t> custom;
  bool symmetric = false;   // forward sweep then the reversed sweep
  int cycles = 1;
  long k_stop = -1;         // overrides cycles when >= 0
  double alpha = 1.0;
  std::optional<std::pair<double, double>> box;
  double alpha_static = 0.0;
  Vec f_static;
  std::optional<SplittingTerm> splitting;
  SplitMode split_mode = SplitMode::Backward;
  double split_sigma = 1.0;
  double split_tau = 0.0;   // τ_k; 0 → default 1/(2α), i.e. the GenSART weight stays α

  /// Full view sequence j_0, …, j_{k_stop−1}.
  std::vector<size_t> sequence(size_t n) const {
    std::vector<size_t> base;
    switch (order) {
      case Order::Sequential:
        base.resize(n);
        std::iota(base.begin(), base.end(), size_t{0});
        break;
      case Order::Multilevel: base = multilevel_order(n); break;
      case Order::Custom:
        base = custom;
        for (size_t j : base) require(j < n, "custom order references a missing view");
        break;
    }
    std::vector<size_t> cycle = base;
    if (symmetric) cycle.insert(cycle.end(), base.rbegin(), base.rend());
    const long len = k_stop >= 0 ? k_stop : static_cast<long>(cycle.size()) * cycles;
    std::vector<size_t> seq;
    if (cycle.empty()) return seq;
    for (long k = 0; k < len; ++k) seq.push_back(cycle[k % cycle.size()]);
    return seq;
  }

  void validate() const {
    require(alpha > 0, "alpha must be positive");
    require(cycles >= 0, "cycles must be non-negative");
    if (box) require(box->first <= box->second, "box constraint needs f_min <= f_max");
    require(alpha_static >= 0, "static alpha must be non-negative");
    if (splitting) require(split_sigma > 0, "splitting step must be positive");
  }
};

struct IterationMetrics {
  long iter = 0;
  size_t view = 0;
  double residual = 0.0;
  double objective = 0.0;
  double update_norm = 0.0;
};

struct RunResult {
  Vec f;
  std::vector<IterationMetrics> metrics;
};

inline void write_metrics_csv(std::ostream& os, const std::vector<IterationMetrics>& m) {
  os << "iter,view,residual,objective,update_norm\n";
  os.precision(10);
  for (const auto& r : m) os << r.iter << ',' << r.view << ',' << r.residual << ',' << r.objective << ',' << r.update_norm << '\n';
}

/// Regularized Kaczmarz iteration. `step(view, f_k, f_ref, α)` returns a StepResult.
template <class Step>
RunResult run(const IterationPlan& plan, size_t n_views, Vec f0, Step&& step) {
  plan.validate();
  if (plan.alpha_static > 0) require(plan.f_static.size() == f0.size(), "static reference must match the volume");
  RunResult out;
  out.f = std::move(f0);
  const auto seq = plan.sequence(n_views);
  const double alpha_step = plan.splitting && plan.split_tau > 0 ? 1.0 / (2 * plan.split_tau) : plan.alpha;
  for (long k = 0; k < static_cast<long>(seq.size()); ++k) {
    const size_t j = seq[k];
    Vec f_ref;
    double alpha = alpha_step;
    if (plan.alpha_static > 0) {
      std::tie(f_ref, alpha) = merge_static_regularizer(out.f, plan.f_static, alpha_step, plan.alpha_static);
    } else {
      f_ref = out.f;
    }
    StepResult r = step(j, std::as_const(out.f), std::as_const(f_ref), alpha);
    Vec f_new = std::move(r.f);
    if (plan.splitting) f_new = splitting_step(f_new, *plan.splitting, plan.split_sigma, plan.split_mode);
    if (plan.box) f_new = apply_box(f_new, plan.box->first, plan.box->second);
    if (!all_finite(f_new)) throw SolverError("non-finite iterate", k);
    out.metrics.push_back({k, j, r.residual, r.objective, diff_norm2(f_new, out.f)});
    out.f = std::move(f_new);
  }
  return out;
}

/// GenSART stepper over a view set with a fixed penalty family.
struct GenSartStepper {
  const Projector& P;
  const std::vector<View>& views;
  PenaltySpec penalty;
  InnerSolverOptions inner{};

  StepResult operator()(size_t j, const Vec&, const Vec& f_ref, double alpha) const {
    return gensart_step(P, views[j], f_ref, penalty, alpha, inner);
  }
};

}  // namespace gensart
