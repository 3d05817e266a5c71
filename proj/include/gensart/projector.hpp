#pragma once

#include <atomic>

#include "geometry.hpp"

namespace gensart {

/// Ray-driven projector with half-voxel steps and bi/trilinear interpolation.
///
/// adjoint() is the exact transpose scaled by (pixel measure / voxel volume), i.e. the
/// adjoint for the quadrature-weighted L2 products on detector and volume.
/// back_project() divides the ray density back out.  Every call of project /
/// adjoint / back_project (single- or multi-channel) bumps one counter.
class Projector {
 public:
  Projector(const VolumeGrid& shape, Domain dom, int supersample = 1, double step = 0.5)
      : grid_(shape.dims, shape.voxel), domain_(std::move(dom)), supersample_(supersample), step_(step) {
    require(supersample >= 1, "supersample must be >= 1");
    require(step > 0 && step <= 1, "ray step must be in (0, 1] voxels");
    grid_.values.clear();
    mask_ = domain_mask(domain_, shape);
    full_mask_ = std::all_of(mask_.begin(), mask_.end(), [](auto m) { return m != 0; });
  }

  const VolumeGrid& grid() const { return grid_; }
  const Domain& domain() const { return domain_; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }
  int supersample() const { return supersample_; }
  double step() const { return step_; }
  size_t volume_size() const { return grid_.size(); }

  long project_calls() const { return project_calls_.load(); }
  long adjoint_calls() const { return adjoint_calls_.load(); }
  void reset_counters() const {
    project_calls_ = 0;
    adjoint_calls_ = 0;
  }

  Vec project(const Geometry& g, std::span<const double> f) const {
    return std::move(project_multi(g, {f})[0]);
  }

  /// Projects several volumes along the same rays in one pass.
  std::vector<Vec> project_multi(const Geometry& g, const std::vector<std::span<const double>>& fs) const {
    check(g);
    ++project_calls_;
    const size_t nc = fs.size();
    std::vector<Vec> masked;
    std::vector<const double*> src(nc);
    for (size_t c = 0; c < nc; ++c) {
      require(fs[c].size() == grid_.size(), "volume size does not match the projector grid");
      if (full_mask_) {
        src[c] = fs[c].data();
      } else {
        masked.emplace_back(fs[c].begin(), fs[c].end());
        apply_mask(masked.back(), mask_);
        src[c] = masked.back().data();
      }
    }
    std::vector<Vec> out(nc, Vec(g.pixels(), 0.0));
    const long npix = static_cast<long>(g.pixels());
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (long i = 0; i < npix; ++i) {
      double acc[16];
      std::vector<double> big;
      double* a = acc;
      if (nc > 16) {
        big.assign(nc, 0.0);
        a = big.data();
      } else {
        std::fill(acc, acc + nc, 0.0);
      }
      trace_pixel(g, i, [&](size_t idx, double w) {
        for (size_t c = 0; c < nc; ++c) a[c] += w * src[c][idx];
      });
      for (size_t c = 0; c < nc; ++c) out[c][i] = a[c];
    }
    return out;
  }

  Vec adjoint(const Geometry& g, std::span<const double> p) const { return std::move(adjoint_multi(g, {p})[0]); }

  std::vector<Vec> adjoint_multi(const Geometry& g, const std::vector<std::span<const double>>& ps) const {
    check(g);
    ++adjoint_calls_;
    return transpose(g, ps);
  }

  Vec back_project(const Geometry& g, std::span<const double> p) const {
    return std::move(back_project_multi(g, {p})[0]);
  }

  std::vector<Vec> back_project_multi(const Geometry& g, const std::vector<std::span<const double>>& ps) const {
    auto out = adjoint_multi(g, ps);
    if (g.parallel()) return out;
    Vec w = ray_density(g);
    for (auto& v : out)
      for (size_t i = 0; i < v.size(); ++i) v[i] = w[i] > 0 ? v[i] / w[i] : 0.0;
    return out;
  }

  /// w_P at voxel centres, zero outside Ω.
  Vec ray_density(const Geometry& g) const {
    Vec w(grid_.size(), 0.0);
    for (size_t i = 0; i < w.size(); ++i)
      if (mask_[i]) w[i] = g.ray_density(grid_.center(i));
    return w;
  }

  /// Visits (voxel index, quadrature weight) along every sub-ray of detector pixel `pixel`.
  template <class Fn>
  void trace_pixel(const Geometry& g, long pixel, Fn&& fn) const {
    const int iu = static_cast<int>(pixel % g.n_u), iv = static_cast<int>(pixel / g.n_u);
    const int s = supersample_;
    const int sv = g.dim == 3 ? s : 1;
    const double sub = 1.0 / (static_cast<double>(s) * sv);
    for (int b = 0; b < sv; ++b)
      for (int a = 0; a < s; ++a) {
        double fu = iu + (a + 0.5) / s - 0.5;
        double fv = g.dim == 3 ? iv + (b + 0.5) / s - 0.5 : 0.0;
        trace_ray(g.ray(fu, fv), g.dim, sub, fn);
      }
  }

 private:
  void check(const Geometry& g) const {
    require(g.dim == grid_.dim(), "geometry dimension does not match the volume");
  }

  std::vector<Vec> transpose(const Geometry& g, const std::vector<std::span<const double>>& ps) const {
    const size_t nc = ps.size(), nv = grid_.size();
    for (auto& p : ps) require(p.size() == g.pixels(), "projection size does not match the detector");
    const int nt = thread_count();
    const long npix = static_cast<long>(g.pixels());
    const double inv_cell = 1.0 / grid_.cell_volume();
    // Per-thread accumulators, reduced in fixed thread order (deterministic for a fixed pool).
    std::vector<std::vector<Vec>> buf(nt, std::vector<Vec>(nc));
#pragma omp parallel num_threads(nt)
    {
      int t = 0;
#ifdef _OPENMP
      t = omp_get_thread_num();
#endif
      auto& mine = buf[t];
      for (auto& v : mine) v.assign(nv, 0.0);
#pragma omp for schedule(static)
      for (long i = 0; i < npix; ++i) {
        double scale = g.pixel_measure(static_cast<int>(i / g.n_u)) * inv_cell;
        double c0 = ps[0][i] * scale;
        bool any = c0 != 0.0;
        for (size_t c = 1; c < nc && !any; ++c) any = ps[c][i] != 0.0;
        if (!any) continue;
        trace_pixel(g, i, [&](size_t idx, double w) {
          for (size_t c = 0; c < nc; ++c) mine[c][idx] += w * ps[c][i] * scale;
        });
      }
    }
    std::vector<Vec> out = std::move(buf[0]);
    for (int t = 1; t < nt; ++t)
      for (size_t c = 0; c < nc; ++c) axpy(1.0, buf[t][c], out[c]);
    for (auto& v : out) apply_mask(v, mask_);
    return out;
  }

  template <class Fn>
  void trace_ray(const Ray& r, int dim, double weight, Fn& fn) const {
    const double h = grid_.voxel;
    const int n[3] = {grid_.nx(), grid_.ny(), grid_.nz()};
    // Support of the interpolated field: one voxel beyond the outer centres.
    double t0 = -INFINITY, t1 = INFINITY;
    for (int k = 0; k < dim; ++k) {
      double half = 0.5 * (n[k] + 1) * h;
      double o = r.origin[k], d = r.dir[k];
      if (std::abs(d) < 1e-15) {
        if (std::abs(o) >= half) return;
        continue;
      }
      double a = (-half - o) / d, b = (half - o) / d;
      if (a > b) std::swap(a, b);
      t0 = std::max(t0, a);
      t1 = std::min(t1, b);
    }
    if (!(t1 > t0)) return;
    const double len = t1 - t0;
    const long K = std::max(1L, static_cast<long>(std::ceil(len / (step_ * h / supersample_))));
    const double ds = len / K;
    const double w0 = ds * weight;
    double f[3], df[3];
    for (int k = 0; k < 3; ++k) {
      if (k < dim) {
        f[k] = (r.origin[k] + (t0 + 0.5 * ds) * r.dir[k]) / h + 0.5 * (n[k] - 1);
        df[k] = ds * r.dir[k] / h;
      } else {
        f[k] = 0.0;
        df[k] = 0.0;
      }
    }
    const size_t sx = 1, sy = static_cast<size_t>(n[0]), sz = static_cast<size_t>(n[0]) * n[1];
    for (long k = 0; k < K; ++k) {
      const double fx = f[0] + k * df[0], fy = f[1] + k * df[1];
      const int ix = static_cast<int>(std::floor(fx)), iy = static_cast<int>(std::floor(fy));
      const double wx = fx - ix, wy = fy - iy;
      if (dim == 2) {
        for (int b = 0; b < 2; ++b) {
          int yy = iy + b;
          if (yy < 0 || yy >= n[1]) continue;
          double wyb = b ? wy : 1.0 - wy;
          for (int a = 0; a < 2; ++a) {
            int xx = ix + a;
            if (xx < 0 || xx >= n[0]) continue;
            double w = wyb * (a ? wx : 1.0 - wx);
            if (w != 0.0) fn(yy * sy + xx * sx, w0 * w);
          }
        }
      } else {
        const double fz = f[2] + k * df[2];
        const int iz = static_cast<int>(std::floor(fz));
        const double wz = fz - iz;
        for (int c = 0; c < 2; ++c) {
          int zz = iz + c;
          if (zz < 0 || zz >= n[2]) continue;
          double wzc = c ? wz : 1.0 - wz;
          for (int b = 0; b < 2; ++b) {
            int yy = iy + b;
            if (yy < 0 || yy >= n[1]) continue;
            double wyb = wzc * (b ? wy : 1.0 - wy);
            for (int a = 0; a < 2; ++a) {
              int xx = ix + a;
              if (xx < 0 || xx >= n[0]) continue;
              double w = wyb * (a ? wx : 1.0 - wx);
              if (w != 0.0) fn(zz * sz + yy * sy + xx * sx, w0 * w);
            }
          }
        }
      }
    }
  }

  VolumeGrid grid_;
  Domain domain_;
  std::vector<std::uint8_t> mask_;
  bool full_mask_ = false;
  int supersample_ = 1;
  double step_ = 0.5;
  mutable std::atomic<long> project_calls_{0};
  mutable std::atomic<long> adjoint_calls_{0};
};

/// Projects one volume over a whole view set (N_proj project calls).
inline std::vector<Vec> project_all(const Projector& P, const std::vector<Geometry>& views, std::span<const double> f) {
  std::vector<Vec> out;
  out.reserve(views.size());
  for (auto& g : views) out.push_back(P.project(g, f));
  return out;
}

/// Σ_j P_j^*(p_j) (N_proj adjoint calls).
inline Vec adjoint_all(const Projector& P, const std::vector<Geometry>& views, const std::vector<Vec>& p) {
  Vec out(P.volume_size(), 0.0);
  for (size_t j = 0; j < views.size(); ++j) axpy(1.0, P.adjoint(views[j], p[j]), out);
  return out;
}

}  // namespace gensart
