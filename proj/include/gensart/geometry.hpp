#pragma once

#include <numbers>

#include "volume.hpp"

namespace gensart {

struct Ray {
  Point origin;
  Point dir;  // unit length
};

/// One tomographic view: parallel (direction θ) or divergent (point source s).
///
/// Parallel detectors are flat with pitch in length units; the pixel (iu, iv)
/// ray starts at u*axis_u + v*axis_v.  Divergent detectors are angular: pitch in
/// radians, direction cos(b)(cos(a) c + sin(a) axis_u) + sin(b) axis_v with c the
/// central direction.  2D views have n_v = 1 and everything in the z = 0 plane.
struct Geometry {
  enum class Mode { Parallel, Divergent };
  Mode mode = Mode::Parallel;
  int dim = 2;
  Point direction{1, 0, 0};
  Point source{0, 0, 0};
  Point central{1, 0, 0};
  Point axis_u{0, 1, 0};
  Point axis_v{0, 0, 1};
  int n_u = 1, n_v = 1;
  double pitch_u = 1.0, pitch_v = 1.0;
  double offset_u = 0.0, offset_v = 0.0;

  size_t pixels() const { return static_cast<size_t>(n_u) * n_v; }
  bool parallel() const { return mode == Mode::Parallel; }
  int detector_dim() const { return dim - 1; }

  double coord_u(double iu) const { return (iu - 0.5 * (n_u - 1)) * pitch_u + offset_u; }
  double coord_v(double iv) const { return dim == 2 ? 0.0 : (iv - 0.5 * (n_v - 1)) * pitch_v + offset_v; }

  /// Ray through fractional pixel position (iu, iv); pixel centres are integers.
  Ray ray(double iu, double iv) const {
    double a = coord_u(iu), b = coord_v(iv);
    if (parallel()) return {a * axis_u + b * axis_v, direction};
    Point d = std::cos(b) * (std::cos(a) * central + std::sin(a) * axis_u) + std::sin(b) * axis_v;
    return {source, d.normalized()};
  }

  /// Detector measure of one pixel (length, area or solid angle).
  double pixel_measure(int iv) const {
    if (dim == 2) return pitch_u;
    if (parallel()) return pitch_u * pitch_v;
    return std::cos(coord_v(iv)) * pitch_u * pitch_v;
  }

  /// Ray density w_P: 1 (parallel), |x-s|^{-(dim-1)} (divergent).
  double ray_density(const Point& x) const {
    if (parallel()) return 1.0;
    double r = (x - source).head(dim).norm();
    return dim == 2 ? 1.0 / r : 1.0 / (r * r);
  }
};

/// Parallel 2D view; direction (cos θ, sin θ), detector axis (-sin θ, cos θ).
inline Geometry parallel_2d(double theta, int n_det, double pitch, double offset = 0.0) {
  Geometry g;
  g.mode = Geometry::Mode::Parallel;
  g.dim = 2;
  g.direction = {std::cos(theta), std::sin(theta), 0};
  g.axis_u = {-std::sin(theta), std::cos(theta), 0};
  g.n_u = n_det;
  g.n_v = 1;
  g.pitch_u = pitch;
  g.offset_u = offset;
  return g;
}

/// Fan beam: source at radius R and polar angle β, equiangular detector with fan-angle pitch dγ.
inline Geometry fan_2d(double beta, double R, int n_det, double dgamma) {
  Geometry g;
  g.mode = Geometry::Mode::Divergent;
  g.dim = 2;
  g.source = {R * std::cos(beta), R * std::sin(beta), 0};
  g.central = {-std::cos(beta), -std::sin(beta), 0};
  g.axis_u = {std::sin(beta), -std::cos(beta), 0};
  g.n_u = n_det;
  g.n_v = 1;
  g.pitch_u = dgamma;
  return g;
}

/// Parallel 3D view rotating about z: direction (cos θ, sin θ, 0), detector axes (-sin θ, cos θ, 0), z.
inline Geometry parallel_3d(double theta, int n_u, int n_v, double pitch) {
  Geometry g;
  g.mode = Geometry::Mode::Parallel;
  g.dim = 3;
  g.direction = {std::cos(theta), std::sin(theta), 0};
  g.axis_u = {-std::sin(theta), std::cos(theta), 0};
  g.axis_v = {0, 0, 1};
  g.n_u = n_u;
  g.n_v = n_v;
  g.pitch_u = g.pitch_v = pitch;
  return g;
}

/// Cone beam: source at radius R in the z = 0 plane, angular detector (da, db).
inline Geometry cone_3d(double beta, double R, int n_u, int n_v, double da, double db) {
  Geometry g = fan_2d(beta, R, n_u, da);
  g.dim = 3;
  g.n_v = n_v;
  g.pitch_v = db;
  g.axis_v = {0, 0, 1};
  return g;
}

/// Uniform angles θ_j = j·span/N.
inline std::vector<double> uniform_angles(int n, double span = std::numbers::pi) {
  std::vector<double> a(n);
  for (int j = 0; j < n; ++j) a[j] = span * j / n;
  return a;
}

/// Checks the invariants: unit direction, source outside Ω, detector covering 𝔻_P.
inline void validate(const Geometry& g, const Domain& dom, const VolumeGrid& grid) {
  require(g.dim == grid.dim(), "geometry dimension does not match the volume");
  require(g.n_u > 0 && g.n_v > 0 && g.pitch_u > 0 && (g.dim == 2 || g.pitch_v > 0),
          "detector counts and pitch must be positive");
  require(g.dim == 3 || g.n_v == 1, "2D geometry needs a 1D detector (n_v = 1)");
  if (g.parallel()) {
    require(std::abs(g.direction.norm() - 1.0) < 1e-9, "parallel direction must be a unit vector");
  } else {
    require(!dom.analytic() || !dom.contains(g.source, g.dim), "source lies inside the domain");
    double box = 0.5 * grid.voxel * (*std::max_element(grid.dims.begin(), grid.dims.end()) + 1);
    require(g.source.head(g.dim).lpNorm<Eigen::Infinity>() > box, "source lies inside the volume grid");
  }
  if (!dom.analytic()) return;
  // Edge rays of the detector must not cut the open domain.
  auto hits = [&](const Ray& r) {
    auto c = dom.chord(r.origin, r.dir, g.dim);
    if (!c) return false;
    Point mid = r.origin + 0.5 * ((*c)[0] + (*c)[1]) * r.dir;
    Domain shrunk = dom;
    double eps = 1e-9 * std::max(1.0, grid.voxel * grid.nx());
    shrunk.radius -= eps;
    shrunk.half_extent.array() -= eps;
    return shrunk.contains(mid, g.dim) && ((*c)[1] - (*c)[0]) > eps;
  };
  const double eu = -0.5, fu = g.n_u - 0.5;
  const double ev = g.dim == 2 ? 0.0 : -0.5, fv = g.dim == 2 ? 0.0 : g.n_v - 0.5;
  const int samples = 64;
  for (int s = 0; s <= samples; ++s) {
    double tu = eu + (fu - eu) * s / samples, tv = ev + (fv - ev) * s / samples;
    bool bad = hits(g.ray(eu, tv)) || hits(g.ray(fu, tv));
    if (g.dim == 3) bad = bad || hits(g.ray(tu, ev)) || hits(g.ray(tu, fv));
    require(!bad, "detector does not cover the projection domain of the volume");
  }
}

}  // namespace gensart
