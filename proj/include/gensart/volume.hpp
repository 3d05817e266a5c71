#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include <Eigen/Core>

#include "common.hpp"

namespace gensart {

using Point = Eigen::Vector3d;

/// Reconstruction domain Ω, centred at the origin.
struct Domain {
  enum class Shape { Box, Ball, Cylinder, Mask };
  Shape shape = Shape::Box;
  Point half_extent{0, 0, 0};  // Box: half side lengths; Cylinder: z half-height in [2]
  double radius = 0.0;         // Ball / Cylinder (axis = z)
  std::vector<std::uint8_t> mask;  // Shape::Mask, voxel order of the grid

  static Domain box(double hx, double hy, double hz = 0.0) {
    Domain d;
    d.shape = Shape::Box;
    d.half_extent = {hx, hy, hz};
    return d;
  }
  static Domain ball(double r) {
    Domain d;
    d.shape = Shape::Ball;
    d.radius = r;
    return d;
  }
  static Domain cylinder(double r, double half_height) {
    Domain d;
    d.shape = Shape::Cylinder;
    d.radius = r;
    d.half_extent = {r, r, half_height};
    return d;
  }

  bool analytic() const { return shape != Shape::Mask; }

  /// Point test for analytic shapes (2D points have z = 0; 2D cylinder == disc).
  bool contains(const Point& x, int dim) const {
    switch (shape) {
      case Shape::Box:
        return std::abs(x[0]) <= half_extent[0] && std::abs(x[1]) <= half_extent[1] &&
               (dim == 2 || std::abs(x[2]) <= half_extent[2]);
      case Shape::Ball:
        return x.head(dim).squaredNorm() <= radius * radius;
      case Shape::Cylinder:
        return x.head<2>().squaredNorm() <= radius * radius &&
               (dim == 2 || std::abs(x[2]) <= half_extent[2]);
      case Shape::Mask:
        break;
    }
    return false;
  }

  /// Chord [t0, t1] of the ray o + t*d (|d| = 1) through an analytic Ω; nullopt if missed.
  std::optional<std::array<double, 2>> chord(const Point& o, const Point& d, int dim) const {
    double lo = -INFINITY, hi = INFINITY;
    auto slab = [&](double oc, double dc, double h) {
      if (std::abs(dc) < 1e-300) {
        if (std::abs(oc) > h) hi = -INFINITY;
        return;
      }
      double a = (-h - oc) / dc, b = (h - oc) / dc;
      if (a > b) std::swap(a, b);
      lo = std::max(lo, a);
      hi = std::min(hi, b);
    };
    auto quad = [&](int k) {  // |o + t d|^2 <= r^2 over the first k coordinates
      double A = d.head(k).squaredNorm(), B = o.head(k).dot(d.head(k)),
             C = o.head(k).squaredNorm() - radius * radius;
      if (A < 1e-300) {
        if (C > 0) hi = -INFINITY;
        return;
      }
      double disc = B * B - A * C;
      if (disc <= 0) {
        hi = -INFINITY;
        return;
      }
      double s = std::sqrt(disc);
      lo = std::max(lo, (-B - s) / A);
      hi = std::min(hi, (-B + s) / A);
    };
    switch (shape) {
      case Shape::Box:
        for (int k = 0; k < dim; ++k) slab(o[k], d[k], half_extent[k]);
        break;
      case Shape::Ball:
        quad(dim);
        break;
      case Shape::Cylinder:
        quad(2);
        if (dim == 3) slab(o[2], d[2], half_extent[2]);
        break;
      case Shape::Mask:
        return std::nullopt;
    }
    if (!(hi > lo)) return std::nullopt;
    return std::array<double, 2>{lo, hi};
  }
};

/// Voxel grid centred at the origin. dims are slowest-first: {ny, nx} or {nz, ny, nx}.
struct VolumeGrid {
  std::vector<int> dims;
  double voxel = 1.0;
  Vec values;

  VolumeGrid() = default;
  VolumeGrid(std::vector<int> d, double h, double fill = 0.0) : dims(std::move(d)), voxel(h) {
    require(dims.size() == 2 || dims.size() == 3, "volume must be 2D or 3D");
    for (int n : dims) require(n > 0, "volume dimensions must be positive");
    require(h > 0, "voxel size must be positive");
    values.assign(size(), fill);
  }

  int dim() const { return static_cast<int>(dims.size()); }
  int nx() const { return dims.back(); }
  int ny() const { return dims[dims.size() - 2]; }
  int nz() const { return dims.size() == 3 ? dims[0] : 1; }
  size_t size() const {
    size_t n = 1;
    for (int d : dims) n *= static_cast<size_t>(d);
    return n;
  }
  double cell_volume() const { return std::pow(voxel, dim()); }

  /// Physical centre of voxel (iz, iy, ix).
  Point center(int iz, int iy, int ix) const {
    Point p((ix - 0.5 * (nx() - 1)) * voxel, (iy - 0.5 * (ny() - 1)) * voxel, 0.0);
    if (dim() == 3) p[2] = (iz - 0.5 * (nz() - 1)) * voxel;
    return p;
  }
  Point center(size_t linear) const {
    int ix = static_cast<int>(linear % nx());
    int iy = static_cast<int>((linear / nx()) % ny());
    int iz = static_cast<int>(linear / (static_cast<size_t>(nx()) * ny()));
    return center(iz, iy, ix);
  }

  bool same_shape(const VolumeGrid& o) const { return dims == o.dims && voxel == o.voxel; }

  /// L2(Ω) norm including the cell volume.
  double l2() const { return std::sqrt(cell_volume() * dot(values, values)); }
};

inline VolumeGrid like(const VolumeGrid& g, double fill = 0.0) { return VolumeGrid(g.dims, g.voxel, fill); }

/// Voxel indicator of Ω sampled at voxel centres.
inline std::vector<std::uint8_t> domain_mask(const Domain& dom, const VolumeGrid& grid) {
  if (dom.shape == Domain::Shape::Mask) {
    require(dom.mask.size() == grid.size(), "mask size does not match the volume grid");
    return dom.mask;
  }
  std::vector<std::uint8_t> m(grid.size());
  for (size_t i = 0; i < m.size(); ++i) m[i] = dom.contains(grid.center(i), grid.dim()) ? 1 : 0;
  return m;
}

inline void apply_mask(std::span<double> v, const std::vector<std::uint8_t>& mask) {
  for (size_t i = 0; i < v.size(); ++i)
    if (!mask[i]) v[i] = 0.0;
}

}  // namespace gensart
