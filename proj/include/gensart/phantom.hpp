#pragma once

#include <random>

#include "polyct.hpp"
#include "xpct.hpp"

namespace gensart {

/// Ellipse (2D) or ellipsoid (3D) rotated about z.
struct Ellipsoid {
  Point center{0, 0, 0};
  Point semi{1, 1, 1};
  double angle = 0.0;
  double value = 1.0;

  bool contains(const Point& x, int dim) const {
    Point d = x - center;
    double c = std::cos(angle), s = std::sin(angle);
    double u = (c * d[0] + s * d[1]) / semi[0], v = (-s * d[0] + c * d[1]) / semi[1];
    double w = dim == 3 ? d[2] / semi[2] : 0.0;
    return u * u + v * v + w * w <= 1.0;
  }
  /// Radius of the bounding ball.
  double extent() const { return std::max({semi[0], semi[1], semi[2]}); }
};

struct PhantomSpec {
  enum class Kind { RandomEllipses, SheppLogan, Balls3d };
  Kind kind = Kind::RandomEllipses;
  int count = 10;
  std::uint64_t seed = 1;
  double value_min = 0.0, value_max = 1.0;
  int supersample = 2;  // anti-aliasing sub-samples per axis

  void validate() const {
    require(count >= 0, "phantom count must be non-negative");
    require(value_min >= 0 && value_max >= value_min, "phantom value range must satisfy 0 <= min <= max");
    require(supersample >= 1, "phantom supersample must be >= 1");
  }
};

/// Largest radius r such that the ball of radius r about the origin lies in Ω (and in the grid).
inline double inscribed_radius(const Domain& dom, const VolumeGrid& grid) {
  double r = 0.5 * grid.voxel * std::min(grid.nx(), grid.ny());
  if (grid.dim() == 3) r = std::min(r, 0.5 * grid.voxel * grid.nz());
  switch (dom.shape) {
    case Domain::Shape::Box:
      r = std::min({r, dom.half_extent[0], dom.half_extent[1]});
      if (grid.dim() == 3) r = std::min(r, dom.half_extent[2]);
      break;
    case Domain::Shape::Ball: r = std::min(r, dom.radius); break;
    case Domain::Shape::Cylinder:
      r = std::min(r, dom.radius);
      if (grid.dim() == 3) r = std::min(r, dom.half_extent[2]);
      break;
    case Domain::Shape::Mask: break;
  }
  return r;
}

/// Painter's-algorithm raster: later shapes overwrite earlier ones; values ≥ 0 kept outside Ω at 0.
inline VolumeGrid rasterize(const std::vector<Ellipsoid>& shapes, const VolumeGrid& shape, const Domain& dom,
                            int supersample = 2) {
  VolumeGrid out = like(shape);
  const int d = shape.dim(), ss = supersample;
  const auto mask = domain_mask(dom, shape);
  const int nsub = d == 3 ? ss * ss * ss : ss * ss;
#pragma omp parallel for schedule(static) num_threads(thread_count())
  for (long i = 0; i < static_cast<long>(out.size()); ++i) {
    if (!mask[i]) continue;
    Point c = shape.center(static_cast<size_t>(i));
    double acc = 0.0;
    for (int s = 0; s < nsub; ++s) {
      Point x = c;
      x[0] += ((s % ss) + 0.5 - 0.5 * ss) / ss * shape.voxel;
      x[1] += (((s / ss) % ss) + 0.5 - 0.5 * ss) / ss * shape.voxel;
      if (d == 3) x[2] += ((s / (ss * ss)) + 0.5 - 0.5 * ss) / ss * shape.voxel;
      double v = 0.0;
      for (const auto& e : shapes)
        if (e.contains(x, d)) v = e.value;
      acc += v;
    }
    out.values[i] = acc / nsub;
  }
  return out;
}

/// Modified Shepp-Logan ellipses (additive contrasts turned into absolute painter values), scaled to radius R.
inline std::vector<Ellipsoid> shepp_logan_shapes(double R) {
  struct E {
    double x, y, a, b, deg, v;
  };
  // Painter values chosen so overlaps reproduce the usual additive intensities.
  const E table[] = {{0, 0, 0.69, 0.92, 0, 1.0},           {0, -0.0184, 0.6624, 0.874, 0, 0.2},
                     {0.22, 0, 0.11, 0.31, -18, 0.0},      {-0.22, 0, 0.16, 0.41, 18, 0.0},
                     {0, 0.35, 0.21, 0.25, 0, 0.3},        {0, 0.1, 0.046, 0.046, 0, 0.3},
                     {0, -0.1, 0.046, 0.046, 0, 0.3},      {-0.08, -0.605, 0.046, 0.023, 0, 0.3},
                     {0, -0.605, 0.023, 0.023, 0, 0.3},    {0.06, -0.605, 0.023, 0.046, 0, 0.3}};
  std::vector<Ellipsoid> out;
  for (const auto& e : table)
    out.push_back({Point(e.x * R, e.y * R, 0), Point(e.a * R, e.b * R, R), e.deg * std::numbers::pi / 180, e.v});
  return out;
}

/// Random shapes fully inside the inscribed ball of Ω (ellipses in 2D, balls for Balls3d), values uniform in
/// [min, max]; overlaps resolved by drawing order.
inline std::vector<Ellipsoid> random_shapes(const PhantomSpec& spec, double R, int dim) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto val = [&] { return spec.value_min + (spec.value_max - spec.value_min) * U(rng); };
  std::vector<Ellipsoid> out;
  for (int k = 0; k < spec.count; ++k) {
    Ellipsoid e;
    double a = R * (0.08 + 0.32 * U(rng));
    if (spec.kind == PhantomSpec::Kind::Balls3d) {
      e.semi = {a, a, a};
    } else {
      e.semi = {a, R * (0.08 + 0.32 * U(rng)), a};
      e.angle = std::numbers::pi * U(rng);
    }
    // centre uniformly in the ball of radius R − extent (keeps the whole shape inside)
    const double rmax = R - e.extent();
    Point c;
    do {
      c = {2 * U(rng) - 1, 2 * U(rng) - 1, dim == 3 ? 2 * U(rng) - 1 : 0.0};
    } while (c.squaredNorm() > 1.0);
    e.center = rmax * c;
    e.value = val();
    out.push_back(e);
  }
  return out;
}

inline VolumeGrid make_phantom(const PhantomSpec& spec, const VolumeGrid& shape, const Domain& dom) {
  spec.validate();
  const double R = inscribed_radius(dom, shape) * 0.98;
  switch (spec.kind) {
    case PhantomSpec::Kind::SheppLogan: {
      auto sl = shepp_logan_shapes(R);
      for (auto& e : sl) e.value = spec.value_min + (spec.value_max - spec.value_min) * e.value;
      return rasterize(sl, shape, dom, spec.supersample);
    }
    case PhantomSpec::Kind::Balls3d:
      require(shape.dim() == 3, "balls_3d phantom needs a 3D grid");
      break;
    case PhantomSpec::Kind::RandomEllipses: break;
  }
  return rasterize(random_shapes(spec, R, shape.dim()), shape, dom, spec.supersample);
}

struct NoiseSpec {
  double gaussian_rel = 0.0;     // ‖ε‖₂ / ‖g‖₂ over the whole stack
  double dead_pixel_frac = 0.0;  // fraction of detector pixels, same set in every view
  double dead_value = 0.0;
  double poisson_exposure = 0.0;  // t > 0 → g ← Poisson(t g) / t (XPCT: on the intensity 1 + g)
  std::uint64_t seed = 7;

  void validate() const {
    require(gaussian_rel >= 0, "noise gaussian_rel must be non-negative");
    require(dead_pixel_frac >= 0 && dead_pixel_frac <= 1, "noise dead_pixel_frac must lie in [0, 1]");
    require(poisson_exposure >= 0, "noise poisson_exposure must be non-negative");
  }
};

/// Detector pixels drawn uniformly without replacement: exactly ⌊frac·m⌋ of them.
inline std::vector<size_t> dead_pixels(size_t m, double frac, std::uint64_t seed) {
  std::vector<size_t> idx(m);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<size_t>(std::floor(frac * m + 1e-9)));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Poisson resampling (if requested), Gaussian noise of exact relative 2-norm, then dead pixels.
inline void add_noise(std::vector<Vec>& sino, const NoiseSpec& ns) {
  ns.validate();
  std::mt19937_64 rng(ns.seed);
  if (ns.poisson_exposure > 0) {
    for (auto& p : sino)
      for (double& v : p) {
        require(v >= 0, "Poisson resampling needs non-negative data");
        std::poisson_distribution<long> pd(ns.poisson_exposure * v);
        v = v > 0 ? static_cast<double>(pd(rng)) / ns.poisson_exposure : 0.0;
      }
  }
  if (ns.gaussian_rel > 0) {
    std::normal_distribution<double> N01(0.0, 1.0);
    double gn = 0.0, en = 0.0;
    std::vector<Vec> eps(sino.size());
    for (size_t j = 0; j < sino.size(); ++j) {
      eps[j].resize(sino[j].size());
      for (size_t i = 0; i < sino[j].size(); ++i) {
        eps[j][i] = N01(rng);
        en += eps[j][i] * eps[j][i];
        gn += sino[j][i] * sino[j][i];
      }
    }
    const double scale = en > 0 ? ns.gaussian_rel * std::sqrt(gn / en) : 0.0;
    for (size_t j = 0; j < sino.size(); ++j) axpy(scale, eps[j], sino[j]);
  }
  if (ns.dead_pixel_frac > 0 && !sino.empty()) {
    for (size_t i : dead_pixels(sino[0].size(), ns.dead_pixel_frac, ns.seed))
      for (auto& p : sino) p[i] = ns.dead_value;
  }
}

struct FormationSpec {
  enum class Kind { Identity, BeerLambert, Xpct, PolyCT };
  Kind kind = Kind::Identity;
  double intensity = 1.0;  // I₀ for Beer-Lambert
  double fresnel = 1e-3;   // XPCT Fresnel number (per detector pixel)
  int xpct_pad = 2;
  SpectrumModel spectrum = SpectrumModel::flat();
  MaterialDecomposition materials = MaterialDecomposition::water_bone();
};

/// Noisy data for a view set, simulated with a 2× supersampled projector (never the reconstruction projector).
inline std::vector<Vec> simulate_data(const VolumeGrid& f, const Domain& dom, const std::vector<Geometry>& views,
                                      const FormationSpec& form, const NoiseSpec& noise, int supersample = 2) {
  require(supersample >= 2, "simulation projector must be supersampled (inverse crime)");
  Projector Psim(f, dom, supersample);
  std::vector<Vec> sino(views.size());
  std::unique_ptr<XpctModel> xp;
  if (form.kind == FormationSpec::Kind::Xpct) {
    require(!views.empty(), "XPCT simulation needs views");
    xp = std::make_unique<XpctModel>(views[0].n_u, views[0].n_v, form.fresnel, form.xpct_pad);
  }
  for (size_t j = 0; j < views.size(); ++j) {
    validate(views[j], dom, f);
    switch (form.kind) {
      case FormationSpec::Kind::Identity: sino[j] = Psim.project(views[j], f.values); break;
      case FormationSpec::Kind::BeerLambert: {
        sino[j] = Psim.project(views[j], f.values);
        for (double& v : sino[j]) v = form.intensity * std::exp(-v);
        break;
      }
      case FormationSpec::Kind::Xpct: {
        require(views[j].parallel(), "XPCT simulation needs parallel views");
        sino[j] = xp->forward(Psim.project(views[j], f.values));
        break;
      }
      case FormationSpec::Kind::PolyCT:
        sino[j] = polyct_forward(Psim, views[j], f.values, form.spectrum, form.materials).G;
        break;
    }
  }
  if (form.kind == FormationSpec::Kind::Xpct && noise.poisson_exposure > 0) {
    // Photon noise acts on the hologram intensity 1 + F, not on the contrast itself.
    std::mt19937_64 rng(noise.seed ^ 0x5851f42d4c957f2dULL);
    for (auto& p : sino)
      for (double& v : p) {
        std::poisson_distribution<long> pd(noise.poisson_exposure * std::max(0.0, 1.0 + v));
        v = static_cast<double>(pd(rng)) / noise.poisson_exposure - 1.0;
      }
    NoiseSpec rest = noise;
    rest.poisson_exposure = 0.0;
    add_noise(sino, rest);
    return sino;
  }
  add_noise(sino, noise);
  return sino;
}

}  // namespace gensart
