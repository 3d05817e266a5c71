#include "gensart/experiment.hpp"

#include <iostream>

#include "gensart/baselines.hpp"
#include "gensart/oracles.hpp"

namespace gensart {

namespace fs = std::filesystem;
using io::json;

std::vector<io::KeySpec> config_schema() {
  const auto req = std::nullopt;
  return {
      // geometry: lengths in voxel-size units (mm, say); angles in degrees; divergent pitch in radians
      {"geometry", "dim", "2", "2 or 3"},
      {"geometry", "mode", "parallel", "parallel | fan (2D) | cone (3D)"},
      {"geometry", "n", req, "voxels per axis"},
      {"geometry", "voxel", "1", "voxel size"},
      {"geometry", "domain", "ball", "ball | box | cylinder, inscribed in the grid"},
      {"geometry", "n_angles", req, "number of views"},
      {"geometry", "angle_span_deg", "auto", "180 for parallel, 360 for divergent"},
      {"geometry", "n_det", "auto", "detector pixels along u"},
      {"geometry", "n_det_v", "auto", "detector pixels along v (3D)"},
      {"geometry", "pitch", "auto", "detector pitch (length, or radians for divergent)"},
      {"geometry", "source_radius", "auto", "source distance from the rotation axis"},
      {"geometry", "supersample", "2", "ray supersampling of the simulation projector"},
      {"phantom", "kind", "random_ellipses", "random_ellipses | shepp_logan | balls_3d"},
      {"phantom", "count", "10", ""},
      {"phantom", "seed", "1", ""},
      {"phantom", "value_min", "0", "attenuation per unit length"},
      {"phantom", "value_max", "1", ""},
      {"noise", "gaussian_rel", "0", "relative 2-norm of the Gaussian noise"},
      {"noise", "dead_pixel_frac", "0", ""},
      {"noise", "dead_value", "0", ""},
      {"noise", "poisson_exposure", "0", "0 = off"},
      {"noise", "seed", "7", ""},
      {"model", "kind", "identity", "identity | beer_lambert | xpct | polyct"},
      {"model", "intensity", "1", "Beer-Lambert I0"},
      {"model", "fresnel", "0.001", "XPCT Fresnel number per detector pixel"},
      {"model", "pad", "2", "XPCT zero-padding factor"},
      {"model", "spectrum_bins", "20", ""},
      {"model", "energy_min_kev", "30", ""},
      {"model", "energy_max_kev", "120", ""},
      {"model", "energy_ref_kev", "70", ""},
      {"model", "spectrum_csv", "none", "energy_keV,intensity table (overrides the flat spectrum)"},
      {"model", "materials", "water_bone", "water_bone | photo_only"},
      {"model", "materials_csv", "none", "f,phi,theta anchor table (overrides materials)"},
      {"fidelity", "kind", "l2", "l2 | weighted_l2 | huber | student_t | poisson_dark | poisson_bright"},
      {"fidelity", "nu", "auto", "robust scale; auto = 20% of the data std"},
      {"fidelity", "sigma", "1", "weighted_l2 standard deviation"},
      {"fidelity", "exposure", "auto", "Poisson exposure t; auto = noise.poisson_exposure or 1"},
      {"fidelity", "intensity", "auto", "Poisson I; auto = model.intensity"},
      {"penalty", "family", "l2", "l2 | weighted_l2 | weighted_projector | w12 | lq"},
      {"penalty", "alpha", "1", "Kaczmarz alpha (gensart/xpct/polyct) or Tikhonov alpha"},
      {"penalty", "gamma", "0", "w12 / xpct gradient share in [0, 1]"},
      {"penalty", "q", "2", "lq exponent >= 1"},
      {"penalty", "weight", "1", "constant or raw volume file"},
      {"plan", "pipeline", "gensart", "gensart | fbp | tikhonov | huber_pd | xpct | polyct"},
      {"plan", "order", "multilevel", "sequential | multilevel"},
      {"plan", "symmetric", "false", ""},
      {"plan", "cycles", "1", ""},
      {"plan", "k_stop", "auto", "number of Kaczmarz steps; auto = cycles x cycle length"},
      {"plan", "box_min", "none", ""},
      {"plan", "box_max", "none", ""},
      {"plan", "nonnegative", "false", ""},
      {"plan", "init", "zero", "zero or a raw volume file"},
      {"plan", "filter", "ram_lak", "ram_lak | shepp_logan"},
      {"plan", "cg_rtol", "1e-6", ""},
      {"plan", "max_iter", "300", "inner CG cap (xpct, tikhonov)"},
      {"plan", "pd_gap", "0.01", "huber_pd relative duality gap"},
      {"output", "dir", ".", ""},
      {"output", "phantom", "phantom.raw", ""},
      {"output", "sinogram", "sino.raw", ""},
      {"output", "volume", "volume.raw", ""},
      {"output", "metrics", "metrics.csv", ""},
      {"output", "slice", "slice.pgm", "none disables"},
      {"output", "meta", "meta.json", ""},
  };
}

std::vector<int> Experiment::sinogram_shape() const {
  const auto& g = views.at(0);
  if (g.dim == 2) return {static_cast<int>(views.size()), g.n_u};
  return {static_cast<int>(views.size()), g.n_v, g.n_u};
}

std::string Experiment::path(const std::string& name) const { return (fs::path(out_dir) / name).string(); }

json domain_to_json(const Domain& d) {
  switch (d.shape) {
    case Domain::Shape::Ball: return {{"shape", "ball"}, {"radius", d.radius}};
    case Domain::Shape::Cylinder: return {{"shape", "cylinder"}, {"radius", d.radius}, {"half_height", d.half_extent[2]}};
    case Domain::Shape::Box:
      return {{"shape", "box"}, {"half_extent", {d.half_extent[0], d.half_extent[1], d.half_extent[2]}}};
    case Domain::Shape::Mask: break;
  }
  return {{"shape", "mask"}};
}

Domain domain_from_json(const json& j) {
  try {
    const std::string s = j.at("shape");
    if (s == "ball") return Domain::ball(j.at("radius"));
    if (s == "cylinder") return Domain::cylinder(j.at("radius"), j.at("half_height"));
    if (s == "box") {
      auto h = j.at("half_extent").get<std::vector<double>>();
      return Domain::box(h.at(0), h.at(1), h.at(2));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed domain description: ") + e.what());
  }
  throw ConfigError("unknown domain shape in sidecar");
}

namespace {

void read_csv_columns(const std::string& path, int cols, std::vector<Vec>& out) {
  std::istringstream is(io::read_text(path));
  std::string line;
  out.assign(cols, Vec{});
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> parts;
    std::stringstream ls(line);
    for (std::string t; std::getline(ls, t, ',');) parts.push_back(t);
    require(static_cast<int>(parts.size()) == cols, "'" + path + "': expected " + std::to_string(cols) + " columns");
    try {
      Vec row;
      for (auto& p : parts) row.push_back(std::stod(p));
      for (int c = 0; c < cols; ++c) out[c].push_back(row[c]);
    } catch (const std::logic_error&) {
      require(header, "'" + path + "': non-numeric entry in '" + line + "'");
    }
    header = false;
  }
  require(!out[0].empty(), "'" + path + "' has no data rows");
}

double auto_or(const io::Config& c, const std::string& key, double fallback) {
  return c.is_auto(key) ? fallback : c.num(key);
}

std::optional<double> optional_num(const io::Config& c, const std::string& key) {
  if (c.str(key) == "none") return std::nullopt;
  return c.num(key);
}

}  // namespace

Experiment load_experiment(const std::string& config_path) {
  io::Config c(config_schema(), config_path);
  Experiment e;
  e.resolved = c.to_json();
  e.config_text = c.dump();

  // --- geometry
  const int dim = static_cast<int>(c.integer("geometry.dim"));
  require(dim == 2 || dim == 3, "geometry.dim must be 2 or 3");
  const std::string mode = c.choice("geometry.mode", {"parallel", "fan", "cone"});
  require(mode != "fan" || dim == 2, "geometry.mode = fan needs geometry.dim = 2");
  require(mode != "cone" || dim == 3, "geometry.mode = cone needs geometry.dim = 3");
  const bool parallel = mode == "parallel";
  const long n = c.integer("geometry.n");
  require(n >= 2 && n <= 4096, "geometry.n must lie in [2, 4096]");
  const double h = c.num("geometry.voxel");
  require(h > 0, "geometry.voxel must be positive");
  e.grid = dim == 2 ? VolumeGrid({int(n), int(n)}, h) : VolumeGrid({int(n), int(n), int(n)}, h);
  e.grid.values.clear();
  const double half = 0.5 * n * h;
  const std::string dom = c.choice("geometry.domain", {"ball", "box", "cylinder"});
  double r_xy = half, h_z = half;
  if (dom == "ball") e.domain = Domain::ball(half);
  else if (dom == "cylinder") e.domain = Domain::cylinder(half, half);
  else {
    e.domain = Domain::box(half, half, dim == 3 ? half : 0.0);
    r_xy = half * std::sqrt(2.0);
  }
  if (dim == 3 && dom == "ball") h_z = half;

  const long n_angles = c.integer("geometry.n_angles");
  require(n_angles >= 1, "geometry.n_angles must be >= 1");
  const double span = auto_or(c, "geometry.angle_span_deg", parallel ? 180.0 : 360.0) * std::numbers::pi / 180;
  require(span > 0, "geometry.angle_span_deg must be positive");
  const auto angles = uniform_angles(static_cast<int>(n_angles), span);
  e.supersample = static_cast<int>(c.integer("geometry.supersample"));
  require(e.supersample >= 2, "geometry.supersample must be >= 2 (simulation must not reuse the reconstruction projector)");
  if (parallel) {
    const double pitch = auto_or(c, "geometry.pitch", h);
    require(pitch > 0, "geometry.pitch must be positive");
    const int nu = c.is_auto("geometry.n_det") ? int(std::ceil(2 * r_xy / pitch - 1e-9)) : int(c.integer("geometry.n_det"));
    const int nv = dim == 2 ? 1
                            : (c.is_auto("geometry.n_det_v") ? int(std::ceil(2 * h_z / pitch - 1e-9))
                                                              : int(c.integer("geometry.n_det_v")));
    require(c.is_auto("geometry.source_radius"), "geometry.source_radius only applies to fan/cone geometry");
    for (double th : angles) e.views.push_back(dim == 2 ? parallel_2d(th, nu, pitch) : parallel_3d(th, nu, nv, pitch));
  } else {
    const double R = auto_or(c, "geometry.source_radius", 2 * r_xy);
    require(R > r_xy, "geometry.source_radius must place the source outside the domain");
    const int nu = c.is_auto("geometry.n_det") ? int(2 * n) : int(c.integer("geometry.n_det"));
    const double fan = 2 * std::asin(r_xy / R) * 1.02;
    const double da = auto_or(c, "geometry.pitch", fan / nu);
    if (dim == 2) {
      for (double b : angles) e.views.push_back(fan_2d(b, R, nu, da));
    } else {
      const int nv = c.is_auto("geometry.n_det_v") ? int(2 * n) : int(c.integer("geometry.n_det_v"));
      const double cone = 2 * std::atan(h_z / (R - r_xy)) * 1.02;
      for (double b : angles) e.views.push_back(cone_3d(b, R, nu, nv, da, cone / nv));
    }
  }
  for (auto& g : e.views) validate(g, e.domain, e.grid);

  // --- phantom / noise
  const std::string pk = c.choice("phantom.kind", {"random_ellipses", "shepp_logan", "balls_3d"});
  e.phantom.kind = pk == "shepp_logan" ? PhantomSpec::Kind::SheppLogan
                   : pk == "balls_3d" ? PhantomSpec::Kind::Balls3d
                                      : PhantomSpec::Kind::RandomEllipses;
  require(e.phantom.kind != PhantomSpec::Kind::Balls3d || dim == 3, "phantom.kind = balls_3d needs geometry.dim = 3");
  e.phantom.count = static_cast<int>(c.integer("phantom.count"));
  e.phantom.seed = static_cast<std::uint64_t>(c.integer("phantom.seed"));
  e.phantom.value_min = c.num("phantom.value_min");
  e.phantom.value_max = c.num("phantom.value_max");
  e.phantom.validate();
  e.noise.gaussian_rel = c.num("noise.gaussian_rel");
  e.noise.dead_pixel_frac = c.num("noise.dead_pixel_frac");
  e.noise.dead_value = c.num("noise.dead_value");
  e.noise.poisson_exposure = c.num("noise.poisson_exposure");
  e.noise.seed = static_cast<std::uint64_t>(c.integer("noise.seed"));
  e.noise.validate();

  // --- image formation
  const std::string mk = c.choice("model.kind", {"identity", "beer_lambert", "xpct", "polyct"});
  e.formation.kind = mk == "beer_lambert" ? FormationSpec::Kind::BeerLambert
                     : mk == "xpct"       ? FormationSpec::Kind::Xpct
                     : mk == "polyct"     ? FormationSpec::Kind::PolyCT
                                          : FormationSpec::Kind::Identity;
  e.formation.intensity = c.num("model.intensity");
  require(e.formation.intensity > 0, "model.intensity must be positive");
  e.formation.fresnel = c.num("model.fresnel");
  require(e.formation.fresnel > 0, "model.fresnel must be positive");
  e.formation.xpct_pad = static_cast<int>(c.integer("model.pad"));
  require(e.formation.xpct_pad >= 1, "model.pad must be >= 1");
  if (e.formation.kind == FormationSpec::Kind::Xpct) require(parallel, "model.kind = xpct needs parallel geometry");
  if (e.formation.kind == FormationSpec::Kind::PolyCT) {
    if (c.str("model.spectrum_csv") != "none") {
      std::vector<Vec> cols;
      read_csv_columns(c.str("model.spectrum_csv"), 2, cols);
      e.formation.spectrum = SpectrumModel::make(cols[0], cols[1], c.num("model.energy_ref_kev"));
    } else {
      const long bins = c.integer("model.spectrum_bins");
      require(bins >= 1, "model.spectrum_bins must be >= 1");
      require(c.num("model.energy_max_kev") > c.num("model.energy_min_kev") && c.num("model.energy_min_kev") > 0,
              "model energies must satisfy 0 < energy_min_kev < energy_max_kev");
      e.formation.spectrum = SpectrumModel::flat(int(bins), c.num("model.energy_min_kev"), c.num("model.energy_max_kev"),
                                                 c.num("model.energy_ref_kev"));
    }
    if (c.str("model.materials_csv") != "none") {
      std::vector<Vec> cols;
      read_csv_columns(c.str("model.materials_csv"), 3, cols);
      e.formation.materials = MaterialDecomposition::make(cols[0], cols[1], cols[2]);
    } else {
      e.formation.materials = c.choice("model.materials", {"water_bone", "photo_only"}) == "photo_only"
                                  ? MaterialDecomposition::photo_only()
                                  : MaterialDecomposition::water_bone();
    }
  }

  // --- fidelity
  const std::string fk =
      c.choice("fidelity.kind", {"l2", "weighted_l2", "huber", "student_t", "poisson_dark", "poisson_bright"});
  for (auto k : all_fidelity_kinds)
    if (fk == kind_name(k)) e.fidelity = k;
  if (!c.is_auto("fidelity.nu")) {
    e.nu = c.num("fidelity.nu");
    require(*e.nu > 0, "fidelity.nu must be positive");
  }
  e.sigma = c.num("fidelity.sigma");
  require(e.sigma > 0, "fidelity.sigma must be positive");
  if (!c.is_auto("fidelity.exposure")) {
    e.exposure = c.num("fidelity.exposure");
    require(*e.exposure > 0, "fidelity.exposure must be positive");
  }
  if (!c.is_auto("fidelity.intensity")) e.fidelity_intensity = c.num("fidelity.intensity");

  // --- penalty
  const std::string fam = c.choice("penalty.family", {"l2", "weighted_l2", "weighted_projector", "w12", "lq"});
  e.penalty.family = fam == "weighted_l2"          ? PenaltySpec::Family::WeightedL2
                     : fam == "weighted_projector" ? PenaltySpec::Family::WeightedProjector
                     : fam == "w12"                ? PenaltySpec::Family::SobolevW12
                     : fam == "lq"                 ? PenaltySpec::Family::Lq
                                                   : PenaltySpec::Family::L2;
  e.penalty.alpha = c.num("penalty.alpha");
  e.penalty.gamma = c.num("penalty.gamma");
  e.penalty.q = c.num("penalty.q");
  e.penalty_weight = c.str("penalty.weight");
  require(e.penalty.alpha > 0, "penalty.alpha must be positive");
  require(e.penalty.gamma >= 0 && e.penalty.gamma <= 1, "penalty.gamma must lie in [0, 1]");
  require(e.penalty.q >= 1, "penalty.q must be >= 1");
  if (e.penalty.family == PenaltySpec::Family::Lq)
    require(parallel, "penalty.family = lq is only supported for parallel geometry (got geometry.mode = " + mode + ")");

  // --- plan
  e.pipeline = c.choice("plan.pipeline", {"gensart", "fbp", "tikhonov", "huber_pd", "xpct", "polyct"});
  e.plan.order = c.choice("plan.order", {"sequential", "multilevel"}) == "sequential"
                     ? IterationPlan::Order::Sequential
                     : IterationPlan::Order::Multilevel;
  e.plan.symmetric = c.flag("plan.symmetric");
  e.plan.cycles = static_cast<int>(c.integer("plan.cycles"));
  e.plan.k_stop = c.is_auto("plan.k_stop") ? -1 : c.integer("plan.k_stop");
  require(e.plan.cycles >= 0, "plan.cycles must be non-negative");
  require(c.is_auto("plan.k_stop") || e.plan.k_stop >= 0, "plan.k_stop must be non-negative");
  e.plan.alpha = e.penalty.alpha;
  e.nonnegative = c.flag("plan.nonnegative");
  auto bmin = optional_num(c, "plan.box_min"), bmax = optional_num(c, "plan.box_max");
  if (e.nonnegative) bmin = std::max(bmin.value_or(0.0), 0.0);
  if (bmin || bmax) {
    e.plan.box = std::make_pair(bmin.value_or(-INFINITY), bmax.value_or(INFINITY));
    require(e.plan.box->first <= e.plan.box->second, "plan.box_min must not exceed plan.box_max");
  }
  e.init = c.str("plan.init");
  e.filter = c.choice("plan.filter", {"ram_lak", "shepp_logan"}) == "shepp_logan" ? RampFilter::SheppLogan
                                                                                    : RampFilter::RamLak;
  e.cg_rtol = c.num("plan.cg_rtol");
  e.max_iter = static_cast<int>(c.integer("plan.max_iter"));
  e.pd_gap = c.num("plan.pd_gap");
  require(e.cg_rtol > 0 && e.max_iter > 0 && e.pd_gap > 0, "plan.cg_rtol, plan.max_iter and plan.pd_gap must be positive");

  // --- cross-references
  const bool poisson = e.fidelity == FidelitySpec::Kind::PoissonDark || e.fidelity == FidelitySpec::Kind::PoissonBright;
  if (e.fidelity == FidelitySpec::Kind::PoissonBright)
    require(e.formation.kind == FormationSpec::Kind::BeerLambert,
            "fidelity.kind = poisson_bright needs model.kind = beer_lambert");
  if (e.fidelity == FidelitySpec::Kind::PoissonDark)
    require(e.formation.kind == FormationSpec::Kind::Identity, "fidelity.kind = poisson_dark needs model.kind = identity");
  if (e.pipeline == "xpct" || e.formation.kind == FormationSpec::Kind::Xpct)
    require(e.pipeline == "xpct" && e.formation.kind == FormationSpec::Kind::Xpct,
            "plan.pipeline = xpct and model.kind = xpct go together");
  if (e.pipeline == "polyct" || e.formation.kind == FormationSpec::Kind::PolyCT)
    require(e.pipeline == "polyct" && e.formation.kind == FormationSpec::Kind::PolyCT,
            "plan.pipeline = polyct and model.kind = polyct go together");
  if (e.pipeline == "fbp") {
    require(parallel && dim == 2, "plan.pipeline = fbp needs parallel 2D geometry");
    require(c.is_auto("geometry.angle_span_deg") || std::abs(span - std::numbers::pi) < 1e-12,
            "plan.pipeline = fbp needs geometry.angle_span_deg = 180");
  }
  if (e.pipeline == "tikhonov") require(e.fidelity == FidelitySpec::Kind::L2, "plan.pipeline = tikhonov needs fidelity.kind = l2");
  if (e.pipeline == "huber_pd")
    require(e.fidelity == FidelitySpec::Kind::Huber, "plan.pipeline = huber_pd needs fidelity.kind = huber");
  if (e.pipeline != "gensart") {
    require(e.penalty.family == PenaltySpec::Family::L2 || (e.pipeline == "xpct" && fam == "w12"),
            "penalty.family = " + fam + " is only used by plan.pipeline = gensart");
    require(!poisson, "Poisson fidelities are only used by plan.pipeline = gensart");
  }
  if (e.pipeline == "xpct") require(e.fidelity == FidelitySpec::Kind::L2, "plan.pipeline = xpct uses fidelity.kind = l2");
  if (e.pipeline == "polyct") require(e.fidelity == FidelitySpec::Kind::L2, "plan.pipeline = polyct uses fidelity.kind = l2");

  // --- output
  e.out_dir = c.str("output.dir");
  e.out_phantom = c.str("output.phantom");
  e.out_sinogram = c.str("output.sinogram");
  e.out_volume = c.str("output.volume");
  e.out_metrics = c.str("output.metrics");
  e.out_slice = c.str("output.slice");
  e.out_meta = c.str("output.meta");
  return e;
}

std::vector<Vec> split_sinogram(const io::RawArray& a, const Experiment& e) {
  const auto want = e.sinogram_shape();
  auto fmt = [](const std::vector<int>& s) {
    std::string o = "[";
    for (size_t i = 0; i < s.size(); ++i) o += (i ? ", " : "") + std::to_string(s[i]);
    return o + "]";
  };
  require(a.shape == want, "sinogram shape " + fmt(a.shape) + " does not match the configured geometry " + fmt(want));
  require(std::abs(a.spacing - e.views[0].pitch_u) <= 1e-12 * std::abs(e.views[0].pitch_u),
          "sinogram pitch does not match the configured geometry");
  if (a.meta.contains("geometry") && e.resolved.contains("geometry")) {
    for (auto& [k, v] : e.resolved["geometry"].items()) {
      if (k == "supersample") continue;
      require(!a.meta["geometry"].contains(k) || a.meta["geometry"][k] == v,
              "sinogram was simulated with geometry." + k + " = " + a.meta["geometry"].value(k, std::string("?")) +
                  ", config has " + v.get<std::string>());
    }
  }
  const size_t m = e.views[0].pixels();
  std::vector<Vec> out(e.views.size());
  for (size_t j = 0; j < out.size(); ++j) out[j].assign(a.values.begin() + j * m, a.values.begin() + (j + 1) * m);
  return out;
}

namespace {

Vec volume_field(const std::string& spec, const Experiment& e, const std::string& what) {
  try {
    size_t pos = 0;
    double v = std::stod(spec, &pos);
    if (pos == spec.size()) return Vec(e.grid.size(), v);
  } catch (const std::logic_error&) {
  }
  io::RawArray a = io::read_raw(spec);
  require(a.shape == e.grid.dims, what + " '" + spec + "' does not match the volume grid");
  return a.values;
}

/// Data in the domain of the projection-space solvers (log transform for Beer-Lambert unless Poisson-bright).
std::vector<Vec> linear_data(const Experiment& e, const std::vector<Vec>& sino) {
  if (e.formation.kind != FormationSpec::Kind::BeerLambert || e.fidelity == FidelitySpec::Kind::PoissonBright) return sino;
  std::vector<Vec> out = sino;
  const double floor = 1e-6 * e.formation.intensity;
  for (auto& p : out)
    for (double& v : p) v = -std::log(std::max(v, floor) / e.formation.intensity);
  return out;
}

double total_residual(const Projector& P, const std::vector<Geometry>& views, const std::vector<Vec>& g,
                      std::span<const double> f) {
  double s = 0.0;
  for (size_t j = 0; j < views.size(); ++j) {
    Vec r = P.project(views[j], f);
    s += std::pow(diff_norm2(r, g[j]), 2);
  }
  return std::sqrt(s);
}

bool fidelity_needs_nu(FidelitySpec::Kind k) { return k == FidelitySpec::Kind::Huber || k == FidelitySpec::Kind::StudentT; }

/// Polychromatic Newton-Kaczmarz stepper.
struct PolyStepper {
  const Projector& P;
  const std::vector<Geometry>& views;
  const std::vector<UnitProjections>& units;
  const std::vector<Vec>& data;
  const FormationSpec& form;
  PolyOptions opt;

  StepResult operator()(size_t j, const Vec& f_k, const Vec&, double) const {
    return polyct_newton_step(P, views[j], units[j], data[j], f_k, form.spectrum, form.materials, opt);
  }
};

}  // namespace

ReconstructionOutput reconstruct(const Experiment& e, const std::vector<Vec>& sino, std::ostream& log) {
  require(sino.size() == e.views.size(), "sinogram has the wrong number of views");
  Projector P(e.grid, e.domain, 1);
  ReconstructionOutput out;
  Vec f0 = e.init == "zero" ? Vec(e.grid.size(), 0.0) : volume_field(e.init, e, "plan.init");
  const auto g = linear_data(e, sino);

  if (e.pipeline == "fbp") {
    out.f = fbp_reconstruct(P, e.views, g, e.filter);
    out.criterion = total_residual(P, e.views, g, out.f);
    return out;
  }
  if (e.pipeline == "tikhonov") {
    auto rep = tikhonov_l2(P, e.views, g, e.penalty.alpha, e.cg_rtol, e.max_iter);
    if (!rep.converged) log << "warning: tikhonov CG stopped at rel. residual " << rep.criterion << "\n";
    out.f = std::move(rep.f);
    out.iterations = rep.iterations;
    out.criterion = rep.criterion;
    return out;
  }
  Vec all;
  for (auto& p : g) all.insert(all.end(), p.begin(), p.end());
  const double nu = e.nu.value_or(default_nu(all));
  if (e.pipeline == "huber_pd") {
    PdOptions po;
    po.gap_tol = e.pd_gap;
    po.max_iter = e.max_iter;
    auto rep = tikhonov_huber_pd(P, e.views, g, e.penalty.alpha, nu, po);
    log << "huber_pd: nu = " << nu << ", " << rep.iterations << " iterations, gap " << rep.criterion << "\n";
    out.f = std::move(rep.f);
    out.iterations = rep.iterations;
    out.criterion = rep.criterion;
    return out;
  }

  IterationPlan plan = e.plan;
  std::vector<UnitProjections> units;
  if (e.pipeline == "xpct" || e.pipeline == "polyct")
    for (auto& v : e.views) units.push_back(unit_projections(P, v));

  RunResult res;
  if (e.pipeline == "xpct") {
    XpctModel model(e.views[0].n_u, e.views[0].n_v, e.formation.fresnel, e.formation.xpct_pad);
    NewtonOptions o;
    o.alpha = e.penalty.alpha;
    o.gamma = e.penalty.gamma;
    o.nonnegative = e.nonnegative;
    o.cg_rtol = e.cg_rtol;
    o.cg_max_iter = e.max_iter;
    res = run(plan, e.views.size(), f0, NewtonStepper{P, e.views, units, model, g, o});
  } else if (e.pipeline == "polyct") {
    PolyOptions o;
    o.alpha = e.penalty.alpha;
    for (double& v : f0) v = std::max(v, 0.0);
    res = run(plan, e.views.size(), f0, PolyStepper{P, e.views, units, g, e.formation, o});
  } else {
    const double t = e.exposure.value_or(e.noise.poisson_exposure > 0 ? e.noise.poisson_exposure : 1.0);
    std::vector<View> views;
    for (size_t j = 0; j < e.views.size(); ++j) {
      FidelitySpec fs;
      fs.kind = e.fidelity;
      fs.nu = nu;
      fs.data = g[j];
      if (e.fidelity == FidelitySpec::Kind::WeightedL2) fs.sigma.assign(g[j].size(), e.sigma);
      if (fs.poisson()) {
        // Stored data are Poisson(t·mean)/t; the fidelity wants counts.
        for (double& v : fs.data) v = std::max(0.0, std::round(v * t));
        fs.exposure = t;
        double I = e.fidelity_intensity.value_or(e.formation.kind == FormationSpec::Kind::BeerLambert ? e.formation.intensity : 1.0);
        fs.intensity.assign(g[j].size(), I);
      }
      views.push_back(make_view(P, e.views[j], std::move(fs)));
    }
    PenaltySpec pen = e.penalty;
    if (pen.family == PenaltySpec::Family::WeightedL2 || pen.family == PenaltySpec::Family::WeightedProjector)
      pen.weight = volume_field(e.penalty_weight, e, "penalty.weight");
    pen.validate(e.views[0], e.grid.size());
    InnerSolverOptions inner;
    inner.rtol = e.cg_rtol;
    inner.max_iter = e.max_iter;
    if (fidelity_needs_nu(e.fidelity)) log << "fidelity nu = " << nu << "\n";
    res = run(plan, e.views.size(), f0, GenSartStepper{P, views, pen, inner});
  }
  out.f = std::move(res.f);
  out.metrics = std::move(res.metrics);
  out.iterations = static_cast<long>(out.metrics.size());
  return out;
}

namespace {

void ensure_dir(const std::string& d) {
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw ConfigError("cannot create output directory '" + d + "': " + ec.message());
}

/// Central slice (z = nz/2) with a min/max window.
void write_slice(const Experiment& e, std::span<const double> f, std::ostream& out) {
  if (e.out_slice == "none") return;
  const int nx = e.grid.nx(), ny = e.grid.ny();
  const size_t off = static_cast<size_t>(e.grid.nz() / 2) * nx * ny;
  // PGM rows run top to bottom, grid rows bottom to top.
  Vec img(static_cast<size_t>(nx) * ny);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) img[static_cast<size_t>(ny - 1 - y) * nx + x] = f[off + static_cast<size_t>(y) * nx + x];
  auto [lo, hi] = std::minmax_element(img.begin(), img.end());
  json meta = {{"slice_axis", "z"}, {"slice_index", e.grid.nz() / 2}};
  io::write_pgm(e.path(e.out_slice), nx, ny, img, *lo, *hi, meta);
  out << "wrote " << e.path(e.out_slice) << "\n";
}

}  // namespace

int cmd_simulate(const std::string& config, std::ostream& out, std::ostream& log) {
  Experiment e = load_experiment(config);
  log << "# resolved config (" << config << ")\n" << e.config_text;
  ensure_dir(e.out_dir);
  VolumeGrid f = make_phantom(e.phantom, e.grid, e.domain);
  auto sino = simulate_data(f, e.domain, e.views, e.formation, e.noise, e.supersample);

  io::RawArray ph{f.dims, f.voxel, "phantom", f.values, {{"domain", domain_to_json(e.domain)}}};
  io::write_raw(e.path(e.out_phantom), ph);
  io::RawArray sg{e.sinogram_shape(), e.views[0].pitch_u, "sinogram", {}, {}};
  for (auto& p : sino) sg.values.insert(sg.values.end(), p.begin(), p.end());
  sg.meta = {{"geometry", e.resolved["geometry"]}, {"model", e.resolved["model"]}, {"noise", e.resolved["noise"]}};
  io::write_raw(e.path(e.out_sinogram), sg);

  json meta = {{"command", "simulate"}, {"config", e.resolved},
               {"phantom_norm", norm2(f.values)}, {"sinogram_norm", norm2(sg.values)},
               {"phantom_seed", e.phantom.seed}, {"noise_seed", e.noise.seed}};
  io::write_text(e.path(e.out_meta), meta.dump(2) + "\n");
  out << "simulate: phantom seed=" << e.phantom.seed << " noise seed=" << e.noise.seed << " views=" << e.views.size()
      << " |f|=" << io::format_number(norm2(f.values)) << " |g|=" << io::format_number(norm2(sg.values)) << "\n";
  return 0;
}

int cmd_reconstruct(const std::string& config, const std::string& sinogram, std::ostream& out, std::ostream& log) {
  Experiment e = load_experiment(config);
  log << "# resolved config (" << config << ")\n" << e.config_text;
  io::RawArray a = io::read_raw(sinogram);
  require(a.kind == "sinogram", "'" + sinogram + "' is a " + a.kind + ", not a sinogram");
  auto sino = split_sinogram(a, e);
  if (e.init != "zero") volume_field(e.init, e, "plan.init");  // shape check before compute
  ensure_dir(e.out_dir);
  auto rec = reconstruct(e, sino, log);

  io::RawArray vol{e.grid.dims, e.grid.voxel, "volume", rec.f, {{"domain", domain_to_json(e.domain)},
                                                                {"pipeline", e.pipeline}}};
  io::write_raw(e.path(e.out_volume), vol);
  std::ofstream csv(e.path(e.out_metrics));
  if (!csv) throw ConfigError("cannot write '" + e.path(e.out_metrics) + "'");
  if (!rec.metrics.empty() || e.pipeline == "gensart" || e.pipeline == "xpct" || e.pipeline == "polyct") {
    write_metrics_csv(csv, rec.metrics);
  } else {
    csv << "iter,view,residual,objective,update_norm\n" << std::setprecision(10);
    csv << rec.iterations << ",-1," << rec.criterion << "," << rec.criterion << "," << norm2(rec.f) << "\n";
  }
  out << "wrote " << e.path(e.out_volume) << "\n";
  write_slice(e, rec.f, out);
  json meta = {{"command", "reconstruct"}, {"config", e.resolved}, {"sinogram", sinogram},
               {"iterations", rec.iterations}, {"volume_norm", norm2(rec.f)}};
  io::write_text(e.path(e.out_meta), meta.dump(2) + "\n");
  out << "reconstruct: pipeline=" << e.pipeline << " steps=" << rec.iterations
      << " |f|=" << io::format_number(norm2(rec.f)) << "\n";
  return 0;
}

int cmd_compare(const std::vector<std::string>& volumes, const std::string& truth, const std::string& csv,
                std::ostream& out) {
  io::RawArray t = io::read_raw(truth);
  std::vector<std::uint8_t> mask;
  if (t.meta.contains("domain")) {
    VolumeGrid grid(t.shape, t.spacing);
    mask = domain_mask(domain_from_json(t.meta["domain"]), grid);
  }
  std::ostringstream table;
  table << "volume,psnr_db,rel_l2,correlation\n";
  for (const auto& path : volumes) {
    io::RawArray a = io::read_raw(path);
    require(a.shape == t.shape, "'" + path + "' and '" + truth + "' have different shapes");
    auto m = io::compare(a.values, t.values, mask);
    table << path << "," << io::format_number(m.psnr) << "," << io::format_number(m.rel_l2) << ","
          << io::format_number(m.correlation) << "\n";
  }
  out << table.str();
  if (!csv.empty()) io::write_text(csv, table.str());
  return 0;
}

int cmd_oracle(int prox_cases, int systems, std::uint64_t seed, const std::string& csv, std::ostream& out) {
  require(prox_cases >= 0 && systems >= 0, "oracle case counts must be non-negative");
  constexpr double x_tol = 1e-5, obj_tol = 1e-8, gap_tol = 1e-8;
  std::ostringstream table;
  table << "oracle,cases,max_error,max_objective_error,pass\n";
  bool ok = true;
  for (auto k : all_fidelity_kinds) {
    auto r = prox_oracle_suite(k, prox_cases, seed + static_cast<std::uint64_t>(k));
    bool pass = r.max_x_err <= x_tol && r.max_obj_err <= obj_tol;
    ok = ok && pass;
    table << "prox_" << kind_name(k) << "," << prox_cases << "," << io::format_number(r.max_x_err) << ","
          << io::format_number(r.max_obj_err) << "," << (pass ? "yes" : "no") << "\n";
  }
  double worst = 0.0;
  for (int s = 0; s < systems; ++s)
    worst = std::max(worst, symmetric_cycle_oracle(random_block_system(seed + 1000 + s, 5 + s % 26)).discrepancy);
  bool pass = worst <= gap_tol;
  ok = ok && pass;
  table << "symmetric_cycle," << systems << "," << io::format_number(worst) << ",0," << (pass ? "yes" : "no") << "\n";
  out << table.str();
  if (!csv.empty()) io::write_text(csv, table.str());
  return ok ? 0 : 3;
}

}  // namespace gensart
