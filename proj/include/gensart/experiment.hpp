#pragma once

#include <iosfwd>

#include "io.hpp"
#include "baselines.hpp"
#include "phantom.hpp"

namespace gensart {

/// Resolved experiment description built from an INI config. All cross-checks happen in load_experiment.
struct Experiment {
  io::json resolved;  // full config, defaults included
  std::string config_text;

  // geometry
  VolumeGrid grid;
  Domain domain;
  std::vector<Geometry> views;
  int supersample = 2;  // simulation projector

  PhantomSpec phantom;
  NoiseSpec noise;
  FormationSpec formation;

  // fidelity
  FidelitySpec::Kind fidelity = FidelitySpec::Kind::L2;
  std::optional<double> nu;  // nullopt: 20% of the data std
  double sigma = 1.0;
  std::optional<double> exposure;
  std::optional<double> fidelity_intensity;

  PenaltySpec penalty;
  std::string penalty_weight = "1";  // constant or raw-file path

  // plan
  std::string pipeline = "gensart";
  IterationPlan plan;
  std::string init = "zero";  // or a raw-file path
  RampFilter filter = RampFilter::RamLak;
  double cg_rtol = 1e-6;
  int max_iter = 300;
  double pd_gap = 0.01;
  bool nonnegative = false;

  // output
  std::string out_dir = ".";
  std::string out_phantom, out_sinogram, out_volume, out_metrics, out_slice, out_meta;

  /// Sinogram array shape: [n_angles, n_det] or [n_angles, n_det_v, n_det].
  std::vector<int> sinogram_shape() const;
  std::string path(const std::string& name) const;
};

std::vector<io::KeySpec> config_schema();

/// Parses and validates the config; throws ConfigError before any heavy compute.
Experiment load_experiment(const std::string& config_path);

io::json domain_to_json(const Domain& d);
Domain domain_from_json(const io::json& j);

struct ReconstructionOutput {
  Vec f;
  std::vector<IterationMetrics> metrics;  // Kaczmarz pipelines
  long iterations = 0;                    // baselines
  double criterion = 0.0;
};

std::vector<Vec> split_sinogram(const io::RawArray& a, const Experiment& e);

/// Runs the configured pipeline on a sinogram stack.
ReconstructionOutput reconstruct(const Experiment& e, const std::vector<Vec>& sino, std::ostream& log);

int cmd_simulate(const std::string& config, std::ostream& out, std::ostream& log);
int cmd_reconstruct(const std::string& config, const std::string& sinogram, std::ostream& out, std::ostream& log);
int cmd_compare(const std::vector<std::string>& volumes, const std::string& truth, const std::string& csv,
                std::ostream& out);
int cmd_oracle(int prox_cases, int systems, std::uint64_t seed, const std::string& csv, std::ostream& out);

}  // namespace gensart
