// gensart: simulate / reconstruct / compare / oracle.
// Exit codes: 0 ok, 1 usage, 2 configuration or data mismatch, 3 solver failure.

#include <iostream>

#include <CLI11.hpp>

#include "gensart/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"GenSART tomographic reconstruction"};
  app.require_subcommand(1);

  std::string config, sinogram, truth, csv;
  std::vector<std::string> volumes;
  int prox_cases = 1000, systems = 50;
  std::uint64_t seed = 0;

  auto* sim = app.add_subcommand("simulate", "phantom + noisy sinogram from a config");
  sim->add_option("config", config, "experiment INI file")->required();

  auto* rec = app.add_subcommand("reconstruct", "run the configured pipeline on a sinogram");
  rec->add_option("config", config, "experiment INI file")->required();
  rec->add_option("sinogram", sinogram, "sinogram raw file (sidecar alongside)")->required();

  auto* cmp = app.add_subcommand("compare", "PSNR / rel. L2 / masked correlation against a ground truth");
  cmp->add_option("volumes", volumes, "volumes to score")->required();
  cmp->add_option("--truth,-t", truth, "ground-truth volume")->required();
  cmp->add_option("--csv", csv, "also write the table here");

  auto* orc = app.add_subcommand("oracle", "prox grid-search suites and the symmetric-cycle oracle");
  orc->add_option("--prox-cases", prox_cases, "random cases per fidelity kind");
  orc->add_option("--systems", systems, "random block systems");
  orc->add_option("--seed", seed, "base seed");
  orc->add_option("--csv", csv, "also write the table here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) return gensart::cmd_simulate(config, std::cout, std::cerr);
    if (*rec) return gensart::cmd_reconstruct(config, sinogram, std::cout, std::cerr);
    if (*cmp) return gensart::cmd_compare(volumes, truth, csv, std::cout);
    if (*orc) return gensart::cmd_oracle(prox_cases, systems, seed, csv, std::cout);
  } catch (const gensart::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const gensart::SolverError& e) {
    std::cerr << "solver error";
    if (e.iteration >= 0) std::cerr << " at iteration " << e.iteration;
    std::cerr << ": " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
