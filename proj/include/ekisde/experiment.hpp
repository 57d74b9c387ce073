#pragma once

#include "ekisde/analysis.hpp"
#include "ekisde/properties.hpp"
#include "ekisde/scenario.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ekisde {

struct RunOptions {
  std::optional<std::uint64_t> seed; ///< overrides run.seed
  unsigned jobs = 1;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

/// Coupled refinement study: for each replica one lattice, one reference path
/// and one approximation per level. Results are reduced in replica order, so
/// they do not depend on `jobs`.
ConvergenceReport run_convergence(const Scenario& scenario, const RunOptions& options = {});

/// 64-bit FNV-1a
std::uint64_t fnv1a(std::string_view bytes);

/// report.json (payload, payload hash, config hash, generated_at), report.csv
/// and histogram_level_<l>.csv for each level.
void write_run_outputs(const ConvergenceReport& report, const std::string& config_bytes,
                       const std::filesystem::path& out_dir);

/// Histogram of log10 sup-errors; exploded or infinite samples go to a final row.
std::string histogram_csv(const std::vector<double>& sup_errors, int bins = 20);

enum class Figure1Mode { deterministic, stochastic };

struct Figure1Options {
  Figure1Mode mode = Figure1Mode::deterministic;
  Eigen::Index particles = 5;
  int level = 14;
  std::uint64_t seed = 0;
};

struct Figure1Result {
  Trajectory trajectory;
  std::vector<double> times;
  std::vector<Vector> mean_path;
  std::vector<double> mean_norm;
  double initial_norm = 0.0;
  double final_norm = 0.0;
  double max_norm = 0.0;
  double argmax_time = 0.0;
  Vector initial_eigenvalues; ///< of the empirical initial covariance, ascending
  Matrix initial_eigenvectors;
};

/// A = diag(100, 1), Gamma = I, y = 0, initial mean (100, 100) and empirical
/// covariance [[25, -24], [-24, 25]], t in [0, 1].
Figure1Result figure1(const Figure1Options& options);
void write_figure1_outputs(const Figure1Result& result, const Figure1Options& options,
                           const std::filesystem::path& out_dir);

/// Property suite on a linear scenario (TEKI scenarios use the extended problem).
std::vector<IdentityReport> verify_scenario(const Scenario& scenario, const RunOptions& options = {});

/// Reads a report.json written by `run` (payload or wrapper) and refits the order.
ConvergenceReport load_report(const std::filesystem::path& path);

std::string timestamp_utc();

} // namespace ekisde
