#pragma once

#include "ekisde/schemes.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ekisde {

/// Invalid scenario; `path` names the offending field (e.g. "run.levels[2]").
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::runtime_error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}
  [[nodiscard]] const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct InitialSpec {
  enum class Kind { gaussian, explicit_particles } kind = Kind::gaussian;
  Eigen::Index size = 2;
  Vector mean;
  Matrix cov;
  Matrix particles;
  bool project_to_range = false;
  bool per_replica = true;   ///< fresh draw for every replica (gaussian only)
  bool exact_moments = false; ///< affine-correct the draw to the prescribed mean and covariance
};

struct RunSpec {
  double horizon = 1.0;
  std::vector<int> levels;
  int reference_level = 10;
  std::size_t replicas = 1;
  std::uint64_t seed = 0;
  Variant variant = Variant::tamed;
  double gamma = 0.45;
  double theta = 2.0;
  double lambda = 1.0;
  Matrix prior_cov; ///< empty means identity
  double explosion_threshold = 1e8;
  std::optional<double> radius;
  std::optional<std::pair<double, double>> expect_order;
};

struct VerifySpec {
  int level = 8;
  std::size_t replicas = 200;
  std::size_t draws = 100000;
  std::optional<double> step;
  std::optional<Vector> y_tilde;
};

struct Scenario {
  std::string name;
  InverseProblem problem;
  InitialSpec initial;
  RunSpec run;
  VerifySpec verify;

  /// Problem the configured variant iterates on (Tikhonov extension for TEKI).
  [[nodiscard]] InverseProblem effective() const;
  [[nodiscard]] SchemeConfig scheme(int level) const;
  /// Initial ensemble of one replica; deterministic in (seed, replica).
  [[nodiscard]] Ensemble initial_ensemble(std::size_t replica) const;
};

Scenario parse_scenario(const std::string& text, const std::string& source = "scenario");
Scenario load_scenario(const std::filesystem::path& path);

/// mean + L z_j with L L^T = cov, z_j from the initial-ensemble stream.
/// With `exact`, the deviations are transformed so the empirical mean and
/// covariance (1/J normalization) equal `mean` and `cov`.
Ensemble gaussian_ensemble(const Vector& mean, const Matrix& cov, Eigen::Index size, std::uint64_t seed,
                           std::uint32_t stream, bool exact);

std::string read_file(const std::filesystem::path& path);

} // namespace ekisde
