#pragma once

#include "ekisde/ensemble.hpp"
#include "ekisde/model.hpp"
#include "ekisde/noise.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

namespace ekisde {

enum class Variant { tamed, euler_maruyama, teki };

std::string_view to_string(Variant variant);
/// Accepts "tamed", "em" / "euler_maruyama", "teki".
Variant parse_variant(std::string_view name);

struct SchemeConfig {
  Variant variant = Variant::tamed;
  int level = 0; ///< step h = T / 2^level
  double horizon = 1.0;
  double explosion_threshold = 1e8;
  double lambda = 1.0; ///< TEKI regularization weight
  Matrix prior_cov;    ///< TEKI prior covariance C0; empty means identity

  [[nodiscard]] double step() const;
};

/// One step of any scheme has the form Y_{n+1} = Y_n + h * drift + dW * diffusion^T,
/// with dW the J x K matrix of Brownian increments (rows per particle).
struct StepCoefficients {
  Matrix drift;     ///< J x p, row j = f_h(Y_n)^(j)
  Matrix diffusion; ///< p x K, g_h(Y_n), shared by every particle
};

/// Tamed EKI: gain C^up (h C^pp + Gamma)^{-1}. Linear problems use the whitened
/// form C B^T M with M = (h B C B^T + I)^{-1}, applied by Cholesky solve.
StepCoefficients tamed_coefficients(const Ensemble& ensemble, const InverseProblem& problem, double h);
/// Tamed EKI through the covariance form for any model (dense SPD solve with h C^pp + Gamma).
StepCoefficients tamed_coefficients_general(const Ensemble& ensemble, const InverseProblem& problem,
                                            double h);
/// Euler-Maruyama: Gamma^{-1} in place of (h C^pp + Gamma)^{-1}.
StepCoefficients em_coefficients(const Ensemble& ensemble, const InverseProblem& problem);

/// M(u) = (h B C(u) B^T + I)^{-1} for the whitened operator B.
Matrix taming_matrix(const Matrix& c, const Matrix& b, double h);

Ensemble advance(const Ensemble& ensemble, const StepCoefficients& coeffs, double h, const Matrix& dw);

Ensemble step_tamed(const Ensemble& ensemble, const InverseProblem& problem, double h, const Matrix& dw);
Ensemble step_em(const Ensemble& ensemble, const InverseProblem& problem, double h, const Matrix& dw);
/// Tamed EKI on a problem produced by extend_tikhonov; dW has K + p columns.
Ensemble step_teki(const Ensemble& ensemble, const InverseProblem& extended, double h, const Matrix& dw);

/// Problem the variant actually iterates on: the Tikhonov extension for TEKI
/// (unless `problem` already is one), `problem` otherwise.
InverseProblem effective_problem(const SchemeConfig& config, const InverseProblem& problem);

struct Trajectory {
  Variant variant = Variant::tamed;
  int level = 0;
  double horizon = 1.0;
  std::uint64_t lattice_seed = 0;
  int lattice_level = 0;
  std::vector<Ensemble> states;                ///< Y_0 .. Y_n (truncated after an explosion)
  std::vector<StepCoefficients> coefficients;  ///< one per completed cell
  std::optional<double> exploded_at;

  [[nodiscard]] std::size_t steps() const { return std::size_t{1} << level; }
  [[nodiscard]] double step() const { return horizon / static_cast<double>(steps()); }
  [[nodiscard]] double time(std::size_t n) const { return static_cast<double>(n) * step(); }
  [[nodiscard]] bool exploded() const { return exploded_at.has_value(); }
};

/// Runs the configured scheme over the dyadic grid of `config.level`, driven by
/// the lattice increments at that level. Halts at the first state with a
/// non-finite entry or a particle norm above the explosion threshold and
/// records the time in exploded_at.
Trajectory simulate(const SchemeConfig& config, const InverseProblem& problem, const Ensemble& initial,
                    const NoiseLattice& lattice);

/// Tamed EKI at the lattice's finest level: the stand-in for the SDE solution
/// in every error measurement.
Trajectory reference_path(const InverseProblem& problem, const Ensemble& initial,
                          const NoiseLattice& lattice, double explosion_threshold = 1e8);

/// Continuous-time interpolation
///   Y(t) = Y_n + (t - t_n) f_h(Y_n) + g_h(Y_n) (W(t) - W(t_n)),  t_n = floor(t),
/// evaluated on the finest lattice grid.
Ensemble interpolate(const Trajectory& trajectory, const NoiseLattice& lattice, double t);
Ensemble interpolate_node(const Trajectory& trajectory, const NoiseLattice& lattice, std::size_t node);
/// Same formula using cell `cell`; `node` may be the right end of the cell.
Ensemble interpolate_in_cell(const Trajectory& trajectory, const NoiseLattice& lattice,
                             std::size_t cell, std::size_t node);

/// CSV with columns schema_version,t,particle,coord_0..coord_{p-1}.
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);

inline constexpr int kCsvSchemaVersion = 1;

} // namespace ekisde
