#pragma once

#include "ekisde/analysis.hpp"
#include "ekisde/schemes.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ekisde {

/// equal:    |analytic - empirical| <= tolerance
/// at_most:  empirical <= analytic + tolerance
/// at_least: empirical >= analytic - tolerance
enum class Relation { equal, at_most, at_least };
std::string_view to_string(Relation relation);

struct IdentityReport {
  std::string name;
  double analytic = 0.0;
  double empirical = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::size_t sample_size = 1;
  Relation relation = Relation::equal;
  std::string detail; ///< free-form context (worst step, precondition failure)

  static IdentityReport make(std::string name, double analytic, double empirical, double tolerance,
                             std::size_t sample_size, Relation relation = Relation::equal,
                             std::string detail = {});
  /// A check whose precondition failed; never passes.
  static IdentityReport failed(std::string name, std::string error);
};

/// Thrown when a check's precondition does not hold.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string reports_json(const std::vector<IdentityReport>& reports);
bool all_pass(const std::vector<IdentityReport>& reports);

/// ||M (h B C B^T + I) - I|| for the ensemble's covariance.
IdentityReport check_taming_identity(const Ensemble& ensemble, const Matrix& b, double h);
/// Worst taming residual over every state of a trajectory.
IdentityReport check_taming_identity(const Trajectory& trajectory, const Matrix& b);

/// ||C B^T M y_tilde|| <= 1e-10 (1 + ||y_tilde||). Throws PreconditionError
/// unless y_tilde is orthogonal to range(B).
IdentityReport check_orthogonality(const Ensemble& ensemble, const Matrix& b, double h, const Vector& y_tilde);

struct MonteCarloOptions {
  std::size_t draws = 100000;
  std::uint64_t seed = 0;
  std::uint32_t stream = 0;
  double standard_errors = 4.0;
};

/// -h^2 (1/J) sum_j ||C B^T M B e_j||^2 - (J+1)/J h ||C B^T M||_HS^2
double spread_decrement(const Ensemble& ensemble, const Matrix& b, double h);
/// Expected one-step change of (1/J) sum_j (||B r_j||^2 + ||B e_j||^2), r_j = u_j - u_hat:
/// -h^2 (1/J) sum ||S M B r||^2 - 2h (1/J) sum r^T B^T M S M B r
/// - h^2 (1/J) sum ||S M B e||^2 - (h/J^2) sum e^T B^T M S M B e,  S = B C B^T.
double residual_decrement(const Ensemble& ensemble, const Matrix& b, double h, const Vector& u_hat);

/// (1/J) sum_j (||B (u_j - u_hat)||^2 + ||B e_j||^2)
double mapped_energy(const Ensemble& ensemble, const Matrix& b, const Vector& u_hat);

/// Monte Carlo mean of the one-step change in spread energy against the analytic decrement.
IdentityReport check_spread_decrement(const Ensemble& ensemble, const Matrix& b, double h,
                                      const MonteCarloOptions& options = {});
/// Same for the mapped residual + spread energy. z is the whitened observation;
/// u_hat is its decompose_observation witness.
IdentityReport check_residual_decrement(const Ensemble& ensemble, const Matrix& b, double h, const Vector& z,
                                        const MonteCarloOptions& options = {});

/// max_{n,j} ||(I-P) e_n^(j)|| and ||(I-P)(r_n^(j) - r_0^(j))||. Throws
/// PreconditionError when (I-P) e_0 != 0.
IdentityReport check_kernel_invariance(const Trajectory& trajectory, const Matrix& b);
/// u_j -> P u_j for every particle.
Ensemble project_to_range(const Ensemble& ensemble, const Matrix& b);

/// max_n affine_span_residual(state_n, state_0)
IdentityReport check_subspace(const Trajectory& trajectory);

/// sum_{k,l} <z_k, z_l> <z_k, S z_l> >= 0 for the rows z_k of Z. Throws
/// std::invalid_argument for non-symmetric S.
IdentityReport check_quadform_nonneg(const Matrix& z, const Matrix& s);

/// Replica averages along linear tamed trajectories on one grid: spread energy,
/// mapped energy, and the two running sums bounded by the initial data.
class PathAverages {
 public:
  PathAverages(std::size_t steps, double h, Matrix b, Vector u_hat);

  /// Trajectory must have run all `steps` steps without exploding.
  void add(const Trajectory& trajectory);
  [[nodiscard]] std::size_t replicas() const { return spread_.count(); }

  /// Path-averaged spread energy non-increasing within `ses` standard errors.
  IdentityReport spread_trend(double ses = 2.0);
  /// Path-averaged mapped energy non-increasing within `ses` standard errors.
  IdentityReport residual_trend(double ses = 2.0);
  /// (J+1)/J sum_{k<n} h ||C_k B^T M_k||_HS^2 <= (1/J) sum ||e_0||^2 at every n,
  /// with the gap at least `ses` standard errors.
  IdentityReport hs_sum_bound(double ses = 2.0);
  /// sum_{k<n} h (1/J) sum_j r^T B^T M C B^T M B r <= (1/(2J)) sum (||B r_0||^2 + ||B e_0||^2).
  IdentityReport residual_sum_bound(double ses = 2.0);

  std::vector<double> spread_means() { return spread_.means(); }
  std::vector<double> mapped_means() { return mapped_.means(); }

 private:
  IdentityReport trend(ColumnAccumulator& acc, const char* name, double ses);
  IdentityReport bound(ColumnAccumulator& gap, const char* name, double ses);

  std::size_t steps_;
  double h_;
  Matrix b_;
  Vector u_hat_;
  ColumnAccumulator spread_, mapped_, hs_gap_, res_gap_;
};

} // namespace ekisde
