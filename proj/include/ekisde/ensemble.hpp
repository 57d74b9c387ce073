#pragma once

#include "ekisde/linalg.hpp"
#include "ekisde/model.hpp"

namespace ekisde {

/// J particles in R^p stored as the rows of a J x p matrix. J >= 2.
class Ensemble {
 public:
  explicit Ensemble(Matrix particles);

  [[nodiscard]] const Matrix& particles() const { return particles_; }
  [[nodiscard]] Eigen::Index size() const { return particles_.rows(); }
  [[nodiscard]] Eigen::Index dim() const { return particles_.cols(); }
  [[nodiscard]] Vector particle(Eigen::Index j) const { return particles_.row(j).transpose(); }
  [[nodiscard]] Vector mean() const { return particles_.colwise().mean().transpose(); }
  [[nodiscard]] Matrix deviations() const { return particles_.rowwise() - particles_.colwise().mean(); }
  [[nodiscard]] bool all_finite() const { return particles_.allFinite(); }
  /// Euclidean norm of the stacked vector (u^(1), ..., u^(J)) in R^{pJ}.
  [[nodiscard]] double stacked_norm() const { return particles_.norm(); }

 private:
  Matrix particles_;
};

/// Empirical moments with 1/J normalization.
struct EnsembleStats {
  Vector u_bar;      ///< p
  Vector g_bar;      ///< K
  Matrix c;          ///< p x p, C(u)
  Matrix c_up;       ///< p x K, C^{up}(u)
  Matrix c_pp;       ///< K x K, C^{pp}(u)
  Matrix deviations; ///< J x p, rows e^(j) = u^(j) - u_bar
};

EnsembleStats stats(const Ensemble& ensemble, const ForwardModel& model);

/// C(u) = (1/J) sum_j e^(j) e^(j)^T, symmetrized.
Matrix covariance(const Ensemble& ensemble);

/// (1/J) sum_j ||u^(j) - u_bar||^2 (equals trace C(u)).
double spread_energy(const Ensemble& ensemble);

/// Orthogonal projector onto ker(B)^perp = range(B^T), p x p.
Matrix range_projector(const Matrix& b);

/// Max over particles of dist(u^(j) - u_bar_0, span{e_0^(k)}) / (1 + ||u^(j)||).
/// Zero iff the ensemble lies in the affine span of the initial one.
double affine_span_residual(const Ensemble& ensemble, const Ensemble& initial);

} // namespace ekisde
