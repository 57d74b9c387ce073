#pragma once

#include "ekisde/linalg.hpp"

#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace ekisde {

enum class ModelKind { linear, lipschitz_nonlinear, polynomial_nonlinear };

std::string_view to_string(ModelKind kind);

/// Forward map G : R^p -> R^K together with the metadata the convergence theory
/// needs (linear matrix when available, polynomial growth exponent m).
class ForwardModel {
 public:
  using Map = std::function<Vector(const Vector&)>;

  /// G(u) = A u.
  static ForwardModel linear(Matrix a);
  /// G(u) = W tanh(u) with tanh applied coordinatewise; globally Lipschitz (m = 1).
  static ForwardModel lipschitz_tanh(Matrix mix);
  /// G(u) = W (u^3) coordinatewise; cubic growth (m = 3).
  static ForwardModel cubic(Matrix mix);
  /// Arbitrary map. For kind == lipschitz_nonlinear the growth exponent must be 1.
  static ForwardModel custom(Map map, Eigen::Index input_dim, Eigen::Index output_dim,
                             ModelKind kind, double growth_exponent, std::string name = "custom");

  Vector operator()(const Vector& u) const;
  /// Applies G to each row of `particles` (J x p); returns J x K.
  Matrix apply_rows(const Matrix& particles) const;

  [[nodiscard]] bool is_linear() const { return linear_.has_value(); }
  [[nodiscard]] const std::optional<Matrix>& linear_matrix() const { return linear_; }
  [[nodiscard]] Eigen::Index input_dim() const { return input_dim_; }
  [[nodiscard]] Eigen::Index output_dim() const { return output_dim_; }
  [[nodiscard]] double growth_exponent() const { return growth_exponent_; }
  [[nodiscard]] ModelKind kind() const { return kind_; }
  [[nodiscard]] const std::string& name() const { return name_; }
  /// Mixing matrix of the named nonlinear families (empty otherwise).
  [[nodiscard]] const Matrix& mix() const { return mix_; }

 private:
  ForwardModel() = default;

  Map map_;
  std::optional<Matrix> linear_;
  Matrix mix_;
  Eigen::Index input_dim_ = 0;
  Eigen::Index output_dim_ = 0;
  double growth_exponent_ = 1.0;
  ModelKind kind_ = ModelKind::linear;
  std::string name_;
};

/// y = G(u) + eta, eta ~ N(0, Gamma). Immutable; caches the symmetric whitener
/// Gamma^{-1/2}, Gamma^{1/2} and, for linear models, B = Gamma^{-1/2} A.
class InverseProblem {
 public:
  InverseProblem(ForwardModel model, Matrix gamma, Vector observation);

  [[nodiscard]] const ForwardModel& model() const { return model_; }
  [[nodiscard]] const Matrix& gamma() const { return gamma_; }
  [[nodiscard]] const Vector& observation() const { return observation_; }
  [[nodiscard]] const Matrix& gamma_inv_sqrt() const { return gamma_inv_sqrt_; }
  [[nodiscard]] const Matrix& gamma_sqrt() const { return gamma_sqrt_; }
  [[nodiscard]] const std::optional<Matrix>& whitened_operator() const { return whitened_; }
  /// Gamma^{-1/2} y
  [[nodiscard]] const Vector& whitened_observation() const { return whitened_observation_; }

  [[nodiscard]] Eigen::Index param_dim() const { return model_.input_dim(); }
  [[nodiscard]] Eigen::Index obs_dim() const { return model_.output_dim(); }
  [[nodiscard]] bool is_linear() const { return model_.is_linear(); }

  /// Set on problems produced by extend_tikhonov: observation dimension of the
  /// original (unregularized) problem.
  [[nodiscard]] std::optional<Eigen::Index> tikhonov_base_obs_dim() const { return base_obs_dim_; }

 private:
  friend InverseProblem extend_tikhonov(const InverseProblem&, double, const Matrix&);

  ForwardModel model_;
  Matrix gamma_;
  Vector observation_;
  Matrix gamma_inv_sqrt_;
  Matrix gamma_sqrt_;
  std::optional<Matrix> whitened_;
  Vector whitened_observation_;
  std::optional<Eigen::Index> base_obs_dim_;
};

/// z = y_hat + y_tilde with y_hat in range(B), y_tilde orthogonal to it.
struct ObservationSplit {
  Vector in_range;   ///< y_hat
  Vector orthogonal; ///< y_tilde
  Vector witness;    ///< minimum-norm u_hat with B u_hat = y_hat
};

ObservationSplit decompose_observation(const Matrix& b, const Vector& z);

/// Tikhonov-regularized extension: A~ = [A; I], y~ = (y; 0),
/// Gamma~ = blockdiag(Gamma, C0 / lambda). Linear models only.
InverseProblem extend_tikhonov(const InverseProblem& problem, double lambda, const Matrix& prior_cov);

/// Growth and Lipschitz bounds of the EKI drift/diffusion on a ball of radius R
/// for a forward map with polynomial growth exponent m.
struct GrowthBounds {
  double growth;        ///< B(R) = C (R^{1+2m} + 1)
  double lipschitz;     ///< L(R) = C (R^{2m} + 1)
  double approximation; ///< C_a(R, h) = C h (R^{4m+1} + 1)
  double residual;      ///< K(R, h) = C_a + L h^{1/2} B
  double one_sided;     ///< delta(R) = 2 L + c L^2 + eps
};

GrowthBounds growth_diagnostics(double m, double radius, double h, double c, double eps,
                                double scale = 1.0);

} // namespace ekisde
