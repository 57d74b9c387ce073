#include "ekisde/model.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace ekisde {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::linear: return "linear";
    case ModelKind::lipschitz_nonlinear: return "lipschitz-nonlinear";
    case ModelKind::polynomial_nonlinear: return "polynomial-nonlinear";
  }
  return "unknown";
}

ForwardModel ForwardModel::linear(Matrix a) {
  ForwardModel m;
  m.input_dim_ = a.cols();
  m.output_dim_ = a.rows();
  m.kind_ = ModelKind::linear;
  m.growth_exponent_ = 1.0;
  m.name_ = "linear";
  m.map_ = [a](const Vector& u) -> Vector { return a * u; };
  m.linear_ = std::move(a);
  return m;
}

ForwardModel ForwardModel::lipschitz_tanh(Matrix mix) {
  ForwardModel m;
  m.input_dim_ = mix.cols();
  m.output_dim_ = mix.rows();
  m.kind_ = ModelKind::lipschitz_nonlinear;
  m.growth_exponent_ = 1.0;
  m.name_ = "lipschitz_tanh";
  m.map_ = [mix](const Vector& u) -> Vector { return mix * u.array().tanh().matrix(); };
  m.mix_ = std::move(mix);
  return m;
}

ForwardModel ForwardModel::cubic(Matrix mix) {
  ForwardModel m;
  m.input_dim_ = mix.cols();
  m.output_dim_ = mix.rows();
  m.kind_ = ModelKind::polynomial_nonlinear;
  m.growth_exponent_ = 3.0;
  m.name_ = "cubic";
  m.map_ = [mix](const Vector& u) -> Vector { return mix * u.array().cube().matrix(); };
  m.mix_ = std::move(mix);
  return m;
}

ForwardModel ForwardModel::custom(Map map, Eigen::Index input_dim, Eigen::Index output_dim,
                                  ModelKind kind, double growth_exponent, std::string name) {
  if (!map) throw std::invalid_argument("forward map must be callable");
  if (input_dim <= 0 || output_dim <= 0)
    throw std::invalid_argument("forward map dimensions must be positive");
  if (kind == ModelKind::linear)
    throw std::invalid_argument("use ForwardModel::linear for linear maps");
  if (growth_exponent < 1.0) throw std::invalid_argument("growth exponent must be >= 1");
  if (kind == ModelKind::lipschitz_nonlinear && growth_exponent != 1.0)
    throw std::invalid_argument("a Lipschitz forward map has growth exponent 1");
  ForwardModel m;
  m.map_ = std::move(map);
  m.input_dim_ = input_dim;
  m.output_dim_ = output_dim;
  m.kind_ = kind;
  m.growth_exponent_ = growth_exponent;
  m.name_ = std::move(name);
  return m;
}

Vector ForwardModel::operator()(const Vector& u) const {
  if (u.size() != input_dim_) throw std::invalid_argument("forward map input has wrong dimension");
  return map_(u);
}

Matrix ForwardModel::apply_rows(const Matrix& particles) const {
  if (particles.cols() != input_dim_)
    throw std::invalid_argument("particle dimension does not match the forward map");
  if (linear_) return particles * linear_->transpose();
  Matrix out(particles.rows(), output_dim_);
  for (Eigen::Index j = 0; j < particles.rows(); ++j)
    out.row(j) = map_(particles.row(j).transpose()).transpose();
  return out;
}

InverseProblem::InverseProblem(ForwardModel model, Matrix gamma, Vector observation)
    : model_(std::move(model)), gamma_(std::move(gamma)), observation_(std::move(observation)) {
  if (gamma_.rows() != model_.output_dim())
    throw std::invalid_argument("noise covariance does not match the observation dimension");
  if (observation_.size() != model_.output_dim())
    throw std::invalid_argument("observation does not match the forward map output");
  require_spd(gamma_, "noise covariance");
  gamma_ = symmetrized(gamma_);
  gamma_inv_sqrt_ = spd_power(gamma_, -0.5);
  gamma_sqrt_ = spd_power(gamma_, 0.5);
  whitened_observation_ = gamma_inv_sqrt_ * observation_;
  if (model_.is_linear()) whitened_ = gamma_inv_sqrt_ * *model_.linear_matrix();
}

ObservationSplit decompose_observation(const Matrix& b, const Vector& z) {
  if (b.rows() != z.size())
    throw std::invalid_argument("observation length must equal the operator's row count");
  const auto svd = truncated_svd(b);
  ObservationSplit out;
  const Vector coeffs = svd.left.transpose() * z;
  out.in_range = svd.left * coeffs;
  out.orthogonal = z - out.in_range;
  out.witness = svd.right * coeffs.cwiseQuotient(svd.singular);
  return out;
}

InverseProblem extend_tikhonov(const InverseProblem& problem, double lambda, const Matrix& prior_cov) {
  if (!problem.is_linear())
    throw std::invalid_argument("Tikhonov extension requires a linear forward model");
  if (!(lambda > 0.0)) throw std::invalid_argument("regularization weight must be positive");
  const Eigen::Index p = problem.param_dim();
  const Eigen::Index k = problem.obs_dim();
  if (prior_cov.rows() != p || prior_cov.cols() != p)
    throw std::invalid_argument("prior covariance must be p x p");
  require_spd(prior_cov, "prior covariance");

  const Matrix& a = *problem.model().linear_matrix();
  Matrix a_ext(k + p, p);
  a_ext << a, Matrix::Identity(p, p);
  Vector y_ext = Vector::Zero(k + p);
  y_ext.head(k) = problem.observation();
  Matrix gamma_ext = Matrix::Zero(k + p, k + p);
  gamma_ext.topLeftCorner(k, k) = problem.gamma();
  gamma_ext.bottomRightCorner(p, p) = symmetrized(prior_cov) / lambda;

  InverseProblem out(ForwardModel::linear(std::move(a_ext)), std::move(gamma_ext), std::move(y_ext));
  out.base_obs_dim_ = k;
  return out;
}

GrowthBounds growth_diagnostics(double m, double radius, double h, double c, double eps,
                                double scale) {
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be positive");
  if (!(h > 0.0 && h < 1.0)) throw std::invalid_argument("step must lie in (0, 1)");
  if (!(m >= 1.0)) throw std::invalid_argument("growth exponent must be >= 1");
  GrowthBounds g{};
  g.growth = scale * (std::pow(radius, 1.0 + 2.0 * m) + 1.0);
  g.lipschitz = scale * (std::pow(radius, 2.0 * m) + 1.0);
  g.approximation = scale * h * (std::pow(radius, 4.0 * m + 1.0) + 1.0);
  g.residual = g.approximation + g.lipschitz * std::sqrt(h) * g.growth;
  g.one_sided = 2.0 * g.lipschitz + c * g.lipschitz * g.lipschitz + eps;
  return g;
}

} // namespace ekisde
