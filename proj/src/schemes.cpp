#include "ekisde/schemes.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

namespace ekisde {

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::tamed: return "tamed";
    case Variant::euler_maruyama: return "em";
    case Variant::teki: return "teki";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "tamed") return Variant::tamed;
  if (name == "em" || name == "euler_maruyama") return Variant::euler_maruyama;
  if (name == "teki") return Variant::teki;
  throw std::invalid_argument("unknown scheme variant '" + std::string(name) + "'");
}

double SchemeConfig::step() const { return horizon / std::ldexp(1.0, level); }

namespace {

void require_finite(const Ensemble& ensemble) {
  if (!ensemble.all_finite()) throw std::invalid_argument("ensemble contains non-finite entries");
}

// Ensemble images and centred moments needed by every gain.
struct Moments {
  Matrix images;  // J x K
  Matrix dev;     // J x p
  Matrix img_dev; // J x K
  Matrix c_up;    // p x K
  Matrix c_pp;    // K x K
};

Moments moments(const Ensemble& ensemble, const ForwardModel& model) {
  const double inv_j = 1.0 / static_cast<double>(ensemble.size());
  Moments m;
  m.images = model.apply_rows(ensemble.particles());
  m.dev = ensemble.deviations();
  m.img_dev = m.images.rowwise() - m.images.colwise().mean();
  m.c_up = m.dev.transpose() * m.img_dev * inv_j;
  m.c_pp = symmetrized(m.img_dev.transpose() * m.img_dev * inv_j);
  return m;
}

Matrix residual_rows(const Matrix& images, const Vector& target) {
  return images.rowwise() - target.transpose();
}

} // namespace

Matrix taming_matrix(const Matrix& c, const Matrix& b, double h) {
  const Eigen::Index k = b.rows();
  const Matrix s = symmetrized(h * b * c * b.transpose()) + Matrix::Identity(k, k);
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) throw std::runtime_error("taming matrix is not SPD");
  return symmetrized(llt.solve(Matrix::Identity(k, k)));
}

StepCoefficients tamed_coefficients(const Ensemble& ensemble, const InverseProblem& problem, double h) {
  require_finite(ensemble);
  if (!problem.is_linear()) return tamed_coefficients_general(ensemble, problem, h);
  const Matrix& b = *problem.whitened_operator();
  const Eigen::Index k = b.rows();
  const Matrix c = covariance(ensemble);
  const Matrix bc = b * c; // K x p
  const Matrix s = symmetrized(h * bc * b.transpose()) + Matrix::Identity(k, k);
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) throw std::runtime_error("taming matrix is not SPD");
  // C B^T M = (M B C)^T since C and M are symmetric.
  StepCoefficients out;
  out.diffusion = llt.solve(bc).transpose(); // p x K
  const Matrix mapped = ensemble.particles() * b.transpose();
  out.drift = -residual_rows(mapped, problem.whitened_observation()) * out.diffusion.transpose();
  return out;
}

StepCoefficients tamed_coefficients_general(const Ensemble& ensemble, const InverseProblem& problem,
                                            double h) {
  require_finite(ensemble);
  const Moments m = moments(ensemble, problem.model());
  const Matrix s = symmetrized(h * m.c_pp + problem.gamma());
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) throw std::runtime_error("h C^pp + Gamma is not SPD");
  const Matrix gain = llt.solve(m.c_up.transpose()).transpose(); // C^up (h C^pp + Gamma)^{-1}
  StepCoefficients out;
  out.drift = -residual_rows(m.images, problem.observation()) * gain.transpose();
  out.diffusion = gain * problem.gamma_sqrt();
  return out;
}

StepCoefficients em_coefficients(const Ensemble& ensemble, const InverseProblem& problem) {
  require_finite(ensemble);
  StepCoefficients out;
  if (problem.is_linear()) {
    const Matrix& b = *problem.whitened_operator();
    out.diffusion = covariance(ensemble) * b.transpose(); // C B^T
    const Matrix mapped = ensemble.particles() * b.transpose();
    out.drift = -residual_rows(mapped, problem.whitened_observation()) * out.diffusion.transpose();
    return out;
  }
  const Moments m = moments(ensemble, problem.model());
  const Matrix gain = m.c_up * problem.gamma_inv_sqrt() * problem.gamma_inv_sqrt(); // C^up Gamma^{-1}
  out.drift = -residual_rows(m.images, problem.observation()) * gain.transpose();
  out.diffusion = m.c_up * problem.gamma_inv_sqrt();
  return out;
}

Ensemble advance(const Ensemble& ensemble, const StepCoefficients& coeffs, double h, const Matrix& dw) {
  if (dw.rows() != ensemble.size() || dw.cols() != coeffs.diffusion.cols())
    throw std::invalid_argument("noise increments have the wrong shape");
  Matrix next = ensemble.particles() + h * coeffs.drift;
  next.noalias() += dw * coeffs.diffusion.transpose();
  return Ensemble(std::move(next));
}

Ensemble step_tamed(const Ensemble& ensemble, const InverseProblem& problem, double h, const Matrix& dw) {
  return advance(ensemble, tamed_coefficients(ensemble, problem, h), h, dw);
}

Ensemble step_em(const Ensemble& ensemble, const InverseProblem& problem, double h, const Matrix& dw) {
  return advance(ensemble, em_coefficients(ensemble, problem), h, dw);
}

Ensemble step_teki(const Ensemble& ensemble, const InverseProblem& extended, double h, const Matrix& dw) {
  if (!extended.tikhonov_base_obs_dim())
    throw std::invalid_argument("step_teki expects a problem built by extend_tikhonov");
  if (dw.cols() != extended.obs_dim())
    throw std::invalid_argument("TEKI noise must have K + p components");
  if (ensemble.dim() != extended.param_dim())
    throw std::invalid_argument("ensemble dimension does not match the problem");
  return step_tamed(ensemble, extended, h, dw);
}

InverseProblem effective_problem(const SchemeConfig& config, const InverseProblem& problem) {
  if (config.variant != Variant::teki || problem.tikhonov_base_obs_dim()) return problem;
  const Eigen::Index p = problem.param_dim();
  const Matrix c0 = config.prior_cov.size() == 0 ? Matrix::Identity(p, p) : config.prior_cov;
  return extend_tikhonov(problem, config.lambda, c0);
}

namespace {

bool breaches(const Ensemble& ensemble, double threshold) {
  if (!ensemble.all_finite()) return true;
  return ensemble.particles().rowwise().norm().maxCoeff() > threshold;
}

} // namespace

Trajectory simulate(const SchemeConfig& config, const InverseProblem& problem, const Ensemble& initial,
                    const NoiseLattice& lattice) {
  if (config.level < 0 || config.level > lattice.finest_level())
    throw std::invalid_argument("scheme level exceeds the lattice's finest level");
  if (std::abs(config.horizon - lattice.horizon()) > 1e-12 * lattice.horizon())
    throw std::invalid_argument("scheme horizon differs from the lattice horizon");
  const InverseProblem prob = effective_problem(config, problem);
  if (initial.dim() != prob.param_dim())
    throw std::invalid_argument("initial ensemble dimension does not match the problem");
  if (lattice.particles() != initial.size() || lattice.dim() != prob.obs_dim())
    throw std::invalid_argument("lattice shape does not match the ensemble and noise dimension");
  require_finite(initial);

  Trajectory traj;
  traj.variant = config.variant;
  traj.level = config.level;
  traj.horizon = lattice.horizon();
  traj.lattice_seed = lattice.seed();
  traj.lattice_level = lattice.finest_level();
  const std::size_t steps = traj.steps();
  const double h = traj.step();
  traj.states.reserve(steps + 1);
  traj.coefficients.reserve(steps);
  traj.states.push_back(initial);

  const auto increments = lattice.increments_at_level(config.level);
  const auto j_count = initial.size();
  Matrix dw(j_count, prob.obs_dim());
  for (std::size_t n = 0; n < steps; ++n) {
    const Ensemble& current = traj.states.back();
    StepCoefficients coeffs = config.variant == Variant::euler_maruyama
                                  ? em_coefficients(current, prob)
                                  : tamed_coefficients(current, prob, h);
    for (Eigen::Index j = 0; j < j_count; ++j) dw.row(j) = increments[j].row(static_cast<Eigen::Index>(n));
    Ensemble next = advance(current, coeffs, h, dw);
    traj.coefficients.push_back(std::move(coeffs));
    if (breaches(next, config.explosion_threshold)) {
      traj.exploded_at = traj.time(n + 1);
      break;
    }
    traj.states.push_back(std::move(next));
  }
  return traj;
}

Trajectory reference_path(const InverseProblem& problem, const Ensemble& initial,
                          const NoiseLattice& lattice, double explosion_threshold) {
  SchemeConfig config;
  config.variant = Variant::tamed;
  config.level = lattice.finest_level();
  config.horizon = lattice.horizon();
  config.explosion_threshold = explosion_threshold;
  return simulate(config, problem, initial, lattice);
}

namespace {

void require_matching(const Trajectory& traj, const NoiseLattice& lattice) {
  if (traj.lattice_seed != lattice.seed() || traj.lattice_level != lattice.finest_level() ||
      traj.level > lattice.finest_level())
    throw std::invalid_argument("trajectory was not generated from this lattice");
}

} // namespace

Ensemble interpolate_in_cell(const Trajectory& traj, const NoiseLattice& lattice, std::size_t cell,
                             std::size_t node) {
  require_matching(traj, lattice);
  const std::size_t ratio = std::size_t{1} << (lattice.finest_level() - traj.level);
  const std::size_t start = cell * ratio;
  if (node < start || node > start + ratio) throw std::invalid_argument("node outside the cell");
  if (cell >= traj.coefficients.size() || cell >= traj.states.size())
    throw std::out_of_range("trajectory has no data for this cell (exploded earlier)");
  const StepCoefficients& coeffs = traj.coefficients[cell];
  const Ensemble& base = traj.states[cell];
  const double elapsed = static_cast<double>(node - start) * lattice.finest_step();
  Matrix y = base.particles() + elapsed * coeffs.drift;
  Matrix dw(base.size(), lattice.dim());
  for (Eigen::Index j = 0; j < base.size(); ++j)
    dw.row(j) = lattice.path_at_node(static_cast<int>(j), node) -
                lattice.path_at_node(static_cast<int>(j), start);
  y.noalias() += dw * coeffs.diffusion.transpose();
  return Ensemble(std::move(y));
}

Ensemble interpolate_node(const Trajectory& traj, const NoiseLattice& lattice, std::size_t node) {
  require_matching(traj, lattice);
  if (node > lattice.finest_steps()) throw std::invalid_argument("time beyond the horizon");
  const std::size_t ratio = std::size_t{1} << (lattice.finest_level() - traj.level);
  const std::size_t cell = node / ratio;
  if (node % ratio == 0 && cell < traj.states.size()) return traj.states[cell];
  return interpolate_in_cell(traj, lattice, cell, node);
}

Ensemble interpolate(const Trajectory& traj, const NoiseLattice& lattice, double t) {
  return interpolate_node(traj, lattice, lattice.node_of(t));
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  if (traj.states.empty()) return;
  const Eigen::Index p = traj.states.front().dim();
  out << "schema_version,t,particle";
  for (Eigen::Index i = 0; i < p; ++i) out << ",coord_" << i;
  out << '\n';
  out.precision(17);
  for (std::size_t n = 0; n < traj.states.size(); ++n) {
    const Matrix& u = traj.states[n].particles();
    for (Eigen::Index j = 0; j < u.rows(); ++j) {
      out << kCsvSchemaVersion << ',' << traj.time(n) << ',' << j;
      for (Eigen::Index i = 0; i < p; ++i) out << ',' << u(j, i);
      out << '\n';
    }
  }
}

} // namespace ekisde
