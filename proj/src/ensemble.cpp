#include "ekisde/ensemble.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

namespace ekisde {

Ensemble::Ensemble(Matrix particles) : particles_(std::move(particles)) {
  if (particles_.rows() < 2) throw std::invalid_argument("an ensemble needs at least two particles");
  if (particles_.cols() < 1) throw std::invalid_argument("particles must have positive dimension");
}

Matrix covariance(const Ensemble& ensemble) {
  const Matrix e = ensemble.deviations();
  return symmetrized(e.transpose() * e / static_cast<double>(ensemble.size()));
}

EnsembleStats stats(const Ensemble& ensemble, const ForwardModel& model) {
  const double inv_j = 1.0 / static_cast<double>(ensemble.size());
  EnsembleStats s;
  s.u_bar = ensemble.mean();
  s.deviations = ensemble.deviations();
  const Matrix g = model.apply_rows(ensemble.particles());
  s.g_bar = g.colwise().mean().transpose();
  const Matrix g_dev = g.rowwise() - s.g_bar.transpose();
  s.c = symmetrized(s.deviations.transpose() * s.deviations * inv_j);
  s.c_up = s.deviations.transpose() * g_dev * inv_j;
  s.c_pp = symmetrized(g_dev.transpose() * g_dev * inv_j);
  return s;
}

double spread_energy(const Ensemble& ensemble) {
  return ensemble.deviations().squaredNorm() / static_cast<double>(ensemble.size());
}

Matrix range_projector(const Matrix& b) {
  const auto svd = truncated_svd(b);
  return svd.right * svd.right.transpose();
}

double affine_span_residual(const Ensemble& ensemble, const Ensemble& initial) {
  if (ensemble.size() != initial.size() || ensemble.dim() != initial.dim())
    throw std::invalid_argument("ensembles must have the same size and dimension");
  const Vector u0_bar = initial.mean();
  // Orthonormal basis of span{e_0^(k)} with the library rank policy.
  const Matrix basis = truncated_svd(initial.deviations().transpose()).left;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < ensemble.size(); ++j) {
    const Vector u = ensemble.particle(j);
    const Vector d = u - u0_bar;
    const Vector off = d - basis * (basis.transpose() * d);
    worst = std::max(worst, off.norm() / (1.0 + u.norm()));
  }
  return worst;
}

} // namespace ekisde
