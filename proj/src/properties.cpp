#include "ekisde/properties.hpp"

#include "json.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace ekisde {

std::string_view to_string(Relation relation) {
  switch (relation) {
    case Relation::equal: return "equal";
    case Relation::at_most: return "at_most";
    case Relation::at_least: return "at_least";
  }
  return "unknown";
}

IdentityReport IdentityReport::make(std::string name, double analytic, double empirical, double tolerance,
                                    std::size_t sample_size, Relation relation, std::string detail) {
  IdentityReport r;
  r.name = std::move(name);
  r.analytic = analytic;
  r.empirical = empirical;
  r.tolerance = tolerance;
  r.sample_size = sample_size;
  r.relation = relation;
  r.detail = std::move(detail);
  switch (relation) {
    case Relation::equal: r.pass = std::abs(analytic - empirical) <= tolerance; break;
    case Relation::at_most: r.pass = empirical <= analytic + tolerance; break;
    case Relation::at_least: r.pass = empirical >= analytic - tolerance; break;
  }
  return r;
}

IdentityReport IdentityReport::failed(std::string name, std::string error) {
  IdentityReport r;
  r.name = std::move(name);
  r.pass = false;
  r.sample_size = 0;
  r.detail = std::move(error);
  return r;
}

std::string reports_json(const std::vector<IdentityReport>& reports) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json j;
    j["name"] = r.name;
    j["analytic"] = std::isfinite(r.analytic) ? nlohmann::json(r.analytic) : nlohmann::json(nullptr);
    j["empirical"] = std::isfinite(r.empirical) ? nlohmann::json(r.empirical) : nlohmann::json(nullptr);
    j["tolerance"] = r.tolerance;
    j["relation"] = std::string(to_string(r.relation));
    j["pass"] = r.pass;
    j["sample_size"] = r.sample_size;
    if (!r.detail.empty()) j[r.sample_size == 0 && !r.pass ? "error" : "detail"] = r.detail;
    out.push_back(std::move(j));
  }
  return out.dump(2);
}

bool all_pass(const std::vector<IdentityReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const IdentityReport& r) { return r.pass; });
}

namespace {

struct Gain {
  Matrix c; // p x p
  Matrix m; // K x K
  Matrix g; // C B^T M, p x K
  Matrix s; // B C B^T
};

Gain gain(const Ensemble& ensemble, const Matrix& b, double h) {
  if (b.cols() != ensemble.dim()) throw std::invalid_argument("B has the wrong number of columns");
  Gain out;
  out.c = covariance(ensemble);
  out.s = symmetrized(b * out.c * b.transpose());
  out.m = taming_matrix(out.c, b, h);
  out.g = out.c * b.transpose() * out.m;
  return out;
}

double taming_residual(const Matrix& c, const Matrix& b, double h, double& tolerance) {
  const Eigen::Index k = b.rows();
  const Matrix s = symmetrized(h * b * c * b.transpose()) + Matrix::Identity(k, k);
  const Matrix m = taming_matrix(c, b, h);
  tolerance = 1e-12 * std::max(1.0, s.norm() * m.norm() / static_cast<double>(k));
  return (m * s - Matrix::Identity(k, k)).norm();
}

// Quadratic form (1/J) sum_j x_j^T Q x_j for the rows x_j of X.
double mean_quadratic(const Matrix& x, const Matrix& q) {
  return (x * q).cwiseProduct(x).sum() / static_cast<double>(x.rows());
}

struct McSummary {
  double mean = 0.0;
  double se = 0.0;
};

// Monte Carlo over one tamed step with fresh noise; `measure` maps the new
// particle matrix to a scalar.
template <class Measure>
McSummary one_step_monte_carlo(const Ensemble& ensemble, const Matrix& b, double h, const Vector& z,
                               const MonteCarloOptions& opt, Measure&& measure) {
  if (opt.draws < 2) throw std::invalid_argument("Monte Carlo needs at least two draws");
  const Gain gn = gain(ensemble, b, h);
  const Matrix& u = ensemble.particles();
  const Matrix mean_part = u - h * ((u * b.transpose()).rowwise() - z.transpose()) * gn.g.transpose();
  const double before = measure(u);
  const Eigen::Index j = u.rows();
  const Eigen::Index k = b.rows();
  NormalStream normals(opt.seed, opt.stream, StreamDomain::monte_carlo);
  Matrix xi(j, k);
  Matrix next(j, u.cols());
  std::vector<double> diffs(opt.draws), sq(opt.draws);
  const double sqrt_h = std::sqrt(h);
  const Matrix gt = gn.g.transpose();
  for (std::size_t d = 0; d < opt.draws; ++d) {
    for (Eigen::Index r = 0; r < j; ++r)
      for (Eigen::Index c = 0; c < k; ++c) xi(r, c) = sqrt_h * normals();
    next = mean_part;
    next.noalias() += xi * gt;
    diffs[d] = measure(next) - before;
    sq[d] = diffs[d] * diffs[d];
  }
  const double n = static_cast<double>(opt.draws);
  const double sum = pairwise_sum(diffs);
  const double var = std::max(0.0, (pairwise_sum(sq) - sum * sum / n) / (n - 1.0));
  return {sum / n, std::sqrt(var / n)};
}

double spread_of(const Matrix& u) {
  const Matrix e = u.rowwise() - u.colwise().mean();
  return e.squaredNorm() / static_cast<double>(u.rows());
}

double mapped_of(const Matrix& u, const Matrix& b, const Vector& u_hat) {
  const Matrix e = u.rowwise() - u.colwise().mean();
  const Matrix r = u.rowwise() - u_hat.transpose();
  return ((r * b.transpose()).squaredNorm() + (e * b.transpose()).squaredNorm()) / static_cast<double>(u.rows());
}

IdentityReport compare_monte_carlo(std::string name, double analytic, const McSummary& mc, double scale,
                                   const MonteCarloOptions& opt) {
  if (analytic > 1e-12 * scale)
    return IdentityReport::make(std::move(name), analytic, mc.mean, 0.0, opt.draws, Relation::equal,
                                "analytic decrement is positive");
  const double tol = std::max(opt.standard_errors * mc.se, 1e-12 * scale);
  return IdentityReport::make(std::move(name), analytic, mc.mean, tol, opt.draws);
}

} // namespace

IdentityReport check_taming_identity(const Ensemble& ensemble, const Matrix& b, double h) {
  double tol = 0.0;
  const double res = taming_residual(covariance(ensemble), b, h, tol);
  return IdentityReport::make("taming_identity", 0.0, res, tol, 1);
}

IdentityReport check_taming_identity(const Trajectory& trajectory, const Matrix& b) {
  double worst = 0.0, worst_tol = 1e-12;
  std::size_t worst_n = 0;
  for (std::size_t n = 0; n < trajectory.states.size(); ++n) {
    double tol = 0.0;
    const double res = taming_residual(covariance(trajectory.states[n]), b, trajectory.step(), tol);
    if (res - tol > worst - worst_tol) {
      worst = res;
      worst_tol = tol;
      worst_n = n;
    }
  }
  return IdentityReport::make("taming_identity", 0.0, worst, worst_tol, trajectory.states.size(),
                              Relation::equal, "worst step " + std::to_string(worst_n));
}

IdentityReport check_orthogonality(const Ensemble& ensemble, const Matrix& b, double h, const Vector& y_tilde) {
  if (y_tilde.size() != b.rows()) throw std::invalid_argument("y_tilde has the wrong dimension");
  const double leak = (b.transpose() * y_tilde).norm();
  if (leak > 1e-10 * (1.0 + y_tilde.norm()) * std::max(1.0, b.norm()))
    throw PreconditionError("y_tilde is not orthogonal to range(B): ||B^T y_tilde|| = " + std::to_string(leak));
  const Gain gn = gain(ensemble, b, h);
  return IdentityReport::make("orthogonality", 0.0, (gn.g * y_tilde).norm(), 1e-10 * (1.0 + y_tilde.norm()), 1);
}

double spread_decrement(const Ensemble& ensemble, const Matrix& b, double h) {
  const Gain gn = gain(ensemble, b, h);
  const double j = static_cast<double>(ensemble.size());
  const Matrix e = ensemble.deviations();
  const double drift = (e * b.transpose() * gn.g.transpose()).squaredNorm() / j;
  return -h * h * drift - (j + 1.0) / j * h * gn.g.squaredNorm();
}

double residual_decrement(const Ensemble& ensemble, const Matrix& b, double h, const Vector& u_hat) {
  const Gain gn = gain(ensemble, b, h);
  const double j = static_cast<double>(ensemble.size());
  const Matrix br = (ensemble.particles().rowwise() - u_hat.transpose()) * b.transpose();
  const Matrix be = ensemble.deviations() * b.transpose();
  // Rows of X M are (M B x)^T; M and S are symmetric.
  const Matrix brm = br * gn.m;
  const Matrix bem = be * gn.m;
  const double t1 = (brm * gn.s).squaredNorm() / j;
  const double t2 = mean_quadratic(brm, gn.s);
  const double t3 = (bem * gn.s).squaredNorm() / j;
  const double t4 = mean_quadratic(bem, gn.s) / j;
  return -h * h * t1 - 2.0 * h * t2 - h * h * t3 - h * t4;
}

double mapped_energy(const Ensemble& ensemble, const Matrix& b, const Vector& u_hat) {
  return mapped_of(ensemble.particles(), b, u_hat);
}

IdentityReport check_spread_decrement(const Ensemble& ensemble, const Matrix& b, double h,
                                      const MonteCarloOptions& options) {
  const double analytic = spread_decrement(ensemble, b, h);
  const Vector z = Vector::Zero(b.rows());
  const McSummary mc =
      one_step_monte_carlo(ensemble, b, h, z, options, [](const Matrix& u) { return spread_of(u); });
  return compare_monte_carlo("spread_decrement", analytic, mc, 1.0 + spread_energy(ensemble), options);
}

IdentityReport check_residual_decrement(const Ensemble& ensemble, const Matrix& b, double h, const Vector& z,
                                        const MonteCarloOptions& options) {
  if (z.size() != b.rows()) throw std::invalid_argument("observation has the wrong dimension");
  const ObservationSplit split = decompose_observation(b, z);
  const Vector& u_hat = split.witness;
  const double analytic = residual_decrement(ensemble, b, h, u_hat);
  const McSummary mc = one_step_monte_carlo(ensemble, b, h, z, options,
                                            [&](const Matrix& u) { return mapped_of(u, b, u_hat); });
  return compare_monte_carlo("residual_decrement", analytic, mc, 1.0 + mapped_energy(ensemble, b, u_hat), options);
}

Ensemble project_to_range(const Ensemble& ensemble, const Matrix& b) {
  const Matrix p = range_projector(b);
  return Ensemble(ensemble.particles() * p); // P symmetric
}

IdentityReport check_kernel_invariance(const Trajectory& trajectory, const Matrix& b) {
  if (trajectory.states.empty()) throw std::invalid_argument("empty trajectory");
  const Eigen::Index p = b.cols();
  const Matrix q = Matrix::Identity(p, p) - range_projector(b);
  const Ensemble& first = trajectory.states.front();
  const double initial_leak = (first.deviations() * q).rowwise().norm().maxCoeff();
  if (initial_leak > 1e-9)
    throw PreconditionError("initial ensemble has deviations in ker(B): max ||(I-P) e_0|| = " +
                            std::to_string(initial_leak));
  double worst = 0.0;
  for (const auto& state : trajectory.states) {
    worst = std::max(worst, (state.deviations() * q).rowwise().norm().maxCoeff());
    worst = std::max(worst, ((state.particles() - first.particles()) * q).rowwise().norm().maxCoeff());
  }
  return IdentityReport::make("kernel_invariance", 0.0, worst, 1e-9, trajectory.states.size());
}

IdentityReport check_subspace(const Trajectory& trajectory) {
  if (trajectory.states.empty()) throw std::invalid_argument("empty trajectory");
  double worst = 0.0;
  for (const auto& state : trajectory.states)
    worst = std::max(worst, affine_span_residual(state, trajectory.states.front()));
  return IdentityReport::make("subspace", 0.0, worst, 1e-10, trajectory.states.size());
}

IdentityReport check_quadform_nonneg(const Matrix& z, const Matrix& s) {
  if (s.rows() != s.cols() || !is_symmetric(s)) throw std::invalid_argument("S must be symmetric");
  if (z.cols() != s.rows()) throw std::invalid_argument("vectors and S differ in dimension");
  const Matrix gram = z * z.transpose();
  const double value = gram.cwiseProduct(z * s * z.transpose()).sum();
  const double scale = gram.squaredNorm() * s.norm();
  return IdentityReport::make("quadform_nonneg", 0.0, value, 1e-12 * scale, 1, Relation::at_least);
}

PathAverages::PathAverages(std::size_t steps, double h, Matrix b, Vector u_hat)
    : steps_(steps), h_(h), b_(std::move(b)), u_hat_(std::move(u_hat)), spread_(steps + 1), mapped_(steps + 1),
      hs_gap_(steps + 1), res_gap_(steps + 1) {}

void PathAverages::add(const Trajectory& trajectory) {
  if (trajectory.exploded() || trajectory.states.size() != steps_ + 1)
    throw std::invalid_argument("path averages need complete trajectories of the configured length");
  std::vector<double> spread(steps_ + 1), mapped(steps_ + 1), hs(steps_ + 1), res(steps_ + 1);
  const Ensemble& first = trajectory.states.front();
  const double j = static_cast<double>(first.size());
  const double hs_bound = spread_energy(first);
  const double res_bound = 0.5 * mapped_energy(first, b_, u_hat_);
  double hs_sum = 0.0, res_sum = 0.0;
  for (std::size_t n = 0; n <= steps_; ++n) {
    const Ensemble& state = trajectory.states[n];
    spread[n] = spread_energy(state);
    mapped[n] = mapped_energy(state, b_, u_hat_);
    hs[n] = hs_sum - hs_bound;
    res[n] = res_sum - res_bound;
    if (n == steps_) break;
    const Gain gn = gain(state, b_, h_);
    hs_sum += h_ * (j + 1.0) / j * gn.g.squaredNorm();
    const Matrix brm = ((state.particles().rowwise() - u_hat_.transpose()) * b_.transpose()) * gn.m;
    res_sum += h_ * mean_quadratic(brm, gn.s);
  }
  spread_.add(spread);
  mapped_.add(mapped);
  hs_gap_.add(hs);
  res_gap_.add(res);
}

IdentityReport PathAverages::trend(ColumnAccumulator& acc, const char* name, double ses) {
  const auto m = acc.means();
  const auto s = acc.standard_errors();
  double worst = -std::numeric_limits<double>::infinity();
  std::size_t at = 0;
  for (std::size_t n = 0; n + 1 < m.size(); ++n) {
    const double slack = m[n + 1] - m[n] - ses * s[n + 1];
    if (slack > worst) {
      worst = slack;
      at = n + 1;
    }
  }
  const double tol = 1e-12 * (1.0 + std::abs(m.front()));
  return IdentityReport::make(name, 0.0, worst, tol, acc.count(), Relation::at_most,
                              "worst step " + std::to_string(at));
}

IdentityReport PathAverages::bound(ColumnAccumulator& gap, const char* name, double ses) {
  const auto m = gap.means();
  const auto s = gap.standard_errors();
  double worst = -std::numeric_limits<double>::infinity();
  std::size_t at = 0;
  for (std::size_t n = 0; n < m.size(); ++n) {
    const double upper = m[n] + ses * s[n];
    if (upper > worst) {
      worst = upper;
      at = n;
    }
  }
  const double tol = 1e-12 * (1.0 + std::abs(m.front()));
  return IdentityReport::make(name, 0.0, worst, tol, gap.count(), Relation::at_most,
                              "worst step " + std::to_string(at));
}

IdentityReport PathAverages::spread_trend(double ses) { return trend(spread_, "spread_trend", ses); }
IdentityReport PathAverages::residual_trend(double ses) { return trend(mapped_, "residual_trend", ses); }
IdentityReport PathAverages::hs_sum_bound(double ses) { return bound(hs_gap_, "sum_bound_hs", ses); }
IdentityReport PathAverages::residual_sum_bound(double ses) {
  return bound(res_gap_, "sum_bound_residual", ses);
}

} // namespace ekisde
