#include "doctest.h"
#include "generators.hpp"

#include "ekisde/schemes.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

using namespace ekisde;

namespace {

Ensemble pm_one() {
  Matrix p(2, 1);
  p << 1.0, -1.0;
  return Ensemble(p);
}

InverseProblem scalar_problem(double a) {
  return InverseProblem(ForwardModel::linear(Matrix::Constant(1, 1, a)), Matrix::Identity(1, 1),
                        Vector::Zero(1));
}

InverseProblem random_linear(testing::Gen& gen, Eigen::Index k, Eigen::Index p) {
  return InverseProblem(ForwardModel::linear(gen.matrix(k, p)), gen.spd(k), gen.vector(k));
}

// du_j/dt = -C(u) B^T (B u_j - z), integrated with classical RK4.
Matrix flow_rhs(const Matrix& u, const Matrix& b, const Vector& z) {
  const Matrix c = covariance(Ensemble(u));
  const Matrix r = (u * b.transpose()).rowwise() - z.transpose();
  return -r * b * c;
}

Matrix rk4(Matrix u, const Matrix& b, const Vector& z, double horizon, int steps) {
  const double h = horizon / steps;
  for (int n = 0; n < steps; ++n) {
    const Matrix k1 = flow_rhs(u, b, z);
    const Matrix k2 = flow_rhs(u + 0.5 * h * k1, b, z);
    const Matrix k3 = flow_rhs(u + 0.5 * h * k2, b, z);
    const Matrix k4 = flow_rhs(u + h * k3, b, z);
    u += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return u;
}

} // namespace

TEST_CASE("variant names") {
  CHECK(parse_variant("tamed") == Variant::tamed);
  CHECK(parse_variant("em") == Variant::euler_maruyama);
  CHECK(parse_variant("euler_maruyama") == Variant::euler_maruyama);
  CHECK(parse_variant("teki") == Variant::teki);
  CHECK(to_string(Variant::euler_maruyama) == "em");
  CHECK_THROWS_AS(parse_variant("implicit"), std::invalid_argument);
}

TEST_CASE("scalar tamed step by hand") {
  const auto prob = scalar_problem(2.0);
  const double h = 0.5;
  const Matrix m = taming_matrix(covariance(pm_one()), *prob.whitened_operator(), h);
  CHECK(m(0, 0) == doctest::Approx(1.0 / 3.0));

  const auto tamed = tamed_coefficients(pm_one(), prob, h);
  CHECK(tamed.diffusion(0, 0) == doctest::Approx(2.0 / 3.0));
  CHECK(tamed.drift(0, 0) == doctest::Approx(-4.0 / 3.0));
  CHECK(tamed.drift(1, 0) == doctest::Approx(4.0 / 3.0));

  const auto em = em_coefficients(pm_one(), prob);
  CHECK(em.diffusion(0, 0) == doctest::Approx(2.0));
  CHECK(em.drift(0, 0) == doctest::Approx(-4.0));

  Matrix dw(2, 1);
  dw << 0.3, -0.1;
  const Ensemble next = step_tamed(pm_one(), prob, h, dw);
  CHECK(next.particles()(0, 0) == doctest::Approx(1.0 - 0.5 * 4.0 / 3.0 + 0.3 * 2.0 / 3.0));
  CHECK(next.particles()(1, 0) == doctest::Approx(-1.0 + 0.5 * 4.0 / 3.0 - 0.1 * 2.0 / 3.0));
}

TEST_CASE("identical particles do not move") {
  testing::Gen gen(30);
  const auto prob = random_linear(gen, 3, 2);
  const Ensemble still(Matrix::Constant(4, 2, 0.7));
  const Matrix dw = gen.matrix(4, 3);
  CHECK((step_tamed(still, prob, 0.1, dw).particles() - still.particles()).norm() == 0.0);
  CHECK((step_em(still, prob, 0.1, dw).particles() - still.particles()).norm() == 0.0);
  const auto ext = extend_tikhonov(prob, 1.0, Matrix::Identity(2, 2));
  CHECK((step_teki(still, ext, 0.1, gen.matrix(4, 5)).particles() - still.particles()).norm() == 0.0);
}

TEST_CASE("whitened and covariance forms agree") {
  testing::Gen gen(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto prob = random_linear(gen, 3, 4);
    const Ensemble e = gen.ensemble(5, 4);
    const double h = gen.uniform(0.01, 1.0);
    const auto fast = tamed_coefficients(e, prob, h);
    const auto dense = tamed_coefficients_general(e, prob, h);
    CHECK((fast.drift - dense.drift).norm() < 1e-10 * (1 + dense.drift.norm()));
    CHECK((fast.diffusion - dense.diffusion).norm() < 1e-10 * (1 + dense.diffusion.norm()));

    const Matrix m = taming_matrix(covariance(e), *prob.whitened_operator(), h);
    const Matrix& b = *prob.whitened_operator();
    CHECK((m * (h * b * covariance(e) * b.transpose() + Matrix::Identity(3, 3)) - Matrix::Identity(3, 3))
              .norm() < 1e-12);
  }
}

TEST_CASE("nonlinear tamed coefficients") {
  testing::Gen gen(32);
  const InverseProblem prob(ForwardModel::lipschitz_tanh(gen.matrix(2, 2)), gen.spd(2), gen.vector(2));
  const Ensemble e = gen.ensemble(5, 2);
  const double h = 0.2;
  const auto s = stats(e, prob.model());
  const Matrix gain = s.c_up * (h * s.c_pp + prob.gamma()).inverse();
  const auto coeffs = tamed_coefficients(e, prob, h);
  const Matrix images = prob.model().apply_rows(e.particles());
  for (Eigen::Index j = 0; j < e.size(); ++j) {
    const Vector expected = -gain * (images.row(j).transpose() - prob.observation());
    CHECK((coeffs.drift.row(j).transpose() - expected).norm() < 1e-12);
  }
  CHECK((coeffs.diffusion - gain * prob.gamma_sqrt()).norm() < 1e-12);

  const auto em = em_coefficients(e, prob);
  CHECK((em.diffusion - s.c_up * prob.gamma_inv_sqrt()).norm() < 1e-12);
}

TEST_CASE("tamed and EM steps differ by O(h^2)") {
  testing::Gen gen(33);
  const auto prob = random_linear(gen, 2, 3);
  const Ensemble e = gen.ensemble(4, 3);
  const Matrix dw = Matrix::Zero(4, 2);
  std::vector<double> hs{1e-2, 1e-3, 1e-4}, diffs;
  for (double h : hs)
    diffs.push_back((step_tamed(e, prob, h, dw).particles() - step_em(e, prob, h, dw).particles()).norm());
  const double slope1 = std::log(diffs[0] / diffs[1]) / std::log(hs[0] / hs[1]);
  const double slope2 = std::log(diffs[1] / diffs[2]) / std::log(hs[1] / hs[2]);
  CHECK(slope1 == doctest::Approx(2.0).epsilon(0.05));
  CHECK(slope2 == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("TEKI with vanishing regularization approaches tamed EKI") {
  testing::Gen gen(34);
  const auto prob = random_linear(gen, 2, 3);
  const auto ext = extend_tikhonov(prob, 1e-8, Matrix::Identity(3, 3));
  const Ensemble e = gen.ensemble(5, 3);
  Matrix dw = Matrix::Zero(5, 5);
  dw.leftCols(2) = 0.3 * gen.matrix(5, 2);
  const Matrix a = step_tamed(e, prob, 0.1, dw.leftCols(2)).particles();
  const Matrix b = step_teki(e, ext, 0.1, dw).particles();
  CHECK((a - b).norm() <= 1e-6 * a.norm());

  CHECK_THROWS_AS(step_teki(e, prob, 0.1, dw.leftCols(2)), std::invalid_argument);
  CHECK_THROWS_AS(step_teki(e, ext, 0.1, dw.leftCols(4)), std::invalid_argument);
}

TEST_CASE("effective_problem") {
  testing::Gen gen(35);
  const auto prob = random_linear(gen, 2, 3);
  SchemeConfig cfg;
  cfg.variant = Variant::teki;
  cfg.lambda = 2.0;
  const auto ext = effective_problem(cfg, prob);
  CHECK(ext.obs_dim() == 5);
  CHECK((ext.gamma().bottomRightCorner(3, 3) - 0.5 * Matrix::Identity(3, 3)).norm() < 1e-15);
  CHECK(effective_problem(cfg, ext).obs_dim() == 5);
  cfg.variant = Variant::tamed;
  CHECK(effective_problem(cfg, prob).obs_dim() == 2);
}

TEST_CASE("deterministic tamed flow converges to the ODE at first order") {
  testing::Gen gen(36);
  const auto prob = random_linear(gen, 2, 2);
  const Ensemble e0 = gen.ensemble(4, 2);
  const Matrix& b = *prob.whitened_operator();
  const Matrix exact = rk4(e0.particles(), b, prob.whitened_observation(), 1.0, 1 << 12);

  const auto lattice = NoiseLattice::zeros(1.0, 9, 4, 2);
  std::vector<double> errs;
  for (int level : {5, 6, 7, 8, 9}) {
    SchemeConfig cfg;
    cfg.level = level;
    const auto traj = simulate(cfg, prob, e0, lattice);
    errs.push_back((traj.states.back().particles() - exact).norm());
  }
  for (std::size_t i = 1; i < errs.size(); ++i)
    CHECK(errs[i - 1] / errs[i] == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("simulate") {
  testing::Gen gen(37);
  const auto prob = random_linear(gen, 2, 3);
  const Ensemble e0 = gen.ensemble(4, 3);
  const auto lattice = NoiseLattice::build(5, 1.0, 6, 4, 2);

  SchemeConfig cfg;
  cfg.level = 4;
  const auto a = simulate(cfg, prob, e0, lattice);
  const auto b = simulate(cfg, prob, e0, lattice);
  CHECK(a.states.size() == 17);
  CHECK(a.coefficients.size() == 16);
  CHECK_FALSE(a.exploded());
  for (std::size_t n = 0; n < a.states.size(); ++n)
    CHECK((a.states[n].particles() - b.states[n].particles()).cwiseAbs().maxCoeff() == 0.0);

  // Manual stepping with block-summed increments reproduces the trajectory.
  Ensemble manual = e0;
  const auto inc = lattice.increments_at_level(4);
  for (std::size_t n = 0; n < 16; ++n) {
    Matrix dw(4, 2);
    for (int j = 0; j < 4; ++j) dw.row(j) = inc[j].row(static_cast<Eigen::Index>(n));
    manual = step_tamed(manual, prob, 1.0 / 16, dw);
  }
  CHECK((manual.particles() - a.states.back().particles()).norm() < 1e-12);

  cfg.level = 0;
  CHECK(simulate(cfg, prob, e0, lattice).states.size() == 2);

  cfg.level = 7;
  CHECK_THROWS_AS(simulate(cfg, prob, e0, lattice), std::invalid_argument);
  cfg.level = 3;
  cfg.horizon = 2.0;
  CHECK_THROWS_AS(simulate(cfg, prob, e0, lattice), std::invalid_argument);
  cfg.horizon = 1.0;
  CHECK_THROWS_AS(simulate(cfg, prob, gen.ensemble(5, 3), lattice), std::invalid_argument);

  cfg.explosion_threshold = 1e-6;
  const auto blown = simulate(cfg, prob, e0, lattice);
  CHECK(blown.exploded());
  CHECK(*blown.exploded_at == doctest::Approx(1.0 / 8));
  CHECK(blown.states.size() == 1);
  CHECK(blown.coefficients.size() == 1);
}

TEST_CASE("EM explodes on cubic growth where the tamed scheme does not") {
  const InverseProblem prob(ForwardModel::cubic(Matrix::Identity(1, 1)), Matrix::Identity(1, 1), Vector::Zero(1));
  Matrix p(3, 1);
  p << 3.0, -2.0, 0.5;
  const Ensemble e0(p);
  const auto lattice = NoiseLattice::zeros(1.0, 3, 3, 1);
  SchemeConfig cfg;
  cfg.level = 3;
  cfg.variant = Variant::euler_maruyama;
  CHECK(simulate(cfg, prob, e0, lattice).exploded());
  cfg.variant = Variant::tamed;
  const auto tamed = simulate(cfg, prob, e0, lattice);
  CHECK_FALSE(tamed.exploded());
  CHECK(tamed.states.back().stacked_norm() < e0.stacked_norm());
}

TEST_CASE("interpolation") {
  testing::Gen gen(38);
  const auto prob = random_linear(gen, 2, 2);
  const Ensemble e0 = gen.ensemble(3, 2);
  const auto lattice = NoiseLattice::build(8, 1.0, 6, 3, 2);
  SchemeConfig cfg;
  cfg.level = 3;
  const auto traj = simulate(cfg, prob, e0, lattice);

  for (std::size_t n = 0; n <= 8; ++n)
    CHECK((interpolate(traj, lattice, traj.time(n)).particles() - traj.states[n].particles()).norm() == 0.0);

  // Right end of a cell evaluated through the cell formula gives the next state.
  CHECK((interpolate_in_cell(traj, lattice, 2, 24).particles() - traj.states[3].particles()).norm() < 1e-12);

  const auto zero = NoiseLattice::zeros(1.0, 6, 3, 2);
  const auto flow = simulate(cfg, prob, e0, zero);
  const Matrix mid = interpolate(flow, zero, 5.0 / 64).particles();
  const Matrix expected = flow.states[0].particles() + (5.0 / 64) * flow.coefficients[0].drift;
  CHECK((mid - expected).norm() < 1e-14);
  const Matrix halfway = 0.5 * (flow.states[1].particles() + flow.states[2].particles());
  CHECK((interpolate(flow, zero, 12.0 / 64).particles() - halfway).norm() < 1e-12);

  const auto other = NoiseLattice::build(9, 1.0, 6, 3, 2);
  CHECK_THROWS_AS(interpolate(traj, other, 0.5), std::invalid_argument);
}

TEST_CASE("trajectory csv") {
  const auto prob = scalar_problem(1.0);
  const auto lattice = NoiseLattice::zeros(1.0, 1, 2, 1);
  SchemeConfig cfg;
  cfg.level = 1;
  std::ostringstream out;
  write_trajectory_csv(out, simulate(cfg, prob, pm_one(), lattice));
  const std::string text = out.str();
  CHECK(text.rfind("schema_version,t,particle,coord_0\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 7);
  CHECK(text.find("\n1,0,0,1\n") != std::string::npos);
}
