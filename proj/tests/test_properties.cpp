#include "doctest.h"
#include "generators.hpp"

#include "ekisde/properties.hpp"

#include "json.hpp"

#include <cmath>
#include <stdexcept>

using namespace ekisde;

namespace {

Ensemble pm_one() {
  Matrix p(2, 1);
  p << 1.0, -1.0;
  return Ensemble(p);
}

Trajectory linear_run(const Matrix& a, const Vector& y, const Ensemble& e0, int level, std::uint64_t seed) {
  const InverseProblem prob(ForwardModel::linear(a), Matrix::Identity(a.rows(), a.rows()), y);
  SchemeConfig cfg;
  cfg.level = level;
  const auto lattice = NoiseLattice::build(seed, 1.0, level, static_cast<int>(e0.size()), static_cast<int>(a.rows()));
  return simulate(cfg, prob, e0, lattice);
}

} // namespace

TEST_CASE("identity report relations") {
  CHECK(IdentityReport::make("a", 1.0, 1.05, 0.1, 1).pass);
  CHECK_FALSE(IdentityReport::make("a", 1.0, 1.2, 0.1, 1).pass);
  CHECK(IdentityReport::make("b", 0.0, -5.0, 0.0, 1, Relation::at_most).pass);
  CHECK_FALSE(IdentityReport::make("b", 0.0, 0.1, 0.05, 1, Relation::at_most).pass);
  CHECK(IdentityReport::make("c", 0.0, 5.0, 0.0, 1, Relation::at_least).pass);
  CHECK_FALSE(IdentityReport::failed("d", "boom").pass);

  const auto j = nlohmann::json::parse(
      reports_json({IdentityReport::make("a", 1.0, 1.0, 0.0, 3), IdentityReport::failed("d", "boom")}));
  CHECK(j.size() == 2);
  CHECK(j[0]["pass"] == true);
  CHECK(j[0]["relation"] == "equal");
  CHECK(j[1]["error"] == "boom");
  CHECK_FALSE(all_pass({IdentityReport::make("a", 1.0, 1.0, 0.0, 3), IdentityReport::failed("d", "boom")}));
}

TEST_CASE("taming identity on random instances") {
  testing::Gen gen(50);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index k = gen.integer(1, 4), p = gen.integer(1, 5), j = gen.integer(2, 6);
    const auto r = check_taming_identity(gen.ensemble(j, p, gen.uniform(0.1, 10.0)), gen.matrix(k, p),
                                         gen.uniform(1e-4, 1.0));
    CHECK(r.pass);
    CHECK(r.empirical <= 1e-9);
  }
  const auto traj = linear_run(gen.matrix(2, 3), gen.vector(2), gen.ensemble(4, 3), 6, 3);
  const auto r = check_taming_identity(traj, gen.matrix(2, 3));
  CHECK(r.pass);
  CHECK(r.sample_size == 65);
}

TEST_CASE("orthogonality") {
  Matrix b(2, 2);
  b << 1, 0, 0, 0;
  Vector yt(2);
  yt << 0, 1;
  testing::Gen gen(51);
  const auto coord = check_orthogonality(gen.ensemble(3, 2), b, 0.5, yt);
  CHECK(coord.pass);
  CHECK(coord.empirical <= 1e-12);
  CHECK(check_orthogonality(gen.ensemble(3, 2), b, 0.5, Vector::Zero(2)).empirical == 0.0);

  for (int trial = 0; trial < 20; ++trial) {
    const Matrix r1 = gen.rank_deficient(2, 3, 1);
    Eigen::JacobiSVD<Matrix> svd(r1, Eigen::ComputeFullU);
    const Vector complement = 3.0 * svd.matrixU().col(1);
    const auto rep = check_orthogonality(gen.ensemble(4, 3), r1, 0.3, complement);
    CHECK(rep.pass);
    CHECK(rep.empirical <= 1e-10);
  }
  Vector bad(2);
  bad << 1, 1;
  CHECK_THROWS_AS(check_orthogonality(gen.ensemble(3, 2), b, 0.5, bad), PreconditionError);
}

TEST_CASE("spread decrement") {
  CHECK(spread_decrement(pm_one(), Matrix::Identity(1, 1), 0.1) == doctest::Approx(-0.16 / 1.21));
  MonteCarloOptions opt;
  opt.draws = 1000000;
  opt.seed = 5;
  const auto scalar = check_spread_decrement(pm_one(), Matrix::Identity(1, 1), 0.1, opt);
  CHECK(scalar.pass);
  CHECK(scalar.analytic == doctest::Approx(-0.13223).epsilon(1e-4));

  const Ensemble still(Matrix::Constant(3, 2, 1.5));
  testing::Gen gen(52);
  opt.draws = 1000;
  const auto zero = check_spread_decrement(still, gen.matrix(2, 2), 0.2, opt);
  CHECK(zero.analytic == 0.0);
  CHECK(zero.empirical == 0.0);
  CHECK(zero.pass);
  CHECK(spread_decrement(gen.ensemble(4, 3), Matrix::Zero(2, 3), 0.2) == 0.0);

  opt.draws = 100000;
  for (int trial = 0; trial < 5; ++trial) {
    opt.seed = 100 + trial;
    const auto r = check_spread_decrement(gen.ensemble(4, 3), gen.matrix(2, 3), gen.uniform(0.05, 0.5), opt);
    CHECK(r.pass);
    CHECK(r.analytic < 0.0);
  }
}

TEST_CASE("residual decrement") {
  const Ensemble still(Matrix::Constant(3, 2, -0.5));
  testing::Gen gen(53);
  CHECK(residual_decrement(still, gen.matrix(2, 2), 0.2, gen.vector(2)) == 0.0);

  // Residuals and deviations annihilated by B: nothing moves in mapped space.
  Matrix b(1, 2);
  b << 1, 0;
  Matrix p(3, 2);
  p << 0.4, 1.0, 0.4, -2.0, 0.4, 0.5;
  Vector u_hat(2);
  u_hat << 0.4, 0.0;
  CHECK(std::abs(residual_decrement(Ensemble(p), b, 0.3, u_hat)) <= 1e-15);

  // Term-by-term oracle with explicit loops.
  const Ensemble e = gen.ensemble(3, 2);
  const Matrix bb = gen.matrix(2, 2);
  const Vector z = gen.vector(2);
  const double h = 0.2;
  const Vector uh = decompose_observation(bb, z).witness;
  const Matrix c = covariance(e);
  const Matrix m = taming_matrix(c, bb, h);
  const Matrix s = bb * c * bb.transpose();
  double expected = 0.0;
  const Vector ubar = e.mean();
  for (Eigen::Index j = 0; j < 3; ++j) {
    const Vector r = e.particle(j) - uh;
    const Vector dev = e.particle(j) - ubar;
    const Vector smbr = s * m * bb * r;
    const Vector smbe = s * m * bb * dev;
    expected -= h * h * smbr.squaredNorm() / 3.0;
    expected -= 2.0 * h * (r.transpose() * bb.transpose() * m * s * m * bb * r)(0, 0) / 3.0;
    expected -= h * h * smbe.squaredNorm() / 3.0;
    expected -= h / 3.0 * (dev.transpose() * bb.transpose() * m * s * m * bb * dev)(0, 0) / 3.0;
  }
  CHECK(residual_decrement(e, bb, h, uh) == doctest::Approx(expected).epsilon(1e-12));

  MonteCarloOptions opt;
  opt.draws = 100000;
  opt.seed = 9;
  const auto r = check_residual_decrement(e, bb, h, z, opt);
  CHECK(r.pass);
  CHECK(r.analytic == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("kernel invariance") {
  testing::Gen gen(54);
  SUBCASE("invertible operator") {
    const auto traj = linear_run(gen.matrix(3, 3), gen.vector(3), gen.ensemble(4, 3), 5, 1);
    const auto r = check_kernel_invariance(traj, gen.matrix(3, 3));
    CHECK(r.pass);
    CHECK(r.empirical < 1e-12);
  }
  SUBCASE("rank one operator, projected start") {
    const Matrix a = gen.rank_deficient(2, 3, 1);
    const Ensemble e0 = project_to_range(gen.ensemble(4, 3), a);
    const auto one = linear_run(a, gen.vector(2), e0, 0, 2);
    CHECK(check_kernel_invariance(one, a).empirical <= 1e-12);
    const auto full = linear_run(a, gen.vector(2), e0, 8, 2);
    const auto r = check_kernel_invariance(full, a);
    CHECK(r.pass);
    CHECK(r.empirical <= 1e-9);
  }
  SUBCASE("deviations in the kernel are rejected") {
    const Matrix a = gen.rank_deficient(2, 3, 1);
    const auto traj = linear_run(a, gen.vector(2), gen.ensemble(4, 3), 2, 3);
    CHECK_THROWS_AS(check_kernel_invariance(traj, a), PreconditionError);
  }
}

TEST_CASE("subspace property") {
  testing::Gen gen(55);
  const auto traj = linear_run(gen.matrix(2, 5), gen.vector(2), gen.ensemble(3, 5), 8, 4);
  const auto r = check_subspace(traj);
  CHECK(r.pass);
  CHECK(r.sample_size == 257);
}

TEST_CASE("quadratic form non-negativity") {
  const auto ortho = check_quadform_nonneg(Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  CHECK(ortho.empirical == doctest::Approx(2.0));
  CHECK(ortho.pass);

  testing::Gen gen(56);
  const Vector z = gen.vector(3);
  const Matrix s = gen.spd(3, 0.0, 2.0);
  Matrix same(4, 3);
  for (int k = 0; k < 4; ++k) same.row(k) = z.transpose();
  CHECK(check_quadform_nonneg(same, s).empirical ==
        doctest::Approx(16.0 * z.squaredNorm() * (z.transpose() * s * z)(0, 0)));

  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::Index d = gen.integer(1, 4);
    const auto r = check_quadform_nonneg(gen.matrix(gen.integer(1, 6), d), gen.spd(d, 0.0, 3.0));
    CHECK(r.pass);
  }
  Matrix nonsym(2, 2);
  nonsym << 1, 2, 0, 1;
  CHECK_THROWS_AS(check_quadform_nonneg(Matrix::Identity(2, 2), nonsym), std::invalid_argument);
}

TEST_CASE("path averages") {
  testing::Gen gen(57);
  const Matrix a = gen.matrix(3, 2);
  const Vector y = gen.vector(3);
  const InverseProblem prob(ForwardModel::linear(a), Matrix::Identity(3, 3), y);
  const Vector u_hat = decompose_observation(a, y).witness;
  const int level = 6;

  SUBCASE("zero spread") {
    PathAverages avg(64, 1.0 / 64, a, u_hat);
    const Ensemble still(Matrix::Constant(5, 2, 0.3));
    for (int r = 0; r < 3; ++r) avg.add(linear_run(a, y, still, level, 10 + r));
    CHECK(avg.hs_sum_bound().pass);
    CHECK(avg.residual_sum_bound().pass);
    CHECK(avg.spread_trend().pass);
    CHECK(avg.residual_trend().pass);
    for (double v : avg.spread_means()) CHECK(v == 0.0);
  }
  SUBCASE("single step reduces to the one-step decrement") {
    PathAverages avg(1, 1.0, a, u_hat);
    const Ensemble e0 = gen.ensemble(5, 2);
    SchemeConfig cfg;
    cfg.level = 0;
    for (std::uint64_t r = 0; r < 20000; ++r)
      avg.add(simulate(cfg, prob, e0, NoiseLattice::build(mix_seed(7, r), 1.0, 0, 5, 3)));
    const auto means = avg.spread_means();
    CHECK(means[0] == doctest::Approx(spread_energy(e0)));
    const double predicted = spread_energy(e0) + spread_decrement(e0, a, 1.0);
    CHECK(std::abs(means[1] - predicted) < 0.05 * spread_energy(e0));
    CHECK(avg.hs_sum_bound().pass);
  }
  SUBCASE("random linear scenario") {
    PathAverages avg(256, 1.0 / 256, a, u_hat);
    SchemeConfig cfg;
    cfg.level = 8;
    for (std::uint64_t r = 0; r < 200; ++r) {
      const Ensemble e0 = gen.ensemble(5, 2);
      avg.add(simulate(cfg, prob, e0, NoiseLattice::build(mix_seed(8, r), 1.0, 8, 5, 3)));
    }
    CHECK(avg.replicas() == 200);
    CHECK(avg.hs_sum_bound().pass);
    CHECK(avg.residual_sum_bound().pass);
    CHECK(avg.spread_trend().pass);
  }
  PathAverages avg(4, 0.25, a, u_hat);
  CHECK_THROWS_AS(avg.add(linear_run(a, y, gen.ensemble(5, 2), 3, 1)), std::invalid_argument);
}
