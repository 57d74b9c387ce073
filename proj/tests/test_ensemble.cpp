#include "doctest.h"
#include "generators.hpp"

#include "ekisde/ensemble.hpp"
#include "ekisde/schemes.hpp"

#include <stdexcept>

using namespace ekisde;

namespace {

Ensemble two_points() {
  Matrix p(2, 2);
  p << 1, 0, -1, 0;
  return Ensemble(p);
}

// Direct summation, no matrix products.
Matrix cross_cov(const Matrix& x, const Matrix& y) {
  const Eigen::Index j = x.rows();
  Matrix out = Matrix::Zero(x.cols(), y.cols());
  Vector xm = Vector::Zero(x.cols()), ym = Vector::Zero(y.cols());
  for (Eigen::Index i = 0; i < j; ++i) {
    xm += x.row(i).transpose();
    ym += y.row(i).transpose();
  }
  xm /= static_cast<double>(j);
  ym /= static_cast<double>(j);
  for (Eigen::Index i = 0; i < j; ++i)
    for (Eigen::Index a = 0; a < x.cols(); ++a)
      for (Eigen::Index b = 0; b < y.cols(); ++b) out(a, b) += (x(i, a) - xm(a)) * (y(i, b) - ym(b));
  return out / static_cast<double>(j);
}

} // namespace

TEST_CASE("ensemble construction") {
  CHECK_THROWS_AS(Ensemble(Matrix::Zero(1, 3)), std::invalid_argument);
  CHECK_THROWS_AS(Ensemble(Matrix::Zero(3, 0)), std::invalid_argument);
  const Ensemble e = two_points();
  CHECK(e.size() == 2);
  CHECK(e.dim() == 2);
  CHECK(e.stacked_norm() == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("empirical moments") {
  SUBCASE("two symmetric points") {
    const auto s = stats(two_points(), ForwardModel::linear(Matrix::Identity(2, 2)));
    Matrix c(2, 2);
    c << 1, 0, 0, 0;
    CHECK(s.u_bar.norm() == 0.0);
    CHECK((s.c - c).norm() == 0.0);
    CHECK((s.c_up - c).norm() == 0.0);
    CHECK((s.c_pp - c).norm() == 0.0);
  }
  SUBCASE("zero spread") {
    const Ensemble e(Matrix::Constant(4, 3, 2.5));
    const auto s = stats(e, ForwardModel::cubic(Matrix::Identity(3, 3)));
    CHECK(s.c.norm() == 0.0);
    CHECK(s.c_up.norm() == 0.0);
    CHECK(s.c_pp.norm() == 0.0);
  }
  SUBCASE("linear maps against direct summation") {
    testing::Gen gen(20);
    for (int trial = 0; trial < 30; ++trial) {
      const Matrix a = gen.matrix(3, 2);
      const Ensemble e = gen.ensemble(4, 2);
      const auto s = stats(e, ForwardModel::linear(a));
      const Matrix g = e.particles() * a.transpose();
      CHECK((s.c - cross_cov(e.particles(), e.particles())).norm() < 1e-12);
      CHECK((s.c_up - s.c * a.transpose()).norm() < 1e-12);
      CHECK((s.c_pp - a * s.c * a.transpose()).norm() < 1e-12);
      CHECK((s.c_up - cross_cov(e.particles(), g)).norm() < 1e-12);
    }
  }
  SUBCASE("nonlinear cross covariance") {
    testing::Gen gen(21);
    const Ensemble e = gen.ensemble(6, 3);
    const auto model = ForwardModel::lipschitz_tanh(gen.matrix(2, 3));
    const auto s = stats(e, model);
    const Matrix g = model.apply_rows(e.particles());
    CHECK((s.c_up - cross_cov(e.particles(), g)).norm() < 1e-12);
    CHECK((s.c_pp - cross_cov(g, g)).norm() < 1e-12);
  }
}

TEST_CASE("spread energy") {
  CHECK(spread_energy(two_points()) == doctest::Approx(1.0));
  CHECK(spread_energy(Ensemble(Matrix::Constant(3, 2, -1.0))) == 0.0);
  testing::Gen gen(22);
  const Ensemble e = gen.ensemble(7, 4);
  CHECK(spread_energy(e) == doctest::Approx(covariance(e).trace()).epsilon(1e-12));
}

TEST_CASE("range projector") {
  Matrix b(1, 2);
  b << 1, 0;
  Matrix p(2, 2);
  p << 1, 0, 0, 0;
  CHECK((range_projector(b) - p).norm() < 1e-15);

  testing::Gen gen(23);
  CHECK((range_projector(gen.matrix(3, 3)) - Matrix::Identity(3, 3)).norm() < 1e-12);

  const Matrix r = gen.rank_deficient(2, 4, 1);
  Eigen::JacobiSVD<Matrix> svd(r, Eigen::ComputeFullV);
  const Matrix v1 = svd.matrixV().leftCols(1);
  CHECK((range_projector(r) - v1 * v1.transpose()).norm() < 1e-10);
  CHECK(range_projector(Matrix::Zero(2, 3)).norm() == 0.0);
}

TEST_CASE("affine span residual") {
  testing::Gen gen(24);
  const Ensemble e0 = gen.ensemble(3, 5);
  CHECK(affine_span_residual(e0, e0) < 1e-14);

  const Ensemble wide = gen.ensemble(6, 3);
  CHECK(affine_span_residual(gen.ensemble(6, 3, 10.0), wide) < 1e-12);

  const InverseProblem prob(ForwardModel::linear(gen.matrix(2, 5)), Matrix::Identity(2, 2), gen.vector(2));
  const Ensemble e1 = step_tamed(e0, prob, 0.1, 0.3 * gen.matrix(3, 2));
  CHECK(affine_span_residual(e1, e0) <= 1e-10);

  Matrix off = e0.particles();
  off(0, 0) += 1.0;
  off(1, 1) -= 2.0;
  CHECK(affine_span_residual(Ensemble(off), e0) > 1e-3);
  CHECK_THROWS_AS(affine_span_residual(gen.ensemble(4, 5), e0), std::invalid_argument);
}
