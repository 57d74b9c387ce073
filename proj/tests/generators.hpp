#pragma once

#include "ekisde/ensemble.hpp"
#include "ekisde/noise.hpp"

#include <cmath>
#include <cstdint>

namespace ekisde::testing {

// Seeded generators for property tests; every test gets its own stream id.
class Gen {
 public:
  explicit Gen(std::uint32_t stream, std::uint64_t seed = 0x5eed) : normal_(seed, stream, StreamDomain::test) {}

  double normal() { return normal_(); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * 0.5 * (1.0 + std::erf(normal() / std::sqrt(2.0))); }
  int integer(int lo, int hi) {
    const int v = lo + static_cast<int>(uniform(0.0, 1.0) * (hi - lo + 1));
    return v > hi ? hi : v;
  }

  Matrix matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }
  Vector vector(Eigen::Index n) { return matrix(n, 1).col(0); }

  Matrix rank_deficient(Eigen::Index rows, Eigen::Index cols, Eigen::Index rank) {
    return matrix(rows, rank) * matrix(rank, cols);
  }

  // Well conditioned SPD: Q diag(lambda) Q^T with lambda in [lo, hi].
  Matrix spd(Eigen::Index n, double lo = 0.2, double hi = 2.0) {
    Eigen::HouseholderQR<Matrix> qr(matrix(n, n));
    const Matrix q = qr.householderQ();
    Vector lambda(n);
    for (Eigen::Index i = 0; i < n; ++i) lambda(i) = uniform(lo, hi);
    return symmetrized(q * lambda.asDiagonal() * q.transpose());
  }

  Ensemble ensemble(Eigen::Index j, Eigen::Index p, double scale = 1.0) {
    return Ensemble(scale * matrix(j, p));
  }

 private:
  NormalStream normal_;
};

} // namespace ekisde::testing
