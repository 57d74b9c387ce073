#pragma once

#include <Eigen/Dense>

#include <span>

namespace ekisde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Relative singular-value cutoff shared by every rank decision in the library:
/// a singular value counts iff it exceeds sigma_max * max(rows, cols) * 1e-12.
inline constexpr double kRankTolerance = 1e-12;

/// Thin SVD truncated to numerical rank.
struct RankRevealingSvd {
  Matrix left;     ///< rows x r, orthonormal basis of the column space
  Vector singular; ///< r singular values, descending
  Matrix right;    ///< cols x r, orthonormal basis of the row space
  [[nodiscard]] Eigen::Index rank() const { return singular.size(); }
};

RankRevealingSvd truncated_svd(const Matrix& a);

/// Moore-Penrose pseudo-inverse with the library rank cutoff.
Matrix pseudo_inverse(const Matrix& a);

/// Symmetric matrix power S^p of a symmetric positive definite S via
/// eigendecomposition; the result is symmetric.
/// Throws std::invalid_argument if S is not symmetric or not positive definite.
Matrix spd_power(const Matrix& s, double power);

/// Throws std::invalid_argument unless `s` is square, symmetric (relative 1e-10)
/// and admits a Cholesky factorization.
void require_spd(const Matrix& s, const char* what);

bool is_symmetric(const Matrix& s, double rel_tol = 1e-10);

/// (A + A^T) / 2
inline Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Pairwise (cascade) summation; reassociation-stable reduction used by all
/// Monte Carlo estimators.
double pairwise_sum(std::span<const double> values);

} // namespace ekisde
