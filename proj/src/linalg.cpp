#include "ekisde/linalg.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <stdexcept>
#include <string>

namespace ekisde {

RankRevealingSvd truncated_svd(const Matrix& a) {
  RankRevealingSvd out;
  if (a.size() == 0) {
    out.left = Matrix(a.rows(), 0);
    out.singular = Vector(0);
    out.right = Matrix(a.cols(), 0);
    return out;
  }
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double cutoff =
      s(0) * static_cast<double>(std::max(a.rows(), a.cols())) * kRankTolerance;
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > cutoff) ++rank;
  out.left = svd.matrixU().leftCols(rank);
  out.singular = s.head(rank);
  out.right = svd.matrixV().leftCols(rank);
  return out;
}

Matrix pseudo_inverse(const Matrix& a) {
  const auto svd = truncated_svd(a);
  return svd.right * svd.singular.cwiseInverse().asDiagonal() * svd.left.transpose();
}

bool is_symmetric(const Matrix& s, double rel_tol) {
  if (s.rows() != s.cols()) return false;
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  return (s - s.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

void require_spd(const Matrix& s, const char* what) {
  if (s.rows() != s.cols())
    throw std::invalid_argument(std::string(what) + " must be square");
  if (!is_symmetric(s))
    throw std::invalid_argument(std::string(what) + " must be symmetric");
  Eigen::LLT<Matrix> llt(symmetrized(s));
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument(std::string(what) + " must be positive definite");
}

Matrix spd_power(const Matrix& s, double power) {
  require_spd(s, "matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(s));
  const Vector& lambda = eig.eigenvalues();
  if (lambda.minCoeff() <= 0.0)
    throw std::invalid_argument("matrix must be positive definite");
  const Vector scaled = lambda.array().pow(power).matrix();
  const Matrix& v = eig.eigenvectors();
  return symmetrized(v * scaled.asDiagonal() * v.transpose());
}

double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kBlock = 8;
  if (values.size() <= kBlock) {
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

} // namespace ekisde
