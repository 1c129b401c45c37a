#include "fsfd/linalg.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "fsfd/errors.hpp"

namespace fsfd {

double spectral_norm(const Eigen::MatrixXd& a) {
  if (a.rows() == 0 || a.cols() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues()(0);
}

double spectral_radius(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw ShapeError("spectral_radius: matrix must be square");
  if (a.rows() == 0) return 0.0;
  return a.eigenvalues().cwiseAbs().maxCoeff();
}

Eigen::MatrixXd orthonormal_range(const Eigen::MatrixXd& a, double rel_tol) {
  if (a.rows() == 0 || a.cols() == 0) throw SizeError("orthonormal_range: empty matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  const double dim = static_cast<double>(std::max(a.rows(), a.cols()));
  const double thresh = rel_tol * sv(0) * dim;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > thresh) ++rank;
  }
  return svd.matrixU().leftCols(rank);
}

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& s) {
  if (s.rows() != s.cols()) throw ShapeError("symmetric_sqrt: matrix must be square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (s + s.transpose()));
  Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * lam.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

Eigen::MatrixXd symmetric_inverse_sqrt(const Eigen::MatrixXd& s) {
  if (s.rows() != s.cols()) throw ShapeError("symmetric_inverse_sqrt: matrix must be square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (s + s.transpose()));
  const Eigen::VectorXd& lam = eig.eigenvalues();
  if (lam.size() == 0) throw SizeError("symmetric_inverse_sqrt: empty matrix");
  if (lam.minCoeff() <= 0.0) {
    throw ConditioningError("symmetric_inverse_sqrt: matrix is not positive definite");
  }
  return eig.eigenvectors() * lam.cwiseSqrt().cwiseInverse().asDiagonal() *
         eig.eigenvectors().transpose();
}

double residual_scale(const Eigen::MatrixXd& a) { return std::max(1.0, a.norm()); }

}  // namespace fsfd
