#pragma once

#include <Eigen/Core>

namespace fsfd {

// Largest singular value; 0 for matrices with an empty dimension.
double spectral_norm(const Eigen::MatrixXd& a);

// Largest eigenvalue magnitude of a square matrix.
double spectral_radius(const Eigen::MatrixXd& a);

// Orthonormal basis of the column space, columns truncated at the numerical
// rank (same tolerance convention as numerical_rank).
Eigen::MatrixXd orthonormal_range(const Eigen::MatrixXd& a, double rel_tol = 1e-10);

// Symmetric PSD square root; eigenvalues are clamped at zero, so inputs that
// are PSD up to roundoff are accepted.
Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& s);

// Symmetric inverse square root of a positive definite matrix.
// Throws ConditioningError when the smallest eigenvalue is not strictly positive.
Eigen::MatrixXd symmetric_inverse_sqrt(const Eigen::MatrixXd& s);

// Frobenius-relative scale used by identity checks: max(1, ||a||_F).
double residual_scale(const Eigen::MatrixXd& a);

}  // namespace fsfd
