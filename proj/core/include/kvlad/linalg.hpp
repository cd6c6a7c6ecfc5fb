#pragma once

#include <Eigen/Dense>

namespace kvlad {

// Eigenpairs of a symmetric matrix, eigenvalues sorted descending and
// eigenvectors in matching columns.
struct SymmetricEigen {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

// Cyclic Jacobi with threshold sweeps. Intended for the dense symmetric
// matrices that arise here (Gram matrices and matrix logs, at most a few
// hundred rows). Eigenvector columns carry a fixed sign convention: the
// entry of largest magnitude is positive.
SymmetricEigen jacobi_eigen_sym(const Eigen::MatrixXd& a, int max_sweeps = 64);

// ln det(A) for SPD A via the Cholesky factor; throws NumericalError when
// the factorization hits a non-positive pivot.
double cholesky_logdet(const Eigen::MatrixXd& a);

// True when the Cholesky factorization of A succeeds with positive pivots.
bool cholesky_succeeds(const Eigen::MatrixXd& a);

// Column-wise modified Gram-Schmidt. Throws NumericalError when a column
// drops below rank_tol * its original norm (rank deficiency).
Eigen::MatrixXd mgs_orthonormalize(const Eigen::MatrixXd& a,
                                   double rank_tol = 1e-12);

// max |A - A^T| over all entries.
double max_asymmetry(const Eigen::MatrixXd& a);

}  // namespace kvlad
