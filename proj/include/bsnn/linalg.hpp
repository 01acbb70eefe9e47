#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <random>

namespace bsnn::linalg {

// Dense row-major matrix of doubles. Block sparsity lives one level up.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct SymEigResult {
  Vector eigenvalues;   // ascending
  Matrix eigenvectors;  // column i pairs with eigenvalues[i]
};

// Maximum absolute entry (entrywise infinity norm).
double max_abs(const Matrix& a);

// Full spectral decomposition of a symmetric matrix.
// Throws ContractViolation for non-square input or ||A - A^T||_inf > 1e-9.
SymEigResult sym_eig(const Matrix& a);

// Q factor of A = QR with diag(R) > 0. If det(Q) = -1 the last column is
// negated so that Q lies in SO(n). Throws ContractViolation when A is rank
// deficient.
Matrix qr_special_orthogonal(const Matrix& a);

// Solves AX = B by LU with partial pivoting. Throws SingularityError when
// the reciprocal condition estimate of A is below 1e-12.
Matrix solve(const Matrix& a, const Matrix& b);

double determinant(const Matrix& a);

// n x m matrix of independent standard normals.
Matrix random_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

}  // namespace bsnn::linalg
