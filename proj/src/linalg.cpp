#include "bsnn/linalg.hpp"

#include <cmath>
#include <string>

#include "bsnn/errors.hpp"

namespace bsnn::linalg {

double max_abs(const Matrix& a) {
  return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
}

SymEigResult sym_eig(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw ContractViolation("sym_eig: matrix is " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + ", expected square");
  }
  if (a.size() > 0 && max_abs(a - a.transpose()) > 1e-9) {
    throw ContractViolation("sym_eig: matrix is not symmetric");
  }
  // Symmetrize so round-off asymmetry below the threshold does not leak in.
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw NumericalFailure("sym_eig: eigensolver did not converge");
  }
  // Eigen already returns ascending eigenvalues.
  return {solver.eigenvalues(), solver.eigenvectors()};
}

Matrix qr_special_orthogonal(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw ContractViolation("qr_special_orthogonal: matrix must be square");
  }
  const auto n = a.rows();
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  const double scale = std::max(1.0, max_abs(a));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double rii = r(i, i);
    if (std::abs(rii) <= 1e-12 * scale) {
      throw ContractViolation("qr_special_orthogonal: matrix is rank deficient");
    }
    if (rii < 0) q.col(i) *= -1.0;
  }
  if (n > 0 && q.determinant() < 0) q.col(n - 1) *= -1.0;
  return q;
}

Matrix solve(const Matrix& a, const Matrix& b) {
  if (a.rows() != a.cols() || a.rows() != b.rows()) {
    throw ContractViolation("solve: shape mismatch");
  }
  Eigen::PartialPivLU<Matrix> lu(a);
  if (!(lu.rcond() >= 1e-12)) {
    throw SingularityError("solve: matrix is singular or ill-conditioned (rcond " +
                           std::to_string(lu.rcond()) + ")");
  }
  return lu.solve(b);
}

double determinant(const Matrix& a) {
  if (a.rows() != a.cols()) throw ContractViolation("determinant: matrix must be square");
  return a.determinant();
}

Matrix random_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = normal(rng);
  return m;
}

}  // namespace bsnn::linalg
