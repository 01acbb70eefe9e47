#include "bsnn/simplex.hpp"

#include <limits>

#include "bsnn/errors.hpp"

namespace bsnn::lp {

LpResult maximize(const linalg::Matrix& a, const linalg::Vector& b, const linalg::Vector& c) {
  constexpr double kTol = 1e-12;
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  if (b.size() != m || c.size() != n) throw ContractViolation("lp::maximize: shape mismatch");
  if (m > 0 && b.minCoeff() < 0) throw ContractViolation("lp::maximize: b must be non-negative");

  // Tableau rows 0..m-1 are constraints with slacks; row m holds reduced costs.
  linalg::Matrix t = linalg::Matrix::Zero(m + 1, n + m + 1);
  t.topLeftCorner(m, n) = a;
  t.block(0, n, m, m).setIdentity();
  t.col(n + m).head(m) = b;
  t.row(m).head(n) = -c.transpose();
  std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) basis[static_cast<std::size_t>(i)] = n + i;

  for (;;) {
    // Bland: lowest-index column with negative reduced cost enters.
    Eigen::Index enter = -1;
    for (Eigen::Index j = 0; j < n + m; ++j) {
      if (t(m, j) < -kTol) {
        enter = j;
        break;
      }
    }
    if (enter < 0) break;
    Eigen::Index leave = -1;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m; ++i) {
      if (t(i, enter) > kTol) {
        const double ratio = t(i, n + m) / t(i, enter);
        if (ratio < best - kTol ||
            (ratio <= best + kTol && leave >= 0 &&
             basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
          best = ratio;
          leave = i;
        }
      }
    }
    if (leave < 0) throw NumericalFailure("lp::maximize: objective is unbounded");
    t.row(leave) /= t(leave, enter);
    for (Eigen::Index i = 0; i <= m; ++i) {
      if (i != leave && t(i, enter) != 0.0) t.row(i) -= t(i, enter) * t.row(leave);
    }
    basis[static_cast<std::size_t>(leave)] = enter;
  }

  LpResult result;
  result.x = linalg::Vector::Zero(n);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index j = basis[static_cast<std::size_t>(i)];
    if (j < n) result.x(j) = t(i, n + m);
  }
  result.objective = c.dot(result.x);
  return result;
}

}  // namespace bsnn::lp
