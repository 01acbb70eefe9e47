#pragma once

#include <cstddef>
#include <vector>

#include "bsnn/linalg.hpp"
#include "bsnn/sheaf.hpp"

namespace bsnn::diffusion {

using linalg::Matrix;

// (n*d) x f node features; row u*d + i holds stalk coordinate i of node u.
struct FeatureMatrix {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t f = 0;
  Matrix values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t n, std::size_t d, Matrix values);

  // One row per node: the node's d x f block flattened row-major.
  Matrix node_rows() const;
};

struct DiffusionConfig {
  double step = 0.5;  // alpha in (0, 1]
  std::size_t max_steps = 100000;
  double tol = 1e-10;
};

struct DiffusionResult {
  FeatureMatrix x;
  std::size_t steps = 0;
  bool converged = false;
  std::vector<double> update_norms;  // ||X(t) - X(t-1)||_inf for t = 1..steps
};

inline constexpr double kDefaultKernelTol = 1e-8;

// X - alpha * Delta X.
FeatureMatrix diffusion_step(const FeatureMatrix& x, const sheaf::BlockOperator& delta, double alpha);

// Iterates diffusion_step until the sup-norm update drops to cfg.tol or
// cfg.max_steps is reached. Non-convergence is reported, not thrown.
DiffusionResult diffuse(const FeatureMatrix& x0, const sheaf::BlockOperator& delta,
                        const DiffusionConfig& cfg);

// Orthogonal projection of X0 onto the span of eigenvectors of Delta with
// eigenvalue <= kernel_tol: the t -> infinity limit of the diffusion.
FeatureMatrix kernel_projection_limit(const FeatureMatrix& x0, const sheaf::BlockOperator& delta,
                                      double kernel_tol = kDefaultKernelTol);

// tr(X^T Delta X).
double dirichlet_energy(const FeatureMatrix& x, const sheaf::BlockOperator& delta);

// One-vs-rest strict linear separability of the rows of `points` grouped by
// label. Entry l is true iff some hyperplane puts every class-l row strictly
// on one side and every other row strictly on the other.
std::vector<bool> linear_separation_check(const Matrix& points, const std::vector<int>& labels);

// Largest t such that y_i (w . x_i + b) >= t for all i with ||w||_inf <= 1,
// capped at 1. Positive iff the two groups are strictly separable.
double separation_margin(const Matrix& points, const std::vector<bool>& positive);

}  // namespace bsnn::diffusion
