#include "bsnn/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bsnn/errors.hpp"
#include "bsnn/simplex.hpp"

namespace bsnn::diffusion {

namespace {

constexpr double kSeparationMargin = 1e-9;

void check_shapes(const FeatureMatrix& x, const sheaf::BlockOperator& delta) {
  if (x.n != delta.num_nodes() || x.d != delta.block_dim()) {
    throw ContractViolation("diffusion: features are laid out for n=" + std::to_string(x.n) +
                            ", d=" + std::to_string(x.d) + " but the operator has n=" +
                            std::to_string(delta.num_nodes()) +
                            ", d=" + std::to_string(delta.block_dim()));
  }
}

}  // namespace

FeatureMatrix::FeatureMatrix(std::size_t n_, std::size_t d_, Matrix values_)
    : n(n_), d(d_), f(static_cast<std::size_t>(values_.cols())), values(std::move(values_)) {
  if (static_cast<std::size_t>(values.rows()) != n * d) {
    throw ContractViolation("FeatureMatrix: expected " + std::to_string(n * d) + " rows, got " +
                            std::to_string(values.rows()));
  }
  if (!values.allFinite()) throw ContractViolation("FeatureMatrix: non-finite entry");
}

Matrix FeatureMatrix::node_rows() const {
  // Row-major storage makes each node's d x f block contiguous.
  return Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(n),
                                  static_cast<Eigen::Index>(d * f));
}

FeatureMatrix diffusion_step(const FeatureMatrix& x, const sheaf::BlockOperator& delta,
                             double alpha) {
  check_shapes(x, delta);
  FeatureMatrix out = x;
  out.values -= alpha * delta.apply(x.values);
  return out;
}

DiffusionResult diffuse(const FeatureMatrix& x0, const sheaf::BlockOperator& delta,
                        const DiffusionConfig& cfg) {
  if (!(cfg.step > 0.0 && cfg.step <= 1.0)) {
    throw ContractViolation("diffuse: step must lie in (0, 1]");
  }
  check_shapes(x0, delta);
  DiffusionResult result;
  result.x = x0;
  for (std::size_t t = 0; t < cfg.max_steps; ++t) {
    FeatureMatrix next = diffusion_step(result.x, delta, cfg.step);
    const double update = linalg::max_abs(next.values - result.x.values);
    if (!std::isfinite(update)) break;
    // An update below tol means the current iterate is already a fixed point.
    if (update <= cfg.tol) {
      result.converged = true;
      break;
    }
    result.steps = t + 1;
    result.update_norms.push_back(update);
    result.x = std::move(next);
  }
  if (cfg.max_steps == 0) result.converged = false;
  return result;
}

FeatureMatrix kernel_projection_limit(const FeatureMatrix& x0, const sheaf::BlockOperator& delta,
                                      double kernel_tol) {
  check_shapes(x0, delta);
  const auto eig = linalg::sym_eig(delta.dense());
  Eigen::Index k = 0;
  while (k < eig.eigenvalues.size() && eig.eigenvalues(k) <= kernel_tol) ++k;
  const Matrix basis = eig.eigenvectors.leftCols(k);
  FeatureMatrix out = x0;
  out.values = basis * (basis.transpose() * x0.values);
  return out;
}

double dirichlet_energy(const FeatureMatrix& x, const sheaf::BlockOperator& delta) {
  check_shapes(x, delta);
  return (x.values.transpose() * delta.apply(x.values)).trace();
}

double separation_margin(const Matrix& points, const std::vector<bool>& positive) {
  const Eigen::Index count = points.rows();
  const Eigen::Index p = points.cols();
  if (static_cast<std::size_t>(count) != positive.size()) {
    throw ContractViolation("separation_margin: one side flag per point required");
  }
  const double scale = linalg::max_abs(points);
  if (count == 0 || scale == 0.0) return 0.0;
  const Matrix x = points / scale;

  // Variables: w+ (p), w- (p), b+, b-, t.
  const Eigen::Index nv = 2 * p + 3;
  const Eigen::Index t_col = 2 * p + 2;
  const Eigen::Index nc = count + 2 * p + 3;
  Matrix a = Matrix::Zero(nc, nv);
  linalg::Vector b = linalg::Vector::Zero(nc);
  for (Eigen::Index i = 0; i < count; ++i) {
    const double y = positive[static_cast<std::size_t>(i)] ? 1.0 : -1.0;
    // -y (w . x_i + b) + t <= 0
    a.block(i, 0, 1, p) = -y * x.row(i);
    a.block(i, p, 1, p) = y * x.row(i);
    a(i, 2 * p) = -y;
    a(i, 2 * p + 1) = y;
    a(i, t_col) = 1.0;
  }
  Eigen::Index row = count;
  for (Eigen::Index j = 0; j < 2 * p; ++j, ++row) {
    a(row, j) = 1.0;
    b(row) = 1.0;
  }
  const double bias_cap = static_cast<double>(p) + 2.0;
  a(row, 2 * p) = 1.0;
  b(row++) = bias_cap;
  a(row, 2 * p + 1) = 1.0;
  b(row++) = bias_cap;
  a(row, t_col) = 1.0;
  b(row) = 1.0;
  linalg::Vector c = linalg::Vector::Zero(nv);
  c(t_col) = 1.0;
  return lp::maximize(a, b, c).objective;
}

std::vector<bool> linear_separation_check(const Matrix& points, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(points.rows()) != labels.size()) {
    throw ContractViolation("linear_separation_check: one label per point required");
  }
  if (labels.empty()) return {};
  const int num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<bool> verdict(static_cast<std::size_t>(num_classes), false);
  for (int l = 0; l < num_classes; ++l) {
    std::vector<bool> side(labels.size());
    bool any_in = false;
    bool any_out = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      side[i] = labels[i] == l;
      (side[i] ? any_in : any_out) = true;
    }
    if (!any_in) throw ContractViolation("linear_separation_check: class " + std::to_string(l) +
                                         " has no points");
    verdict[static_cast<std::size_t>(l)] =
        !any_out || separation_margin(points, side) > kSeparationMargin;
  }
  return verdict;
}

}  // namespace bsnn::diffusion
