#include "bsnn/rotations.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "bsnn/errors.hpp"

namespace bsnn::rotations {

namespace {

constexpr double kGroupTol = 1e-9;
constexpr double kChartTol = 1e-9;
constexpr int kMaxRedraws = 8;

Matrix identity(std::size_t n) { return Matrix::Identity(n, n); }

}  // namespace

SkewVector::SkewVector(std::size_t n_, std::vector<double> phi_) : n(n_), phi(std::move(phi_)) {
  if (phi.size() != size_for(n)) {
    throw ContractViolation("SkewVector: expected " + std::to_string(size_for(n)) +
                            " coordinates for n=" + std::to_string(n) + ", got " +
                            std::to_string(phi.size()));
  }
  for (double x : phi) {
    if (!std::isfinite(x)) throw ContractViolation("SkewVector: non-finite coordinate");
  }
}

Rotation::Rotation(Matrix m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols() || m_.rows() == 0) {
    throw ContractViolation("Rotation: matrix must be square and non-empty");
  }
  const auto n = m_.rows();
  if (linalg::max_abs(m_.transpose() * m_ - Matrix::Identity(n, n)) > kGroupTol) {
    throw ContractViolation("Rotation: matrix is not orthogonal");
  }
  if (std::abs(m_.determinant() - 1.0) > kGroupTol) {
    throw ContractViolation("Rotation: determinant is not +1");
  }
}

Rotation Rotation::identity(std::size_t n) { return Rotation(Matrix::Identity(n, n)); }

CayleyParams::CayleyParams(Rotation mean_, double kappa_) : mean(std::move(mean_)), kappa(kappa_) {
  if (!(kappa >= 0.0 && kappa < 1.0)) {
    throw ContractViolation("CayleyParams: kappa must lie in [0, 1), got " + std::to_string(kappa));
  }
}

Matrix skew_from_vec(const SkewVector& phi) {
  Matrix x = Matrix::Zero(phi.n, phi.n);
  for (std::size_t i = 1; i < phi.n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double v = phi.phi[skew_index(i, j)];
      x(i, j) = v;
      x(j, i) = -v;
    }
  }
  return x;
}

SkewVector vec_from_skew(const Matrix& a) {
  if (a.rows() != a.cols()) throw ContractViolation("vec_from_skew: matrix must be square");
  const auto n = static_cast<std::size_t>(a.rows());
  std::vector<double> phi(SkewVector::size_for(n));
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) phi[skew_index(i, j)] = 0.5 * (a(i, j) - a(j, i));
  return SkewVector(n, std::move(phi));
}

Rotation cayley(const Matrix& skew) {
  if (skew.rows() != skew.cols()) throw ContractViolation("cayley: matrix must be square");
  if (linalg::max_abs(skew + skew.transpose()) > 1e-9) {
    throw ContractViolation("cayley: matrix is not skew-symmetric");
  }
  const auto n = static_cast<std::size_t>(skew.rows());
  Matrix p = linalg::solve(identity(n) - skew, identity(n) + skew);
  // Large skew inputs leave I - A ill-conditioned; snap back onto the group.
  if (linalg::max_abs(p.transpose() * p - identity(n)) > 1e-12) {
    Eigen::JacobiSVD<Matrix> svd(p, Eigen::ComputeFullU | Eigen::ComputeFullV);
    p = svd.matrixU() * svd.matrixV().transpose();
  }
  return Rotation(std::move(p));
}

double cayley_chart_margin(const Matrix& p) {
  const Matrix shifted = Matrix::Identity(p.rows(), p.cols()) + p;
  Eigen::JacobiSVD<Matrix> svd(shifted);
  return svd.singularValues().minCoeff();
}

Matrix cayley_inverse(const Rotation& p) {
  const Matrix& m = p.matrix();
  if (cayley_chart_margin(m) <= kChartTol) {
    throw DomainError("cayley_inverse: rotation has eigenvalue -1, outside the Cayley chart");
  }
  const auto n = static_cast<std::size_t>(m.rows());
  // (P - I) and (I + P)^{-1} commute.
  Matrix a = linalg::solve(identity(n) + m, m - identity(n));
  return 0.5 * (a - a.transpose());
}

double cayley_jacobian(const SkewVector& phi) {
  const double n = static_cast<double>(phi.n);
  const Matrix x = skew_from_vec(phi);
  const double det = (identity(phi.n) + x).determinant();
  return std::pow(2.0, 3.0 * n * (n - 1.0) / 4.0) / std::pow(det, n - 1.0);
}

Rotation sample_uniform_so(std::size_t n, std::mt19937_64& rng) {
  if (n < 1) throw ContractViolation("sample_uniform_so: n must be >= 1");
  for (int attempt = 0;; ++attempt) {
    try {
      return Rotation(linalg::qr_special_orthogonal(linalg::random_normal(n, n, rng)));
    } catch (const ContractViolation&) {
      // Rank-deficient Gaussian draw: probability zero, try again.
      if (attempt >= kMaxRedraws) throw;
    }
  }
}

double cayley_log_density(const Matrix& p, const Matrix& mean, double kappa) {
  const auto n = static_cast<double>(p.rows());
  const Matrix shifted =
      p * mean.transpose() - kappa * Matrix::Identity(p.rows(), p.cols());
  // det(P M^T - kappa I) > 0 for every rotation and kappa in [0, 1): real
  // eigenvalues of P M^T contribute (1 - kappa), complex pairs |lambda - kappa|^2.
  const double det = shifted.determinant();
  return 0.5 * n * (n - 1.0) * std::log1p(-kappa * kappa) + (1.0 - n) * std::log(det);
}

double cayley_density(const Rotation& p, const CayleyParams& params) {
  if (p.n() != params.n()) throw ContractViolation("cayley_density: dimension mismatch");
  if (params.kappa == 0.0) return 1.0;
  return std::exp(cayley_log_density(p.matrix(), params.mean.matrix(), params.kappa));
}

Rotation sample_uniform_in_chart(std::size_t n, std::mt19937_64& rng) {
  for (int attempt = 0; attempt <= kMaxRedraws; ++attempt) {
    Rotation x = sample_uniform_so(n, rng);
    if (cayley_chart_margin(x.matrix()) > kChartTol) return x;
  }
  throw NumericalFailure("sample_cayley: uniform draw hit the excluded set 9 times in a row");
}

Rotation sample_cayley(const CayleyParams& params, std::mt19937_64& rng) {
  const std::size_t n = params.n();
  const Rotation x = sample_uniform_in_chart(n, rng);
  const Matrix shrunk = shrink_factor(params.kappa) * cayley_inverse(x);
  const Matrix y = cayley(shrunk).matrix() * params.mean.matrix();
  return Rotation(y);
}

Rotation quaternion_to_rotation(const UnitQuaternion& q) {
  const double a = q.a, b = q.b, c = q.c, d = q.d;
  const double norm2 = a * a + b * b + c * c + d * d;
  if (std::abs(norm2 - 1.0) > 1e-10) {
    throw ContractViolation("quaternion_to_rotation: quaternion is not unit length");
  }
  Matrix r(3, 3);
  r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
      2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b),
      2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d;
  return Rotation(std::move(r));
}

UnitQuaternion rotation_to_quaternion(const Rotation& rot) {
  if (rot.n() != 3) throw ContractViolation("rotation_to_quaternion: need a 3x3 rotation");
  const Matrix& r = rot.matrix();
  const double tr = r.trace();
  UnitQuaternion q;
  // Branch on the largest of (trace, diagonal entries) to avoid cancellation.
  if (tr >= r(0, 0) && tr >= r(1, 1) && tr >= r(2, 2)) {
    q.a = 0.5 * std::sqrt(1.0 + tr);
    const double s = 0.25 / q.a;
    q.b = (r(2, 1) - r(1, 2)) * s;
    q.c = (r(0, 2) - r(2, 0)) * s;
    q.d = (r(1, 0) - r(0, 1)) * s;
  } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
    q.b = 0.5 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    const double s = 0.25 / q.b;
    q.a = (r(2, 1) - r(1, 2)) * s;
    q.c = (r(0, 1) + r(1, 0)) * s;
    q.d = (r(0, 2) + r(2, 0)) * s;
  } else if (r(1, 1) >= r(2, 2)) {
    q.c = 0.5 * std::sqrt(1.0 - r(0, 0) + r(1, 1) - r(2, 2));
    const double s = 0.25 / q.c;
    q.a = (r(0, 2) - r(2, 0)) * s;
    q.b = (r(0, 1) + r(1, 0)) * s;
    q.d = (r(1, 2) + r(2, 1)) * s;
  } else {
    q.d = 0.5 * std::sqrt(1.0 - r(0, 0) - r(1, 1) + r(2, 2));
    const double s = 0.25 / q.d;
    q.a = (r(1, 0) - r(0, 1)) * s;
    q.b = (r(0, 2) + r(2, 0)) * s;
    q.c = (r(1, 2) + r(2, 1)) * s;
  }
  const double norm = std::sqrt(q.a * q.a + q.b * q.b + q.c * q.c + q.d * q.d);
  q.a /= norm;
  q.b /= norm;
  q.c /= norm;
  q.d /= norm;
  return q;
}

Matrix quaternion_right_multiplication(const UnitQuaternion& y) {
  Matrix m(4, 4);
  m << y.a, -y.b, -y.c, -y.d,
       y.b, y.a, y.d, -y.c,
       y.c, -y.d, y.a, y.b,
       y.d, y.c, -y.b, y.a;
  return m;
}

Matrix acg_covariance(const CayleyParams& params) {
  if (params.n() != 3) throw ContractViolation("acg_covariance: requires SO(3) parameters");
  const double gamma = (1.0 + params.kappa) / (1.0 - params.kappa);
  Matrix lambda_kappa = Matrix::Identity(4, 4);
  lambda_kappa(0, 0) = gamma * gamma;
  const Matrix q =
      quaternion_right_multiplication(rotation_to_quaternion(Rotation(params.mean.matrix().transpose())));
  return q.transpose() * lambda_kappa * q;
}

Rotation acg_sample_so3(const CayleyParams& params, std::mt19937_64& rng) {
  if (params.n() != 3) throw ContractViolation("acg_sample_so3: requires SO(3) parameters");
  const double gamma = (1.0 + params.kappa) / (1.0 - params.kappa);
  const Matrix q =
      quaternion_right_multiplication(rotation_to_quaternion(Rotation(params.mean.matrix().transpose())));
  // z = Q^T Lambda_kappa^{1/2} g has covariance Q^T Lambda_kappa Q.
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector4d g;
  for (int i = 0; i < 4; ++i) g(i) = normal(rng);
  g(0) *= gamma;
  const Eigen::Vector4d z = q.transpose() * g;
  const Eigen::Vector4d x = z / z.norm();
  return quaternion_to_rotation({x(0), x(1), x(2), x(3)});
}

double kl_cayley_uniform(double kappa, std::size_t n) {
  if (!(kappa >= 0.0 && kappa < 1.0)) {
    throw ContractViolation("kl_cayley_uniform: kappa must lie in [0, 1)");
  }
  switch (n) {
    case 2:
      return -std::log1p(-kappa * kappa);
    case 3:
      return -std::log1p(-kappa * kappa) - 2.0 * std::log1p(-kappa) - 2.0 * kappa;
    default:
      throw UnsupportedDimension("kl_cayley_uniform: closed form exists only for n = 2, 3 (got " +
                                 std::to_string(n) + "); use the Monte Carlo estimator");
  }
}

}  // namespace bsnn::rotations
