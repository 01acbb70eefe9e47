#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <vector>

#include "bsnn/linalg.hpp"

namespace bsnn::rotations {

using linalg::Matrix;

// Coordinates of an n x n skew-symmetric matrix: the n(n-1)/2 strictly
// lower-triangular entries, row by row: (1,0), (2,0), (2,1), (3,0), ...
struct SkewVector {
  std::size_t n = 0;
  std::vector<double> phi;

  SkewVector(std::size_t n, std::vector<double> phi);
  static std::size_t size_for(std::size_t n) { return n * (n - 1) / 2; }
};

// Position of entry (i, j), i > j, inside SkewVector::phi.
constexpr std::size_t skew_index(std::size_t i, std::size_t j) { return i * (i - 1) / 2 + j; }

// Element of SO(n). Construction checks orthonormality and det = +1 within 1e-9.
class Rotation {
 public:
  explicit Rotation(Matrix m);
  static Rotation identity(std::size_t n);

  std::size_t n() const { return static_cast<std::size_t>(m_.rows()); }
  const Matrix& matrix() const { return m_; }

 private:
  Matrix m_;
};

struct CayleyParams {
  Rotation mean;
  double kappa;

  CayleyParams(Rotation mean, double kappa);
  std::size_t n() const { return mean.n(); }
};

struct UnitQuaternion {
  double a = 1, b = 0, c = 0, d = 0;
};

Matrix skew_from_vec(const SkewVector& phi);
SkewVector vec_from_skew(const Matrix& a);

// C(A) = (I - A)^{-1} (I + A).
Rotation cayley(const Matrix& skew);

// C^{-1}(P) = (P - I)(I + P)^{-1}. Throws DomainError when P has eigenvalue -1
// (smallest singular value of I + P below 1e-9).
Matrix cayley_inverse(const Rotation& p);

// Smallest singular value of I + P; the Cayley chart excludes P where this is ~0.
double cayley_chart_margin(const Matrix& p);

// Jacobian of the vectorized Cayley map at phi: 2^{3n(n-1)/4} / det(I + X_phi)^{n-1}.
double cayley_jacobian(const SkewVector& phi);

// Haar-uniform rotation via QR of a Gaussian matrix.
Rotation sample_uniform_so(std::size_t n, std::mt19937_64& rng);

// (1 - kappa) / (1 + kappa): how much the Cayley coordinates of a uniform draw
// are shrunk toward zero.
inline double shrink_factor(double kappa) { return (1.0 - kappa) / (1.0 + kappa); }

// Density of C_n(M, kappa) w.r.t. normalized Haar measure on SO(n).
double cayley_density(const Rotation& p, const CayleyParams& params);
double cayley_log_density(const Matrix& p, const Matrix& mean, double kappa);

// Uniform draw X with I + X safely invertible; redraws at most 8 times.
Rotation sample_uniform_in_chart(std::size_t n, std::mt19937_64& rng);

// Y = C(shrink(kappa) * C^{-1}(X)) M with X uniform on SO(n).
Rotation sample_cayley(const CayleyParams& params, std::mt19937_64& rng);

// Explicit double cover S^3 -> SO(3). Throws ContractViolation off the unit sphere.
Rotation quaternion_to_rotation(const UnitQuaternion& q);

// One of the two unit quaternions q with quaternion_to_rotation(q) = R.
UnitQuaternion rotation_to_quaternion(const Rotation& r);

// 4x4 matrix of z -> z * y (Hamilton product, right multiplication by y).
Matrix quaternion_right_multiplication(const UnitQuaternion& y);

// Covariance of the angular central Gaussian whose SO(3) pushforward is C_3(M, kappa).
Matrix acg_covariance(const CayleyParams& params);

// Draws from C_3(M, kappa) by normalizing a Gaussian with covariance
// acg_covariance(params) and mapping it through the double cover.
Rotation acg_sample_so3(const CayleyParams& params, std::mt19937_64& rng);

// Closed-form KL(C_n(M, kappa) || uniform) for n in {2, 3}; throws
// UnsupportedDimension otherwise.
double kl_cayley_uniform(double kappa, std::size_t n);

}  // namespace bsnn::rotations
