#include <doctest.h>

#include <cmath>
#include <random>

#include "bsnn/errors.hpp"
#include "bsnn/nn.hpp"
#include "bsnn/variational.hpp"
#include "support.hpp"

using namespace bsnn;
using namespace bsnn::variational;
using linalg::Vector;
using testing::mean_se;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

std::shared_ptr<const sheaf::Graph> small_graph(std::mt19937_64& rng) {
  auto base = testing::random_graph(6, 0.6, rng, 3);
  return std::make_shared<const sheaf::Graph>(6, base->edges(), base->features(), std::vector<int>{0, 1, 0, 1, 0, 1}, 2);
}

}  // namespace

TEST_CASE("reparam_diagonal") {
  const GaussianIncidence p{vec({0.5, -2.0}), vec({1.0, 3.0})};
  CHECK(linalg::max_abs(reparam_diagonal(p, Vector::Zero(2)).matrix() - Matrix(p.mu.asDiagonal())) == 0.0);
  const Matrix m = reparam_diagonal({Vector::Zero(2), Vector::Ones(2)}, vec({1, -1})).matrix();
  Matrix want(2, 2);
  want << 1, 0, 0, -1;
  CHECK(linalg::max_abs(m - want) == 0.0);

  std::mt19937_64 rng(60);
  std::normal_distribution<double> normal;
  std::vector<double> first, second;
  for (int k = 0; k < 100000; ++k) {
    const Matrix s = reparam_diagonal(p, vec({normal(rng), normal(rng)})).matrix();
    first.push_back(s(0, 0));
    second.push_back(s(1, 1));
  }
  const auto a = mean_se(first), b = mean_se(second);
  CHECK(std::abs(a.mean - 0.5) <= 3 * a.se);
  CHECK(std::abs(b.mean + 2.0) <= 3 * b.se);
}

TEST_CASE("reparam_general") {
  const Matrix eye = reparam_general({vec({1, 0, 0, 1}), Vector::Ones(4)}, Vector::Zero(4)).matrix();
  CHECK(linalg::max_abs(eye - Matrix::Identity(2, 2)) == 0.0);
  const Matrix abcd = reparam_general({vec({1, 2, 3, 4}), Vector::Ones(4)}, Vector::Zero(4)).matrix();
  CHECK(abcd(0, 0) == 1);
  CHECK(abcd(0, 1) == 2);
  CHECK(abcd(1, 0) == 3);
  CHECK(abcd(1, 1) == 4);
  CHECK_THROWS_AS(reparam_general({Vector::Zero(3), Vector::Ones(3)}, Vector::Zero(3)), ContractViolation);

  // Entries are standard normals: variance 1 within 3 SE (SE of the variance ~ sqrt(2 / N)).
  std::mt19937_64 rng(61);
  std::normal_distribution<double> normal;
  std::vector<double> sq;
  for (int k = 0; k < 100000; ++k) {
    Vector e(4);
    for (int i = 0; i < 4; ++i) e(i) = normal(rng);
    sq.push_back(std::pow(reparam_general({Vector::Zero(4), Vector::Ones(4)}, e).matrix()(1, 0), 2));
  }
  const auto s = mean_se(sq);
  CHECK(std::abs(s.mean - 1.0) <= 3 * s.se);
}

TEST_CASE("reparam_special_orthogonal") {
  std::mt19937_64 rng(62);
  const rotations::Rotation m = rotations::sample_uniform_so(3, rng);
  const rotations::Rotation x = rotations::sample_uniform_in_chart(3, rng);
  // kappa = 0: the sample is X M.
  CHECK(linalg::max_abs(reparam_special_orthogonal(CayleyParams(m, 0.0), x).matrix() - x.matrix() * m.matrix()) < 1e-12);
  double dist = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const auto s = reparam_special_orthogonal(CayleyParams(Rotation::identity(3), 0.999),
                                              rotations::sample_uniform_in_chart(3, rng));
    dist += (s.matrix() - Matrix::Identity(3, 3)).norm();
  }
  CHECK(dist / 1000.0 < 0.1);
  const auto acg = reparam_special_orthogonal_acg(CayleyParams(m, 0.4), Eigen::Vector4d(0.3, -1.0, 0.2, 0.7));
  CHECK(testing::in_so(acg.matrix(), 1e-12));
}

TEST_CASE("kl_gaussian_standard examples") {
  CHECK(kl_gaussian_standard(Vector::Zero(3), Vector::Ones(3)) == 0.0);
  CHECK(kl_gaussian_standard(vec({1}), vec({1})) == doctest::Approx(0.5).epsilon(1e-15));
  const double want = -0.5 * (1 + std::log(4.0) - 4.0);
  CHECK(kl_gaussian_standard(vec({0}), vec({2})) == doctest::Approx(want).epsilon(1e-15));
  CHECK(want == doctest::Approx(0.806853).epsilon(1e-6));
  CHECK_THROWS_AS(kl_gaussian_standard(vec({0}), vec({0})), ContractViolation);
}

TEST_CASE("kl_total additivity, prior zeros and the MC marker") {
  PosteriorParams two;
  two.kind = MapKind::diagonal;
  two.d = 1;
  two.gaussian = {{vec({1}), vec({1})}, {vec({-1}), vec({1})}};
  CHECK(std::get<double>(kl_total(two)) == 1.0);

  PosteriorParams prior;
  prior.kind = MapKind::diagonal;
  prior.d = 2;
  prior.gaussian.assign(5, {Vector::Zero(2), Vector::Ones(2)});
  CHECK(std::get<double>(kl_total(prior)) == 0.0);

  std::mt19937_64 rng(63);
  for (std::size_t d : {2u, 3u}) {
    PosteriorParams so;
    so.kind = MapKind::special_orthogonal;
    so.d = d;
    for (int k = 0; k < 4; ++k) so.rotation.emplace_back(rotations::sample_uniform_so(d, rng), 0.0);
    CHECK(std::get<double>(kl_total(so)) == 0.0);
  }
  PosteriorParams big;
  big.kind = MapKind::special_orthogonal;
  big.d = 4;
  big.rotation.emplace_back(Rotation::identity(4), 0.3);
  CHECK(std::holds_alternative<McEstimateRequired>(kl_total(big)));

  // Chain rule: the whole equals the sum of single-incidence parts, exactly.
  PosteriorParams general;
  general.kind = MapKind::general;
  general.d = 2;
  std::uniform_real_distribution<double> u(0.2, 2.0);
  for (int k = 0; k < 12; ++k) {
    general.gaussian.push_back({linalg::random_normal(4, 1, rng).col(0), vec({u(rng), u(rng), u(rng), u(rng)})});
  }
  double parts = 0.0;
  for (const auto& g : general.gaussian) {
    PosteriorParams one = general;
    one.gaussian = {g};
    parts += std::get<double>(kl_total(one));
  }
  CHECK(std::get<double>(kl_total(general)) == parts);
  CHECK(parts > 0.0);
}

TEST_CASE("log-ratio estimators are unbiased") {
  std::mt19937_64 rng(64);
  std::normal_distribution<double> normal;
  const GaussianIncidence p{vec({0.4, -1.1}), vec({0.6, 1.7})};
  std::vector<double> ratios;
  for (int k = 0; k < 100000; ++k) {
    const Vector z = p.mu + p.sigma.cwiseProduct(vec({normal(rng), normal(rng)}));
    ratios.push_back(log_ratio_gaussian(p, z));
  }
  auto s = mean_se(ratios);
  CHECK(std::abs(s.mean - kl_gaussian_standard(p.mu, p.sigma)) <= 3 * s.se);

  for (std::size_t n : {2u, 3u}) {
    const CayleyParams c(rotations::sample_uniform_so(n, rng), 0.6);
    ratios.clear();
    for (int k = 0; k < 100000; ++k) ratios.push_back(log_ratio_cayley(c, rotations::sample_cayley(c, rng)));
    s = mean_se(ratios);
    CHECK(std::abs(s.mean - rotations::kl_cayley_uniform(0.6, n)) <= 3 * s.se);
  }
}

TEST_CASE("kl_anneal_weight") {
  const AnnealSchedule sched{100, 0.5};
  CHECK(kl_anneal_weight(0, sched) == 0.0);
  CHECK(kl_anneal_weight(25, sched) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(kl_anneal_weight(75, sched) == 1.0);
  CHECK(kl_anneal_weight(125, sched) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(kl_anneal_weight(1, {0, 0.5}), ConfigError);
}

TEST_CASE("elbo_estimate identities") {
  std::mt19937_64 rng(65);
  const auto g = small_graph(rng);
  for (auto kind : {MapKind::diagonal, MapKind::special_orthogonal, MapKind::general}) {
    nn::ModelConfig c;
    c.kind = kind;
    c.in_features = 3;
    c.num_classes = 2;
    nn::Model model(c, 2);
    model.params().get("learner.1.b").setRandom();
    std::mt19937_64 a(1), b(1);
    const auto zero = elbo_estimate(model, *g, {0, 1, 2}, 3, 0.0, a);
    CHECK(zero.total == zero.nll);
    const auto one = elbo_estimate(model, *g, {0, 1, 2}, 3, 1.0, b);
    CHECK(one.nll == zero.nll);
    CHECK(one.total == doctest::Approx(one.nll + one.kl).epsilon(1e-14));
    CHECK(one.kl > 0.0);
  }

  // Posterior pinned at the prior: kappa = 0 is out of reach of the logistic
  // head, but mu = 0, sigma = 1 is reachable by setting the raw sigma to softplus^{-1}(1).
  nn::ModelConfig c;
  c.kind = MapKind::diagonal;
  c.in_features = 3;
  c.num_classes = 2;
  nn::Model model(c, 3);
  Matrix& bias = model.params().get("learner.1.b");
  bias.leftCols(2).setZero();
  bias.rightCols(2).setConstant(std::log(std::expm1(1.0)));
  std::mt19937_64 r(4);
  const auto at_prior = elbo_estimate(model, *g, {0, 1}, 2, 1.0, r);
  CHECK(std::abs(at_prior.kl) < 1e-14);
  CHECK(at_prior.total == doctest::Approx(at_prior.nll).epsilon(1e-14));
}
