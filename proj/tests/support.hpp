#pragma once

#include <cmath>
#include <random>

#include "bsnn/linalg.hpp"
#include "bsnn/rotations.hpp"
#include "bsnn/sheaf.hpp"
#include <memory>
#include <vector>

namespace testing {

using bsnn::linalg::Matrix;

inline Matrix random_skew(std::size_t n, double range, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-range, range);
  Matrix a = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < i; ++j) {
      a(i, j) = u(rng);
      a(j, i) = -a(i, j);
    }
  return a;
}

inline Matrix rot2(double theta) {
  Matrix r(2, 2);
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r;
}

inline bool in_so(const Matrix& m, double tol) {
  const auto n = m.rows();
  return (m.transpose() * m - Matrix::Identity(n, n)).cwiseAbs().maxCoeff() <= tol &&
         std::abs(m.determinant() - 1.0) <= tol;
}

// Mean and standard error of a sample.
struct MeanSe {
  double mean = 0, se = 0;
};

template <class Vec>
MeanSe mean_se(const Vec& xs) {
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  v /= static_cast<double>(xs.size() - 1);
  return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

inline std::shared_ptr<const bsnn::sheaf::Graph> random_graph(std::size_t n, double p, std::mt19937_64& rng,
                                                            std::size_t features = 1) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<bsnn::sheaf::Edge> edges;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      if (u(rng) < p) edges.emplace_back(a, b);
  return std::make_shared<const bsnn::sheaf::Graph>(
      n, edges, bsnn::linalg::random_normal(n, features, rng), std::vector<int>(n, 0), 1);
}

inline bsnn::sheaf::RestrictionMap random_map(bsnn::sheaf::MapKind kind, std::size_t d, std::mt19937_64& rng) {
  using bsnn::sheaf::RestrictionMap;
  switch (kind) {
    case bsnn::sheaf::MapKind::diagonal: {
      bsnn::linalg::Vector v = bsnn::linalg::random_normal(d, 1, rng).col(0);
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += v(i) >= 0 ? 0.1 : -0.1;
      return RestrictionMap::diagonal(v);
    }
    case bsnn::sheaf::MapKind::special_orthogonal:
      return RestrictionMap::rotation(bsnn::rotations::sample_uniform_so(d, rng));
    case bsnn::sheaf::MapKind::general:
      break;
  }
  return RestrictionMap::general(bsnn::linalg::random_normal(d, d, rng));
}

inline bsnn::sheaf::CellularSheaf random_sheaf(std::shared_ptr<const bsnn::sheaf::Graph> g,
                                               bsnn::sheaf::MapKind kind, std::size_t d, std::mt19937_64& rng) {
  std::vector<bsnn::sheaf::CellularSheaf::MapPair> maps;
  for (std::size_t e = 0; e < g->num_edges(); ++e) {
    auto fu = random_map(kind, d, rng);
    auto fv = random_map(kind, d, rng);
    maps.emplace_back(std::move(fu), std::move(fv));
  }
  return bsnn::sheaf::CellularSheaf(std::move(g), std::move(maps), d);
}

// Graph Laplacian D - A.
inline Matrix graph_laplacian(const bsnn::sheaf::Graph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Matrix l = Matrix::Zero(n, n);
  for (const auto& [u, v] : g.edges()) {
    const auto a = static_cast<Eigen::Index>(u), b = static_cast<Eigen::Index>(v);
    l(a, a) += 1;
    l(b, b) += 1;
    l(a, b) -= 1;
    l(b, a) -= 1;
  }
  return l;
}

}  // namespace testing
