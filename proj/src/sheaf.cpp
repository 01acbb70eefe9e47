#include "bsnn/sheaf.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "bsnn/errors.hpp"

namespace bsnn::sheaf {

Graph::Graph(std::size_t num_nodes, std::vector<Edge> edges, Matrix features,
             std::vector<int> labels, int num_classes)
    : n_(num_nodes),
      edges_(std::move(edges)),
      features_(std::move(features)),
      labels_(std::move(labels)),
      num_classes_(num_classes) {
  std::set<Edge> seen;
  for (auto& [u, v] : edges_) {
    if (u >= n_ || v >= n_) {
      throw ContractViolation("Graph: edge (" + std::to_string(u) + "," + std::to_string(v) +
                              ") references a node outside [0, " + std::to_string(n_) + ")");
    }
    if (u == v) throw ContractViolation("Graph: self-loop at node " + std::to_string(u));
    if (u > v) std::swap(u, v);
    if (!seen.insert({u, v}).second) {
      throw ContractViolation("Graph: duplicate edge (" + std::to_string(u) + "," +
                              std::to_string(v) + ")");
    }
  }
  if (static_cast<std::size_t>(features_.rows()) != n_) {
    throw ContractViolation("Graph: feature matrix has " + std::to_string(features_.rows()) +
                            " rows for " + std::to_string(n_) + " nodes");
  }
  if (!features_.allFinite()) throw ContractViolation("Graph: non-finite feature value");
  if (labels_.size() != n_) throw ContractViolation("Graph: labels length must equal node count");
  if (num_classes_ < 1) throw ContractViolation("Graph: need at least one class");
  for (int y : labels_) {
    if (y < 0 || y >= num_classes_) {
      throw ContractViolation("Graph: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(num_classes_) + ")");
    }
  }
}

std::vector<std::size_t> Graph::degrees() const {
  std::vector<std::size_t> deg(n_, 0);
  for (const auto& [u, v] : edges_) {
    ++deg[u];
    ++deg[v];
  }
  return deg;
}

Graph Graph::with_features(Matrix features) const {
  return Graph(n_, edges_, std::move(features), labels_, num_classes_);
}

std::string to_string(MapKind kind) {
  switch (kind) {
    case MapKind::diagonal:
      return "diagonal";
    case MapKind::special_orthogonal:
      return "special_orthogonal";
    case MapKind::general:
      return "general";
  }
  return "unknown";
}

MapKind map_kind_from_string(const std::string& name) {
  if (name == "diagonal" || name == "diag") return MapKind::diagonal;
  if (name == "special_orthogonal" || name == "so" || name == "orthogonal") {
    return MapKind::special_orthogonal;
  }
  if (name == "general" || name == "gen") return MapKind::general;
  throw ConfigError("unknown restriction map family '" + name +
                    "' (expected diagonal, special_orthogonal or general)");
}

RestrictionMap RestrictionMap::diagonal(const linalg::Vector& entries) {
  if (entries.size() == 0) throw ContractViolation("RestrictionMap: empty diagonal");
  for (Eigen::Index i = 0; i < entries.size(); ++i) {
    if (entries(i) == 0.0 || !std::isfinite(entries(i))) {
      throw ContractViolation("RestrictionMap: diagonal entries must be finite and nonzero");
    }
  }
  return RestrictionMap(MapKind::diagonal, entries.asDiagonal().toDenseMatrix());
}

RestrictionMap RestrictionMap::rotation(const rotations::Rotation& r) {
  return RestrictionMap(MapKind::special_orthogonal, r.matrix());
}

RestrictionMap RestrictionMap::general(Matrix m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw ContractViolation("RestrictionMap: general map must be square and non-empty");
  }
  if (!m.allFinite()) throw ContractViolation("RestrictionMap: non-finite entry");
  return RestrictionMap(MapKind::general, std::move(m));
}

CellularSheaf::CellularSheaf(std::shared_ptr<const Graph> graph, std::vector<MapPair> maps,
                             std::size_t stalk_dim)
    : graph_(std::move(graph)), maps_(std::move(maps)) {
  if (!graph_) throw ContractViolation("CellularSheaf: null graph");
  if (maps_.size() != graph_->num_edges()) {
    throw ContractViolation("CellularSheaf: expected one map pair per edge (" +
                            std::to_string(graph_->num_edges()) + "), got " +
                            std::to_string(maps_.size()));
  }
  if (maps_.empty()) {
    d_ = stalk_dim == 0 ? 1 : stalk_dim;
    kind_ = MapKind::special_orthogonal;
    return;
  }
  d_ = maps_.front().first.dim();
  if (stalk_dim != 0 && stalk_dim != d_) {
    throw ContractViolation("CellularSheaf: restriction maps do not match the stalk dimension");
  }
  kind_ = maps_.front().first.kind();
  for (const auto& [fu, fv] : maps_) {
    if (fu.dim() != d_ || fv.dim() != d_) {
      throw ContractViolation("CellularSheaf: all stalks must share one dimension");
    }
    if (fu.kind() != kind_ || fv.kind() != kind_) {
      throw ContractViolation("CellularSheaf: all restriction maps must share one family");
    }
  }
}

CellularSheaf identity_sheaf(std::shared_ptr<const Graph> graph, std::size_t d) {
  const std::size_t m = graph->num_edges();
  std::vector<CellularSheaf::MapPair> maps(
      m, {RestrictionMap::identity(d), RestrictionMap::identity(d)});
  return CellularSheaf(std::move(graph), std::move(maps), d);
}

Matrix BlockOperator::block(std::size_t i, std::size_t j) const {
  auto it = blocks_.find({i, j});
  if (it == blocks_.end()) return Matrix::Zero(d_, d_);
  return it->second;
}

void BlockOperator::add_to_block(std::size_t i, std::size_t j, const Matrix& m) {
  auto [it, inserted] = blocks_.try_emplace({i, j}, m);
  if (!inserted) it->second += m;
}

void BlockOperator::set_block(std::size_t i, std::size_t j, Matrix m) {
  blocks_[{i, j}] = std::move(m);
}

Matrix BlockOperator::dense() const {
  const auto nd = static_cast<Eigen::Index>(n_ * d_);
  const auto d = static_cast<Eigen::Index>(d_);
  Matrix out = Matrix::Zero(nd, nd);
  for (const auto& [ij, b] : blocks_) {
    out.block(static_cast<Eigen::Index>(ij.first) * d, static_cast<Eigen::Index>(ij.second) * d,
              d, d) = b;
  }
  return out;
}

Matrix BlockOperator::apply(const Matrix& x) const {
  const auto d = static_cast<Eigen::Index>(d_);
  if (x.rows() != static_cast<Eigen::Index>(n_ * d_)) {
    throw ContractViolation("BlockOperator::apply: expected " + std::to_string(n_ * d_) +
                            " rows, got " + std::to_string(x.rows()));
  }
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (const auto& [ij, b] : blocks_) {
    y.middleRows(static_cast<Eigen::Index>(ij.first) * d, d).noalias() +=
        b * x.middleRows(static_cast<Eigen::Index>(ij.second) * d, d);
  }
  return y;
}

Matrix build_coboundary(const CellularSheaf& sheaf) {
  return build_coboundary(sheaf, std::vector<bool>(sheaf.graph().num_edges(), false));
}

Matrix build_coboundary(const CellularSheaf& sheaf, const std::vector<bool>& flipped) {
  const Graph& g = sheaf.graph();
  const auto d = static_cast<Eigen::Index>(sheaf.stalk_dim());
  const auto m = static_cast<Eigen::Index>(g.num_edges());
  if (flipped.size() != g.num_edges()) {
    throw ContractViolation("build_coboundary: orientation flags must cover every edge");
  }
  Matrix delta = Matrix::Zero(m * d, static_cast<Eigen::Index>(g.num_nodes()) * d);
  for (Eigen::Index e = 0; e < m; ++e) {
    auto [u, v] = g.edges()[static_cast<std::size_t>(e)];
    const auto& [fu, fv] = sheaf.maps()[static_cast<std::size_t>(e)];
    const double sign = flipped[static_cast<std::size_t>(e)] ? -1.0 : 1.0;
    delta.block(e * d, static_cast<Eigen::Index>(v) * d, d, d) = sign * fv.matrix();
    delta.block(e * d, static_cast<Eigen::Index>(u) * d, d, d) = -sign * fu.matrix();
  }
  return delta;
}

BlockOperator sheaf_laplacian(const CellularSheaf& sheaf) {
  const Graph& g = sheaf.graph();
  const std::size_t d = sheaf.stalk_dim();
  BlockOperator lap(g.num_nodes(), d);
  for (std::size_t i = 0; i < g.num_nodes(); ++i) lap.set_block(i, i, Matrix::Zero(d, d));
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    auto [u, v] = g.edges()[e];
    const Matrix& fu = sheaf.maps()[e].first.matrix();
    const Matrix& fv = sheaf.maps()[e].second.matrix();
    lap.add_to_block(u, u, fu.transpose() * fu);
    lap.add_to_block(v, v, fv.transpose() * fv);
    lap.add_to_block(u, v, -fu.transpose() * fv);
    lap.add_to_block(v, u, -fv.transpose() * fu);
  }
  return lap;
}

BlockOperator degree_blocks(const BlockOperator& laplacian) {
  BlockOperator deg(laplacian.num_nodes(), laplacian.block_dim());
  for (std::size_t i = 0; i < laplacian.num_nodes(); ++i) deg.set_block(i, i, laplacian.block(i, i));
  return deg;
}

Matrix inverse_sqrt_psd(const Matrix& block, double eps) {
  const auto eig = linalg::sym_eig(block);
  linalg::Vector scale(eig.eigenvalues.size());
  for (Eigen::Index k = 0; k < scale.size(); ++k) {
    const double lambda = eig.eigenvalues(k);
    if (eps == 0.0 && lambda <= 0.0) {
      throw SingularityError("normalized_laplacian: degree block is singular; use eps > 0");
    }
    scale(k) = 1.0 / std::sqrt(std::max(lambda, eps));
  }
  return eig.eigenvectors * scale.asDiagonal() * eig.eigenvectors.transpose();
}

BlockOperator normalized_laplacian(const BlockOperator& laplacian, const BlockOperator& degrees,
                                   double eps) {
  if (eps < 0) throw ContractViolation("normalized_laplacian: eps must be non-negative");
  const std::size_t n = laplacian.num_nodes();
  std::vector<Matrix> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = inverse_sqrt_psd(degrees.block(i, i), eps);
  BlockOperator out(n, laplacian.block_dim());
  for (const auto& [ij, b] : laplacian.blocks()) {
    out.set_block(ij.first, ij.second, inv_sqrt[ij.first] * b * inv_sqrt[ij.second]);
  }
  return out;
}

BlockOperator normalized_sheaf_laplacian(const CellularSheaf& sheaf, double eps) {
  const BlockOperator lap = sheaf_laplacian(sheaf);
  return normalized_laplacian(lap, degree_blocks(lap), eps);
}

namespace {

RestrictionMap direct_sum_map(const std::vector<const RestrictionMap*>& parts, std::size_t pad,
                              MapKind kind) {
  std::size_t total = pad;
  for (const auto* p : parts) total += p->dim();
  Matrix m = Matrix::Zero(total, total);
  Eigen::Index offset = 0;
  for (const auto* p : parts) {
    const auto k = static_cast<Eigen::Index>(p->dim());
    m.block(offset, offset, k, k) = p->matrix();
    offset += k;
  }
  for (Eigen::Index i = offset; i < static_cast<Eigen::Index>(total); ++i) m(i, i) = 1.0;
  switch (kind) {
    case MapKind::diagonal:
      return RestrictionMap::diagonal(m.diagonal());
    case MapKind::special_orthogonal:
      return RestrictionMap::rotation(rotations::Rotation(m));
    case MapKind::general:
      break;
  }
  return RestrictionMap::general(std::move(m));
}

}  // namespace

CellularSheaf direct_sum_sheaf(const std::vector<CellularSheaf>& sheaves, std::size_t pad) {
  if (sheaves.empty()) throw ContractViolation("direct_sum_sheaf: need at least one sheaf");
  const Graph& g = sheaves.front().graph();
  MapKind kind = sheaves.front().kind();
  for (const auto& s : sheaves) {
    const Graph& h = s.graph();
    if (&h != &g && (h.num_nodes() != g.num_nodes() || h.edges() != g.edges())) {
      throw ContractViolation("direct_sum_sheaf: sheaves live on different graphs");
    }
    // Mixed families only stay valid as general linear maps.
    if (s.kind() != kind) kind = MapKind::general;
  }
  std::size_t total = pad;
  for (const auto& s : sheaves) total += s.stalk_dim();
  std::vector<CellularSheaf::MapPair> maps;
  maps.reserve(g.num_edges());
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    std::vector<const RestrictionMap*> us, vs;
    for (const auto& s : sheaves) {
      us.push_back(&s.maps()[e].first);
      vs.push_back(&s.maps()[e].second);
    }
    maps.emplace_back(direct_sum_map(us, pad, kind), direct_sum_map(vs, pad, kind));
  }
  return CellularSheaf(sheaves.front().graph_ptr(), std::move(maps), total);
}

}  // namespace bsnn::sheaf
