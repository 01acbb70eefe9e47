#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bsnn/linalg.hpp"
#include "bsnn/rotations.hpp"

namespace bsnn::sheaf {

using linalg::Matrix;

using Edge = std::pair<std::size_t, std::size_t>;

// Undirected node-labelled graph with node features. Edges are stored
// canonically (u < v); self-loops and duplicates are rejected.
class Graph {
 public:
  Graph(std::size_t num_nodes, std::vector<Edge> edges, Matrix features, std::vector<int> labels,
        int num_classes);

  std::size_t num_nodes() const { return n_; }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }
  const Matrix& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  int num_classes() const { return num_classes_; }
  std::vector<std::size_t> degrees() const;

  // Same graph, features replaced.
  Graph with_features(Matrix features) const;

 private:
  std::size_t n_;
  std::vector<Edge> edges_;
  Matrix features_;
  std::vector<int> labels_;
  int num_classes_;
};

enum class MapKind { diagonal, special_orthogonal, general };

std::string to_string(MapKind kind);
MapKind map_kind_from_string(const std::string& name);

// Linear map from a node stalk to an edge stalk, always held as a dense d x d matrix.
class RestrictionMap {
 public:
  static RestrictionMap diagonal(const linalg::Vector& entries);
  static RestrictionMap rotation(const rotations::Rotation& r);
  static RestrictionMap general(Matrix m);
  static RestrictionMap identity(std::size_t d) { return rotation(rotations::Rotation::identity(d)); }

  MapKind kind() const { return kind_; }
  std::size_t dim() const { return static_cast<std::size_t>(m_.rows()); }
  const Matrix& matrix() const { return m_; }

 private:
  RestrictionMap(MapKind kind, Matrix m) : kind_(kind), m_(std::move(m)) {}
  MapKind kind_;
  Matrix m_;
};

// For edge e = (u, v), u < v: maps[e] = (F_{u <| e}, F_{v <| e}).
class CellularSheaf {
 public:
  using MapPair = std::pair<RestrictionMap, RestrictionMap>;

  // stalk_dim is only needed when the graph has no edges.
  CellularSheaf(std::shared_ptr<const Graph> graph, std::vector<MapPair> maps,
                std::size_t stalk_dim = 0);

  const Graph& graph() const { return *graph_; }
  const std::shared_ptr<const Graph>& graph_ptr() const { return graph_; }
  std::size_t stalk_dim() const { return d_; }
  MapKind kind() const { return kind_; }
  const std::vector<MapPair>& maps() const { return maps_; }

 private:
  std::shared_ptr<const Graph> graph_;
  std::vector<MapPair> maps_;
  std::size_t d_;
  MapKind kind_;
};

CellularSheaf identity_sheaf(std::shared_ptr<const Graph> graph, std::size_t d);

// nd x nd operator stored as d x d blocks keyed by (row block, column block).
class BlockOperator {
 public:
  BlockOperator(std::size_t n, std::size_t d) : n_(n), d_(d) {}

  std::size_t num_nodes() const { return n_; }
  std::size_t block_dim() const { return d_; }
  const std::map<std::pair<std::size_t, std::size_t>, Matrix>& blocks() const { return blocks_; }

  // Zero block when (i, j) is not stored.
  Matrix block(std::size_t i, std::size_t j) const;
  void add_to_block(std::size_t i, std::size_t j, const Matrix& m);
  void set_block(std::size_t i, std::size_t j, Matrix m);

  Matrix dense() const;
  // Y = A X for X of shape (nd) x f.
  Matrix apply(const Matrix& x) const;

 private:
  std::size_t n_;
  std::size_t d_;
  std::map<std::pair<std::size_t, std::size_t>, Matrix> blocks_;
};

// (delta x)_e = F_{v <| e} x_v - F_{u <| e} x_u for e = (u, v), u < v.
Matrix build_coboundary(const CellularSheaf& sheaf);
// Same with the orientation of the flagged edges reversed.
Matrix build_coboundary(const CellularSheaf& sheaf, const std::vector<bool>& flipped);

// L_F from the block formulas, without forming the coboundary.
BlockOperator sheaf_laplacian(const CellularSheaf& sheaf);

// Block-diagonal part of L.
BlockOperator degree_blocks(const BlockOperator& laplacian);

inline constexpr double kDefaultDegreeFloor = 1e-8;

// D^{-1/2} L D^{-1/2}, with D^{-1/2} taken per block from sym_eig and
// eigenvalues floored at eps. With eps = 0 a non-positive eigenvalue throws
// SingularityError.
BlockOperator normalized_laplacian(const BlockOperator& laplacian, const BlockOperator& degrees,
                                   double eps = kDefaultDegreeFloor);

// Convenience: normalized_laplacian(sheaf_laplacian(s), degree_blocks(...), eps).
BlockOperator normalized_sheaf_laplacian(const CellularSheaf& sheaf,
                                         double eps = kDefaultDegreeFloor);

// Inverse square root of a symmetric PSD block with eigenvalue floor.
Matrix inverse_sqrt_psd(const Matrix& block, double eps);

// F_{u <| e} = F^1 (+) F^2 (+) ... (+) I_pad, block diagonal.
CellularSheaf direct_sum_sheaf(const std::vector<CellularSheaf>& sheaves, std::size_t pad);

}  // namespace bsnn::sheaf
