#include "bsnn/autodiff.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "bsnn/errors.hpp"

namespace bsnn::ad {

namespace {

using Eigen::Index;

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ContractViolation(std::string(op) + ": " + what);
}

void same_shape(const Var& a, const Var& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), op,
          "shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

using MatMap = Eigen::Map<Matrix>;
using ConstMatMap = Eigen::Map<const Matrix>;

// View of row r of a batch as a d x d matrix.
ConstMatMap as_block(const Matrix& batch, Index r, Index d) {
  return ConstMatMap(batch.data() + r * d * d, d, d);
}
MatMap as_block(Matrix& batch, Index r, Index d) { return MatMap(batch.data() + r * d * d, d, d); }

Matrix skew_from_row(const Matrix& coords, Index r, Index d) {
  Matrix x = Matrix::Zero(d, d);
  Index k = 0;
  for (Index i = 1; i < d; ++i) {
    for (Index j = 0; j < i; ++j, ++k) {
      x(i, j) = coords(r, k);
      x(j, i) = -coords(r, k);
    }
  }
  return x;
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    require(in.tape() == this, "Tape::record", "input belongs to another tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, needs, false});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var& v, const Matrix& grad) {
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return;
  if (!node.has_grad) {
    node.grad = grad;
    node.has_grad = true;
  } else {
    node.grad += grad;
  }
}

void Tape::backward(const Var& loss) {
  require(loss.tape() == this, "Tape::backward", "loss belongs to another tape");
  require(loss.rows() == 1 && loss.cols() == 1, "Tape::backward", "loss must be a scalar");
  for (Node& n : nodes_) n.has_grad = false;
  accumulate(loss, Matrix::Ones(1, 1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(n.grad);
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  Tape* t = a.tape();
  return t->record(a.value() + b.value(), {a, b}, [t, a, b](const Matrix& g) {
    t->accumulate(a, g);
    t->accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  Tape* t = a.tape();
  return t->record(a.value() - b.value(), {a, b}, [t, a, b](const Matrix& g) {
    t->accumulate(a, g);
    t->accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  Tape* t = a.tape();
  return t->record(a.value().cwiseProduct(b.value()), {a, b}, [t, a, b](const Matrix& g) {
    t->accumulate(a, g.cwiseProduct(b.value()));
    t->accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double s) {
  Tape* t = a.tape();
  return t->record(s * a.value(), {a}, [t, a, s](const Matrix& g) { t->accumulate(a, s * g); });
}

Var add_scalar(Var a, double s) {
  Tape* t = a.tape();
  return t->record(a.value().array() + s, {a}, [t, a](const Matrix& g) { t->accumulate(a, g); });
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul",
          "inner dimensions " + std::to_string(a.cols()) + " and " + std::to_string(b.rows()));
  Tape* t = a.tape();
  return t->record(a.value() * b.value(), {a, b}, [t, a, b](const Matrix& g) {
    if (t->requires_grad(a)) t->accumulate(a, g * b.value().transpose());
    if (t->requires_grad(b)) t->accumulate(b, a.value().transpose() * g);
  });
}

Var add_row(Var a, Var bias) {
  require(bias.rows() == 1 && bias.cols() == a.cols(), "add_row", "bias must be 1 x cols");
  Tape* t = a.tape();
  Matrix out = a.value().rowwise() + bias.value().row(0);
  return t->record(std::move(out), {a, bias}, [t, a, bias](const Matrix& g) {
    t->accumulate(a, g);
    t->accumulate(bias, g.colwise().sum());
  });
}

Var map(Var a, std::function<double(double)> f, std::function<double(double)> df) {
  Tape* t = a.tape();
  Matrix out = a.value().unaryExpr(f);
  return t->record(std::move(out), {a}, [t, a, df = std::move(df)](const Matrix& g) {
    t->accumulate(a, g.cwiseProduct(a.value().unaryExpr(df)));
  });
}

Var elu(Var a) {
  return map(
      a, [](double x) { return x >= 0.0 ? x : std::expm1(x); },
      [](double x) { return x >= 0.0 ? 1.0 : std::exp(x); });
}

Var softplus(Var a) {
  return map(
      a, [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var sigmoid(Var a) {
  return map(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double x) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 - s);
      });
}

Var log(Var a) {
  return map(
      a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var square(Var a) {
  return map(
      a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sum(Var a) {
  Tape* t = a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t->record(std::move(out), {a}, [t, a](const Matrix& g) {
    t->accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var reshape(Var a, Index rows, Index cols) {
  require(rows * cols == a.rows() * a.cols(), "reshape", "element count changes");
  Tape* t = a.tape();
  Matrix out = ConstMatMap(a.value().data(), rows, cols);
  return t->record(std::move(out), {a}, [t, a](const Matrix& g) {
    t->accumulate(a, ConstMatMap(g.data(), a.rows(), a.cols()));
  });
}

Var slice_cols(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols", "range out of bounds");
  Tape* t = a.tape();
  Matrix out = a.value().middleCols(start, count);
  return t->record(std::move(out), {a}, [t, a, start, count](const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    t->accumulate(a, full);
  });
}

Var gather_rows(Var a, std::vector<std::size_t> index) {
  Tape* t = a.tape();
  Matrix out(static_cast<Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < static_cast<std::size_t>(a.rows()), "gather_rows", "row index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(static_cast<Index>(index[i]));
  }
  return t->record(std::move(out), {a}, [t, a, index = std::move(index)](const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < index.size(); ++i)
      full.row(static_cast<Index>(index[i])) += g.row(static_cast<Index>(i));
    t->accumulate(a, full);
  });
}

Var concat_cols(Var a, Var b) {
  require(a.rows() == b.rows(), "concat_cols", "row counts differ");
  Tape* t = a.tape();
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  return t->record(std::move(out), {a, b}, [t, a, b](const Matrix& g) {
    t->accumulate(a, g.leftCols(a.cols()));
    t->accumulate(b, g.rightCols(b.cols()));
  });
}

Var segment_sum_rows(Var a, std::vector<std::size_t> segment, std::size_t num_segments) {
  require(segment.size() == static_cast<std::size_t>(a.rows()), "segment_sum_rows",
          "one segment id per row required");
  Tape* t = a.tape();
  Matrix out = Matrix::Zero(static_cast<Index>(num_segments), a.cols());
  for (std::size_t r = 0; r < segment.size(); ++r) {
    require(segment[r] < num_segments, "segment_sum_rows", "segment id out of range");
    out.row(static_cast<Index>(segment[r])) += a.value().row(static_cast<Index>(r));
  }
  return t->record(std::move(out), {a}, [t, a, segment = std::move(segment)](const Matrix& g) {
    Matrix back(a.rows(), a.cols());
    for (std::size_t r = 0; r < segment.size(); ++r)
      back.row(static_cast<Index>(r)) = g.row(static_cast<Index>(segment[r]));
    t->accumulate(a, back);
  });
}

Var batch_matmul(Var a, Var b, std::size_t dim, bool ta, bool tb) {
  const auto d = static_cast<Index>(dim);
  require(a.rows() == b.rows() && a.cols() == d * d && b.cols() == d * d, "batch_matmul",
          "operands must both be rows x d^2");
  Tape* t = a.tape();
  const Index rows = a.rows();
  Matrix out(rows, d * d);
  for (Index r = 0; r < rows; ++r) {
    const auto ab = as_block(a.value(), r, d);
    const auto bb = as_block(b.value(), r, d);
    auto ob = as_block(out, r, d);
    if (ta && tb) ob.noalias() = ab.transpose() * bb.transpose();
    else if (ta) ob.noalias() = ab.transpose() * bb;
    else if (tb) ob.noalias() = ab * bb.transpose();
    else ob.noalias() = ab * bb;
  }
  return t->record(std::move(out), {a, b}, [t, a, b, d, ta, tb](const Matrix& g) {
    const Index rows = a.rows();
    Matrix ga(rows, d * d), gb(rows, d * d);
    for (Index r = 0; r < rows; ++r) {
      const auto gr = as_block(g, r, d);
      const Matrix ap = ta ? Matrix(as_block(a.value(), r, d).transpose()) : Matrix(as_block(a.value(), r, d));
      const Matrix bp = tb ? Matrix(as_block(b.value(), r, d).transpose()) : Matrix(as_block(b.value(), r, d));
      const Matrix gap = gr * bp.transpose();
      const Matrix gbp = ap.transpose() * gr;
      as_block(ga, r, d) = ta ? Matrix(gap.transpose()) : gap;
      as_block(gb, r, d) = tb ? Matrix(gbp.transpose()) : gbp;
    }
    t->accumulate(a, ga);
    t->accumulate(b, gb);
  });
}

Var batch_transpose(Var a, std::size_t dim) {
  const auto d = static_cast<Index>(dim);
  require(a.cols() == d * d, "batch_transpose", "operand must be rows x d^2");
  Tape* t = a.tape();
  Matrix out(a.rows(), d * d);
  for (Index r = 0; r < a.rows(); ++r) as_block(out, r, d) = as_block(a.value(), r, d).transpose();
  return t->record(std::move(out), {a}, [t, a, d](const Matrix& g) {
    Matrix back(a.rows(), d * d);
    for (Index r = 0; r < a.rows(); ++r) as_block(back, r, d) = as_block(g, r, d).transpose();
    t->accumulate(a, back);
  });
}

Var diag_embed(Var a) {
  Tape* t = a.tape();
  const Index d = a.cols();
  Matrix out = Matrix::Zero(a.rows(), d * d);
  for (Index r = 0; r < a.rows(); ++r)
    for (Index i = 0; i < d; ++i) out(r, i * d + i) = a.value()(r, i);
  return t->record(std::move(out), {a}, [t, a, d](const Matrix& g) {
    Matrix back(a.rows(), d);
    for (Index r = 0; r < a.rows(); ++r)
      for (Index i = 0; i < d; ++i) back(r, i) = g(r, i * d + i);
    t->accumulate(a, back);
  });
}

Var cayley_rows(Var coords, std::size_t dim) {
  const auto d = static_cast<Index>(dim);
  require(coords.cols() == d * (d - 1) / 2, "cayley_rows", "expected d(d-1)/2 coordinates per row");
  Tape* t = coords.tape();
  const Index rows = coords.rows();
  const Matrix eye = Matrix::Identity(d, d);
  // (I - A)^{-1} per row, kept for the backward pass.
  auto inverses = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(rows));
  Matrix out(rows, d * d);
  for (Index r = 0; r < rows; ++r) {
    const Matrix x = skew_from_row(coords.value(), r, d);
    Matrix inv = (eye - x).partialPivLu().inverse();
    as_block(out, r, d) = 2.0 * inv - eye;
    (*inverses)[static_cast<std::size_t>(r)] = std::move(inv);
  }
  return t->record(std::move(out), {coords}, [t, coords, d, inverses](const Matrix& g) {
    Matrix back(coords.rows(), coords.cols());
    for (Index r = 0; r < coords.rows(); ++r) {
      const Matrix& inv = (*inverses)[static_cast<std::size_t>(r)];
      // dP = 2 B dA B with B = (I - A)^{-1}.
      const Matrix ga = 2.0 * inv.transpose() * as_block(g, r, d) * inv.transpose();
      Index k = 0;
      for (Index i = 1; i < d; ++i)
        for (Index j = 0; j < i; ++j, ++k) back(r, k) = ga(i, j) - ga(j, i);
    }
    t->accumulate(coords, back);
  });
}

Var scaled_cayley_rows(const Matrix& skew0, Var s, std::size_t dim) {
  const auto d = static_cast<Index>(dim);
  require(skew0.cols() == d * d && s.cols() == 1 && s.rows() == skew0.rows(), "scaled_cayley_rows",
          "expected rows x d^2 skew matrices and rows x 1 scales");
  Tape* t = s.tape();
  const Index rows = skew0.rows();
  const Matrix eye = Matrix::Identity(d, d);
  auto saved = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(rows));
  Matrix out(rows, d * d);
  for (Index r = 0; r < rows; ++r) {
    const Matrix a0 = as_block(skew0, r, d);
    Matrix inv = (eye - s.value()(r, 0) * a0).partialPivLu().inverse();
    as_block(out, r, d) = 2.0 * inv - eye;
    // dP/ds = 2 B A0 B.
    (*saved)[static_cast<std::size_t>(r)] = 2.0 * inv * a0 * inv;
  }
  return t->record(std::move(out), {s}, [t, s, d, saved](const Matrix& g) {
    Matrix back(s.rows(), 1);
    for (Index r = 0; r < s.rows(); ++r)
      back(r, 0) = as_block(g, r, d).cwiseProduct((*saved)[static_cast<std::size_t>(r)]).sum();
    t->accumulate(s, back);
  });
}

Var logdet_rows(Var a, std::size_t dim) {
  const auto d = static_cast<Index>(dim);
  require(a.cols() == d * d, "logdet_rows", "operand must be rows x d^2");
  Tape* t = a.tape();
  const Index rows = a.rows();
  auto inv_t = std::make_shared<Matrix>(rows, d * d);
  Matrix out(rows, 1);
  for (Index r = 0; r < rows; ++r) {
    const Eigen::PartialPivLU<Matrix> lu(Matrix(as_block(a.value(), r, d)));
    out(r, 0) = std::log(std::abs(lu.determinant()));
    as_block(*inv_t, r, d) = lu.inverse().transpose();
  }
  return t->record(std::move(out), {a}, [t, a, d, inv_t](const Matrix& g) {
    Matrix back(a.rows(), d * d);
    for (Index r = 0; r < a.rows(); ++r) back.row(r) = g(r, 0) * inv_t->row(r);
    t->accumulate(a, back);
  });
}

Var inverse_sqrt_rows(Var a, std::size_t dim, double eps) {
  const auto d = static_cast<Index>(dim);
  require(a.cols() == d * d, "inverse_sqrt_rows", "operand must be rows x d^2");
  Tape* t = a.tape();
  const Index rows = a.rows();
  struct Saved {
    Matrix vectors;
    Matrix divided;  // divided differences of f(x) = max(x, eps)^{-1/2}
  };
  auto saved = std::make_shared<std::vector<Saved>>(static_cast<std::size_t>(rows));
  const auto f = [eps](double x) { return 1.0 / std::sqrt(std::max(x, eps)); };
  const auto df = [eps](double x) { return x > eps ? -0.5 * std::pow(x, -1.5) : 0.0; };
  Matrix out(rows, d * d);
  for (Index r = 0; r < rows; ++r) {
    const Matrix block = as_block(a.value(), r, d);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (block + block.transpose()));
    const linalg::Vector& lam = eig.eigenvalues();
    const Matrix& v = eig.eigenvectors();
    linalg::Vector fl(d);
    for (Index i = 0; i < d; ++i) fl(i) = f(lam(i));
    as_block(out, r, d) = v * fl.asDiagonal() * v.transpose();
    Saved& s = (*saved)[static_cast<std::size_t>(r)];
    s.vectors = v;
    s.divided.resize(d, d);
    const double spread = std::max({1.0, std::abs(lam(0)), std::abs(lam(d - 1))});
    for (Index i = 0; i < d; ++i) {
      for (Index j = 0; j < d; ++j) {
        const double gap = lam(i) - lam(j);
        s.divided(i, j) = std::abs(gap) > 1e-10 * spread ? (fl(i) - fl(j)) / gap
                                                         : df(0.5 * (lam(i) + lam(j)));
      }
    }
  }
  return t->record(std::move(out), {a}, [t, a, d, saved](const Matrix& g) {
    Matrix back(a.rows(), d * d);
    for (Index r = 0; r < a.rows(); ++r) {
      const Saved& s = (*saved)[static_cast<std::size_t>(r)];
      const Matrix inner = s.vectors.transpose() * as_block(g, r, d) * s.vectors;
      as_block(back, r, d) = s.vectors * inner.cwiseProduct(s.divided) * s.vectors.transpose();
    }
    t->accumulate(a, back);
  });
}

Var block_mul_rows(Var blocks, Var x, std::size_t dim) {
  const auto d = static_cast<Index>(dim);
  require(blocks.cols() == d * d && x.rows() == blocks.rows() * d, "block_mul_rows",
          "expected n x d^2 blocks and (n d) x f features");
  Tape* t = x.tape();
  const Index n = blocks.rows();
  Matrix out(x.rows(), x.cols());
  for (Index u = 0; u < n; ++u)
    out.middleRows(u * d, d).noalias() = as_block(blocks.value(), u, d) * x.value().middleRows(u * d, d);
  return t->record(std::move(out), {blocks, x}, [t, blocks, x, d](const Matrix& g) {
    const Index n = blocks.rows();
    if (t->requires_grad(blocks)) {
      Matrix gb(n, d * d);
      for (Index u = 0; u < n; ++u)
        as_block(gb, u, d) = g.middleRows(u * d, d) * x.value().middleRows(u * d, d).transpose();
      t->accumulate(blocks, gb);
    }
    if (t->requires_grad(x)) {
      Matrix gx(x.rows(), x.cols());
      for (Index u = 0; u < n; ++u)
        gx.middleRows(u * d, d).noalias() = as_block(blocks.value(), u, d).transpose() * g.middleRows(u * d, d);
      t->accumulate(x, gx);
    }
  });
}

Var shared_block_mul(Var w, Var x) {
  const Index d = w.rows();
  require(w.cols() == d && d > 0 && x.rows() % d == 0, "shared_block_mul",
          "expected d x d weight and (n d) x f features");
  Tape* t = x.tape();
  const Index n = x.rows() / d;
  Matrix out(x.rows(), x.cols());
  for (Index u = 0; u < n; ++u) out.middleRows(u * d, d).noalias() = w.value() * x.value().middleRows(u * d, d);
  return t->record(std::move(out), {w, x}, [t, w, x, d, n](const Matrix& g) {
    if (t->requires_grad(w)) {
      Matrix gw = Matrix::Zero(d, d);
      for (Index u = 0; u < n; ++u)
        gw.noalias() += g.middleRows(u * d, d) * x.value().middleRows(u * d, d).transpose();
      t->accumulate(w, gw);
    }
    if (t->requires_grad(x)) {
      Matrix gx(x.rows(), x.cols());
      for (Index u = 0; u < n; ++u)
        gx.middleRows(u * d, d).noalias() = w.value().transpose() * g.middleRows(u * d, d);
      t->accumulate(x, gx);
    }
  });
}

namespace {

// Y = L_F X computed edge by edge; also used for the X-gradient since L_F is symmetric.
Matrix laplacian_times(const Matrix& maps, const Matrix& x, const std::vector<sheaf::Edge>& edges,
                       Index d) {
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto u = static_cast<Index>(edges[e].first);
    const auto v = static_cast<Index>(edges[e].second);
    const auto fu = as_block(maps, static_cast<Index>(2 * e), d);
    const auto fv = as_block(maps, static_cast<Index>(2 * e + 1), d);
    const Matrix h = fv * x.middleRows(v * d, d) - fu * x.middleRows(u * d, d);
    y.middleRows(u * d, d).noalias() -= fu.transpose() * h;
    y.middleRows(v * d, d).noalias() += fv.transpose() * h;
  }
  return y;
}

}  // namespace

Var sheaf_laplacian_apply(Var maps, Var x, const std::vector<sheaf::Edge>& edges, std::size_t dim) {
  const auto d = static_cast<Index>(dim);
  require(maps.rows() == static_cast<Index>(2 * edges.size()) && maps.cols() == d * d,
          "sheaf_laplacian_apply", "expected 2|E| x d^2 restriction maps");
  require(x.rows() % d == 0, "sheaf_laplacian_apply", "feature rows must be a multiple of d");
  for (const auto& [u, v] : edges) {
    require(static_cast<Index>(std::max(u, v)) < x.rows() / d, "sheaf_laplacian_apply",
            "edge endpoint outside the feature matrix");
  }
  Tape* t = x.tape();
  auto edge_list = std::make_shared<const std::vector<sheaf::Edge>>(edges);
  Matrix out = laplacian_times(maps.value(), x.value(), *edge_list, d);
  return t->record(std::move(out), {maps, x}, [t, maps, x, d, edge_list](const Matrix& g) {
    const Matrix& f = maps.value();
    const Matrix& xv = x.value();
    if (t->requires_grad(x)) t->accumulate(x, laplacian_times(f, g, *edge_list, d));
    if (t->requires_grad(maps)) {
      Matrix gf(f.rows(), f.cols());
      for (std::size_t e = 0; e < edge_list->size(); ++e) {
        const auto u = static_cast<Index>((*edge_list)[e].first);
        const auto v = static_cast<Index>((*edge_list)[e].second);
        const auto fu = as_block(f, static_cast<Index>(2 * e), d);
        const auto fv = as_block(f, static_cast<Index>(2 * e + 1), d);
        const auto xu = xv.middleRows(u * d, d);
        const auto xw = xv.middleRows(v * d, d);
        const auto gu = g.middleRows(u * d, d);
        const auto gw = g.middleRows(v * d, d);
        const Matrix h = fv * xw - fu * xu;
        const Matrix k = fv * gw - fu * gu;
        as_block(gf, static_cast<Index>(2 * e), d) = -(k * xu.transpose() + h * gu.transpose());
        as_block(gf, static_cast<Index>(2 * e + 1), d) = k * xw.transpose() + h * gw.transpose();
      }
      t->accumulate(maps, gf);
    }
  });
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp().matrix();
    p.row(i) = e / e.sum();
  }
  return p;
}

Var softmax_nll(Var logits, const std::vector<int>& labels, const std::vector<std::size_t>& nodes) {
  require(labels.size() == static_cast<std::size_t>(logits.rows()), "softmax_nll",
          "one label per logit row required");
  Tape* t = logits.tape();
  const Matrix probs = softmax_rows(logits.value());
  double total = 0.0;
  for (std::size_t i : nodes) {
    require(i < labels.size(), "softmax_nll", "node index out of range");
    const auto r = static_cast<Index>(i);
    const int y = labels[i];
    require(y >= 0 && y < logits.cols(), "softmax_nll", "label outside the class range");
    const double m = logits.value().row(r).maxCoeff();
    const double lse = m + std::log((logits.value().row(r).array() - m).exp().sum());
    total += lse - logits.value()(r, y);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return t->record(std::move(out), {logits}, [t, logits, labels, nodes, probs](const Matrix& g) {
    Matrix back = Matrix::Zero(logits.rows(), logits.cols());
    for (std::size_t i : nodes) {
      const auto r = static_cast<Index>(i);
      back.row(r) += probs.row(r);
      back(r, labels[i]) -= 1.0;
    }
    t->accumulate(logits, g(0, 0) * back);
  });
}

}  // namespace bsnn::ad
