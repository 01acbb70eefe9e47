#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "bsnn/linalg.hpp"
#include "bsnn/sheaf.hpp"

namespace bsnn::ad {

using linalg::Matrix;

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records values and vector-Jacobian closures in execution order; backward()
// replays them in reverse. Single writer; one tape per forward pass.
class Tape {
 public:
  using Backward = std::function<void(const Matrix& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Differentiable leaf (a parameter).
  Var variable(Matrix value);
  // Output of an operation. The closure is dropped when no input needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);

  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  void accumulate(const Var& v, const Matrix& grad);

  // Seeds d(loss)/d(loss) = 1 and runs every closure in reverse order.
  void backward(const Var& loss);

  // Zero matrix of the right shape when v was not reached.
  Matrix grad(const Var& v) const;
  const Matrix& value(const Var& v) const { return nodes_[v.id()].value; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
    bool has_grad = false;
  };
  std::deque<Node> nodes_;
};

// Elementwise / dense ops.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var matmul(Var a, Var b);
// a (r x c) + bias (1 x c) broadcast over rows.
Var add_row(Var a, Var bias);
Var elu(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
Var log(Var a);
Var square(Var a);
// Generic elementwise map with derivative.
Var map(Var a, std::function<double(double)> f, std::function<double(double)> df);
Var sum(Var a);
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var a, std::vector<std::size_t> index);
Var concat_cols(Var a, Var b);
// out.row(segment[r]) += a.row(r).
Var segment_sum_rows(Var a, std::vector<std::size_t> segment, std::size_t num_segments);

// Batched d x d ops: row r of the operand holds matrix r flattened row-major.
Var batch_matmul(Var a, Var b, std::size_t d, bool transpose_a = false, bool transpose_b = false);
Var batch_transpose(Var a, std::size_t d);
Var diag_embed(Var a);
// Row r: Cayley transform of the skew matrix with coordinates a.row(r).
Var cayley_rows(Var skew_coords, std::size_t d);
// Row r: C(s_r * A0_r) for constant skew matrices A0 (rows x d^2) and scales s (rows x 1).
Var scaled_cayley_rows(const Matrix& skew0, Var s, std::size_t d);
// Row r: log|det A_r| (rows x 1).
Var logdet_rows(Var a, std::size_t d);
// Row r: A_r^{-1/2} for symmetric PSD A_r with eigenvalues floored at eps.
Var inverse_sqrt_rows(Var a, std::size_t d, double eps);

// Per-node block products on (n d) x f features.
Var block_mul_rows(Var blocks, Var x, std::size_t d);  // Y_u = B_u X_u
Var shared_block_mul(Var w, Var x);                    // Y_u = W X_u, i.e. (I_n (x) W) X
// L_F X for restriction maps F (2|E| x d^2; row 2e = F_{u<|e}, 2e+1 = F_{v<|e}).
Var sheaf_laplacian_apply(Var maps, Var x, const std::vector<sheaf::Edge>& edges, std::size_t d);

// Sum over rows in `nodes` of -log softmax(logits.row(i))[label_i].
Var softmax_nll(Var logits, const std::vector<int>& labels, const std::vector<std::size_t>& nodes);

Matrix softmax_rows(const Matrix& logits);

}  // namespace bsnn::ad
