#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every operation applied to Vars; Tape::backward walks the
// record in reverse and accumulates gradients into every node that depends on
// a parameter leaf. Constants never receive gradients.

#include "craf/common.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace craf::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the tape, d(root)/d(out) and the recorded output value.
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out, const Matrix& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  /// Records an op result. `fn` is kept only when some parent needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Matrix value, std::span<const Var> parents, BackwardFn fn);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(const Var& root);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  void accumulate(std::size_t id, const Matrix& delta);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  Matrix empty_;
};

// Linear algebra.
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// Adds a 1 x c row to every row of a.
Var add_row(const Var& a, const Var& row);
/// Multiplies every column of a elementwise by an n x 1 column.
Var mul_col(const Var& a, const Var& col);
Var div_col(const Var& a, const Var& col);

// Elementwise nonlinearities.
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var elu(const Var& a);
Var exp(const Var& a);
/// log(max(a, floor)); zero gradient where a < floor.
Var log(const Var& a, double floor);
Var square(const Var& a);
/// a^p for a >= 0.
Var pow(const Var& a, double p);
Var reciprocal(const Var& a);

// Reductions and reshaping.
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sum(const Var& a);
/// Mean over rows, 1 x c.
Var col_mean(const Var& a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& a, std::span<const int> rows);
/// out(i) = a(i, index[i]) as an n x 1 column.
Var pick(const Var& a, std::span<const int> index);

// Composite ops with fused backward passes.
Var row_softmax(const Var& a);
/// Row-wise layer normalization with learnable 1 x c gain and bias.
Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps);
/// out(i, c) = ||a_i - b_c||^2
Var pairwise_sq_dist(const Var& a, const Var& b);
/// Rows scaled to unit L2 norm (rows with norm below 1e-12 are left as-is).
Var normalize_rows(const Var& a);

}  // namespace craf::ad
