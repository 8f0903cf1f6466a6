#include "craf/autodiff.hpp"

#include <cassert>
#include <cmath>

namespace craf::ad {

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
double Var::scalar() const {
  assert(value().size() == 1);
  return value()(0, 0);
}
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> parents, BackwardFn fn) {
  bool needs = false;
  for (const auto& p : parents) {
    assert(p.tape() == this);
    needs = needs || requires_grad(p.id());
  }
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(fn) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

const Matrix& Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.has_grad ? n.grad : empty_;
}

void Tape::accumulate(std::size_t id, const Matrix& delta) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  assert(delta.rows() == n.value.rows() && delta.cols() == n.value.cols());
  if (n.has_grad) {
    n.grad += delta;
  } else {
    n.grad = delta;
    n.has_grad = true;
  }
}

void Tape::backward(const Var& root) {
  if (root.tape() != this || root.value().size() != 1) throw std::invalid_argument("backward: root must be a 1x1 node of this tape");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  if (!requires_grad(root.id())) return;
  accumulate(root.id(), Matrix::Ones(1, 1));
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    // Closures only write to ancestors (lower indices), so `n` stays valid.
    if (n.has_grad && n.backward) n.backward(*this, n.grad, n.value);
  }
}

namespace {

Tape& tape_of(const Var& a) { return *a.tape(); }

template <typename F, typename DF>
Var elementwise(const Var& a, F f, DF df) {
  Matrix out = a.value().unaryExpr(f);
  return tape_of(a).record(std::move(out), {a}, [a, df](Tape& t, const Matrix& g, const Matrix& out) {
    Matrix d(g.rows(), g.cols());
    const Matrix& x = a.value();
    for (Eigen::Index i = 0; i < g.size(); ++i) d(i) = g(i) * df(x(i), out(i));
    t.accumulate(a.id(), d);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  assert(a.cols() == b.rows());
  return tape_of(a).record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (a.requires_grad()) t.accumulate(a.id(), g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b.id(), a.value().transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  assert(a.cols() == b.cols());
  return tape_of(a).record(a.value() * b.value().transpose(), {a, b},
                           [a, b](Tape& t, const Matrix& g, const Matrix&) {
                             if (a.requires_grad()) t.accumulate(a.id(), g * b.value());
                             if (b.requires_grad()) t.accumulate(b.id(), g.transpose() * a.value());
                           });
}

Var add(const Var& a, const Var& b) {
  return tape_of(a).record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a.id(), g);
    t.accumulate(b.id(), g);
  });
}

Var sub(const Var& a, const Var& b) {
  return tape_of(a).record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a.id(), g);
    if (b.requires_grad()) t.accumulate(b.id(), -g);
  });
}

Var mul(const Var& a, const Var& b) {
  return tape_of(a).record(a.value().cwiseProduct(b.value()), {a, b},
                           [a, b](Tape& t, const Matrix& g, const Matrix&) {
                             if (a.requires_grad()) t.accumulate(a.id(), g.cwiseProduct(b.value()));
                             if (b.requires_grad()) t.accumulate(b.id(), g.cwiseProduct(a.value()));
                           });
}

Var scale(const Var& a, double s) {
  return tape_of(a).record(a.value() * s, {a},
                           [a, s](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a.id(), g * s); });
}

Var add_scalar(const Var& a, double s) {
  return tape_of(a).record((a.value().array() + s).matrix(), {a},
                           [a](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a.id(), g); });
}

Var add_row(const Var& a, const Var& row) {
  assert(row.rows() == 1 && row.cols() == a.cols());
  Matrix out = a.value().rowwise() + row.value().row(0);
  return tape_of(a).record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a.id(), g);
    if (row.requires_grad()) t.accumulate(row.id(), g.colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  assert(col.cols() == 1 && col.rows() == a.rows());
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return tape_of(a).record(std::move(out), {a, col}, [a, col](Tape& t, const Matrix& g, const Matrix&) {
    if (a.requires_grad()) t.accumulate(a.id(), (g.array().colwise() * col.value().col(0).array()).matrix());
    if (col.requires_grad()) t.accumulate(col.id(), g.cwiseProduct(a.value()).rowwise().sum());
  });
}

Var div_col(const Var& a, const Var& col) {
  assert(col.cols() == 1 && col.rows() == a.rows());
  Matrix out = a.value().array().colwise() / col.value().col(0).array();
  return tape_of(a).record(std::move(out), {a, col}, [a, col](Tape& t, const Matrix& g, const Matrix& out) {
    const auto c = col.value().col(0).array();
    if (a.requires_grad()) t.accumulate(a.id(), (g.array().colwise() / c).matrix());
    if (col.requires_grad()) {
      Matrix dc = -(g.cwiseProduct(out).rowwise().sum().array() / c).matrix();
      t.accumulate(col.id(), dc);
    }
  });
}

Var sigmoid(const Var& a) {
  return elementwise(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& a) {
  return elementwise(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return elementwise(
      a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var elu(const Var& a) {
  return elementwise(
      a, [](double x) { return x > 0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; });
}

Var exp(const Var& a) {
  return elementwise(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a, double floor) {
  return elementwise(
      a, [floor](double x) { return std::log(x < floor ? floor : x); },
      [floor](double x, double) { return x < floor ? 0.0 : 1.0 / x; });
}

Var square(const Var& a) {
  return elementwise(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var pow(const Var& a, double p) {
  return elementwise(
      a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) {
        if (p == 1.0) return 1.0;
        if (x <= 0.0) return 0.0;
        return p * std::pow(x, p - 1.0);
      });
}

Var reciprocal(const Var& a) {
  return elementwise(
      a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a.id(), Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), n > 0 ? 1.0 / n : 0.0);
}

Var row_sum(const Var& a) {
  Matrix out = a.value().rowwise().sum();
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    Matrix d = g.col(0).replicate(1, a.cols());
    t.accumulate(a.id(), d);
  });
}

Var col_mean(const Var& a) {
  const double n = static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() / n;
  return tape_of(a).record(std::move(out), {a}, [a, n](Tape& t, const Matrix& g, const Matrix&) {
    Matrix d = (g.row(0) / n).replicate(a.rows(), 1);
    t.accumulate(a.id(), d);
  });
}

Var concat_cols(std::span<const Var> parts) {
  assert(!parts.empty());
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    assert(p.rows() == rows);
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  std::vector<Var> copy(parts.begin(), parts.end());
  return tape_of(parts[0]).record(std::move(out), parts, [copy](Tape& t, const Matrix& g, const Matrix&) {
    Eigen::Index off = 0;
    for (const auto& p : copy) {
      if (p.requires_grad()) t.accumulate(p.id(), g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  assert(!parts.empty());
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    assert(p.cols() == cols);
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  std::vector<Var> copy(parts.begin(), parts.end());
  return tape_of(parts[0]).record(std::move(out), parts, [copy](Tape& t, const Matrix& g, const Matrix&) {
    Eigen::Index off = 0;
    for (const auto& p : copy) {
      if (p.requires_grad()) t.accumulate(p.id(), g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  assert(start >= 0 && start + count <= a.cols());
  Matrix out = a.value().middleCols(start, count);
  return tape_of(a).record(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g, const Matrix&) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    d.middleCols(start, count) = g;
    t.accumulate(a.id(), d);
  });
}

Var gather_rows(const Var& a, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    assert(rows[i] >= 0 && rows[i] < a.rows());
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return tape_of(a).record(std::move(out), {a}, [a, idx](Tape& t, const Matrix& g, const Matrix&) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(a.id(), d);
  });
}

Var pick(const Var& a, std::span<const int> index) {
  assert(static_cast<Eigen::Index>(index.size()) == a.rows());
  Matrix out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) out(i, 0) = a.value()(i, index[static_cast<std::size_t>(i)]);
  std::vector<int> idx(index.begin(), index.end());
  return tape_of(a).record(std::move(out), {a}, [a, idx](Tape& t, const Matrix& g, const Matrix&) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d(static_cast<Eigen::Index>(i), idx[i]) = g(static_cast<Eigen::Index>(i), 0);
    t.accumulate(a.id(), d);
  });
}

Var row_softmax(const Var& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.value().row(i).maxCoeff();
    out.row(i) = (a.value().row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& s) {
    Eigen::VectorXd dots = g.cwiseProduct(s).rowwise().sum();
    Matrix d = s.cwiseProduct(g - dots.replicate(1, g.cols()));
    t.accumulate(a.id(), d);
  });
}

Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps) {
  const Eigen::Index n = a.rows();
  const Eigen::Index c = a.cols();
  Matrix normalized(n, c);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = a.value().row(i).mean();
    const double var = (a.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    normalized.row(i) = (a.value().row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (normalized.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return tape_of(a).record(std::move(out), {a, gain, bias},
                           [a, gain, bias, normalized, inv_std](Tape& t, const Matrix& g, const Matrix&) {
                             if (gain.requires_grad()) t.accumulate(gain.id(), g.cwiseProduct(normalized).colwise().sum());
                             if (bias.requires_grad()) t.accumulate(bias.id(), g.colwise().sum());
                             if (!a.requires_grad()) return;
                             Matrix dn = g.array().rowwise() * gain.value().row(0).array();
                             Matrix d(dn.rows(), dn.cols());
                             for (Eigen::Index i = 0; i < dn.rows(); ++i) {
                               const double m1 = dn.row(i).mean();
                               const double m2 = dn.row(i).cwiseProduct(normalized.row(i)).mean();
                               d.row(i) = (dn.row(i).array() - m1 - normalized.row(i).array() * m2) * inv_std(i);
                             }
                             t.accumulate(a.id(), d);
                           });
}

Var pairwise_sq_dist(const Var& a, const Var& b) {
  assert(a.cols() == b.cols());
  Matrix out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) out(i, j) = (a.value().row(i) - b.value().row(j)).squaredNorm();
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (a.requires_grad()) {
      Matrix d = 2.0 * ((a.value().array().colwise() * g.rowwise().sum().array()).matrix() - g * b.value());
      t.accumulate(a.id(), d);
    }
    if (b.requires_grad()) {
      Eigen::VectorXd colsum = g.colwise().sum().transpose();
      Matrix d = 2.0 * ((b.value().array().colwise() * colsum.array()).matrix() - g.transpose() * a.value());
      t.accumulate(b.id(), d);
    }
  });
}

Var normalize_rows(const Var& a) {
  Eigen::VectorXd norms = a.value().rowwise().norm();
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    if (norms(i) > 1e-12) out.row(i) /= norms(i);
  return tape_of(a).record(std::move(out), {a}, [a, norms](Tape& t, const Matrix& g, const Matrix& y) {
    Matrix d = g;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      if (norms(i) <= 1e-12) continue;
      const double proj = g.row(i).dot(y.row(i));
      d.row(i) = (g.row(i) - proj * y.row(i)) / norms(i);
    }
    t.accumulate(a.id(), d);
  });
}

}  // namespace craf::ad
