#include "vip/autodiff.hpp"

#include "vip/error.hpp"

#include <cmath>
#include <string>

namespace vip::ad {

struct TapeAccess {
  static Tape::Node& node(Tape& t, std::size_t id) { return t.nodes_[id]; }
  static const Tape::Node& node(const Tape& t, std::size_t id) { return t.nodes_[id]; }

  static Var record(Tape& t, Matrix value, std::vector<std::size_t> parents,
                    std::function<void(Tape&, std::size_t)> backward) {
    bool rg = false;
    for (auto p : parents) rg = rg || t.nodes_[p].requires_grad;
    Tape::Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    if (rg) n.backward = std::move(backward);
    n.requires_grad = rg;
    t.nodes_.push_back(std::move(n));
    return Var{&t, t.nodes_.size() - 1};
  }

  // Adds `g` into the gradient of node `id` if that node needs one.
  static void accumulate(Tape& t, std::size_t id, const Matrix& g) {
    auto& n = t.nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }
};

namespace {

using A = TapeAccess;

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw Error("autodiff: operands recorded on different tapes");
}

void check_same_shape(Var a, Var b, const char* op) {
  const auto& x = a.value();
  const auto& y = b.value();
  if (x.rows() != y.rows())
    throw ShapeError("rows", std::string(op) + ": row mismatch " + std::to_string(x.rows()) + " vs " +
                                 std::to_string(y.rows()));
  if (x.cols() != y.cols())
    throw ShapeError("cols", std::string(op) + ": column mismatch " + std::to_string(x.cols()) + " vs " +
                                 std::to_string(y.cols()));
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

const Matrix& Var::value() const { return A::node(*tape, id).value; }

double Var::scalar() const {
  const auto& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar", "node is not 1x1");
  return v(0, 0);
}

bool Var::requires_grad() const { return A::node(*tape, id).requires_grad; }

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const Matrix& value, std::size_t slot) {
  Node n;
  n.value = value;
  n.slot = static_cast<long>(slot);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(Var loss, const std::vector<std::pair<Eigen::Index, Eigen::Index>>& shapes) {
  if (loss.tape != this) throw Error("backward: loss recorded on another tape");
  const double l = loss.scalar();
  if (!std::isfinite(l)) throw NumericError("backward: loss is not finite");

  Gradients grads;
  grads.reserve(shapes.size());
  for (auto [r, c] : shapes) grads.push_back(Matrix::Zero(r, c));

  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id].requires_grad) return grads;
  nodes_[loss.id].grad = Matrix::Ones(1, 1);

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.slot >= 0) {
      auto s = static_cast<std::size_t>(n.slot);
      if (s >= grads.size()) throw Error("backward: parameter slot out of range");
      grads[s] += n.grad;
    }
  }
  for (const auto& g : grads)
    if (!g.allFinite()) throw NumericError("backward: non-finite gradient");
  return grads;
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  if (a.value().cols() != b.value().rows())
    throw ShapeError("inner", "matmul: inner dimension " + std::to_string(a.value().cols()) + " vs " +
                                  std::to_string(b.value().rows()));
  Matrix out = a.value() * b.value();
  return A::record(*a.tape, std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Matrix& g = A::node(t, self).grad;
    if (A::node(t, ia).requires_grad) A::accumulate(t, ia, g * A::node(t, ib).value.transpose());
    if (A::node(t, ib).requires_grad) A::accumulate(t, ib, A::node(t, ia).value.transpose() * g);
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return A::record(*a.tape, std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Matrix g = A::node(t, self).grad;
    A::accumulate(t, ia, g);
    A::accumulate(t, ib, g);
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  return A::record(*a.tape, std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Matrix g = A::node(t, self).grad;
    A::accumulate(t, ia, g);
    A::accumulate(t, ib, -g);
  });
}

Var add_row(Var a, Var row) {
  check_same_tape(a, row);
  if (row.value().rows() != 1) throw ShapeError("rows", "add_row: bias must have one row");
  if (row.value().cols() != a.value().cols())
    throw ShapeError("cols", "add_row: bias width " + std::to_string(row.value().cols()) + " vs " +
                                 std::to_string(a.value().cols()));
  Matrix out = a.value().rowwise() + row.value().row(0);
  return A::record(*a.tape, std::move(out), {a.id, row.id},
                   [ia = a.id, ir = row.id](Tape& t, std::size_t self) {
                     const Matrix g = A::node(t, self).grad;
                     A::accumulate(t, ia, g);
                     if (A::node(t, ir).requires_grad) A::accumulate(t, ir, g.colwise().sum());
                   });
}

Var scale(Var a, double c) {
  Matrix out = a.value() * c;
  return A::record(*a.tape, std::move(out), {a.id}, [ia = a.id, c](Tape& t, std::size_t self) {
    A::accumulate(t, ia, A::node(t, self).grad * c);
  });
}

Var silu(Var a) {
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([](double v) { return v * sigmoid(v); });
  return A::record(*a.tape, std::move(out), {a.id}, [ia = a.id](Tape& t, std::size_t self) {
    const Matrix& x = A::node(t, ia).value;
    Matrix d = x.unaryExpr([](double v) {
      const double s = sigmoid(v);
      return s * (1.0 + v * (1.0 - s));
    });
    A::accumulate(t, ia, A::node(t, self).grad.cwiseProduct(d));
  });
}

Var log_sigmoid(Var a) {
  // log sigma(z) = -softplus(-z), evaluated stably for large |z|.
  Matrix out = a.value().unaryExpr([](double z) {
    return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
  });
  return A::record(*a.tape, std::move(out), {a.id}, [ia = a.id](Tape& t, std::size_t self) {
    Matrix d = A::node(t, ia).value.unaryExpr([](double z) { return sigmoid(-z); });
    A::accumulate(t, ia, A::node(t, self).grad.cwiseProduct(d));
  });
}

Var concat_cols(Var a, Var b) {
  check_same_tape(a, b);
  if (a.value().rows() != b.value().rows())
    throw ShapeError("rows", "concat_cols: row mismatch " + std::to_string(a.value().rows()) + " vs " +
                                 std::to_string(b.value().rows()));
  const auto ca = a.value().cols();
  Matrix out(a.value().rows(), ca + b.value().cols());
  out << a.value(), b.value();
  return A::record(*a.tape, std::move(out), {a.id, b.id},
                   [ia = a.id, ib = b.id, ca](Tape& t, std::size_t self) {
                     const Matrix g = A::node(t, self).grad;
                     if (A::node(t, ia).requires_grad) A::accumulate(t, ia, g.leftCols(ca));
                     if (A::node(t, ib).requires_grad) A::accumulate(t, ib, g.rightCols(g.cols() - ca));
                   });
}

Var row_sq_norm(Var a) {
  Matrix out = a.value().rowwise().squaredNorm();
  return A::record(*a.tape, std::move(out), {a.id}, [ia = a.id](Tape& t, std::size_t self) {
    const Matrix& g = A::node(t, self).grad;
    Matrix d = 2.0 * A::node(t, ia).value;
    d.array().colwise() *= g.col(0).array();
    A::accumulate(t, ia, d);
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return A::record(*a.tape, std::move(out), {a.id}, [ia = a.id](Tape& t, std::size_t self) {
    const auto& x = A::node(t, ia).value;
    A::accumulate(t, ia, Matrix::Constant(x.rows(), x.cols(), A::node(t, self).grad(0, 0)));
  });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("size", "mean: empty node");
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return A::record(*a.tape, std::move(out), {a.id}, [ia = a.id, n](Tape& t, std::size_t self) {
    const auto& x = A::node(t, ia).value;
    A::accumulate(t, ia, Matrix::Constant(x.rows(), x.cols(), A::node(t, self).grad(0, 0) / n));
  });
}

}  // namespace vip::ad
