#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every value produced during a forward pass together with a
// closure that scatters the node's gradient into its inputs. Parameters enter
// the tape as leaves; Tape::backward() pushes leaf gradients into
// Parameter::grad, so several backward passes accumulate.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace auxrn::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Named parameter arrays, iterated in name order.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Matrix init) {
    auto [it, inserted] = params_.try_emplace(name, name, std::move(init));
    if (!inserted) throw std::invalid_argument("duplicate parameter: " + name);
    return it->second;
  }

  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
  }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, nullptr, false});
    return Var{this, nodes_.size() - 1};
  }

  Var constant_scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  Var leaf(Parameter& p) {
    nodes_.push_back(Node{p.value, Matrix(), nullptr, &p, true});
    return Var{this, nodes_.size() - 1};
  }

  Var record(Matrix value, std::initializer_list<Var> inputs, Backward back) {
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.tape != this) throw std::invalid_argument("Var belongs to a different tape");
      needs = needs || nodes_[v.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(back) : Backward{}, nullptr, needs});
    return Var{this, nodes_.size() - 1};
  }

  // Variant for ops with a runtime-sized input list.
  Var record(Matrix value, const std::vector<Var>& inputs, Backward back) {
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.tape != this) throw std::invalid_argument("Var belongs to a different tape");
      needs = needs || nodes_[v.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(back) : Backward{}, nullptr, needs});
    return Var{this, nodes_.size() - 1};
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  template <typename Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  // Seeds d(root)/d(root) = 1 and propagates to every parameter leaf.
  void backward(Var root) {
    if (root.tape != this) throw std::invalid_argument("backward: root from another tape");
    const Matrix& rv = nodes_[root.id].value;
    if (rv.rows() != 1 || rv.cols() != 1) throw std::invalid_argument("backward: root must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[root.id].requires_grad) return;
    nodes_[root.id].grad = Matrix::Ones(1, 1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.param != nullptr)
        n.param->grad += n.grad;
      else if (n.back)
        n.back(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward back;
    Parameter* param;
    bool requires_grad;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }
inline double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::logic_error("Var::scalar on non-scalar node");
  return v(0, 0);
}

namespace detail {
inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}
inline void require_column(const Var& a, const char* op) {
  if (a.cols() != 1 || a.rows() == 0) throw std::invalid_argument(std::string(op) + ": expects a nonempty column vector");
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix v = a.value() * b.value();
  return a.tape->record(std::move(v), {a, b}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

inline Var operator+(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  Matrix v = a.value() + b.value();
  return a.tape->record(std::move(v), {a, b}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

inline Var operator-(Var a, Var b) {
  detail::require_same_shape(a, b, "sub");
  Matrix v = a.value() - b.value();
  return a.tape->record(std::move(v), {a, b}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

inline Var cmul(Var a, Var b) {
  detail::require_same_shape(a, b, "cmul");
  Matrix v = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(v), {a, b}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

inline Var scale(Var a, double s) {
  Matrix v = a.value() * s;
  return a.tape->record(std::move(v), {a}, [ia = a.id, s](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self) * s);
  });
}

inline Var operator*(double s, Var a) { return scale(a, s); }

// a + c elementwise for a constant c.
inline Var add_constant(Var a, double c) {
  Matrix v = a.value().array() + c;
  return a.tape->record(std::move(v), {a}, [ia = a.id](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
  });
}

inline Var sigmoid(Var a) {
  Matrix v = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return a.tape->record(std::move(v), {a}, [ia = a.id](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

inline Var tanh(Var a) {
  Matrix v = a.value().array().tanh().matrix();
  return a.tape->record(std::move(v), {a}, [ia = a.id](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

inline Var log(Var a) {
  Matrix v = a.value().array().log().matrix();
  return a.tape->record(std::move(v), {a}, [ia = a.id](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).cwiseQuotient(t.value(ia)));
  });
}

inline Var square(Var a) {
  Matrix v = a.value().array().square().matrix();
  return a.tape->record(std::move(v), {a}, [ia = a.id](Tape& t, std::size_t self) {
    t.accumulate(ia, 2.0 * t.grad(self).cwiseProduct(t.value(ia)));
  });
}

inline Var transpose(Var a) {
  Matrix v = a.value().transpose();
  return a.tape->record(std::move(v), {a}, [ia = a.id](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).transpose());
  });
}

inline Vector softmax_values(const Eigen::Ref<const Vector>& x) {
  const double m = x.maxCoeff();
  Vector e = (x.array() - m).exp().matrix();
  return e / e.sum();
}

inline Var softmax(Var a) {
  detail::require_column(a, "softmax");
  Matrix v = softmax_values(a.value().col(0));
  return a.tape->record(std::move(v), {a}, [ia = a.id](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    const double dot = g.cwiseProduct(y).sum();
    t.accumulate(ia, y.cwiseProduct((g.array() - dot).matrix()));
  });
}

inline Var log_softmax(Var a) {
  detail::require_column(a, "log_softmax");
  const auto& x = a.value();
  const double m = x.maxCoeff();
  const double lse = m + std::log((x.array() - m).exp().sum());
  Matrix v = (x.array() - lse).matrix();
  return a.tape->record(std::move(v), {a}, [ia = a.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix p = t.value(self).array().exp().matrix();
    t.accumulate(ia, g - p * g.sum());
  });
}

inline Var sum(Var a) {
  Matrix v = Matrix::Constant(1, 1, a.value().sum());
  return a.tape->record(std::move(v), {a}, [ia = a.id](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    t.accumulate(ia, Matrix::Constant(t.value(ia).rows(), t.value(ia).cols(), g));
  });
}

// Sum of same-shaped terms.
inline Var add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_n: empty input");
  Matrix v = xs.front().value();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    detail::require_same_shape(xs[0], xs[i], "add_n");
    v += xs[i].value();
  }
  std::vector<std::size_t> ids;
  ids.reserve(xs.size());
  for (const Var& x : xs) ids.push_back(x.id);
  return xs.front().tape->record(std::move(v), xs, [ids = std::move(ids)](Tape& t, std::size_t self) {
    for (std::size_t i : ids) t.accumulate(i, t.grad(self));
  });
}

// Vertical concatenation of blocks with equal column counts.
inline Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty input");
  Eigen::Index rows = 0;
  const Eigen::Index cols = xs.front().cols();
  for (const Var& x : xs) {
    if (x.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += x.rows();
  }
  Matrix v(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> parts;
  Eigen::Index r = 0;
  for (const Var& x : xs) {
    v.middleRows(r, x.rows()) = x.value();
    parts.emplace_back(x.id, r);
    r += x.rows();
  }
  return xs.front().tape->record(std::move(v), xs, [parts = std::move(parts)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    for (auto [id, off] : parts)
      if (t.requires_grad(id)) t.accumulate(id, g.middleRows(off, t.value(id).rows()));
  });
}

// Stacks column vectors side by side into a matrix.
inline Var hstack(const std::vector<Var>& cols) {
  if (cols.empty()) throw std::invalid_argument("hstack: empty input");
  const Eigen::Index rows = cols.front().rows();
  Matrix v(rows, static_cast<Eigen::Index>(cols.size()));
  std::vector<std::size_t> ids;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j].rows() != rows || cols[j].cols() != 1) throw std::invalid_argument("hstack: expects equal-length columns");
    v.col(static_cast<Eigen::Index>(j)) = cols[j].value();
    ids.push_back(cols[j].id);
  }
  return cols.front().tape->record(std::move(v), cols, [ids = std::move(ids)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    for (std::size_t j = 0; j < ids.size(); ++j)
      if (t.requires_grad(ids[j])) t.accumulate(ids[j], g.col(static_cast<Eigen::Index>(j)));
  });
}

inline Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count <= 0 || start + count > a.rows()) throw std::invalid_argument("slice_rows: out of range");
  Matrix v = a.value().middleRows(start, count);
  return a.tape->record(std::move(v), {a}, [ia = a.id, start, count](Tape& t, std::size_t self) {
    Matrix full = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
    full.middleRows(start, count) = t.grad(self);
    t.accumulate(ia, full);
  });
}

// Row i of a matrix returned as a column vector (embedding lookup).
inline Var row_as_column(Var a, Eigen::Index i) {
  if (i < 0 || i >= a.rows()) throw std::out_of_range("row_as_column: index out of range");
  Matrix v = a.value().row(i).transpose();
  return a.tape->record(std::move(v), {a}, [ia = a.id, i](Tape& t, std::size_t self) {
    Matrix full = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
    full.row(i) = t.grad(self).transpose();
    t.accumulate(ia, full);
  });
}

// Element i of a column vector as a 1x1 node.
inline Var pick(Var a, Eigen::Index i) {
  detail::require_column(a, "pick");
  if (i < 0 || i >= a.rows()) throw std::out_of_range("pick: index out of range");
  Matrix v = Matrix::Constant(1, 1, a.value()(i, 0));
  return a.tape->record(std::move(v), {a}, [ia = a.id, i](Tape& t, std::size_t self) {
    Matrix full = Matrix::Zero(t.value(ia).rows(), 1);
    full(i, 0) = t.grad(self)(0, 0);
    t.accumulate(ia, full);
  });
}

// Euclidean norm; the subgradient at zero is taken as zero.
inline Var l2norm(Var a) {
  const double n = a.value().norm();
  return a.tape->record(Matrix::Constant(1, 1, n), {a}, [ia = a.id](Tape& t, std::size_t self) {
    const double nv = t.value(self)(0, 0);
    if (nv == 0.0) return;
    t.accumulate(ia, t.value(ia) * (t.grad(self)(0, 0) / nv));
  });
}

inline Var l1norm(Var a) {
  const double n = a.value().cwiseAbs().sum();
  return a.tape->record(Matrix::Constant(1, 1, n), {a}, [ia = a.id](Tape& t, std::size_t self) {
    Matrix s = t.value(ia).unaryExpr([](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
    t.accumulate(ia, s * t.grad(self)(0, 0));
  });
}

// Binary cross entropy of sigmoid(z) against a soft target y in [0,1],
// evaluated stably from the logit.
inline Var bce_with_logits(Var z, double y) {
  if (z.rows() != 1 || z.cols() != 1) throw std::invalid_argument("bce_with_logits: expects a scalar logit");
  const double x = z.scalar();
  const double loss = std::max(x, 0.0) - y * x + std::log1p(std::exp(-std::abs(x)));
  return z.tape->record(Matrix::Constant(1, 1, loss), {z}, [iz = z.id, y](Tape& t, std::size_t self) {
    const double x = t.value(iz)(0, 0);
    const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    t.accumulate(iz, Matrix::Constant(1, 1, (s - y) * t.grad(self)(0, 0)));
  });
}

inline Var stop_gradient(Var a) { return a.tape->constant(a.value()); }

}  // namespace auxrn::ad
