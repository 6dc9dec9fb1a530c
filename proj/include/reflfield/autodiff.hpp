#pragma once

// Reverse-mode automatic differentiation over dense 2-D tensors.
//
// A Tape owns every recorded tensor (value, optional gradient, backward rule).
// Var is a lightweight handle into it. Tensors are row-major matrices whose
// rows are batch items, so one tape evaluates a whole ray batch at once.
// A tape is single-owner; concurrent workers each build their own.

#include "reflfield/core.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <type_traits>
#include <vector>

namespace reflfield::ad {

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
class Tape;

template <typename Real>
class Var {
 public:
  Var() = default;
  Var(Tape<Real>* tape, int id) : tape_(tape), id_(id) {}

  Tape<Real>& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Matrix<Real>& value() const { return tape_->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }
  /// Accumulated gradient after Tape::backward; empty when none reached it.
  const Matrix<Real>& grad() const { return tape_->grad(*this); }

 private:
  Tape<Real>* tape_ = nullptr;
  int id_ = -1;
};

template <typename Real>
class Tape {
 public:
  using Mat = Matrix<Real>;
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> constant(Mat value) { return push(std::move(value), false, {}); }
  /// A leaf whose gradient is collected by backward().
  Var<Real> leaf(Mat value) { return push(std::move(value), true, {}); }

  /// Records an op result. The rule runs only if some input requires grad.
  Var<Real> record(Mat value, std::initializer_list<Var<Real>> inputs, BackwardFn rule) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || requires_grad(v);
    return push(std::move(value), needs, needs ? std::move(rule) : BackwardFn{});
  }

  const Mat& value(const Var<Real>& v) const { return nodes_[check(v)].value; }
  const Mat& grad(const Var<Real>& v) const { return nodes_[check(v)].grad; }
  bool requires_grad(const Var<Real>& v) const { return nodes_[check(v)].requires_grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Mat& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds expr into the gradient slot of node id (no-op for constants).
  template <typename Expr>
  void accumulate(int id, const Expr& expr) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = expr;
    } else if constexpr (std::is_base_of_v<Eigen::ArrayBase<Expr>, Expr>) {
      n.grad.array() += expr;
    } else {
      n.grad += expr;
    }
  }
  template <typename Expr>
  void accumulate(const Var<Real>& v, const Expr& expr) {
    accumulate(v.id(), expr);
  }

  /// Reverse accumulation from a 1x1 loss.
  void backward(const Var<Real>& loss) {
    const auto id = check(loss);
    const auto& root = nodes_[id];
    if (root.value.rows() != 1 || root.value.cols() != 1) {
      fail("backward: loss must be scalar, got [", root.value.rows(), "x", root.value.cols(), "]");
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!root.requires_grad) return;
    nodes_[id].grad = Mat::Ones(1, 1);
    for (std::size_t i = id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, static_cast<int>(i));
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<Real> push(Mat value, bool requires_grad, BackwardFn rule) {
#ifndef NDEBUG
    if (!value.allFinite()) fail("autodiff: non-finite value recorded at node ", nodes_.size());
#endif
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, std::move(rule)});
    return Var<Real>(this, static_cast<int>(nodes_.size() - 1));
  }

  std::size_t check(const Var<Real>& v) const {
    if (&v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size()) {
      fail("autodiff: variable does not belong to this tape");
    }
    return static_cast<std::size_t>(v.id());
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <typename Real>
void require_same_shape(const char* op, const Var<Real>& a, const Var<Real>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(op, ": shape mismatch [", a.rows(), "x", a.cols(), "] vs [", b.rows(), "x", b.cols(), "]");
  }
}

template <typename Real>
void require_same_tape(const Var<Real>& a, const Var<Real>& b) {
  if (&a.tape() != &b.tape()) fail("autodiff: operands live on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("add", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.value() + b.value(), {a, b}, [ia, ib](Tape<Real>& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("sub", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.value() - b.value(), {a, b}, [ia, ib](Tape<Real>& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

/// Elementwise (Hadamard) product.
template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("mul", a, b);
  const int ia = a.id(), ib = b.id();
  Matrix<Real> v = a.value().cwiseProduct(b.value());
  return a.tape().record(std::move(v), {a, b}, [ia, ib](Tape<Real>& t, int self) {
    t.accumulate(ia, t.grad(self).cwiseProduct(t.value(ib)));
    t.accumulate(ib, t.grad(self).cwiseProduct(t.value(ia)));
  });
}

template <typename Real>
Var<Real> scale(const Var<Real>& a, Real c) {
  const int ia = a.id();
  return a.tape().record(a.value() * c, {a}, [ia, c](Tape<Real>& t, int self) { t.accumulate(ia, t.grad(self) * c); });
}

template <typename Real>
Var<Real> add_scalar(const Var<Real>& a, Real c) {
  const int ia = a.id();
  Matrix<Real> v = a.value().array() + c;
  return a.tape().record(std::move(v), {a}, [ia](Tape<Real>& t, int self) { t.accumulate(ia, t.grad(self)); });
}

/// a + c with c a constant of the same shape.
template <typename Real>
Var<Real> add_const(const Var<Real>& a, const Matrix<Real>& c) {
  if (c.rows() != a.rows() || c.cols() != a.cols()) {
    fail("add_const: shape mismatch [", a.rows(), "x", a.cols(), "] vs [", c.rows(), "x", c.cols(), "]");
  }
  const int ia = a.id();
  return a.tape().record(a.value() + c, {a}, [ia](Tape<Real>& t, int self) { t.accumulate(ia, t.grad(self)); });
}

/// a * c elementwise with c a constant of the same shape.
template <typename Real>
Var<Real> mul_const(const Var<Real>& a, Matrix<Real> c) {
  if (c.rows() != a.rows() || c.cols() != a.cols()) {
    fail("mul_const: shape mismatch [", a.rows(), "x", a.cols(), "] vs [", c.rows(), "x", c.cols(), "]");
  }
  const int ia = a.id();
  Matrix<Real> v = a.value().cwiseProduct(c);
  return a.tape().record(std::move(v), {a}, [ia, c = std::move(c)](Tape<Real>& t, int self) {
    t.accumulate(ia, t.grad(self).cwiseProduct(c));
  });
}

template <typename Real>
Var<Real> exp(const Var<Real>& a) {
  const int ia = a.id();
  Matrix<Real> v = a.value().array().exp();
  return a.tape().record(std::move(v), {a}, [ia](Tape<Real>& t, int self) {
    t.accumulate(ia, t.grad(self).cwiseProduct(t.value(self)));
  });
}

template <typename Real>
Var<Real> square(const Var<Real>& a) {
  const int ia = a.id();
  Matrix<Real> v = a.value().array().square();
  return a.tape().record(std::move(v), {a}, [ia](Tape<Real>& t, int self) {
    t.accumulate(ia, Real(2) * t.grad(self).cwiseProduct(t.value(ia)));
  });
}

/// max(x, 0); subgradient 0 at exactly 0.
template <typename Real>
Var<Real> relu(const Var<Real>& a) {
  const int ia = a.id();
  Matrix<Real> v = a.value().cwiseMax(Real(0));
  return a.tape().record(std::move(v), {a}, [ia](Tape<Real>& t, int self) {
    t.accumulate(ia, (t.value(ia).array() > Real(0)).select(t.grad(self), Real(0)));
  });
}

template <typename Real>
Matrix<Real> sigmoid_values(const Matrix<Real>& x) {
  return (Real(1) + (-x.array()).exp()).inverse().matrix();
}

/// log1p(e^{-|x|}) + max(x, 0)
template <typename Real>
Matrix<Real> softplus_values(const Matrix<Real>& x) {
  return ((-x.array().abs()).exp().log1p() + x.array().max(Real(0))).matrix();
}

template <typename Real>
Var<Real> softplus(const Var<Real>& a) {
  const int ia = a.id();
  return a.tape().record(softplus_values(a.value()), {a}, [ia](Tape<Real>& t, int self) {
    t.accumulate(ia, t.grad(self).cwiseProduct(sigmoid_values(t.value(ia))));
  });
}

template <typename Real>
Var<Real> sigmoid(const Var<Real>& a) {
  const int ia = a.id();
  return a.tape().record(sigmoid_values(a.value()), {a}, [ia](Tape<Real>& t, int self) {
    const auto& s = t.value(self).array();
    t.accumulate(ia, (t.grad(self).array() * s * (Real(1) - s)).matrix());
  });
}

/// min(1/a, cap); zero gradient where capped. Inputs must be positive.
template <typename Real>
Var<Real> reciprocal_capped(const Var<Real>& a, Real cap) {
  const int ia = a.id();
  Matrix<Real> v = a.value().array().inverse().min(cap).matrix();
  return a.tape().record(std::move(v), {a}, [ia, cap](Tape<Real>& t, int self) {
    const auto& y = t.value(self).array();
    t.accumulate(ia, (y < cap).select(-t.grad(self).array() * y * y, Real(0)).matrix());
  });
}

// ------------------------------------------------------------------- algebra

/// x W^T for x [N x k], W [m x k].
template <typename Real>
Var<Real> matmul_nt(const Var<Real>& x, const Var<Real>& w) {
  detail::require_same_tape(x, w);
  if (x.cols() != w.cols()) {
    fail("matmul_nt: shape mismatch [", x.rows(), "x", x.cols(), "] vs [", w.rows(), "x", w.cols(), "]");
  }
  const int ix = x.id(), iw = w.id();
  Matrix<Real> v = x.value() * w.value().transpose();
  return x.tape().record(std::move(v), {x, w}, [ix, iw](Tape<Real>& t, int self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ix)) t.accumulate(ix, g * t.value(iw));
    if (t.requires_grad(iw)) t.accumulate(iw, g.transpose() * t.value(ix));
  });
}

/// Affine map x W^T + b, b a [1 x m] row broadcast over the batch.
template <typename Real>
Var<Real> linear(const Var<Real>& x, const Var<Real>& w, const Var<Real>& b) {
  detail::require_same_tape(x, w);
  detail::require_same_tape(x, b);
  if (x.cols() != w.cols() || b.rows() != 1 || b.cols() != w.rows()) {
    fail("linear: shape mismatch input [", x.rows(), "x", x.cols(), "] weight [", w.rows(), "x", w.cols(), "] bias [",
         b.rows(), "x", b.cols(), "]");
  }
  const int ix = x.id(), iw = w.id(), ib = b.id();
  Matrix<Real> v = x.value() * w.value().transpose();
  v.rowwise() += b.value().row(0);
  return x.tape().record(std::move(v), {x, w, b}, [ix, iw, ib](Tape<Real>& t, int self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ix)) t.accumulate(ix, g * t.value(iw));
    if (t.requires_grad(iw)) t.accumulate(iw, g.transpose() * t.value(ix));
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

/// Row-wise dot product: [N x k], [N x k] -> [N x 1].
template <typename Real>
Var<Real> dot_rows(const Var<Real>& a, const Var<Real>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("dot_rows", a, b);
  const int ia = a.id(), ib = b.id();
  Matrix<Real> v = a.value().cwiseProduct(b.value()).rowwise().sum();
  return a.tape().record(std::move(v), {a, b}, [ia, ib](Tape<Real>& t, int self) {
    const auto g = t.grad(self).col(0);
    t.accumulate(ia, t.value(ib).array().colwise() * g.array());
    t.accumulate(ib, t.value(ia).array().colwise() * g.array());
  });
}

/// Scales row i of a [N x k] by s_i, s [N x 1].
template <typename Real>
Var<Real> scale_rows(const Var<Real>& a, const Var<Real>& s) {
  detail::require_same_tape(a, s);
  if (s.cols() != 1 || s.rows() != a.rows()) {
    fail("scale_rows: shape mismatch [", a.rows(), "x", a.cols(), "] vs [", s.rows(), "x", s.cols(), "]");
  }
  const int ia = a.id(), is = s.id();
  Matrix<Real> v = a.value().array().colwise() * s.value().col(0).array();
  return a.tape().record(std::move(v), {a, s}, [ia, is](Tape<Real>& t, int self) {
    const auto& g = t.grad(self);
    t.accumulate(ia, g.array().colwise() * t.value(is).col(0).array());
    t.accumulate(is, g.cwiseProduct(t.value(ia)).rowwise().sum());
  });
}

/// v / sqrt(|v|^2 + eps2) per row.
template <typename Real>
Var<Real> normalize_rows(const Var<Real>& a, Real eps2 = Real(1e-20)) {
  const int ia = a.id();
  const Matrix<Real> norms = (a.value().rowwise().squaredNorm().array() + eps2).sqrt().matrix();
  Matrix<Real> v = a.value().array().colwise() / norms.col(0).array();
  return a.tape().record(std::move(v), {a}, [ia, norms](Tape<Real>& t, int self) {
    // y = v / s with s = sqrt(|v|^2 + eps2): dv = (g - y (y.g)) / s.
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    const Matrix<Real> yg = y.cwiseProduct(g).rowwise().sum();
    const Matrix<Real> d = g - (y.array().colwise() * yg.col(0).array()).matrix();
    t.accumulate(ia, (d.array().colwise() / norms.col(0).array()).matrix());
  });
}

template <typename Real>
Var<Real> sum_rows(const Var<Real>& a) {
  const int ia = a.id();
  Matrix<Real> v = a.value().rowwise().sum();
  return a.tape().record(std::move(v), {a}, [ia](Tape<Real>& t, int self) {
    const auto cols = t.value(ia).cols();
    t.accumulate(ia, t.grad(self).col(0).replicate(1, cols));
  });
}

template <typename Real>
Var<Real> sum_all(const Var<Real>& a) {
  const int ia = a.id();
  Matrix<Real> v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape().record(std::move(v), {a}, [ia](Tape<Real>& t, int self) {
    const auto& x = t.value(ia);
    t.accumulate(ia, Matrix<Real>::Constant(x.rows(), x.cols(), t.grad(self)(0, 0)));
  });
}

template <typename Real>
Var<Real> mean_all(const Var<Real>& a) {
  return scale(sum_all(a), Real(1) / static_cast<Real>(a.value().size()));
}

// ----------------------------------------------------------------- structure

template <typename Real>
Var<Real> concat_cols(std::span<const Var<Real>> parts) {
  if (parts.empty()) fail("concat_cols: nothing to concatenate");
  const auto rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p);
    if (p.rows() != rows) {
      fail("concat_cols: row mismatch [", parts[0].rows(), "x", parts[0].cols(), "] vs [", p.rows(), "x", p.cols(), "]");
    }
    cols += p.cols();
  }
  Matrix<Real> v(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  bool needs = false;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    needs = needs || p.requires_grad();
    off += p.cols();
  }
  auto& tape = parts[0].tape();
  auto rule = [ids, offsets](Tape<Real>& t, int self) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto c = t.value(ids[i]).cols();
      t.accumulate(ids[i], t.grad(self).middleCols(offsets[i], c));
    }
  };
  // record() takes a fixed-arity list; emulate it for a dynamic one.
  if (!needs) return tape.constant(std::move(v));
  Var<Real> any_grad;
  for (const auto& p : parts)
    if (p.requires_grad()) any_grad = p;
  return tape.record(std::move(v), {any_grad}, std::move(rule));
}

template <typename Real>
Var<Real> concat_cols(std::initializer_list<Var<Real>> parts) {
  return concat_cols(std::span<const Var<Real>>(parts.begin(), parts.size()));
}

template <typename Real>
Var<Real> slice_cols(const Var<Real>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    fail("slice_cols: columns [", start, ", ", start + count, ") out of range for [", a.rows(), "x", a.cols(), "]");
  }
  const int ia = a.id();
  Matrix<Real> v = a.value().middleCols(start, count);
  return a.tape().record(std::move(v), {a}, [ia, start, count](Tape<Real>& t, int self) {
    const auto& x = t.value(ia);
    Matrix<Real> g = Matrix<Real>::Zero(x.rows(), x.cols());
    g.middleCols(start, count) = t.grad(self);
    t.accumulate(ia, g);
  });
}

/// Reinterprets the row-major storage with a new shape.
template <typename Real>
Var<Real> reshape(const Var<Real>& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) {
    fail("reshape: cannot view [", a.rows(), "x", a.cols(), "] as [", rows, "x", cols, "]");
  }
  const int ia = a.id();
  Matrix<Real> v = Eigen::Map<const Matrix<Real>>(a.value().data(), rows, cols);
  return a.tape().record(std::move(v), {a}, [ia](Tape<Real>& t, int self) {
    const auto& x = t.value(ia);
    t.accumulate(ia, Eigen::Map<const Matrix<Real>>(t.grad(self).data(), x.rows(), x.cols()));
  });
}

/// out[r] = sum_s w[r, s] * v[r*S + s], for w [R x S], v [R*S x k].
/// Same value, no gradient path back to a.
template <typename Real>
Var<Real> detach(const Var<Real>& a) {
  return a.tape().constant(a.value());
}

template <typename Real>
Var<Real> weighted_row_sum(const Var<Real>& w, const Var<Real>& v) {
  detail::require_same_tape(w, v);
  const auto R = w.rows(), S = w.cols(), K = v.cols();
  if (v.rows() != R * S) {
    fail("weighted_row_sum: shape mismatch weights [", R, "x", S, "] vs values [", v.rows(), "x", K, "]");
  }
  Matrix<Real> out(R, K);
  const auto& wv = w.value();
  const auto& vv = v.value();
  for (Eigen::Index r = 0; r < R; ++r) {
    out.row(r) = wv.row(r) * vv.middleRows(r * S, S);
  }
  const int iw = w.id(), iv = v.id();
  return w.tape().record(std::move(out), {w, v}, [iw, iv, R, S, K](Tape<Real>& t, int self) {
    const auto& g = t.grad(self);
    const auto& wv = t.value(iw);
    const auto& vv = t.value(iv);
    if (t.requires_grad(iw)) {
      Matrix<Real> gw(R, S);
      for (Eigen::Index r = 0; r < R; ++r) gw.row(r) = (vv.middleRows(r * S, S) * g.row(r).transpose()).transpose();
      t.accumulate(iw, gw);
    }
    if (t.requires_grad(iv)) {
      Matrix<Real> gv(R * S, K);
      for (Eigen::Index r = 0; r < R; ++r) gv.middleRows(r * S, S) = wv.row(r).transpose() * g.row(r);
      t.accumulate(iv, gv);
    }
  });
}

// ---------------------------------------------------------- feature encoding

/// Width of the sinusoidal encoding of a D-dimensional input.
inline Eigen::Index positional_encoding_width(Eigen::Index dims, int levels) { return dims * (1 + 2 * levels); }

/// [x, sin(2^0 x), cos(2^0 x), ..., sin(2^(L-1) x), cos(2^(L-1) x)] per row.
template <typename Real>
Matrix<Real> positional_encoding_values(const Matrix<Real>& x, int levels) {
  if (levels < 0) fail("positional_encoding: levels must be non-negative, got ", levels);
  const auto D = x.cols();
  Matrix<Real> out(x.rows(), positional_encoding_width(D, levels));
  out.leftCols(D) = x;
  Real freq = Real(1);
  for (int k = 0; k < levels; ++k, freq *= Real(2)) {
    const auto scaled = (x.array() * freq).eval();
    out.middleCols(D * (1 + 2 * k), D) = scaled.sin().matrix();
    out.middleCols(D * (2 + 2 * k), D) = scaled.cos().matrix();
  }
  return out;
}

/// Derivatives of the encoding w.r.t. each input coordinate, stacked
/// row-interleaved: row 3*i + j holds d enc(x_i) / d x_ij (3-D input).
template <typename Real>
Matrix<Real> positional_encoding_tangents(const Matrix<Real>& x, int levels) {
  const auto N = x.rows(), D = x.cols();
  Matrix<Real> out = Matrix<Real>::Zero(N * D, positional_encoding_width(D, levels));
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = 0; j < D; ++j) {
      auto row = out.row(i * D + j);
      row(j) = Real(1);
      Real freq = Real(1);
      for (int k = 0; k < levels; ++k, freq *= Real(2)) {
        const Real a = freq * x(i, j);
        row(D * (1 + 2 * k) + j) = freq * std::cos(a);
        row(D * (2 + 2 * k) + j) = -freq * std::sin(a);
      }
    }
  }
  return out;
}

template <typename Real>
Var<Real> positional_encoding(const Var<Real>& x, int levels) {
  const int ix = x.id();
  return x.tape().record(positional_encoding_values(x.value(), levels), {x}, [ix, levels](Tape<Real>& t, int self) {
    const auto& xv = t.value(ix);
    const auto& g = t.grad(self);
    const auto D = xv.cols();
    Matrix<Real> gx = g.leftCols(D);
    Real freq = Real(1);
    for (int k = 0; k < levels; ++k, freq *= Real(2)) {
      const auto scaled = (xv.array() * freq).eval();
      gx.array() += freq * (g.middleCols(D * (1 + 2 * k), D).array() * scaled.cos() -
                            g.middleCols(D * (2 + 2 * k), D).array() * scaled.sin());
    }
    t.accumulate(ix, gx);
  });
}

// ----------------------------------------------------------------- operators

template <typename Real>
Var<Real> operator+(const Var<Real>& a, const Var<Real>& b) {
  return add(a, b);
}
template <typename Real>
Var<Real> operator-(const Var<Real>& a, const Var<Real>& b) {
  return sub(a, b);
}
template <typename Real>
Var<Real> operator*(const Var<Real>& a, const Var<Real>& b) {
  return mul(a, b);
}
template <typename Real>
Var<Real> operator-(const Var<Real>& a) {
  return scale(a, Real(-1));
}

}  // namespace reflfield::ad
