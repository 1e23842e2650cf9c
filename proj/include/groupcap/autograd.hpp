#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records every operation of one forward pass. Nodes are appended in
// evaluation order, so node index order is a topological order and backward
// is a single reverse sweep. Parameters enter the tape as cached leaves; their
// gradients are added into Parameter::grad at the end of each backward call.

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "groupcap/errors.hpp"
#include "groupcap/matrix.hpp"

namespace groupcap {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad.fill(0.0); }
};

/// Named, insertion-ordered parameter collection. Addresses are stable, so
/// layers may hold raw Parameter pointers for the lifetime of the store.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Parameter& add(std::string name, Matrix value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value)));
    return *params_.back();
  }

  Parameter* find(std::string_view name) {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  Parameter& at(std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw ConfigError("unknown parameter: " + std::string(name));
  }
  const Parameter& at(std::string_view name) const {
    if (const auto* p = find(name)) return *p;
    throw ConfigError("unknown parameter: " + std::string(name));
  }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform initialization in [-s, s] with s = 1/sqrt(fan_in).
inline Matrix uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-s, s);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = dist(rng);
  return m;
}

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input that never receives gradient.
  Var constant(Matrix value) { return push("const", std::move(value), {}, false, nullptr); }

  /// Leaf whose gradient is readable through grad() after backward.
  Var variable(Matrix value) { return push("var", std::move(value), {}, true, nullptr); }

  /// Leaf bound to a Parameter; one node per parameter per tape.
  Var param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var(this, it->second);
    Var v = push("param", p.value, {}, true, nullptr);
    nodes_[v.id()].param = &p;
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  /// Appends an interior node. `back` is dropped when no parent needs gradient.
  Var record(std::string_view op, Matrix value, std::initializer_list<Var> parents, Backward back) {
    std::vector<std::size_t> ids;
    ids.reserve(parents.size());
    for (const Var& p : parents) ids.push_back(check_owner(p));
    return record(op, std::move(value), std::move(ids), std::move(back));
  }
  Var record(std::string_view op, Matrix value, std::vector<std::size_t> parents, Backward back) {
    bool needs = false;
    for (std::size_t id : parents) needs = needs || nodes_[id].requires_grad;
    return push(op, std::move(value), std::move(parents), needs, needs ? std::move(back) : nullptr);
  }

  const Matrix& value(Var v) const { return nodes_[check_owner(v)].value; }
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  std::string_view op(Var v) const { return nodes_[check_owner(v)].op; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward root w.r.t. this node (zeros if unreached).
  Matrix grad(Var v) const {
    const Node& n = nodes_[check_owner(v)];
    if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Mutable gradient accumulator of node `id`, allocated on first touch.
  Matrix& grad_acc(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }
  const Matrix& upstream(std::size_t id) const { return nodes_[id].grad; }

  std::size_t check_owner(Var v) const {
    if (v.tape_ != this) throw ContractError("Var belongs to a different tape");
    return v.id_;
  }

  /// Propagates d(root)/d(node) to every reachable node and adds the
  /// result into each reachable Parameter::grad.
  void backward(Var root) {
    const std::size_t rid = check_owner(root);
    const Matrix& rv = nodes_[rid].value;
    if (rv.rows() != 1 || rv.cols() != 1) {
      throw ContractError("backward: root must be 1x1, got " + rv.shape());
    }
    for (auto& n : nodes_) n.grad = Matrix();
    grad_acc(rid)[0] = 1.0;
    for (std::size_t i = rid + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.back) n.back(*this, i);
    }
    for (auto& n : nodes_) {
      if (n.param && !n.grad.empty()) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

  /// Hash of which ReLU units are active. Two evaluations with equal
  /// signatures lie on the same linear piece of every ReLU.
  std::uint64_t relu_signature() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const Node& n : nodes_) {
      if (n.op != "relu") continue;
      for (double v : n.value.values()) h = (h ^ (v > 0.0 ? 0x9eU : 0x35U)) * 1099511628211ULL;
    }
    return h;
  }

 private:
  struct Node {
    std::string_view op;
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> parents;
    Backward back;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(std::string_view op, Matrix value, std::vector<std::size_t> parents, bool needs, Backward back) {
    nodes_.push_back(Node{op, std::move(value), Matrix(), std::move(parents), std::move(back), nullptr, needs});
    return Var(this, nodes_.size() - 1);
  }

  // deque keeps references returned by value() valid while the tape grows
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Matrix& Var::value() const {
  if (!tape_) throw ContractError("Var: empty handle");
  return tape_->value(*this);
}

// ---------------------------------------------------------------------------
// Operations

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: " + av.shape() + " x " + bv.shape());
  }
  Matrix out(av.rows(), bv.cols());
  kernels::gemm_acc(av, false, bv, false, out);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("matmul", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.requires_grad(ia)) kernels::gemm_acc(g, false, tp.value(ib), true, tp.grad_acc(ia));
    if (tp.requires_grad(ib)) kernels::gemm_acc(tp.value(ia), true, g, false, tp.grad_acc(ib));
  });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: " + av.shape() + " x (" + bv.shape() + ")^T");
  }
  Matrix out(av.rows(), bv.rows());
  kernels::gemm_acc(av, false, bv, true, out);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("matmul_nt", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.requires_grad(ia)) kernels::gemm_acc(g, false, tp.value(ib), false, tp.grad_acc(ia));
    if (tp.requires_grad(ib)) kernels::gemm_acc(g, true, tp.value(ia), false, tp.grad_acc(ib));
  });
}

namespace detail {

template <class Fwd, class Dfdx>
Var unary(Var x, std::string_view op, Fwd fwd, Dfdx dfdx) {
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const std::size_t ix = x.id();
  // dfdx receives (input, output)
  return t.record(op, std::move(out), {x}, [ix, dfdx](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    const Matrix& in = tp.value(ix);
    const Matrix& y = tp.value(self);
    Matrix& gx = tp.grad_acc(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(in[i], y[i]);
  });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  Matrix::require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  out += b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("add", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.requires_grad(ia)) tp.grad_acc(ia) += g;
    if (tp.requires_grad(ib)) tp.grad_acc(ib) += g;
  });
}

inline Var sub(Var a, Var b) {
  Matrix::require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("sub", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.requires_grad(ia)) tp.grad_acc(ia) += g;
    if (tp.requires_grad(ib)) {
      Matrix& gb = tp.grad_acc(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

/// Elementwise (Hadamard) product.
inline Var mul(Var a, Var b) {
  Matrix::require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("mul", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.requires_grad(ia)) {
      Matrix& ga = tp.grad_acc(ia);
      const Matrix& bv2 = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (tp.requires_grad(ib)) {
      Matrix& gb = tp.grad_acc(ib);
      const Matrix& av2 = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
    }
  });
}

inline Var scale(Var x, double c) {
  return detail::unary(x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var neg(Var x) {
  return detail::unary(x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

// Subgradient 0 at exactly 0.
inline Var relu(Var x) {
  return detail::unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Var x) {
  return detail::unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var x) {
  return detail::unary(
      x, "sigmoid", [](double v) { return kernels::sigmoid(v); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return neg(a); }

/// x (n x m) + r (1 x m), r added to every row.
inline Var broadcast_add_rowvec(Var x, Var r) {
  Matrix out = x.value();
  kernels::add_rowvec_inplace(out, r.value());
  const std::size_t ix = x.id(), ir = r.id();
  return x.tape()->record("broadcast_add_rowvec", std::move(out), {x, r}, [ix, ir](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.requires_grad(ix)) tp.grad_acc(ix) += g;
    if (tp.requires_grad(ir)) {
      Matrix& gr = tp.grad_acc(ir);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
    }
  });
}

/// x * w + b, with b a row vector.
inline Var affine(Var x, Var w, Var b) { return broadcast_add_rowvec(matmul(x, w), b); }

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  Tape& t = *parts.front().tape();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + parts.front().value().shape() + " vs " +
                           p.value().shape());
    }
    rows += p.rows();
    ids.push_back(t.check_owner(p));
  }
  Matrix out(rows, cols);
  std::size_t r0 = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    std::copy(v.values().begin(), v.values().end(), out.data() + r0 * cols);
    r0 += v.rows();
  }
  auto ids_copy = ids;
  return t.record("concat_rows", std::move(out), std::move(ids), [ids_copy](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    std::size_t off = 0;
    for (std::size_t id : ids_copy) {
      const std::size_t n = tp.value(id).size();
      if (tp.requires_grad(id)) {
        Matrix& gi = tp.grad_acc(id);
        for (std::size_t i = 0; i < n; ++i) gi[i] += g[off + i];
      }
      off += n;
    }
  });
}
inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  Tape& t = *parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + parts.front().value().shape() + " vs " +
                           p.value().shape());
    }
    cols += p.cols();
    ids.push_back(t.check_owner(p));
  }
  Matrix out(rows, cols);
  std::size_t c0 = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, c0 + c) = v(r, c);
    c0 += v.cols();
  }
  auto ids_copy = ids;
  return t.record("concat_cols", std::move(out), std::move(ids), [ids_copy](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    std::size_t c0b = 0;
    for (std::size_t id : ids_copy) {
      const std::size_t w = tp.value(id).cols();
      if (tp.requires_grad(id)) {
        Matrix& gi = tp.grad_acc(id);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) gi(r, c) += g(r, c0b + c);
      }
      c0b += w;
    }
  });
}
inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Matrix& xv = x.value();
  if (count == 0 || begin + count > xv.rows()) {
    throw IndexError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of bounds for " + xv.shape());
  }
  const std::size_t cols = xv.cols();
  Matrix out(count, cols,
             std::vector<double>(xv.data() + begin * cols, xv.data() + (begin + count) * cols));
  const std::size_t ix = x.id();
  return x.tape()->record("slice_rows", std::move(out), {x}, [ix, begin](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    Matrix& gx = tp.grad_acc(ix);
    const std::size_t off = begin * g.cols();
    for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
  });
}

inline Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Matrix& xv = x.value();
  if (count == 0 || begin + count > xv.cols()) {
    throw IndexError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of bounds for " + xv.shape());
  }
  Matrix out(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = xv(r, begin + c);
  const std::size_t ix = x.id();
  return x.tape()->record("slice_cols", std::move(out), {x}, [ix, begin](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    Matrix& gx = tp.grad_acc(ix);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, begin + c) += g(r, c);
  });
}

/// Column-wise mean, n x m -> 1 x m.
inline Var mean_rows(Var x) {
  const Matrix& xv = x.value();
  Matrix out(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out[c] += xv(r, c);
  const double inv = 1.0 / static_cast<double>(xv.rows());
  for (auto& v : out.values()) v *= inv;
  const std::size_t ix = x.id();
  return x.tape()->record("mean_rows", std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    Matrix& gx = tp.grad_acc(ix);
    const double w = 1.0 / static_cast<double>(gx.rows());
    for (std::size_t r = 0; r < gx.rows(); ++r)
      for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += w * g[c];
  });
}

/// Sum of every entry, -> 1 x 1.
inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t ix = x.id();
  return x.tape()->record("sum", Matrix(1, 1, s), {x}, [ix](Tape& tp, std::size_t self) {
    const double g = tp.upstream(self)[0];
    for (auto& v : tp.grad_acc(ix).values()) v += g;
  });
}

/// Rows of `table` selected by `ids` (embedding lookup).
inline Var gather_rows(Var table, std::vector<std::size_t> ids) {
  const Matrix& tv = table.value();
  Matrix out(ids.size(), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " >= " + std::to_string(tv.rows()));
    }
    std::copy(tv.row(ids[i]).begin(), tv.row(ids[i]).end(), out.row(i).begin());
  }
  const std::size_t it = table.id();
  return table.tape()->record("gather_rows", std::move(out), {table},
                              [it, ids = std::move(ids)](Tape& tp, std::size_t self) {
                                const Matrix& g = tp.upstream(self);
                                Matrix& gt = tp.grad_acc(it);
                                for (std::size_t i = 0; i < ids.size(); ++i) {
                                  auto dst = gt.row(ids[i]);
                                  auto src = g.row(i);
                                  for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                                }
                              });
}

inline constexpr double kMaskedLogit = -1e30;

/// Row-wise softmax with max-subtraction. Masked cells (mask false) get
/// -1e30 added before normalization and come out exactly 0.
inline Var row_softmax(Var x, const Mask* mask = nullptr) {
  const Matrix& xv = x.value();
  if (mask && (mask->rows() != xv.rows() || mask->cols() != xv.cols())) {
    throw DimensionError("row_softmax: mask " + Matrix::shape_string(mask->rows(), mask->cols()) +
                         " vs input " + xv.shape());
  }
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    if (mask) {
      bool any = false;
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (mask->allowed(r, c)) {
          any = true;
        } else {
          row[c] += kMaskedLogit;
        }
      }
      if (!any) throw DegenerateMaskError("row_softmax: row " + std::to_string(r) + " is fully masked");
    }
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      s += v;
    }
    for (auto& v : row) v /= s;
  }
  const std::size_t ix = x.id();
  return x.tape()->record("row_softmax", std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    const Matrix& y = tp.value(self);
    Matrix& gx = tp.grad_acc(ix);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits),
/// over positions whose `ignore` flag is false.
inline Var cross_entropy_from_logits(Var logits, const std::vector<std::size_t>& targets,
                                     const std::vector<bool>& ignore) {
  const Matrix& lv = logits.value();
  if (targets.size() != lv.rows() || ignore.size() != lv.rows()) {
    throw DimensionError("cross_entropy_from_logits: " + std::to_string(targets.size()) + " targets, " +
                         std::to_string(ignore.size()) + " mask entries for logits " + lv.shape());
  }
  std::size_t active = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (ignore[i]) continue;
    if (targets[i] >= lv.cols()) {
      throw IndexError("cross_entropy_from_logits: target " + std::to_string(targets[i]) + " >= vocab " +
                       std::to_string(lv.cols()));
    }
    ++active;
  }
  if (active == 0) throw EmptyLossError("cross_entropy_from_logits: every position is masked");

  Matrix probs(lv.rows(), lv.cols());
  double loss = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (ignore[r]) continue;
    kernels::log_softmax_row(lv.row(r), probs.row(r));
    loss -= probs(r, targets[r]);
    for (auto& v : probs.row(r)) v = std::exp(v);
  }
  const double inv = 1.0 / static_cast<double>(active);
  loss *= inv;
  const std::size_t il = logits.id();
  return logits.tape()->record(
      "cross_entropy", Matrix(1, 1, loss), {logits},
      [il, inv, targets, ignore, probs = std::move(probs)](Tape& tp, std::size_t self) {
        const double g = tp.upstream(self)[0] * inv;
        Matrix& gl = tp.grad_acc(il);
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          if (ignore[r]) continue;
          for (std::size_t c = 0; c < probs.cols(); ++c) {
            gl(r, c) += g * (probs(r, c) - (c == targets[r] ? 1.0 : 0.0));
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Finite-difference verification

/// Central-difference gradient check. `f` builds a scalar on a fresh tape
/// from the current parameter values. Returns the max over coordinates of
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|). Coordinates
/// whose +/- step moves some ReLU across its kink have no meaningful
/// central difference; they are skipped and counted in `kinks` when given.
template <class F>
double grad_check(F&& f, std::span<Parameter* const> params, double step = 1e-4, std::size_t* kinks = nullptr) {
  for (Parameter* p : params) p->zero_grad();
  std::uint64_t base_signature = 0;
  {
    Tape tape;
    Var loss = f(tape);
    base_signature = tape.relu_signature();
    tape.backward(loss);
  }
  double worst = 0.0;
  std::size_t skipped = 0;
  for (Parameter* p : params) {
    const Matrix analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      double fp = 0.0, fm = 0.0;
      bool kinked = false;
      {
        Tape tp;
        fp = f(tp).value()[0];
        kinked |= tp.relu_signature() != base_signature;
      }
      p->value[i] = saved - step;
      {
        Tape tm;
        fm = f(tm).value()[0];
        kinked |= tm.relu_signature() != base_signature;
      }
      p->value[i] = saved;
      if (kinked) {
        ++skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  if (kinks) *kinks = skipped;
  return worst;
}

template <class F>
double grad_check(F&& f, std::initializer_list<Parameter*> params, double step = 1e-4, std::size_t* kinks = nullptr) {
  return grad_check(std::forward<F>(f), std::span<Parameter* const>(params.begin(), params.size()), step, kinks);
}

}  // namespace groupcap
