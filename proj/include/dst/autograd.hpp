#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dst/tensor.hpp"

namespace dst {

/// A trainable tensor together with its gradient and the two Adam moments.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;  // first moment
  Tensor v;  // second moment
  std::size_t steps = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor init)
      : name(std::move(n)),
        value(std::move(init)),
        grad(value.shape()),
        m(value.shape()),
        v(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape scoped to one forward/backward pass. Nodes are appended in
/// creation order, which is already a topological order, so backward simply
/// walks the vector in reverse.
class Tape {
 public:
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// Leaf bound to a parameter without copying its value. On a recording tape
  /// backward() accumulates into the parameter's grad field. Repeated calls
  /// return the same node.
  Var param(const Parameter& p) {
    if (auto it = params_.find(&p); it != params_.end()) return Var{this, it->second};
    nodes_.push_back(Node{Tensor{}, Tensor{}, record_, nullptr, nullptr, &p.value});
    if (record_) nodes_.back().param = const_cast<Parameter*>(&p);
    params_.emplace(&p, nodes_.size() - 1);
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient buffer of a node, allocated on first touch.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    const Tensor& v = value(id);
    if (n.grad.size() != v.size() || n.grad.empty()) n.grad = Tensor(v.shape());
    return n.grad;
  }

  /// Records a derived node. `backward` receives the output gradient and must
  /// accumulate into the inputs' gradients through `grad(id)`.
  Var push(Tensor value, bool needs_grad, std::function<void(const Tensor&)> backward) {
    nodes_.push_back(Node{std::move(value), Tensor{}, needs_grad && record_,
                          record_ ? std::move(backward) : nullptr, nullptr, nullptr});
    return Var{this, nodes_.size() - 1};
  }

  /// Seeds d(root)/d(root) = 1 for a scalar root, propagates, then accumulates
  /// leaf gradients into their Parameters.
  void backward(Var root) {
    if (!record_) throw NumericError("backward called on a non-recording tape");
    if (value(root.id).size() != 1) throw ShapeError("backward root must be a scalar");
    grad(root.id)[0] = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(n.grad);
      if (n.param) n.param->grad += n.grad;
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad;
    std::function<void(const Tensor&)> backward;
    Parameter* param;
    const Tensor* external;
  };
  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> params_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace ops {

namespace detail {
inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}
inline bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs)
    if (v.tape->needs_grad(v.id)) return true;
  return false;
}
}  // namespace detail

/// x[N x A] * w[A x B]
inline Var matmul(Var x, Var w) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  detail::require_matrix(xv, "matmul");
  detail::require_matrix(wv, "matmul");
  if (xv.dim(1) != wv.dim(0))
    throw ShapeError("matmul: inner dimensions differ " + shape_str(xv.shape()) + " * " +
                     shape_str(wv.shape()));
  const std::size_t n = xv.dim(0), a = xv.dim(1), b = wv.dim(1);
  Tensor out({n, b});
  kernel::gemm_nn(xv.ptr(), wv.ptr(), out.ptr(), n, a, b);
  Tape* t = x.tape;
  return t->push(std::move(out), detail::any_grad({x, w}), [t, x, w, n, a, b](const Tensor& g) {
    if (t->needs_grad(x.id)) {
      // dX = G * W^T
      kernel::gemm_nt(g.ptr(), t->value(w.id).ptr(), t->grad(x.id).ptr(), n, a, b);
    }
    if (t->needs_grad(w.id)) {
      // dW = X^T * G
      kernel::gemm_tn(t->value(x.id).ptr(), g.ptr(), t->grad(w.id).ptr(), n, a, b);
    }
  });
}

/// x[N x D] * y[M x D]^T
inline Var matmul_nt(Var x, Var y) {
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  detail::require_matrix(xv, "matmul_nt");
  detail::require_matrix(yv, "matmul_nt");
  if (xv.dim(1) != yv.dim(1))
    throw ShapeError("matmul_nt: widths differ " + shape_str(xv.shape()) + " vs " +
                     shape_str(yv.shape()));
  const std::size_t n = xv.dim(0), m = yv.dim(0), d = xv.dim(1);
  Tensor out({n, m});
  kernel::gemm_nt(xv.ptr(), yv.ptr(), out.ptr(), n, m, d);
  Tape* t = x.tape;
  return t->push(std::move(out), detail::any_grad({x, y}), [t, x, y, n, m, d](const Tensor& g) {
    if (t->needs_grad(x.id)) kernel::gemm_nn(g.ptr(), t->value(y.id).ptr(), t->grad(x.id).ptr(), n, m, d);
    if (t->needs_grad(y.id)) kernel::gemm_tn(g.ptr(), t->value(x.id).ptr(), t->grad(y.id).ptr(), n, m, d);
  });
}

inline Var add(Var a, Var b) {
  a.value().require_same_shape(b.value(), "add");
  Tensor out = a.value() + b.value();
  Tape* t = a.tape;
  return t->push(std::move(out), detail::any_grad({a, b}), [t, a, b](const Tensor& g) {
    if (t->needs_grad(a.id)) t->grad(a.id) += g;
    if (t->needs_grad(b.id)) t->grad(b.id) += g;
  });
}

/// x[N x B] + bias broadcast over rows; bias has B elements.
inline Var add_row_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "add_row_bias");
  const std::size_t n = xv.dim(0), b = xv.dim(1);
  if (bias.value().size() != b)
    throw ShapeError("add_row_bias: bias has " + std::to_string(bias.value().size()) +
                     " entries, expected " + std::to_string(b));
  Tensor out = xv;
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < b; ++j) out[i * b + j] += bv[j];
  Tape* t = x.tape;
  return t->push(std::move(out), detail::any_grad({x, bias}), [t, x, bias, n, b](const Tensor& g) {
    if (t->needs_grad(x.id)) t->grad(x.id) += g;
    if (t->needs_grad(bias.id)) {
      Tensor& gb = t->grad(bias.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < b; ++j) gb[j] += g[i * b + j];
    }
  });
}

/// y = x W (+ bias). Rejects mismatched inner dimensions.
inline Var linear(Var x, Var weight, const Var* bias = nullptr) {
  Var y = matmul(x, weight);
  return bias ? add_row_bias(y, *bias) : y;
}

inline Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  Tape* t = x.tape;
  return t->push(std::move(out), detail::any_grad({x}), [t, x](const Tensor& g) {
    const Tensor& xv = t->value(x.id);
    Tensor& gx = t->grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

inline Var scale(Var x, double s) {
  Tensor out = x.value() * s;
  Tape* t = x.tape;
  return t->push(std::move(out), detail::any_grad({x}), [t, x, s](const Tensor& g) {
    Tensor& gx = t->grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

/// Adds a constant tensor of the same shape.
inline Var add_const(Var x, const Tensor& c) {
  Tensor out = x.value() + c;
  Tape* t = x.tape;
  return t->push(std::move(out), detail::any_grad({x}), [t, x](const Tensor& g) { t->grad(x.id) += g; });
}

/// Multiplies row r of x[R x C] by the constant factor[r].
inline Var mul_rows(Var x, std::vector<double> factor) {
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "mul_rows");
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  if (factor.size() != r) throw ShapeError("mul_rows: factor length differs from row count");
  Tensor out = xv;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= factor[i];
  Tape* t = x.tape;
  return t->push(std::move(out), detail::any_grad({x}),
                 [t, x, r, c, f = std::move(factor)](const Tensor& g) {
                   Tensor& gx = t->grad(x.id);
                   for (std::size_t i = 0; i < r; ++i)
                     for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += f[i] * g[i * c + j];
                 });
}

inline Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  Tape* t = x.tape;
  return t->push(std::move(out), detail::any_grad({x}), [t, x](const Tensor& g) {
    Tensor& gx = t->grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// Stacks matrices with equal column counts. The same Var may appear several times.
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape* t = parts.front().tape;
  const std::size_t cols = parts.front().value().dim(1);
  std::size_t rows = 0;
  bool need = false;
  for (const Var& p : parts) {
    detail::require_matrix(p.value(), "concat_rows");
    if (p.value().dim(1) != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.value().dim(0);
    need = need || t->needs_grad(p.id);
  }
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  return t->push(std::move(out), need, [t, parts](const Tensor& g) {
    std::size_t o = 0;
    for (const Var& p : parts) {
      const std::size_t n = t->value(p.id).size();
      if (t->needs_grad(p.id)) {
        Tensor& gp = t->grad(p.id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[o + i];
      }
      o += n;
    }
  });
}

inline Var select_rows(Var x, std::vector<std::size_t> rows) {
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "select_rows");
  const std::size_t c = xv.dim(1);
  Tensor out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.dim(0)) throw ShapeError("select_rows: row index out of range");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[rows[i] * c + j];
  }
  Tape* t = x.tape;
  return t->push(std::move(out), detail::any_grad({x}), [t, x, c, r = std::move(rows)](const Tensor& g) {
    Tensor& gx = t->grad(x.id);
    for (std::size_t i = 0; i < r.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) gx[r[i] * c + j] += g[i * c + j];
  });
}

inline Var transpose(Var x) {
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "transpose");
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  Tape* t = x.tape;
  return t->push(std::move(out), detail::any_grad({x}), [t, x, r, c](const Tensor& g) {
    Tensor& gx = t->grad(x.id);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

/// Column partition for grouped_softmax. `group[j]` labels column j; a negative
/// label drops the column entirely. `allowed`, when set, additionally removes
/// individual (row, column) entries, e.g. keys from the query's own frame.
struct ColumnGroups {
  std::vector<int> group;
  std::function<bool(std::size_t row, std::size_t col)> allowed;
};

/// Softmax taken separately over each group of columns within each row.
/// Entries excluded from every group are exactly zero. A group with no
/// permitted entries in a row simply contributes nothing to that row.
inline Tensor grouped_softmax_values(const Tensor& logits, const ColumnGroups& groups) {
  detail::require_matrix(logits, "grouped_softmax");
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  if (groups.group.size() != m) throw ShapeError("grouped_softmax: one group label per column required");
  int max_group = -1;
  for (int g : groups.group) max_group = std::max(max_group, g);
  const std::size_t ng = static_cast<std::size_t>(max_group + 1);
  Tensor out({n, m});
  std::vector<double> gmax(ng), gsum(ng);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(gmax.begin(), gmax.end(), -std::numeric_limits<double>::infinity());
    std::fill(gsum.begin(), gsum.end(), 0.0);
    auto on = [&](std::size_t j) {
      return groups.group[j] >= 0 && (!groups.allowed || groups.allowed(i, j));
    };
    for (std::size_t j = 0; j < m; ++j)
      if (on(j)) {
        auto g = static_cast<std::size_t>(groups.group[j]);
        gmax[g] = std::max(gmax[g], logits[i * m + j]);
      }
    for (std::size_t j = 0; j < m; ++j)
      if (on(j)) {
        auto g = static_cast<std::size_t>(groups.group[j]);
        const double e = std::exp(logits[i * m + j] - gmax[g]);
        out[i * m + j] = e;
        gsum[g] += e;
      }
    for (std::size_t j = 0; j < m; ++j)
      if (on(j)) out[i * m + j] /= gsum[static_cast<std::size_t>(groups.group[j])];
  }
  return out;
}

inline Var grouped_softmax(Var logits, ColumnGroups groups) {
  Tensor out = grouped_softmax_values(logits.value(), groups);
  Tape* t = logits.tape;
  const std::size_t n = out.dim(0), m = out.dim(1);
  // Keep only the output; the backward pass needs y, not the logits.
  auto y = std::make_shared<Tensor>(out);
  return t->push(std::move(out), detail::any_grad({logits}),
                 [t, logits, y, n, m, grp = std::move(groups.group)](const Tensor& g) {
                   Tensor& gx = t->grad(logits.id);
                   int max_group = -1;
                   for (int k : grp) max_group = std::max(max_group, k);
                   std::vector<double> dot(static_cast<std::size_t>(max_group + 1));
                   for (std::size_t i = 0; i < n; ++i) {
                     std::fill(dot.begin(), dot.end(), 0.0);
                     for (std::size_t j = 0; j < m; ++j)
                       if (grp[j] >= 0) dot[static_cast<std::size_t>(grp[j])] += (*y)[i * m + j] * g[i * m + j];
                     for (std::size_t j = 0; j < m; ++j)
                       if (grp[j] >= 0) {
                         const double yj = (*y)[i * m + j];
                         // excluded entries have y == 0 and receive no gradient
                         gx[i * m + j] += yj * (g[i * m + j] - dot[static_cast<std::size_t>(grp[j])]);
                       }
                   }
                 });
}

/// Sum of all entries, as a 1-element tensor.
inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  Tape* t = x.tape;
  return t->push(Tensor({1}, {s}), detail::any_grad({x}), [t, x](const Tensor& g) {
    Tensor& gx = t->grad(x.id);
    for (double& v : gx.data()) v += g[0];
  });
}

/// (1/R^2) * sum (target - pred)^2 where R is the row count of pred.
inline Var mse_rows_squared(Var pred, const Tensor& target) {
  const Tensor& p = pred.value();
  detail::require_matrix(p, "mse");
  p.require_same_shape(target, "mse");
  const double denom = static_cast<double>(p.dim(0)) * static_cast<double>(p.dim(0));
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - target[i];
    s += d * d;
  }
  Tape* t = pred.tape;
  return t->push(Tensor({1}, {s / denom}), detail::any_grad({pred}), [t, pred, target, denom](const Tensor& g) {
    const Tensor& pv = t->value(pred.id);
    Tensor& gp = t->grad(pred.id);
    for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += g[0] * 2.0 * (pv[i] - target[i]) / denom;
  });
}

inline constexpr double kProbabilityFloor = 1e-12;

/// -sum target * log(max(pred, floor)). `clamped` counts floored entries that
/// carried target mass (the caller decides whether to warn).
inline Var neg_log_likelihood(Var pred, const Tensor& target, std::size_t* clamped = nullptr) {
  const Tensor& p = pred.value();
  p.require_same_shape(target, "neg_log_likelihood");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (target[i] == 0.0) continue;
    double q = p[i];
    if (q < kProbabilityFloor) {
      q = kProbabilityFloor;
      if (clamped) ++*clamped;
    }
    s -= target[i] * std::log(q);
  }
  Tape* t = pred.tape;
  return t->push(Tensor({1}, {s}), detail::any_grad({pred}), [t, pred, target](const Tensor& g) {
    const Tensor& pv = t->value(pred.id);
    Tensor& gp = t->grad(pred.id);
    for (std::size_t i = 0; i < pv.size(); ++i)
      if (target[i] != 0.0 && pv[i] >= kProbabilityFloor) gp[i] -= g[0] * target[i] / pv[i];
  });
}

}  // namespace ops

/// Central-difference gradient of a scalar function, one coordinate at a time.
inline Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                   double eps) {
  if (!(eps > 0.0)) throw NumericError("finite_diff_gradient: eps must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(probe);
    probe[i] = orig - eps;
    const double fm = f(probe);
    probe[i] = orig;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

}  // namespace dst
