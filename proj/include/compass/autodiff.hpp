// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense double tensors.
// Graphs are built dynamically; every operation validates that its output
// is finite and backward() propagates into every reachable leaf that
// requires gradients. Gradients accumulate additively across uses.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "compass/tensor.hpp"

namespace compass {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_ready = false;
  std::string label;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backprop;

  Tensor& ensure_grad() {
    if (!grad_ready) {
      grad = Tensor(value.shape());
      grad_ready = true;
    }
    return grad;
  }
};

// Lightweight handle. Copies share the node, so using the same Var twice in
// an expression accumulates both path gradients.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : n_(std::move(n)) {}

  static Var leaf(Tensor v, bool requires_grad, std::string label) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    n->label = std::move(label);
    return Var(n);
  }
  static Var constant(Tensor v, std::string label = "const") {
    return leaf(std::move(v), false, std::move(label));
  }
  static Var constant(double v, std::string label = "const") {
    return leaf(Tensor::scalar(v), false, std::move(label));
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor& value() const { return n_->value; }
  Tensor& value() { return n_->value; }
  const Tensor& grad() const { return n_->grad; }
  bool grad_ready() const { return n_->grad_ready; }
  bool requires_grad() const { return n_->requires_grad; }
  const std::string& label() const { return n_->label; }
  void set_label(std::string l) { n_->label = std::move(l); }
  NodePtr node() const { return n_; }

 private:
  NodePtr n_;
};

namespace detail {

inline void check_finite(const Tensor& t, const std::string& label) {
  const double* p = t.data();
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i]))
      fail(cat("non-finite value produced by node '", label, "'"));
  }
}

inline Var make_node(std::string label, Tensor value, std::vector<NodePtr> parents,
                     std::function<void(Node&)> backprop) {
  check_finite(value, label);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->label = std::move(label);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Var(n);
}

// Suffix broadcast: b's shape must equal the trailing dims of a's shape
// (a scalar b, shape {}, broadcasts against anything).
inline bool suffix_broadcastable(const Tensor& a, const Tensor& b) {
  if (b.rank() > a.rank()) return false;
  int off = a.rank() - b.rank();
  for (int i = 0; i < b.rank(); ++i)
    if (a.dim(off + i) != b.dim(i)) return false;
  return true;
}

struct AxisSplit {
  int64_t outer, axis, inner;
};

inline AxisSplit split_axis(const std::vector<int>& shape, int axis) {
  check(axis >= 0 && axis < static_cast<int>(shape.size()),
        cat("axis ", axis, " out of range for shape ", shape_str(shape)));
  AxisSplit s{1, shape[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  return s;
}

// C[m,n] += A[m,k] * B[k,n]
inline void mm_nn(const double* a, const double* b, double* c, int64_t m,
                  int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (int64_t t = 0; t < k; ++t) {
      double av = ai[t];
      const double* bt = b + t * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bt[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
inline void mm_nt(const double* a, const double* b, double* c, int64_t m,
                  int64_t n, int64_t k) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * k;
    for (int64_t t = 0; t < k; ++t) {
      const double* bt = b + t * n;
      double s = 0.0;
      for (int64_t j = 0; j < n; ++j) s += ai[j] * bt[j];
      ci[t] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
inline void mm_tn(const double* a, const double* b, double* c, int64_t m,
                  int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (int64_t t = 0; t < k; ++t) {
      double av = ai[t];
      double* ct = c + t * n;
      for (int64_t j = 0; j < n; ++j) ct[j] += av * bi[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd, typename BwdA, typename BwdB>
Var broadcast_binary(const char* opname, const Var& a, const Var& b, Fwd fwd,
                     BwdA bwd_a, BwdB bwd_b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check(suffix_broadcastable(av, bv),
        cat(opname, ": shape ", shape_str(bv), " does not suffix-broadcast to ",
            shape_str(av)));
  Tensor out(av.shape());
  int64_t n = av.numel(), bn = bv.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i % bn]);
  return make_node(
      opname, std::move(out), {a.node(), b.node()},
      [bwd_a, bwd_b](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const Tensor& g = self.grad;
        int64_t n2 = g.numel(), bn2 = pb.value.numel();
        if (pa.requires_grad) {
          Tensor& ga = pa.ensure_grad();
          for (int64_t i = 0; i < n2; ++i)
            ga[i] += bwd_a(g[i], pa.value[i], pb.value[i % bn2]);
        }
        if (pb.requires_grad) {
          Tensor& gb = pb.ensure_grad();
          for (int64_t i = 0; i < n2; ++i)
            gb[i % bn2] += bwd_b(g[i], pa.value[i], pb.value[i % bn2]);
        }
      });
}

template <typename Fwd, typename Bwd>
Var unary(const char* opname, const Var& a, Fwd fwd, Bwd bwd) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  int64_t n = av.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  return make_node(opname, std::move(out), {a.node()}, [bwd](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    Tensor& ga = pa.ensure_grad();
    const Tensor& g = self.grad;
    int64_t n2 = g.numel();
    for (int64_t i = 0; i < n2; ++i)
      ga[i] += bwd(g[i], pa.value[i], self.value[i]);
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  return detail::broadcast_binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::broadcast_binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::broadcast_binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

inline Var scale(const Var& a, double c) {
  return detail::unary("scale", a, [c](double x) { return c * x; },
                       [c](double g, double, double) { return c * g; });
}

inline Var add_scalar(const Var& a, double c) {
  return detail::unary("add_scalar", a, [c](double x) { return x + c; },
                       [](double g, double, double) { return g; });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var vexp(const Var& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); },
                       [](double g, double, double y) { return g * y; });
}

inline Var vlog(const Var& a) {
  return detail::unary("log", a, [](double x) { return std::log(x); },
                       [](double g, double x, double) { return g / x; });
}

inline Var vsqrt(const Var& a) {
  return detail::unary("sqrt", a, [](double x) { return std::sqrt(x); },
                       [](double g, double, double y) { return g * 0.5 / y; });
}

inline Var square(const Var& a) {
  return detail::unary("square", a, [](double x) { return x * x; },
                       [](double g, double x, double) { return g * 2.0 * x; });
}

// Elementwise max(x, c). Subgradient: passes where x > c.
inline Var max_const(const Var& a, double c) {
  return detail::unary(
      "max_const", a, [c](double x) { return x > c ? x : c; },
      [c](double g, double x, double) { return x > c ? g : 0.0; });
}

inline Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return detail::unary(
      "gelu", a,
      [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [=](double g, double x, double) {
        double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        return g * (cdf + x * pdf);
      });
}

// Value copy that blocks gradient flow (a constant leaf in the graph).
inline Var detach(const Var& a) {
  return Var::constant(a.value(), cat("detach(", a.label(), ")"));
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Matrix multiplication: (2,2), (3,2), (2,3) and (3,3) rank combinations;
// rank-3 operands are treated as batches over the leading dimension.
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  int ra = av.rank(), rb = bv.rank();
  check((ra == 2 || ra == 3) && (rb == 2 || rb == 3),
        cat("matmul: unsupported ranks ", ra, " x ", rb));
  int64_t m, k, n, batch;
  bool ab = ra == 3, bb = rb == 3;
  if (ab && bb)
    check(av.dim(0) == bv.dim(0), "matmul: batch dims differ");
  batch = ab ? av.dim(0) : (bb ? bv.dim(0) : 1);
  m = av.dim(ab ? 1 : 0);
  k = av.dim(ab ? 2 : 1);
  n = bv.dim(bb ? 2 : 1);
  check(k == bv.dim(bb ? 1 : 0),
        cat("matmul: inner dims differ ", shape_str(av), " x ", shape_str(bv)));

  std::vector<int> out_shape;
  if (ab || bb)
    out_shape = {static_cast<int>(batch), static_cast<int>(m), static_cast<int>(n)};
  else
    out_shape = {static_cast<int>(m), static_cast<int>(n)};
  Tensor out(out_shape);
  for (int64_t t = 0; t < batch; ++t) {
    const double* ap = av.data() + (ab ? t * m * k : 0);
    const double* bp = bv.data() + (bb ? t * k * n : 0);
    double* cp = out.data() + ((ab || bb) ? t * m * n : 0);
    detail::mm_nn(ap, bp, cp, m, k, n);
  }
  return detail::make_node(
      "matmul", std::move(out), {a.node(), b.node()},
      [=](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const Tensor& g = self.grad;
        bool any_out_batch = ab || bb;
        for (int64_t t = 0; t < batch; ++t) {
          const double* gp = g.data() + (any_out_batch ? t * m * n : 0);
          const double* ap = pa.value.data() + (ab ? t * m * k : 0);
          const double* bp = pb.value.data() + (bb ? t * k * n : 0);
          if (pa.requires_grad) {
            double* gap = pa.ensure_grad().data() + (ab ? t * m * k : 0);
            detail::mm_nt(gp, bp, gap, m, n, k);  // gA += gC * B^T
          }
          if (pb.requires_grad) {
            double* gbp = pb.ensure_grad().data() + (bb ? t * k * n : 0);
            detail::mm_tn(ap, gp, gbp, m, k, n);  // gB += A^T * gC
          }
        }
      });
}

// Swap the last two axes (rank 2 or 3).
inline Var transpose(const Var& a) {
  const Tensor& av = a.value();
  int r = av.rank();
  check(r == 2 || r == 3, "transpose: rank must be 2 or 3");
  int64_t batch = r == 3 ? av.dim(0) : 1;
  int64_t m = av.dim(r - 2), n = av.dim(r - 1);
  std::vector<int> shp(av.shape());
  std::swap(shp[static_cast<size_t>(r - 2)], shp[static_cast<size_t>(r - 1)]);
  Tensor out(shp);
  for (int64_t t = 0; t < batch; ++t)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        out[t * m * n + j * m + i] = av[t * m * n + i * n + j];
  return detail::make_node("transpose", std::move(out), {a.node()},
                           [=](Node& self) {
                             Node& pa = *self.parents[0];
                             if (!pa.requires_grad) return;
                             Tensor& ga = pa.ensure_grad();
                             const Tensor& g = self.grad;
                             for (int64_t t = 0; t < batch; ++t)
                               for (int64_t i = 0; i < m; ++i)
                                 for (int64_t j = 0; j < n; ++j)
                                   ga[t * m * n + i * n + j] +=
                                       g[t * m * n + j * m + i];
                           });
}

inline Var reshape(const Var& a, std::vector<int> shape) {
  const Tensor& av = a.value();
  Tensor out(std::move(shape), av.vec());
  check(out.numel() == av.numel(), "reshape: element count mismatch");
  return detail::make_node("reshape", std::move(out), {a.node()},
                           [](Node& self) {
                             Node& pa = *self.parents[0];
                             if (!pa.requires_grad) return;
                             Tensor& ga = pa.ensure_grad();
                             const Tensor& g = self.grad;
                             int64_t n = g.numel();
                             for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
                           });
}

inline Var concat(const std::vector<Var>& parts, int axis) {
  check(!parts.empty(), "concat: empty input list");
  const Tensor& first = parts[0].value();
  std::vector<int> shp(first.shape());
  check(axis >= 0 && axis < first.rank(), "concat: axis out of range");
  int total = 0;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    check(t.rank() == first.rank(), "concat: rank mismatch");
    for (int i = 0; i < t.rank(); ++i)
      if (i != axis)
        check(t.dim(i) == first.dim(i), "concat: non-axis dims must match");
    total += t.dim(axis);
  }
  shp[static_cast<size_t>(axis)] = total;
  Tensor out(shp);
  auto os = detail::split_axis(shp, axis);
  int64_t off = 0;
  std::vector<NodePtr> nodes;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    auto ts = detail::split_axis(t.shape(), axis);
    for (int64_t o = 0; o < ts.outer; ++o)
      for (int64_t x = 0; x < ts.axis; ++x)
        for (int64_t in = 0; in < ts.inner; ++in)
          out[(o * os.axis + off + x) * os.inner + in] =
              t[(o * ts.axis + x) * ts.inner + in];
    off += ts.axis;
    nodes.push_back(p.node());
  }
  return detail::make_node(
      "concat", std::move(out), std::move(nodes), [axis, os](Node& self) {
        const Tensor& g = self.grad;
        int64_t off2 = 0;
        for (auto& pn : self.parents) {
          Node& pa = *pn;
          auto ts = detail::split_axis(pa.value.shape(), axis);
          if (pa.requires_grad) {
            Tensor& ga = pa.ensure_grad();
            for (int64_t o = 0; o < ts.outer; ++o)
              for (int64_t x = 0; x < ts.axis; ++x)
                for (int64_t in = 0; in < ts.inner; ++in)
                  ga[(o * ts.axis + x) * ts.inner + in] +=
                      g[(o * os.axis + off2 + x) * os.inner + in];
          }
          off2 += ts.axis;
        }
      });
}

inline Var slice(const Var& a, int axis, int start, int len) {
  const Tensor& av = a.value();
  auto as = detail::split_axis(av.shape(), axis);
  check(start >= 0 && len > 0 && start + len <= as.axis,
        cat("slice: range [", start, ",", start + len, ") out of bounds for axis ",
            axis, " of ", shape_str(av)));
  std::vector<int> shp(av.shape());
  shp[static_cast<size_t>(axis)] = len;
  Tensor out(shp);
  for (int64_t o = 0; o < as.outer; ++o)
    for (int64_t x = 0; x < len; ++x)
      for (int64_t in = 0; in < as.inner; ++in)
        out[(o * len + x) * as.inner + in] =
            av[(o * as.axis + start + x) * as.inner + in];
  return detail::make_node(
      "slice", std::move(out), {a.node()}, [as, start, len](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        Tensor& ga = pa.ensure_grad();
        const Tensor& g = self.grad;
        for (int64_t o = 0; o < as.outer; ++o)
          for (int64_t x = 0; x < len; ++x)
            for (int64_t in = 0; in < as.inner; ++in)
              ga[(o * as.axis + start + x) * as.inner + in] +=
                  g[(o * len + x) * as.inner + in];
      });
}

// Repeats a tensor along a new leading batch axis; the gradient sums over it.
inline Var stack_batch(const Var& a, int batch) {
  const Tensor& av = a.value();
  check(batch > 0, "stack_batch: batch must be positive");
  std::vector<int> shp;
  shp.push_back(batch);
  for (int d : av.shape()) shp.push_back(d);
  Tensor out(shp);
  int64_t n = av.numel();
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t i = 0; i < n; ++i) out[b * n + i] = av[i];
  return detail::make_node("stack_batch", std::move(out), {a.node()},
                           [batch, n](Node& self) {
                             Node& pa = *self.parents[0];
                             if (!pa.requires_grad) return;
                             Tensor& ga = pa.ensure_grad();
                             const Tensor& g = self.grad;
                             for (int64_t b = 0; b < batch; ++b)
                               for (int64_t i = 0; i < n; ++i)
                                 ga[i] += g[b * n + i];
                           });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var sum_all(const Var& a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (int64_t i = 0; i < av.numel(); ++i) s += av[i];
  return detail::make_node("sum", Tensor::scalar(s), {a.node()},
                           [](Node& self) {
                             Node& pa = *self.parents[0];
                             if (!pa.requires_grad) return;
                             Tensor& ga = pa.ensure_grad();
                             double g = self.grad[0];
                             for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
                           });
}

inline Var mean_all(const Var& a) {
  const Tensor& av = a.value();
  int64_t n = av.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += av[i];
  return detail::make_node("mean", Tensor::scalar(s / static_cast<double>(n)),
                           {a.node()}, [n](Node& self) {
                             Node& pa = *self.parents[0];
                             if (!pa.requires_grad) return;
                             Tensor& ga = pa.ensure_grad();
                             double g = self.grad[0] / static_cast<double>(n);
                             for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
                           });
}

namespace detail {

inline Var reduce_axis(const char* opname, const Var& a, int axis, bool mean) {
  const Tensor& av = a.value();
  auto as = split_axis(av.shape(), axis);
  std::vector<int> shp;
  for (int i = 0; i < av.rank(); ++i)
    if (i != axis) shp.push_back(av.dim(i));
  Tensor out(shp);
  double inv = mean ? 1.0 / static_cast<double>(as.axis) : 1.0;
  for (int64_t o = 0; o < as.outer; ++o)
    for (int64_t in = 0; in < as.inner; ++in) {
      double s = 0.0;
      for (int64_t x = 0; x < as.axis; ++x)
        s += av[(o * as.axis + x) * as.inner + in];
      out[o * as.inner + in] = s * inv;
    }
  return make_node(opname, std::move(out), {a.node()}, [as, inv](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    Tensor& ga = pa.ensure_grad();
    const Tensor& g = self.grad;
    for (int64_t o = 0; o < as.outer; ++o)
      for (int64_t in = 0; in < as.inner; ++in) {
        double gv = g[o * as.inner + in] * inv;
        for (int64_t x = 0; x < as.axis; ++x)
          ga[(o * as.axis + x) * as.inner + in] += gv;
      }
  });
}

}  // namespace detail

inline Var sum_axis(const Var& a, int axis) {
  return detail::reduce_axis("sum_axis", a, axis, false);
}
inline Var mean_axis(const Var& a, int axis) {
  return detail::reduce_axis("mean_axis", a, axis, true);
}

// ---------------------------------------------------------------------------
// Softmax family (over the last axis)
// ---------------------------------------------------------------------------

inline Var softmax_last(const Var& a) {
  const Tensor& av = a.value();
  int64_t d = av.last_dim();
  int64_t rows = av.numel() / d;
  Tensor out(av.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * d;
    double* y = out.data() + r * d;
    double m = x[0];
    for (int64_t i = 1; i < d; ++i) m = std::max(m, x[i]);
    double s = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - m);
      s += y[i];
    }
    for (int64_t i = 0; i < d; ++i) y[i] /= s;
  }
  return detail::make_node(
      "softmax", std::move(out), {a.node()}, [d, rows](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        Tensor& ga = pa.ensure_grad();
        const Tensor& g = self.grad;
        const Tensor& y = self.value;
        for (int64_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (int64_t i = 0; i < d; ++i) dot += g[r * d + i] * y[r * d + i];
          for (int64_t i = 0; i < d; ++i)
            ga[r * d + i] += y[r * d + i] * (g[r * d + i] - dot);
        }
      });
}

inline Var log_softmax_last(const Var& a) {
  const Tensor& av = a.value();
  int64_t d = av.last_dim();
  int64_t rows = av.numel() / d;
  Tensor out(av.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * d;
    double* y = out.data() + r * d;
    double m = x[0];
    for (int64_t i = 1; i < d; ++i) m = std::max(m, x[i]);
    double s = 0.0;
    for (int64_t i = 0; i < d; ++i) s += std::exp(x[i] - m);
    double lse = m + std::log(s);
    for (int64_t i = 0; i < d; ++i) y[i] = x[i] - lse;
  }
  return detail::make_node(
      "log_softmax", std::move(out), {a.node()}, [d, rows](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        Tensor& ga = pa.ensure_grad();
        const Tensor& g = self.grad;
        const Tensor& y = self.value;  // softmax = exp(y)
        for (int64_t r = 0; r < rows; ++r) {
          double gsum = 0.0;
          for (int64_t i = 0; i < d; ++i) gsum += g[r * d + i];
          for (int64_t i = 0; i < d; ++i)
            ga[r * d + i] += g[r * d + i] - std::exp(y[r * d + i]) * gsum;
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization primitives (no affine part; scale/shift composes on top)
// ---------------------------------------------------------------------------

// Normalizes over the last axis with per-row mean and (biased) variance.
inline Var layer_norm_last(const Var& a, double eps) {
  const Tensor& av = a.value();
  int64_t d = av.last_dim();
  int64_t rows = av.numel() / d;
  Tensor out(av.shape());
  std::vector<double> inv_std(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * d;
    double* y = out.data() + r * d;
    double mu = 0.0;
    for (int64_t i = 0; i < d; ++i) mu += x[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t i = 0; i < d; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = inv;
    for (int64_t i = 0; i < d; ++i) y[i] = (x[i] - mu) * inv;
  }
  return detail::make_node(
      "layer_norm", std::move(out), {a.node()},
      [d, rows, inv_std = std::move(inv_std)](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        Tensor& ga = pa.ensure_grad();
        const Tensor& g = self.grad;
        const Tensor& y = self.value;
        for (int64_t r = 0; r < rows; ++r) {
          double gmean = 0.0, gy = 0.0;
          for (int64_t i = 0; i < d; ++i) {
            gmean += g[r * d + i];
            gy += g[r * d + i] * y[r * d + i];
          }
          gmean /= static_cast<double>(d);
          gy /= static_cast<double>(d);
          double inv = inv_std[static_cast<size_t>(r)];
          for (int64_t i = 0; i < d; ++i)
            ga[r * d + i] +=
                inv * (g[r * d + i] - gmean - y[r * d + i] * gy);
        }
      });
}

struct BatchNormOut {
  Var normalized;
  Tensor batch_mean;  // per channel
  Tensor batch_var;   // per channel, biased
};

// Training-mode batch normalization: channels are the last axis, statistics
// run over all leading axes. Requires at least two reduced positions.
inline BatchNormOut batch_norm_train(const Var& a, double eps) {
  const Tensor& av = a.value();
  int64_t c = av.last_dim();
  int64_t n = av.numel() / c;
  check(n >= 2, "batch_norm_train: needs at least 2 positions per channel");
  Tensor mean({static_cast<int>(c)});
  Tensor var({static_cast<int>(c)});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < c; ++k) mean[k] += av[i * c + k];
  for (int64_t k = 0; k < c; ++k) mean[k] /= static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < c; ++k) {
      double dv = av[i * c + k] - mean[k];
      var[k] += dv * dv;
    }
  for (int64_t k = 0; k < c; ++k) var[k] /= static_cast<double>(n);
  Tensor out(av.shape());
  std::vector<double> inv_std(static_cast<size_t>(c));
  for (int64_t k = 0; k < c; ++k)
    inv_std[static_cast<size_t>(k)] = 1.0 / std::sqrt(var[k] + eps);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < c; ++k)
      out[i * c + k] =
          (av[i * c + k] - mean[k]) * inv_std[static_cast<size_t>(k)];
  Var norm = detail::make_node(
      "batch_norm", std::move(out), {a.node()},
      [c, n, inv_std](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        Tensor& ga = pa.ensure_grad();
        const Tensor& g = self.grad;
        const Tensor& y = self.value;
        for (int64_t k = 0; k < c; ++k) {
          double gmean = 0.0, gy = 0.0;
          for (int64_t i = 0; i < n; ++i) {
            gmean += g[i * c + k];
            gy += g[i * c + k] * y[i * c + k];
          }
          gmean /= static_cast<double>(n);
          gy /= static_cast<double>(n);
          double inv = inv_std[static_cast<size_t>(k)];
          for (int64_t i = 0; i < n; ++i)
            ga[i * c + k] +=
                inv * (g[i * c + k] - gmean - y[i * c + k] * gy);
        }
      });
  return {norm, std::move(mean), std::move(var)};
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

inline void backward(const Var& root) {
  check(root.defined(), "backward: undefined root");
  check(root.value().numel() == 1, "backward: root must be scalar");
  if (!root.requires_grad()) return;

  // Reverse DFS post-order gives an order where every consumer precedes its
  // producers, so each node's grad is complete before its backprop runs.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node().get(), 0});
  visited.insert(root.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node* p = f.n->parents[f.next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad_ready) n->backprop(*n);
  }
}

// Runs the backward pass and returns the scalar loss value.
inline double forward_backward(const Var& root) {
  backward(root);
  return root.value()[0];
}

}  // namespace compass
