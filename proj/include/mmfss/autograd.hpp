#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mmfss/errors.hpp"
#include "mmfss/tensor.hpp"

namespace mmfss {

/// One vertex of the computation graph. Parents are kept only when a gradient can flow.
struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";
  bool requires_grad = false;

  Tensor& grad_ref() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

/// Shared handle to a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  /// Accumulated gradient; zeros when nothing has reached this node.
  Tensor grad() const { return node_->grad.empty() ? Tensor::zeros(shape()) : node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "constant";
  return Var(std::move(n));
}

inline Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "parameter";
  n->requires_grad = true;
  return Var(std::move(n));
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

inline CMatMap as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return CMatMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MatMap as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline Var make_result(Tensor value, const char* op, std::vector<Var> parents,
                       std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  for (const Var& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (const Var& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

inline bool flows(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

inline void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(v.shape()));
  }
}

/// For b broadcast against a along trailing singleton axes, the number of consecutive
/// elements of a that share one element of b. Returns 0 when the shapes are incompatible.
inline std::size_t trailing_repeat(const Shape& a, const Shape& b) {
  if (a.size() != b.size()) return 0;
  std::size_t repeat = 1;
  bool in_tail = true;
  for (std::size_t i = a.size(); i-- > 0;) {
    if (in_tail && b[i] == 1 && a[i] != 1) {
      repeat *= a[i];
      continue;
    }
    in_tail = false;
    if (a[i] != b[i]) return 0;
  }
  return repeat;
}

inline std::size_t broadcast_or_throw(const Var& a, const Var& b, const char* op) {
  const std::size_t r = trailing_repeat(a.shape(), b.shape());
  if (r == 0) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " to " +
                         shape_str(a.shape()));
  }
  return r;
}

template <class Fwd, class DA, class DB>
Var binary_broadcast(const Var& a, const Var& b, const char* op, Fwd fwd, DA da, DB db) {
  const std::size_t rep = broadcast_or_throw(a, b, op);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i / rep]);
  return make_result(std::move(out), op, {a, b}, [rep, da, db](Node& self) {
    const Tensor& x = self.parents[0]->value;
    const Tensor& y = self.parents[1]->value;
    const Tensor& g = self.grad;
    if (flows(self, 0)) {
      Tensor& gx = self.parents[0]->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * da(x[i], y[i / rep]);
    }
    if (flows(self, 1)) {
      Tensor& gy = self.parents[1]->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) gy[i / rep] += g[i] * db(x[i], y[i / rep]);
    }
  });
}

template <class Fwd, class Deriv>
Var unary(const Var& a, const char* op, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return make_result(std::move(out), op, {a}, [deriv](Node& self) {
    const Tensor& x = self.parents[0]->value;
    const Tensor& y = self.value;
    Tensor& gx = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += self.grad[i] * deriv(x[i], y[i]);
  });
}

}  // namespace detail

/// Reverse sweep from a scalar. Every node reached from `loss` has its gradient reset
/// before accumulation; leaves not reached keep whatever they held (see gradients()).
inline void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad = Tensor::zeros(n->value.shape());
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

/// dLoss/dLeaf for each requested leaf; leaves the loss does not depend on get zeros.
inline std::vector<Tensor> gradients(const Var& loss, std::span<const Var> leaves) {
  for (Var leaf : leaves) leaf.zero_grad();
  backward(loss);
  std::vector<Tensor> out;
  out.reserve(leaves.size());
  for (const Var& leaf : leaves) out.push_back(leaf.grad());
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

/// a + b; b may broadcast along trailing singleton axes.
inline Var add(const Var& a, const Var& b) {
  return detail::binary_broadcast(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary_broadcast(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

/// Hadamard product; b may broadcast along trailing singleton axes.
inline Var mul(const Var& a, const Var& b) {
  return detail::binary_broadcast(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var div(const Var& a, const Var& b) {
  return detail::binary_broadcast(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

inline Var scale(const Var& a, double s) {
  return detail::unary(
      a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var relu(const Var& a) {
  return detail::unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// elu(x) + 1, the strictly positive feature map used by linear attention.
inline Var elu_plus_one(const Var& a) {
  return detail::unary(
      a, "elu_plus_one", [](double x) { return x > 0.0 ? x + 1.0 : std::exp(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// a + bias where bias has the extent of a's last axis.
inline Var add_bias(const Var& a, const Var& bias) {
  const std::size_t w = a.shape().back();
  if (bias.value().size() != w) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs " + shape_str(a.shape()));
  }
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % w];
  return detail::make_result(std::move(out), "add_bias", {a, bias}, [w](Node& self) {
    const Tensor& g = self.grad;
    if (detail::flows(self, 0)) {
      Tensor& ga = self.parents[0]->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (detail::flows(self, 1)) {
      Tensor& gb = self.parents[1]->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % w] += g[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail::make_result(Tensor::scalar(s), "sum", {a}, [](Node& self) {
    Tensor& ga = self.parents[0]->grad_ref();
    const double g = self.grad[0];
    for (double& v : ga.data()) v += g;
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return detail::make_result(std::move(out), "reshape", {a}, [](Node& self) {
    Tensor& ga = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

/// Rank-3 axis permutation; out axis k is input axis perm[k].
inline Var permute3(const Var& a, std::array<std::size_t, 3> perm) {
  detail::require_rank(a, 3, "permute3");
  const Shape& s = a.shape();
  const Shape out_shape{s[perm[0]], s[perm[1]], s[perm[2]]};
  const std::array<std::size_t, 3> in_stride{s[1] * s[2], s[2], 1};
  const std::array<std::size_t, 3> stride{in_stride[perm[0]], in_stride[perm[1]], in_stride[perm[2]]};
  std::vector<std::size_t> src(shape_size(out_shape));
  std::size_t o = 0;
  for (std::size_t i = 0; i < out_shape[0]; ++i)
    for (std::size_t j = 0; j < out_shape[1]; ++j)
      for (std::size_t k = 0; k < out_shape[2]; ++k) src[o++] = i * stride[0] + j * stride[1] + k * stride[2];
  Tensor out(out_shape);
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = av[src[i]];
  return detail::make_result(std::move(out), "permute3", {a}, [src = std::move(src)](Node& self) {
    Tensor& ga = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += self.grad[i];
  });
}

inline Var transpose(const Var& a) {
  detail::require_rank(a, 2, "transpose");
  return reshape(permute3(reshape(a, {1, a.dim(0), a.dim(1)}), {0, 2, 1}), {a.dim(1), a.dim(0)});
}

/// Horizontal concatenation of rank-2 blocks with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  const std::size_t n = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.dim(0) != n) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  Tensor out({n, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(v.data().data() + i * widths[k], widths[k], out.data().data() + i * total + off);
    off += widths[k];
  }
  return detail::make_result(std::move(out), "concat_cols", parts, [widths, n, total](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (detail::flows(self, k)) {
        Tensor& g = self.parents[k]->grad_ref();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

/// Vertical concatenation of rank-2 blocks with equal column counts.
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows of nothing");
  const std::size_t w = parts[0].dim(1);
  std::size_t rows = 0;
  for (const Var& p : parts) {
    detail::require_rank(p, 2, "concat_rows");
    if (p.dim(1) != w) throw DimensionError("concat_rows: column counts differ");
    rows += p.dim(0);
  }
  std::vector<double> data;
  data.reserve(rows * w);
  for (const Var& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return detail::make_result(Tensor({rows, w}, std::move(data)), "concat_rows", parts, [](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const std::size_t len = self.parents[k]->value.size();
      if (detail::flows(self, k)) {
        Tensor& g = self.parents[k]->grad_ref();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
      }
      off += len;
    }
  });
}

/// Repeats an n x 1 column m times along the last axis.
inline Var repeat_cols(const Var& a, std::size_t m) {
  detail::require_rank(a, 2, "repeat_cols");
  if (a.dim(1) != 1) throw DimensionError("repeat_cols expects an n x 1 column");
  const std::size_t n = a.dim(0);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) = a.value()[i];
  return detail::make_result(std::move(out), "repeat_cols", {a}, [n, m](Node& self) {
    Tensor& g = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) g[i] += self.grad[i * m + j];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents disagree " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  }
  Tensor out({n, m});
  detail::as_mat(out, n, m).noalias() = detail::as_mat(a.value(), n, k) * detail::as_mat(b.value(), k, m);
  return detail::make_result(std::move(out), "matmul", {a, b}, [n, k, m](Node& self) {
    auto g = detail::as_mat(self.grad, n, m);
    if (detail::flows(self, 0)) {
      detail::as_mat(self.parents[0]->grad_ref(), n, k).noalias() +=
          g * detail::as_mat(self.parents[1]->value, k, m).transpose();
    }
    if (detail::flows(self, 1)) {
      detail::as_mat(self.parents[1]->grad_ref(), k, m).noalias() +=
          detail::as_mat(self.parents[0]->value, n, k).transpose() * g;
    }
  });
}

namespace detail {

/// Rows scaled to unit length; zero rows stay zero. Returns the norms alongside.
inline std::pair<Tensor, std::vector<double>> unit_rows(const Tensor& t) {
  const std::size_t n = t.dim(0), d = t.size() / n;
  Tensor out(t.shape());
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += t[i * d + j] * t[i * d + j];
    norms[i] = std::sqrt(s);
    if (norms[i] > 0.0)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = t[i * d + j] / norms[i];
  }
  return {std::move(out), std::move(norms)};
}

/// Pulls a gradient w.r.t. unit rows back to the raw rows.
inline void unit_rows_backward(const Tensor& unit, const std::vector<double>& norms, const Tensor& g_unit,
                               Tensor& g_raw) {
  const std::size_t n = norms.size(), d = unit.size() / n;
  for (std::size_t i = 0; i < n; ++i) {
    if (norms[i] == 0.0) continue;
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += g_unit[i * d + j] * unit[i * d + j];
    for (std::size_t j = 0; j < d; ++j) g_raw[i * d + j] += (g_unit[i * d + j] - dot * unit[i * d + j]) / norms[i];
  }
}

}  // namespace detail

/// Pairwise cosine similarity between rows of a (n x d) and rows of b (m x d).
/// A zero-norm row yields 0 against everything.
inline Var cosine_rows(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "cosine_rows");
  detail::require_rank(b, 2, "cosine_rows");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("cosine_rows: feature widths differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  auto [ua, na] = detail::unit_rows(a.value());
  auto [ub, nb] = detail::unit_rows(b.value());
  Tensor out({n, m});
  detail::as_mat(out, n, m).noalias() = detail::as_mat(ua, n, d) * detail::as_mat(ub, m, d).transpose();
  return detail::make_result(
      std::move(out), "cosine_rows", {a, b},
      [ua = std::move(ua), na = std::move(na), ub = std::move(ub), nb = std::move(nb), n, m, d](Node& self) {
        auto g = detail::as_mat(self.grad, n, m);
        if (detail::flows(self, 0)) {
          Tensor gu({n, d});
          detail::as_mat(gu, n, d).noalias() = g * detail::as_mat(ub, m, d);
          detail::unit_rows_backward(ua, na, gu, self.parents[0]->grad_ref());
        }
        if (detail::flows(self, 1)) {
          Tensor gu({m, d});
          detail::as_mat(gu, m, d).noalias() = g.transpose() * detail::as_mat(ua, n, d);
          detail::unit_rows_backward(ub, nb, gu, self.parents[1]->grad_ref());
        }
      });
}

/// Cosine similarity of matching rows: out[i] = cos(a_i, b_i). Shape {n}.
inline Var row_cosine(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "row_cosine");
  if (a.shape() != b.shape()) throw DimensionError("row_cosine: shapes differ");
  const std::size_t n = a.dim(0), d = a.dim(1);
  auto [ua, na] = detail::unit_rows(a.value());
  auto [ub, nb] = detail::unit_rows(b.value());
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += ua[i * d + j] * ub[i * d + j];
    out[i] = s;
  }
  return detail::make_result(
      std::move(out), "row_cosine", {a, b},
      [ua = std::move(ua), na = std::move(na), ub = std::move(ub), nb = std::move(nb), n, d](Node& self) {
        if (detail::flows(self, 0)) {
          Tensor gu({n, d});
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gu[i * d + j] = self.grad[i] * ub[i * d + j];
          detail::unit_rows_backward(ua, na, gu, self.parents[0]->grad_ref());
        }
        if (detail::flows(self, 1)) {
          Tensor gu({n, d});
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gu[i * d + j] = self.grad[i] * ua[i * d + j];
          detail::unit_rows_backward(ub, nb, gu, self.parents[1]->grad_ref());
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization and losses

namespace detail {

struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline Tensor softmax_values(const Tensor& x, AxisSplit sp) {
  Tensor y(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      double mx = x[base];
      for (std::size_t k = 1; k < sp.extent; ++k) mx = std::max(mx, x[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.extent; ++k) z += (y[base + k * sp.inner] = std::exp(x[base + k * sp.inner] - mx));
      for (std::size_t k = 0; k < sp.extent; ++k) y[base + k * sp.inner] /= z;
    }
  return y;
}

}  // namespace detail

/// Softmax along `axis` (max-shifted).
inline Var softmax(const Var& x, std::size_t axis) {
  const auto sp = detail::split_axis(x.shape(), axis);
  return detail::make_result(detail::softmax_values(x.value(), sp), "softmax", {x}, [sp](Node& self) {
    const Tensor& y = self.value;
    const Tensor& g = self.grad;
    Tensor& gx = self.parents[0]->grad_ref();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.extent * sp.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.extent; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.extent; ++k) {
          const std::size_t i = base + k * sp.inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
  });
}

/// Softmax over the last axis of a plain tensor, no graph.
inline Tensor softmax_rows(const Tensor& x) {
  return detail::softmax_values(x, detail::split_axis(x.shape(), x.rank() - 1));
}

/// Mean softmax cross-entropy over rows of `logits` (n x C) against integer labels.
inline Var cross_entropy(const Var& logits, std::span<const int> labels) {
  detail::require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw DimensionError("cross_entropy: label count differs from rows");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= c) throw ContractError("cross_entropy: label out of range");
  }
  Tensor probs = softmax_rows(logits.value());
  double total = 0.0;
  const Tensor& z = logits.value();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = z(i, 0);
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, z(i, k));
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += std::exp(z(i, k) - mx);
    total += mx + std::log(s) - z(i, static_cast<std::size_t>(labels[i]));
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return detail::make_result(Tensor::scalar(total / static_cast<double>(n)), "cross_entropy", {logits},
                             [probs = std::move(probs), lab = std::move(lab), n, c](Node& self) {
                               Tensor& g = self.parents[0]->grad_ref();
                               const double s = self.grad[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t k = 0; k < c; ++k) {
                                   const double t = static_cast<std::size_t>(lab[i]) == k ? 1.0 : 0.0;
                                   g(i, k) += s * (probs(i, k) - t);
                                 }
                             });
}

// ---------------------------------------------------------------------------
// Sparse row aggregation and kernelized attention

/// CSR row-combination matrix: out row r = sum over entries (idx, w) of w * x[idx].
struct SparseRows {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> index;
  std::vector<double> weight;

  void push(std::size_t idx, double w) {
    index.push_back(idx);
    weight.push_back(w);
  }
  void end_row() {
    offsets.push_back(index.size());
    ++rows;
  }
};

inline Tensor apply_sparse(const SparseRows& s, const Tensor& x) {
  const std::size_t w = x.size() / x.dim(0);
  Tensor out({s.rows, w});
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t e = s.offsets[r]; e < s.offsets[r + 1]; ++e) {
      const double* src = x.data().data() + s.index[e] * w;
      double* dst = out.data().data() + r * w;
      for (std::size_t j = 0; j < w; ++j) dst[j] += s.weight[e] * src[j];
    }
  return out;
}

inline Var sparse_aggregate(std::shared_ptr<const SparseRows> s, const Var& x) {
  detail::require_rank(x, 2, "sparse_aggregate");
  if (s->cols != x.dim(0)) throw DimensionError("sparse_aggregate: source row count mismatch");
  if (s->rows == 0) throw DimensionError("sparse_aggregate: no output rows");
  Tensor out = apply_sparse(*s, x.value());
  return detail::make_result(std::move(out), "sparse_aggregate", {x}, [s](Node& self) {
    Tensor& gx = self.parents[0]->grad_ref();
    const std::size_t w = gx.size() / gx.dim(0);
    for (std::size_t r = 0; r < s->rows; ++r)
      for (std::size_t e = s->offsets[r]; e < s->offsets[r + 1]; ++e) {
        const double* g = self.grad.data().data() + r * w;
        double* dst = gx.data().data() + s->index[e] * w;
        for (std::size_t j = 0; j < w; ++j) dst[j] += s->weight[e] * g[j];
      }
  });
}

inline constexpr double kAttentionEps = 1e-12;

/// Batched kernelized attention over B independent token sets.
/// fq, fk: B x L x D positive feature maps; v: B x L x Dv.
/// out_i = (fq_i^T sum_j fk_j v_j^T) / (fq_i . sum_j fk_j), denominator clamped at kAttentionEps.
inline Var kernel_attention(const Var& fq, const Var& fk, const Var& v) {
  detail::require_rank(fq, 3, "kernel_attention");
  if (fk.shape() != fq.shape() || v.dim(0) != fq.dim(0) || v.dim(1) != fq.dim(1) || v.shape().size() != 3) {
    throw DimensionError("kernel_attention: incompatible shapes");
  }
  const std::size_t B = fq.dim(0), L = fq.dim(1), D = fq.dim(2), Dv = v.dim(2);
  Tensor out({B, L, Dv});
  Tensor S({B, D, Dv});
  Tensor z({B, D});
  Tensor den({B, L});
  for (std::size_t b = 0; b < B; ++b) {
    auto Q = detail::as_mat(fq.value(), B * L, D).middleRows(b * L, L);
    auto K = detail::as_mat(fk.value(), B * L, D).middleRows(b * L, L);
    auto V = detail::as_mat(v.value(), B * L, Dv).middleRows(b * L, L);
    auto Sb = detail::as_mat(S, B * D, Dv).middleRows(b * D, D);
    Sb.noalias() = K.transpose() * V;
    auto zb = detail::as_mat(z, B, D).row(b);
    zb = K.colwise().sum();
    auto Ob = detail::as_mat(out, B * L, Dv).middleRows(b * L, L);
    Ob.noalias() = Q * Sb;
    for (std::size_t i = 0; i < L; ++i) {
      const double d = std::max(Q.row(i).dot(zb), kAttentionEps);
      den(b, i) = d;
      Ob.row(i) /= d;
    }
  }
  return detail::make_result(
      std::move(out), "kernel_attention", {fq, fk, v},
      [S = std::move(S), z = std::move(z), den = std::move(den), B, L, D, Dv](Node& self) {
        using detail::as_mat;
        const Tensor& qv = self.parents[0]->value;
        const Tensor& kv = self.parents[1]->value;
        const Tensor& vv = self.parents[2]->value;
        for (std::size_t b = 0; b < B; ++b) {
          auto Q = as_mat(qv, B * L, D).middleRows(b * L, L);
          auto K = as_mat(kv, B * L, D).middleRows(b * L, L);
          auto V = as_mat(vv, B * L, Dv).middleRows(b * L, L);
          auto G = as_mat(self.grad, B * L, Dv).middleRows(b * L, L);
          auto O = as_mat(self.value, B * L, Dv).middleRows(b * L, L);
          auto Sb = as_mat(S, B * D, Dv).middleRows(b * D, D);
          auto zb = as_mat(z, B, D).row(b);
          detail::RowMat dnum(L, Dv);
          Eigen::VectorXd dden(L);
          for (std::size_t i = 0; i < L; ++i) {
            const double d = den(b, i);
            const bool clamped = Q.row(i).dot(zb) < kAttentionEps;
            dnum.row(i) = G.row(i) / d;
            dden(i) = clamped ? 0.0 : -G.row(i).dot(O.row(i)) / d;
          }
          if (detail::flows(self, 0)) {
            auto gQ = as_mat(self.parents[0]->grad_ref(), B * L, D).middleRows(b * L, L);
            gQ.noalias() += dnum * Sb.transpose();
            gQ.noalias() += dden * zb;
          }
          detail::RowMat dS = Q.transpose() * dnum;
          Eigen::RowVectorXd dz = dden.transpose() * Q;
          if (detail::flows(self, 1)) {
            auto gK = as_mat(self.parents[1]->grad_ref(), B * L, D).middleRows(b * L, L);
            gK.noalias() += V * dS.transpose();
            gK.rowwise() += dz;
          }
          if (detail::flows(self, 2)) {
            auto gV = as_mat(self.parents[2]->grad_ref(), B * L, Dv).middleRows(b * L, L);
            gV.noalias() += K * dS;
          }
        }
      });
}

}  // namespace mmfss
