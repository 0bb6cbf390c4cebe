// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense row-major arrays.
//
// A Graph is a tape: every operation appends a node whose inputs were
// appended earlier, so reverse index order is a valid topological order.
// Nodes are addressed through lightweight Var handles. Leaves that require
// gradients accumulate across backward() calls; interior adjoints are
// recomputed from scratch on every call.
//
// Broadcasting is limited to tensor-vs-scalar. Bias rows are added through
// the explicit add_bias op; every other shape mismatch throws.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "condlstmq/errors.hpp"

namespace condlstmq::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Plain shape-tagged values outside any graph (parameters, inputs).
struct Array {
  Shape shape;
  std::vector<double> data;

  Array() = default;
  Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size())
      throw DimensionError("array of shape " + shape_str(shape) + " given " +
                           std::to_string(data.size()) + " values");
  }
  static Array zeros(Shape s) {
    const auto n = numel(s);
    return Array(std::move(s), std::vector<double>(n, 0.0));
  }
  [[nodiscard]] std::size_t size() const { return data.size(); }
  bool operator==(const Array&) const = default;
};

enum class EwiseKind { add, sub, mul, max };

class Graph;

/// Handle to a node of one Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  [[nodiscard]] std::size_t id() const { return id_; }
  [[nodiscard]] Graph& graph() const { return *graph_; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] const std::vector<double>& value() const;
  [[nodiscard]] const std::vector<double>& grad() const;
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] std::size_t size() const { return value().size(); }
  [[nodiscard]] double item() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    bool leaf = true;
    BackwardFn backward;
  };

  explicit Graph(std::uint64_t seed = 0) : rng_(seed) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;
  Graph& operator=(Graph&&) = delete;

  /// Trainable leaf (gradient accumulated by backward()).
  Var param(Shape shape, std::vector<double> values) {
    return add_leaf(std::move(shape), std::move(values), true);
  }
  Var param(const Array& a) { return param(a.shape, a.data); }

  /// Constant leaf (no gradient).
  Var constant(Shape shape, std::vector<double> values) {
    return add_leaf(std::move(shape), std::move(values), false);
  }
  Var constant(const Array& a) { return constant(a.shape, a.data); }

  Var add_op(Shape shape, std::vector<double> value, std::vector<std::size_t> inputs,
             BackwardFn backward) {
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.leaf = false;
    for (auto in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  [[nodiscard]] Node& node(std::size_t id) { return nodes_.at(id); }
  [[nodiscard]] const Node& node(std::size_t id) const { return nodes_.at(id); }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, allocated on first use.
  std::vector<double>& grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  /// Populates gradients of every trainable leaf reachable from `loss`.
  /// Repeated calls accumulate into leaves.
  void backward(const Var& loss) {
    if (&loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
    auto& out = nodes_[loss.id()];
    if (out.value.size() != 1)
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(out.shape));
    if (!out.requires_grad) return;
    for (std::size_t i = 0; i <= loss.id(); ++i) {
      if (!nodes_[i].leaf && nodes_[i].requires_grad) nodes_[i].grad.assign(nodes_[i].value.size(), 0.0);
    }
    grad_buffer(loss.id())[0] += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.leaf || !n.requires_grad || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Resets all leaf gradients to zero.
  void zero_grad() {
    for (auto& n : nodes_)
      if (n.leaf && n.requires_grad) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  }

  std::mt19937_64& rng() { return rng_; }

  /// Branch taken by every max element evaluated so far: 0 first, 1 second, 2 tie.
  [[nodiscard]] const std::vector<std::uint8_t>& max_routing() const { return max_routing_; }
  std::vector<std::uint8_t>& max_routing_mut() { return max_routing_; }

 private:
  Var add_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != values.size())
      throw DimensionError("leaf of shape " + shape_str(shape) + " given " +
                           std::to_string(values.size()) + " values");
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(values);
    n.requires_grad = requires_grad;
    n.leaf = true;
    if (requires_grad) n.grad.assign(n.value.size(), 0.0);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // stable references across push_back
  std::mt19937_64 rng_;
  std::vector<std::uint8_t> max_routing_;
};

inline const Shape& Var::shape() const { return graph_->node(id_).shape; }
inline const std::vector<double>& Var::value() const { return graph_->node(id_).value; }
inline const std::vector<double>& Var::grad() const { return graph_->node(id_).grad; }
inline bool Var::requires_grad() const { return graph_->node(id_).requires_grad; }
inline double Var::item() const {
  if (value().size() != 1) throw ContractError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
  return value()[0];
}

namespace detail {

inline void same_graph(const Var& a, const Var& b, const char* op) {
  if (&a.graph() != &b.graph()) throw ContractError(std::string(op) + ": operands from different graphs");
}

inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline bool wants_grad(Graph& g, std::size_t id) { return g.node(id).requires_grad; }

inline std::size_t last_extent(const Shape& s) { return s.empty() ? 1 : s.back(); }

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product of [m x k] and [k x n].
inline Var matmul(const Var& a, const Var& b) {
  detail::same_graph(a, b, "matmul");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().add_op({m, n}, std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph& g, std::size_t self) {
    const auto& dc = g.node(self).grad;
    if (detail::wants_grad(g, ia)) {
      const auto& bv = g.node(ib).value;
      auto& da = g.grad_buffer(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* dcr = dc.data() + i * n;
          const double* br = bv.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) s += dcr[j] * br[j];
          da[i * k + p] += s;
        }
    }
    if (detail::wants_grad(g, ib)) {
      const auto& av = g.node(ia).value;
      auto& db = g.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          const double* dcr = dc.data() + i * n;
          double* dbr = db.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) dbr[j] += aip * dcr[j];
        }
    }
  });
}

/// Adds the vector `bias` (length n, shape [n] or [1 x n]) to every row of `a`.
inline Var add_bias(const Var& a, const Var& bias) {
  detail::same_graph(a, bias, "add_bias");
  const std::size_t n = detail::last_extent(a.shape());
  if (bias.size() != n || (bias.shape().size() == 2 && bias.shape()[0] != 1) || bias.shape().size() > 2)
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(a.shape()));
  std::vector<double> out = a.value();
  const auto& bv = bias.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  const std::size_t ia = a.id(), ib = bias.id();
  return a.graph().add_op(a.shape(), std::move(out), {ia, ib}, [ia, ib, n](Graph& g, std::size_t self) {
    const auto& dc = g.node(self).grad;
    if (detail::wants_grad(g, ia)) {
      auto& da = g.grad_buffer(ia);
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
    }
    if (detail::wants_grad(g, ib)) {
      auto& db = g.grad_buffer(ib);
      for (std::size_t i = 0; i < dc.size(); ++i) db[i % n] += dc[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

/// Elementwise binary op on equal shapes. For max, ties route the whole
/// subgradient to `a`.
inline Var ewise(EwiseKind kind, const Var& a, const Var& b) {
  detail::same_graph(a, b, "ewise");
  detail::same_shape(a, b, "ewise");
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(av.size());
  Graph& graph = a.graph();
  switch (kind) {
    case EwiseKind::add:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
      break;
    case EwiseKind::sub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
      break;
    case EwiseKind::mul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
      break;
    case EwiseKind::max: {
      auto& routing = graph.max_routing_mut();
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] >= bv[i] ? av[i] : bv[i];
        routing.push_back(av[i] > bv[i] ? 0 : (av[i] < bv[i] ? 1 : 2));
      }
      break;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return graph.add_op(a.shape(), std::move(out), {ia, ib}, [kind, ia, ib](Graph& g, std::size_t self) {
    const auto& dc = g.node(self).grad;
    const bool ga = detail::wants_grad(g, ia);
    const bool gb = detail::wants_grad(g, ib);
    const std::size_t n = dc.size();
    switch (kind) {
      case EwiseKind::add:
        if (ga) for (std::size_t i = 0; auto& d : g.grad_buffer(ia)) d += dc[i++];
        if (gb) for (std::size_t i = 0; auto& d : g.grad_buffer(ib)) d += dc[i++];
        break;
      case EwiseKind::sub:
        if (ga) for (std::size_t i = 0; auto& d : g.grad_buffer(ia)) d += dc[i++];
        if (gb) for (std::size_t i = 0; auto& d : g.grad_buffer(ib)) d -= dc[i++];
        break;
      case EwiseKind::mul: {
        if (ga) {
          const auto& bv = g.node(ib).value;
          auto& da = g.grad_buffer(ia);
          for (std::size_t i = 0; i < n; ++i) da[i] += dc[i] * bv[i];
        }
        if (gb) {
          const auto& av = g.node(ia).value;
          auto& db = g.grad_buffer(ib);
          for (std::size_t i = 0; i < n; ++i) db[i] += dc[i] * av[i];
        }
        break;
      }
      case EwiseKind::max: {
        const auto& av = g.node(ia).value;
        const auto& bv = g.node(ib).value;
        if (ga) {
          auto& da = g.grad_buffer(ia);
          for (std::size_t i = 0; i < n; ++i)
            if (av[i] >= bv[i]) da[i] += dc[i];
        }
        if (gb) {
          auto& db = g.grad_buffer(ib);
          for (std::size_t i = 0; i < n; ++i)
            if (av[i] < bv[i]) db[i] += dc[i];
        }
        break;
      }
    }
  });
}

inline Var add(const Var& a, const Var& b) { return ewise(EwiseKind::add, a, b); }
inline Var sub(const Var& a, const Var& b) { return ewise(EwiseKind::sub, a, b); }
inline Var mul(const Var& a, const Var& b) { return ewise(EwiseKind::mul, a, b); }
inline Var maximum(const Var& a, const Var& b) { return ewise(EwiseKind::max, a, b); }

/// a + c for a scalar constant c.
inline Var add(const Var& a, double c) {
  std::vector<double> out = a.value();
  for (auto& v : out) v += c;
  const std::size_t ia = a.id();
  return a.graph().add_op(a.shape(), std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
    const auto& dc = g.node(self).grad;
    auto& da = g.grad_buffer(ia);
    for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
  });
}

/// c * a for a scalar constant c.
inline Var scale(const Var& a, double c) {
  std::vector<double> out = a.value();
  for (auto& v : out) v *= c;
  const std::size_t ia = a.id();
  return a.graph().add_op(a.shape(), std::move(out), {ia}, [ia, c](Graph& g, std::size_t self) {
    const auto& dc = g.node(self).grad;
    auto& da = g.grad_buffer(ia);
    for (std::size_t i = 0; i < dc.size(); ++i) da[i] += c * dc[i];
  });
}

/// Elementwise max against a scalar constant (ties route to `a`).
inline Var maximum(const Var& a, double c) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  auto& routing = a.graph().max_routing_mut();
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = av[i] >= c ? av[i] : c;
    routing.push_back(av[i] > c ? 0 : (av[i] < c ? 1 : 2));
  }
  const std::size_t ia = a.id();
  return a.graph().add_op(a.shape(), std::move(out), {ia}, [ia, c](Graph& g, std::size_t self) {
    const auto& dc = g.node(self).grad;
    const auto& av = g.node(ia).value;
    auto& da = g.grad_buffer(ia);
    for (std::size_t i = 0; i < dc.size(); ++i)
      if (av[i] >= c) da[i] += dc[i];
  });
}

enum class NonlinKind { sigmoid, tanh };

inline Var nonlin(NonlinKind kind, const Var& x) {
  const auto& xv = x.value();
  std::vector<double> out(xv.size());
  if (kind == NonlinKind::sigmoid) {
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = detail::stable_sigmoid(xv[i]);
  } else {
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::tanh(xv[i]);
  }
  const std::size_t ix = x.id();
  return x.graph().add_op(x.shape(), std::move(out), {ix}, [kind, ix](Graph& g, std::size_t self) {
    const auto& node = g.node(self);
    const auto& dc = node.grad;
    const auto& y = node.value;
    auto& dx = g.grad_buffer(ix);
    if (kind == NonlinKind::sigmoid) {
      for (std::size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i] * y[i] * (1.0 - y[i]);
    } else {
      for (std::size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i] * (1.0 - y[i] * y[i]);
    }
  });
}

inline Var sigmoid(const Var& x) { return nonlin(NonlinKind::sigmoid, x); }
inline Var tanh(const Var& x) { return nonlin(NonlinKind::tanh, x); }

// ---------------------------------------------------------------------------
// Structure

/// Concatenation along the last axis; all leading extents must agree.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  Shape lead = parts[0].shape();
  if (lead.empty()) lead = {1};
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::same_graph(parts[0], p, "concat");
    Shape s = p.shape();
    if (s.empty()) s = {1};
    const std::size_t w = s.back();
    s.pop_back();
    if (s != lead)
      throw DimensionError("concat: leading extents differ, " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    widths.push_back(w);
    total += w;
  }
  const std::size_t rows = numel(lead);
  std::vector<double> out(rows * total);
  std::vector<std::size_t> ids;
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& v = parts[k].value();
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + off));
      off += widths[k];
    }
  }
  for (const auto& p : parts) ids.push_back(p.id());
  Shape shape = lead;
  shape.push_back(total);
  return parts[0].graph().add_op(shape, std::move(out), ids, [ids, widths, rows, total](Graph& g, std::size_t self) {
    const auto& dc = g.node(self).grad;
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (detail::wants_grad(g, ids[k])) {
        auto& d = g.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) d[r * widths[k] + j] += dc[r * total + off + j];
      }
      off += widths[k];
    }
  });
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

/// Columns [begin, end) of the last axis.
inline Var slice(const Var& a, std::size_t begin, std::size_t end) {
  Shape s = a.shape();
  if (s.empty()) s = {1};
  const std::size_t width = s.back();
  if (begin > end || end > width)
    throw RangeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside last extent " + std::to_string(width));
  const std::size_t rows = a.size() / std::max<std::size_t>(width, 1);
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  const auto& av = a.value();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(r * width + begin), w,
                out.begin() + static_cast<std::ptrdiff_t>(r * w));
  s.back() = w;
  const std::size_t ia = a.id();
  return a.graph().add_op(s, std::move(out), {ia}, [ia, rows, width, begin, w](Graph& g, std::size_t self) {
    const auto& dc = g.node(self).grad;
    auto& da = g.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) da[r * width + begin + j] += dc[r * w + j];
  });
}

inline Var reshape(const Var& a, Shape shape) {
  if (numel(shape) != a.size())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  const std::size_t ia = a.id();
  return a.graph().add_op(std::move(shape), a.value(), {ia}, [ia](Graph& g, std::size_t self) {
    const auto& dc = g.node(self).grad;
    auto& da = g.grad_buffer(ia);
    for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  const std::size_t ia = a.id();
  return a.graph().add_op({}, {s}, {ia}, [ia](Graph& g, std::size_t self) {
    const double d = g.node(self).grad[0];
    for (auto& v : g.grad_buffer(ia)) v += d;
  });
}

inline Var mean(const Var& a) {
  if (a.size() == 0) throw ContractError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// ---------------------------------------------------------------------------
// Stochastic

/// Inverted dropout: zeroes each element with probability `rate` and scales
/// survivors by 1/(1-rate). Identity when not training or rate == 0.
inline Var dropout(const Var& x, double rate, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  Graph& g = x.graph();
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> mask(x.size());
  const double s = 1.0 / (1.0 - rate);
  for (auto& m : mask) m = keep(g.rng()) ? s : 0.0;
  return mul(x, g.constant(x.shape(), std::move(mask)));
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckReport {
  double max_rel_error = 0.0;        // worst tensor of max|g_ad - g_fd| / (max|g| + 1e-8)
  double max_pointwise_error = 0.0;  // worst coordinate of |g_ad - g_fd| / (|g| + 1e-8)
  std::size_t checked = 0;
  std::size_t ties = 0;  // coordinates whose perturbation crosses a max kink
};

/// Scalar-valued function of several tensors, built on a fresh graph.
using TensorFunction = std::function<Var(Graph&, std::span<const Var>)>;

/// Compares backward() against central differences coordinate-wise.
/// The relative error of one input tensor is its largest absolute
/// difference over the largest gradient magnitude in that tensor (plus
/// 1e-8); the report keeps the worst tensor. The per-coordinate ratio is
/// reported as well, but it is dominated by round-off for components far
/// below the tensor's scale. Coordinates where +eps and -eps take different
/// max branches are counted as ties and excluded.
inline GradCheckReport grad_check(const TensorFunction& f, const std::vector<Array>& points,
                                  double eps = 1e-6) {
  if (eps <= 0.0) throw ContractError("grad_check: eps must be positive");
  struct Eval {
    double value;
    std::vector<std::uint8_t> routing;
  };
  auto evaluate = [&](const std::vector<Array>& pts) {
    Graph g;
    std::vector<Var> vars;
    for (const auto& p : pts) vars.push_back(g.constant(p));
    Var out = f(g, vars);
    return Eval{out.item(), g.max_routing()};
  };

  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& p : points) vars.push_back(g.param(p));
    Var out = f(g, vars);
    g.backward(out);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }

  GradCheckReport report;
  std::vector<Array> work = points;
  for (std::size_t t = 0; t < work.size(); ++t) {
    double max_diff = 0.0, max_grad = 0.0;
    for (std::size_t i = 0; i < work[t].data.size(); ++i) {
      const double orig = work[t].data[i];
      work[t].data[i] = orig + eps;
      const Eval plus = evaluate(work);
      work[t].data[i] = orig - eps;
      const Eval minus = evaluate(work);
      work[t].data[i] = orig;
      if (plus.routing != minus.routing) {
        ++report.ties;
        continue;
      }
      const double fd = (plus.value - minus.value) / (2.0 * eps);
      const double ad = analytic[t][i];
      const double diff = std::abs(ad - fd);
      max_diff = std::max(max_diff, diff);
      max_grad = std::max({max_grad, std::abs(ad), std::abs(fd)});
      report.max_pointwise_error =
          std::max(report.max_pointwise_error, diff / (std::max(std::abs(ad), std::abs(fd)) + 1e-8));
      ++report.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, max_diff / (max_grad + 1e-8));
  }
  return report;
}

inline GradCheckReport grad_check(const std::function<Var(Graph&, const Var&)>& f, const Array& point,
                                  double eps = 1e-6) {
  return grad_check([&](Graph& g, std::span<const Var> v) { return f(g, v[0]); },
                    std::vector<Array>{point}, eps);
}

}  // namespace condlstmq::ad
