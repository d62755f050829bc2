#ifndef ALEA_GRAPH_HPP
#define ALEA_GRAPH_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "alea/tensor.hpp"

namespace alea {

using NodeId = std::size_t;

enum class Op {
  input,
  matmul,
  add,       // suffix broadcast: rhs shape may be a trailing suffix (or a scalar)
  mul,       // same broadcast rule as add
  exp,
  log,
  neg,
  relu,
  square,
  abs,
  sum,        // reduce all elements to a scalar
  mean,       // reduce all elements to a scalar
  logsumexp,  // over the last axis, shift-by-max form
  scale,      // multiply by a compile-time constant
  gather,     // pick one column per row by label
  stack,      // stack k same-shape tensors along a new last axis
  slice_cols  // contiguous column range of a 2-d tensor
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::neg: return "neg";
    case Op::relu: return "relu";
    case Op::square: return "square";
    case Op::abs: return "abs";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::logsumexp: return "logsumexp";
    case Op::scale: return "scale";
    case Op::gather: return "gather";
    case Op::stack: return "stack";
    case Op::slice_cols: return "slice_cols";
  }
  return "?";
}

/// Gradients per graph node, keyed by node id. Nodes the loss does not
/// depend on are absent; callers that need a dense view use get_or_zero.
class GradientMap {
 public:
  bool contains(NodeId id) const { return grads_.count(id) != 0; }

  const Tensor& at(NodeId id) const {
    auto it = grads_.find(id);
    if (it == grads_.end())
      throw std::invalid_argument("gradient map: no gradient recorded for node " + std::to_string(id));
    return it->second;
  }

  Tensor get_or_zero(NodeId id, const Shape& shape) const {
    auto it = grads_.find(id);
    if (it == grads_.end()) return Tensor::zeros(shape);
    return it->second;
  }

  void set(NodeId id, Tensor grad) { grads_[id] = std::move(grad); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<NodeId, Tensor> grads_;
};

/// Append-only tape of primitive applications. Inputs always precede
/// outputs, so reverse iteration is a topological order for backward.
class Graph {
 public:
  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Tensor out;
    double c = 0.0;             // scale constant / slice begin
    std::size_t extent = 0;     // slice width
    std::vector<int> labels;    // gather indices
  };

  NodeId input(Tensor t) { return push(Op::input, {}, std::move(t)); }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& A = out(a);
    const Tensor& B = out(b);
    if (A.shape().size() != 2 || B.shape().size() != 2 || A.cols() != B.rows())
      fail_shape(Op::matmul, A, B);
    std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor C = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double aip = A[i * k + p];
        if (aip == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aip * B[p * n + j];
      }
    return push(Op::matmul, {a, b}, std::move(C));
  }

  NodeId add(NodeId a, NodeId b) { return broadcast_binary(Op::add, a, b); }
  NodeId mul(NodeId a, NodeId b) { return broadcast_binary(Op::mul, a, b); }

  NodeId sub(NodeId a, NodeId b) { return add(a, neg(b)); }

  NodeId exp(NodeId a) {
    Tensor t = out(a);
    for (double& x : t.values()) x = std::exp(x);
    return push(Op::exp, {a}, std::move(t));
  }

  NodeId log(NodeId a) {
    Tensor t = out(a);
    for (double& x : t.values()) {
      if (!(x > 0.0))
        throw std::invalid_argument("log: non-positive input " + std::to_string(x));
      x = std::log(x);
    }
    return push(Op::log, {a}, std::move(t));
  }

  NodeId neg(NodeId a) {
    Tensor t = out(a);
    for (double& x : t.values()) x = -x;
    return push(Op::neg, {a}, std::move(t));
  }

  NodeId relu(NodeId a) {
    Tensor t = out(a);
    for (double& x : t.values()) x = x > 0.0 ? x : 0.0;
    return push(Op::relu, {a}, std::move(t));
  }

  NodeId square(NodeId a) {
    Tensor t = out(a);
    for (double& x : t.values()) x = x * x;
    return push(Op::square, {a}, std::move(t));
  }

  NodeId abs(NodeId a) {
    Tensor t = out(a);
    for (double& x : t.values()) x = std::abs(x);
    return push(Op::abs, {a}, std::move(t));
  }

  NodeId sum(NodeId a) {
    double acc = 0.0;
    for (double x : out(a).values()) acc += x;
    return push(Op::sum, {a}, Tensor::scalar(acc));
  }

  NodeId mean(NodeId a) {
    double acc = 0.0;
    for (double x : out(a).values()) acc += x;
    return push(Op::mean, {a}, Tensor::scalar(acc / static_cast<double>(out(a).size())));
  }

  NodeId scale(NodeId a, double c) {
    Tensor t = out(a);
    for (double& x : t.values()) x *= c;
    NodeId id = push(Op::scale, {a}, std::move(t));
    nodes_[id].c = c;
    return id;
  }

  /// logsumexp over the last axis in the shift-by-max form, finite for
  /// entries far beyond exp overflow.
  NodeId logsumexp_last(NodeId a) {
    const Tensor& A = out(a);
    std::size_t last = A.shape().back();
    std::size_t rows = A.size() / last;
    Shape out_shape(A.shape().begin(), A.shape().end() - 1);
    if (out_shape.empty()) out_shape = {1};
    Tensor r = Tensor::zeros(out_shape);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* row = A.values().data() + i * last;
      double m = row[0];
      for (std::size_t j = 1; j < last; ++j) m = std::max(m, row[j]);
      if (!std::isfinite(m)) {
        r[i] = m;  // all -inf rows stay -inf instead of producing NaN
        continue;
      }
      double s = 0.0;
      for (std::size_t j = 0; j < last; ++j) s += std::exp(row[j] - m);
      r[i] = m + std::log(s);
    }
    return push(Op::logsumexp, {a}, std::move(r));
  }

  /// out[i] = a[i, labels[i]] for a 2-d tensor.
  NodeId gather_labels(NodeId a, std::vector<int> labels) {
    const Tensor& A = out(a);
    if (A.shape().size() != 2 || labels.size() != A.rows())
      throw std::invalid_argument("gather: need 2-d tensor with one label per row, got " +
                                  shape_str(A.shape()) + " and " + std::to_string(labels.size()) + " labels");
    std::size_t C = A.cols();
    Tensor r = Tensor::zeros({A.rows()});
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= C)
        throw std::invalid_argument("gather: label " + std::to_string(labels[i]) +
                                    " out of range [0, " + std::to_string(C) + ")");
      r[i] = A.at(i, static_cast<std::size_t>(labels[i]));
    }
    NodeId id = push(Op::gather, {a}, std::move(r));
    nodes_[id].labels = std::move(labels);
    return id;
  }

  /// Stack k same-shape tensors along a new trailing axis.
  NodeId stack_last(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack: no inputs");
    const Tensor& first = out(parts[0]);
    for (NodeId p : parts)
      if (!out(p).same_shape(first)) fail_shape(Op::stack, first, out(p));
    std::size_t k = parts.size(), base = first.size();
    Shape shape = first.shape();
    shape.push_back(k);
    Tensor r = Tensor::zeros(shape);
    for (std::size_t t = 0; t < k; ++t) {
      const Tensor& pt = out(parts[t]);
      for (std::size_t i = 0; i < base; ++i) r[i * k + t] = pt[i];
    }
    return push(Op::stack, parts, std::move(r));
  }

  /// Columns [begin, end) of a 2-d tensor.
  NodeId slice_cols(NodeId a, std::size_t begin, std::size_t end) {
    const Tensor& A = out(a);
    if (A.shape().size() != 2 || begin >= end || end > A.cols())
      throw std::invalid_argument("slice_cols: bad range [" + std::to_string(begin) + ", " +
                                  std::to_string(end) + ") for " + shape_str(A.shape()));
    std::size_t w = end - begin;
    Tensor r = Tensor::zeros({A.rows(), w});
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < w; ++j) r.at(i, j) = A.at(i, begin + j);
    NodeId id = push(Op::slice_cols, {a}, std::move(r));
    nodes_[id].c = static_cast<double>(begin);
    nodes_[id].extent = w;
    return id;
  }

  const Tensor& out(NodeId id) const { return nodes_.at(id).out; }
  double value(NodeId id) const {
    const Tensor& t = out(id);
    if (!t.is_scalar()) throw std::invalid_argument("value: node is not scalar, shape " + shape_str(t.shape()));
    return t[0];
  }
  std::size_t node_count() const { return nodes_.size(); }

  /// Reverse-mode sweep from a scalar loss node. Fan-out accumulates
  /// additively; nodes the loss does not reach get no entry.
  GradientMap backward(NodeId loss) const {
    if (loss >= nodes_.size()) throw std::invalid_argument("backward: unknown node");
    if (!out(loss).is_scalar())
      throw std::invalid_argument("backward: loss node must be scalar, got " + shape_str(out(loss).shape()));
    std::vector<Tensor> grads(loss + 1);
    std::vector<char> touched(loss + 1, 0);
    grads[loss] = Tensor::scalar(1.0);
    touched[loss] = 1;
    for (std::size_t idx = loss + 1; idx-- > 0;) {
      if (!touched[idx]) continue;
      backprop_node(idx, grads[idx], grads, touched);
    }
    GradientMap gm;
    for (std::size_t i = 0; i <= loss; ++i)
      if (touched[i]) gm.set(i, std::move(grads[i]));
    return gm;
  }

 private:
  NodeId push(Op op, std::vector<NodeId> inputs, Tensor out) {
    nodes_.push_back(Node{op, std::move(inputs), std::move(out), 0.0, 0, {}});
    return nodes_.size() - 1;
  }

  [[noreturn]] void fail_shape(Op op, const Tensor& a, const Tensor& b) const {
    throw std::invalid_argument(std::string(op_name(op)) + ": incompatible shapes " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }

  // rhs broadcasts onto lhs when it is a scalar or its shape is a trailing
  // suffix of lhs's shape (bias rows, per-unit masks).
  bool broadcastable(const Tensor& a, const Tensor& b) const {
    if (a.same_shape(b)) return true;
    if (b.size() == 1) return true;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sb.size() > sa.size()) return false;
    return std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  }

  NodeId broadcast_binary(Op op, NodeId a, NodeId b) {
    const Tensor& A = out(a);
    const Tensor& B = out(b);
    if (!broadcastable(A, B)) fail_shape(op, A, B);
    Tensor r = A;
    std::size_t bs = B.size();
    if (op == Op::add) {
      for (std::size_t i = 0; i < r.size(); ++i) r[i] += B[i % bs];
    } else {
      for (std::size_t i = 0; i < r.size(); ++i) r[i] *= B[i % bs];
    }
    return push(op, {a, b}, std::move(r));
  }

  void accumulate(std::vector<Tensor>& grads, std::vector<char>& touched, NodeId id,
                  const Tensor& delta) const {
    if (!touched[id]) {
      grads[id] = delta;
      touched[id] = 1;
      return;
    }
    Tensor& g = grads[id];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
  }

  void backprop_node(NodeId id, const Tensor& g, std::vector<Tensor>& grads,
                     std::vector<char>& touched) const {
    const Node& n = nodes_[id];
    switch (n.op) {
      case Op::input:
        return;
      case Op::matmul: {
        const Tensor& A = out(n.inputs[0]);
        const Tensor& B = out(n.inputs[1]);
        std::size_t m = A.rows(), k = A.cols(), c = B.cols();
        Tensor ga = Tensor::zeros(A.shape());
        Tensor gb = Tensor::zeros(B.shape());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            double gij = g[i * c + j];
            if (gij == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) {
              ga[i * k + p] += gij * B[p * c + j];
              gb[p * c + j] += gij * A[i * k + p];
            }
          }
        accumulate(grads, touched, n.inputs[0], ga);
        accumulate(grads, touched, n.inputs[1], gb);
        return;
      }
      case Op::add: {
        accumulate(grads, touched, n.inputs[0], g);
        const Tensor& B = out(n.inputs[1]);
        Tensor gb = Tensor::zeros(B.shape());
        std::size_t bs = B.size();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % bs] += g[i];
        accumulate(grads, touched, n.inputs[1], gb);
        return;
      }
      case Op::mul: {
        const Tensor& A = out(n.inputs[0]);
        const Tensor& B = out(n.inputs[1]);
        std::size_t bs = B.size();
        Tensor ga = Tensor::zeros(A.shape());
        Tensor gb = Tensor::zeros(B.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] = g[i] * B[i % bs];
          gb[i % bs] += g[i] * A[i];
        }
        accumulate(grads, touched, n.inputs[0], ga);
        accumulate(grads, touched, n.inputs[1], gb);
        return;
      }
      case Op::exp: {
        Tensor ga = n.out;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= g[i];
        accumulate(grads, touched, n.inputs[0], ga);
        return;
      }
      case Op::log: {
        const Tensor& A = out(n.inputs[0]);
        Tensor ga = Tensor::zeros(A.shape());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] / A[i];
        accumulate(grads, touched, n.inputs[0], ga);
        return;
      }
      case Op::neg: {
        Tensor ga = g;
        for (double& x : ga.values()) x = -x;
        accumulate(grads, touched, n.inputs[0], ga);
        return;
      }
      case Op::relu: {
        const Tensor& A = out(n.inputs[0]);
        Tensor ga = Tensor::zeros(A.shape());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = A[i] > 0.0 ? g[i] : 0.0;
        accumulate(grads, touched, n.inputs[0], ga);
        return;
      }
      case Op::square: {
        const Tensor& A = out(n.inputs[0]);
        Tensor ga = Tensor::zeros(A.shape());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = 2.0 * A[i] * g[i];
        accumulate(grads, touched, n.inputs[0], ga);
        return;
      }
      case Op::abs: {
        // subgradient 0 at the kink
        const Tensor& A = out(n.inputs[0]);
        Tensor ga = Tensor::zeros(A.shape());
        for (std::size_t i = 0; i < ga.size(); ++i)
          ga[i] = A[i] > 0.0 ? g[i] : (A[i] < 0.0 ? -g[i] : 0.0);
        accumulate(grads, touched, n.inputs[0], ga);
        return;
      }
      case Op::sum: {
        accumulate(grads, touched, n.inputs[0], Tensor::full(out(n.inputs[0]).shape(), g[0]));
        return;
      }
      case Op::mean: {
        const Tensor& A = out(n.inputs[0]);
        accumulate(grads, touched, n.inputs[0],
                   Tensor::full(A.shape(), g[0] / static_cast<double>(A.size())));
        return;
      }
      case Op::logsumexp: {
        const Tensor& A = out(n.inputs[0]);
        std::size_t last = A.shape().back();
        std::size_t rows = A.size() / last;
        Tensor ga = Tensor::zeros(A.shape());
        for (std::size_t i = 0; i < rows; ++i) {
          double lse = n.out[i];
          if (!std::isfinite(lse)) continue;
          for (std::size_t j = 0; j < last; ++j)
            ga[i * last + j] = g[i] * std::exp(A[i * last + j] - lse);
        }
        accumulate(grads, touched, n.inputs[0], ga);
        return;
      }
      case Op::scale: {
        Tensor ga = g;
        for (double& x : ga.values()) x *= n.c;
        accumulate(grads, touched, n.inputs[0], ga);
        return;
      }
      case Op::gather: {
        const Tensor& A = out(n.inputs[0]);
        Tensor ga = Tensor::zeros(A.shape());
        std::size_t C = A.cols();
        for (std::size_t i = 0; i < n.labels.size(); ++i)
          ga[i * C + static_cast<std::size_t>(n.labels[i])] += g[i];
        accumulate(grads, touched, n.inputs[0], ga);
        return;
      }
      case Op::stack: {
        std::size_t k = n.inputs.size();
        std::size_t base = out(n.inputs[0]).size();
        for (std::size_t t = 0; t < k; ++t) {
          Tensor gp = Tensor::zeros(out(n.inputs[t]).shape());
          for (std::size_t i = 0; i < base; ++i) gp[i] = g[i * k + t];
          accumulate(grads, touched, n.inputs[t], gp);
        }
        return;
      }
      case Op::slice_cols: {
        const Tensor& A = out(n.inputs[0]);
        Tensor ga = Tensor::zeros(A.shape());
        std::size_t begin = static_cast<std::size_t>(n.c);
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t j = 0; j < n.extent; ++j)
            ga.at(i, begin + j) = g[i * n.extent + j];
        accumulate(grads, touched, n.inputs[0], ga);
        return;
      }
    }
  }

  std::vector<Node> nodes_;
};

/// Compare the tape gradient of a scalar function against central finite
/// differences. `build` wires the given input nodes into a scalar loss
/// node; the return value is the worst relative error over all input
/// coordinates, with |analytic| clamped below by 1.
template <typename BuildFn>
double grad_check(BuildFn&& build, const std::vector<Tensor>& points, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  auto eval = [&](const std::vector<Tensor>& pts) {
    Graph g;
    std::vector<NodeId> ids;
    ids.reserve(pts.size());
    for (const Tensor& p : pts) ids.push_back(g.input(p));
    NodeId loss = build(g, ids);
    double v = g.value(loss);
    if (!std::isfinite(v)) throw numeric_error("grad_check: non-finite function value");
    return v;
  };

  // analytic gradients from one taped evaluation
  Graph g;
  std::vector<NodeId> ids;
  for (const Tensor& p : points) ids.push_back(g.input(p));
  NodeId loss = build(g, ids);
  if (!std::isfinite(g.value(loss))) throw numeric_error("grad_check: non-finite function value");
  GradientMap gm = g.backward(loss);

  double worst = 0.0;
  std::vector<Tensor> work = points;
  for (std::size_t k = 0; k < points.size(); ++k) {
    Tensor analytic = gm.get_or_zero(ids[k], points[k].shape());
    for (std::size_t i = 0; i < points[k].size(); ++i) {
      double orig = work[k][i];
      work[k][i] = orig + step;
      double fp = eval(work);
      work[k][i] = orig - step;
      double fm = eval(work);
      work[k][i] = orig;
      double central = (fp - fm) / (2.0 * step);
      double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

template <typename BuildFn>
double grad_check(BuildFn&& build, const Tensor& point, double step) {
  return grad_check(
      [&](Graph& g, const std::vector<NodeId>& ids) { return build(g, ids[0]); },
      std::vector<Tensor>{point}, step);
}

}  // namespace alea

#endif  // ALEA_GRAPH_HPP
