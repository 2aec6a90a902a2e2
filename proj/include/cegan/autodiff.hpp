#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cegan/tensor.hpp"

namespace cegan {

inline double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,        // elementwise
  MatMul,
  AddBias,    // matrix + broadcast 1 x c row
  Transpose,
  Sigmoid,
  Tanh,
  Relu,
  Log,
  Square,
  Sqrt,
  ClampMin,   // max(x, c)
  StepMask,   // 1 where x > 0, else 0; not differentiated through
  Mean,
  Sum,
  RowSum,     // r x c  ->  r x 1
  ScalarMul,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::MatMul: return "matmul";
    case Op::AddBias: return "add_bias";
    case Op::Transpose: return "transpose";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::ClampMin: return "clamp_min";
    case Op::StepMask: return "step_mask";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::RowSum: return "row_sum";
    case Op::ScalarMul: return "scalar_mul";
  }
  return "?";
}

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = 0xFFFFFFFFu;

namespace detail {

/// out += a * b, accumulating over k in ascending order for every element.
/// The accumulation order is part of the reproducibility contract: value-level
/// and tape-level forwards of the same network are bit-identical.
inline void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
  for (std::size_t i = 0; i < r; ++i) {
    const double* arow = a.row_ptr(i);
    double* orow = out.row_ptr(i);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      const double* brow = b.row_ptr(kk);
      for (std::size_t j = 0; j < c; ++j) orow[j] += aik * brow[j];
    }
  }
}

}  // namespace detail

/// One computation-graph node: operation, inputs, cached value and adjoint.
struct Node {
  Op op = Op::Leaf;
  NodeId a = kNoNode;
  NodeId b = kNoNode;
  double c = 0.0;   // scalar operand for ScalarMul / ClampMin
  bool tracked = true;  // leaves only: false for constants
  Tensor value;
  Tensor grad;      // empty until backward touches the node
  std::string name; // leaves only, for diagnostics and bindings
};

/// Define-by-run reverse-mode tape. Values are computed eagerly as nodes
/// are created; backward() fills adjoints in reverse creation order. A tape
/// is single-owner; distinct tapes on distinct threads are independent.
class Tape {
 public:
  Tape() { nodes_.reserve(64); }

  NodeId leaf(Tensor v, std::string name = "") {
    return push_leaf(std::move(v), std::move(name), true);
  }
  /// A constant participates in forward values but is not a gradient target.
  NodeId constant(Tensor v, std::string name = "") {
    return push_leaf(std::move(v), std::move(name), false);
  }

  NodeId add(NodeId x, NodeId y) { return binary_elementwise(Op::Add, x, y); }
  NodeId sub(NodeId x, NodeId y) { return binary_elementwise(Op::Sub, x, y); }
  NodeId mul(NodeId x, NodeId y) { return binary_elementwise(Op::Mul, x, y); }

  NodeId matmul(NodeId x, NodeId y) {
    const Tensor& a = value(x);
    const Tensor& b = value(y);
    if (a.cols() != b.rows())
      throw shape_error(Op::MatMul, x, y, a.shape_str() + " * " + b.shape_str());
    Tensor out(a.rows(), b.cols());
    detail::matmul_acc(a, b, out);
    return push(Op::MatMul, x, y, std::move(out));
  }

  NodeId add_bias(NodeId x, NodeId bias) {
    const Tensor& a = value(x);
    const Tensor& b = value(bias);
    if (b.rows() != 1 || b.cols() != a.cols())
      throw shape_error(Op::AddBias, x, bias, a.shape_str() + " + " + b.shape_str());
    Tensor out = a;
    for (std::size_t r = 0; r < a.rows(); ++r) {
      double* orow = out.row_ptr(r);
      for (std::size_t j = 0; j < a.cols(); ++j) orow[j] += b[j];
    }
    return push(Op::AddBias, x, bias, std::move(out));
  }

  NodeId transpose(NodeId x) {
    const Tensor& a = value(x);
    Tensor out(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
      for (std::size_t j = 0; j < a.cols(); ++j) out(j, r) = a(r, j);
    return push(Op::Transpose, x, kNoNode, std::move(out));
  }

  NodeId sigmoid(NodeId x) {
    return unary(Op::Sigmoid, x, [](double v) { return sigmoid_scalar(v); });
  }
  NodeId tanh(NodeId x) {
    return unary(Op::Tanh, x, [](double v) { return std::tanh(v); });
  }
  NodeId relu(NodeId x) {
    return unary(Op::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; });
  }
  NodeId log(NodeId x) {
    const Tensor& a = value(x);
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!(a[i] > 0.0))
        throw std::domain_error("log: non-positive input " + std::to_string(a[i]) +
                                " at element " + std::to_string(i) + " of node #" +
                                std::to_string(x));
    return unary(Op::Log, x, [](double v) { return std::log(v); });
  }
  NodeId square(NodeId x) {
    return unary(Op::Square, x, [](double v) { return v * v; });
  }
  NodeId sqrt(NodeId x) {
    const Tensor& a = value(x);
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] < 0.0)
        throw std::domain_error("sqrt: negative input at element " + std::to_string(i) +
                                " of node #" + std::to_string(x));
    return unary(Op::Sqrt, x, [](double v) { return std::sqrt(v); });
  }
  NodeId clamp_min(NodeId x, double floor) {
    NodeId id = unary(Op::ClampMin, x, [floor](double v) { return v > floor ? v : floor; });
    nodes_[id].c = floor;
    return id;
  }
  NodeId step_mask(NodeId x) {
    return unary(Op::StepMask, x, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
  }

  NodeId mean(NodeId x) {
    const Tensor& a = value(x);
    if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return push(Op::Mean, x, kNoNode, Tensor::scalar(s * (1.0 / double(a.size()))));
  }
  NodeId sum(NodeId x) {
    const Tensor& a = value(x);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return push(Op::Sum, x, kNoNode, Tensor::scalar(s));
  }
  NodeId row_sum(NodeId x) {
    const Tensor& a = value(x);
    Tensor out(a.rows(), 1);
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const double* arow = a.row_ptr(r);
      double s = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) s += arow[j];
      out[r] = s;
    }
    return push(Op::RowSum, x, kNoNode, std::move(out));
  }
  NodeId scalar_mul(double c, NodeId x) {
    const Tensor& a = value(x);
    Tensor out = a;
    for (auto& v : out.data()) v *= c;
    NodeId id = push(Op::ScalarMul, x, kNoNode, std::move(out));
    nodes_[id].c = c;
    return id;
  }

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(NodeId id) const { return at(id).value; }
  const Node& node(NodeId id) const { return at(id); }

  /// Rebind a leaf (or constant) to a new value of the same shape.
  void rebind(NodeId id, Tensor v) {
    Node& n = at_mut(id);
    if (n.op != Op::Leaf) throw std::invalid_argument("rebind: node is not a leaf");
    if (!n.value.same_shape(v))
      throw std::invalid_argument("rebind: shape " + v.shape_str() +
                                  " does not match leaf shape " + n.value.shape_str());
    n.value = std::move(v);
  }

  /// Recompute every non-leaf value in creation order. Repeating this with
  /// unchanged leaves is bit-identical to the original forward pass.
  void replay() {
    for (Node& n : nodes_) recompute(n);
  }

  /// Rebind named leaves, replay, and return the value of the last node.
  const Tensor& forward(const std::map<std::string, Tensor>& leaf_bindings) {
    for (const auto& [name, v] : leaf_bindings) {
      NodeId id = find_leaf(name);
      if (id == kNoNode)
        throw std::invalid_argument("forward: no leaf named '" + name + "'");
      rebind(id, v);
    }
    replay();
    if (nodes_.empty()) throw std::invalid_argument("forward: empty tape");
    return nodes_.back().value;
  }

  /// Reverse pass from a scalar root. Adjoints accumulate in reverse
  /// creation order; `seed` scales every resulting gradient linearly.
  void backward(NodeId root, double seed = 1.0) {
    if (value(root).size() != 1)
      throw std::invalid_argument("backward: root node #" + std::to_string(root) +
                                  " is not scalar (shape " +
                                  value(root).shape_str() + ")");
    reset_grads();
    grad_of(root)[0] = seed;
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      propagate(n);
    }
  }

  /// Gradient of the last backward() root w.r.t. a leaf. Zero tensor when
  /// the leaf does not influence the root.
  Tensor grad(NodeId id) const {
    const Node& n = at(id);
    if (!n.grad.empty()) return n.grad;
    return Tensor(n.value.rows(), n.value.cols());
  }

  /// Gradients for every named, tracked leaf.
  std::map<std::string, Tensor> leaf_gradients() const {
    std::map<std::string, Tensor> out;
    for (NodeId i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.op == Op::Leaf && n.tracked && !n.name.empty()) out[n.name] = grad(i);
    }
    return out;
  }

  void reset_grads() {
    for (Node& n : nodes_) n.grad = Tensor();
  }

 private:
  std::vector<Node> nodes_;

  const Node& at(NodeId id) const {
    if (id >= nodes_.size()) throw std::invalid_argument("bad node id");
    return nodes_[id];
  }
  Node& at_mut(NodeId id) {
    if (id >= nodes_.size()) throw std::invalid_argument("bad node id");
    return nodes_[id];
  }

  NodeId find_leaf(const std::string& name) const {
    for (NodeId i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == Op::Leaf && nodes_[i].name == name) return i;
    return kNoNode;
  }

  std::invalid_argument shape_error(Op op, NodeId x, NodeId y, const std::string& what) {
    return std::invalid_argument(std::string(op_name(op)) + ": shape mismatch (" + what +
                                 ") at inputs #" + std::to_string(x) + ", #" +
                                 std::to_string(y));
  }

  NodeId push_leaf(Tensor v, std::string name, bool tracked) {
    Node n;
    n.op = Op::Leaf;
    n.tracked = tracked;
    n.value = std::move(v);
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return NodeId(nodes_.size() - 1);
  }

  NodeId push(Op op, NodeId a, NodeId b, Tensor v) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return NodeId(nodes_.size() - 1);
  }

  NodeId binary_elementwise(Op op, NodeId x, NodeId y) {
    const Tensor& a = value(x);
    const Tensor& b = value(y);
    if (!a.same_shape(b))
      throw shape_error(op, x, y, a.shape_str() + " vs " + b.shape_str());
    Tensor out(a.rows(), a.cols());
    switch (op) {
      case Op::Add:
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
        break;
      case Op::Sub:
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
        break;
      case Op::Mul:
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
        break;
      default: throw std::logic_error("binary_elementwise");
    }
    return push(op, x, y, std::move(out));
  }

  template <class F>
  NodeId unary(Op op, NodeId x, F f) {
    const Tensor& a = value(x);
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return push(op, x, kNoNode, std::move(out));
  }

  Tensor& grad_of(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void recompute(Node& n) {
    switch (n.op) {
      case Op::Leaf: return;
      case Op::Add: {
        const Tensor& a = nodes_[n.a].value;
        const Tensor& b = nodes_[n.b].value;
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] + b[i];
        return;
      }
      case Op::Sub: {
        const Tensor& a = nodes_[n.a].value;
        const Tensor& b = nodes_[n.b].value;
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] - b[i];
        return;
      }
      case Op::Mul: {
        const Tensor& a = nodes_[n.a].value;
        const Tensor& b = nodes_[n.b].value;
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] * b[i];
        return;
      }
      case Op::MatMul: {
        const Tensor& a = nodes_[n.a].value;
        const Tensor& b = nodes_[n.b].value;
        for (auto& v : n.value.data()) v = 0.0;
        detail::matmul_acc(a, b, n.value);
        return;
      }
      case Op::AddBias: {
        const Tensor& a = nodes_[n.a].value;
        const Tensor& b = nodes_[n.b].value;
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const double* arow = a.row_ptr(r);
          double* orow = n.value.row_ptr(r);
          for (std::size_t j = 0; j < a.cols(); ++j) orow[j] = arow[j] + b[j];
        }
        return;
      }
      case Op::Transpose: {
        const Tensor& a = nodes_[n.a].value;
        for (std::size_t r = 0; r < a.rows(); ++r)
          for (std::size_t j = 0; j < a.cols(); ++j) n.value(j, r) = a(r, j);
        return;
      }
      case Op::Sigmoid: {
        const Tensor& a = nodes_[n.a].value;
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = sigmoid_scalar(a[i]);
        return;
      }
      case Op::Tanh: {
        const Tensor& a = nodes_[n.a].value;
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = std::tanh(a[i]);
        return;
      }
      case Op::Relu: {
        const Tensor& a = nodes_[n.a].value;
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] > 0.0 ? a[i] : 0.0;
        return;
      }
      case Op::Log: {
        const Tensor& a = nodes_[n.a].value;
        for (std::size_t i = 0; i < a.size(); ++i) {
          if (!(a[i] > 0.0))
            throw std::domain_error("log: non-positive input during replay");
          n.value[i] = std::log(a[i]);
        }
        return;
      }
      case Op::Square: {
        const Tensor& a = nodes_[n.a].value;
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] * a[i];
        return;
      }
      case Op::Sqrt: {
        const Tensor& a = nodes_[n.a].value;
        for (std::size_t i = 0; i < a.size(); ++i) {
          if (a[i] < 0.0) throw std::domain_error("sqrt: negative input during replay");
          n.value[i] = std::sqrt(a[i]);
        }
        return;
      }
      case Op::ClampMin: {
        const Tensor& a = nodes_[n.a].value;
        for (std::size_t i = 0; i < a.size(); ++i)
          n.value[i] = a[i] > n.c ? a[i] : n.c;
        return;
      }
      case Op::StepMask: {
        const Tensor& a = nodes_[n.a].value;
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] > 0.0 ? 1.0 : 0.0;
        return;
      }
      case Op::Mean: {
        const Tensor& a = nodes_[n.a].value;
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
        n.value[0] = s * (1.0 / double(a.size()));
        return;
      }
      case Op::Sum: {
        const Tensor& a = nodes_[n.a].value;
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
        n.value[0] = s;
        return;
      }
      case Op::RowSum: {
        const Tensor& a = nodes_[n.a].value;
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const double* arow = a.row_ptr(r);
          double s = 0.0;
          for (std::size_t j = 0; j < a.cols(); ++j) s += arow[j];
          n.value[r] = s;
        }
        return;
      }
      case Op::ScalarMul: {
        const Tensor& a = nodes_[n.a].value;
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] * n.c;
        return;
      }
    }
  }

  void propagate(Node& n) {
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
        return;
      case Op::Add: {
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        return;
      }
      case Op::Sub: {
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        return;
      }
      case Op::Mul: {
        const Tensor& va = nodes_[n.a].value;
        const Tensor& vb = nodes_[n.b].value;
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
        return;
      }
      case Op::MatMul: {
        const Tensor& a = nodes_[n.a].value;
        const Tensor& b = nodes_[n.b].value;
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
        // dA[r][k] = sum_j g[r][j] * B[k][j], j ascending
        for (std::size_t i = 0; i < r; ++i) {
          const double* grow = g.row_ptr(i);
          double* garow = ga.row_ptr(i);
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = b.row_ptr(kk);
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += grow[j] * brow[j];
            garow[kk] += s;
          }
        }
        // dB[k][j] += sum_r A[r][k] * g[r][j], r ascending
        for (std::size_t i = 0; i < r; ++i) {
          const double* arow = a.row_ptr(i);
          const double* grow = g.row_ptr(i);
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            double* gbrow = gb.row_ptr(kk);
            for (std::size_t j = 0; j < c; ++j) gbrow[j] += aik * grow[j];
          }
        }
        return;
      }
      case Op::AddBias: {
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        const std::size_t rows = g.rows(), cols = g.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* grow = g.row_ptr(r);
          for (std::size_t j = 0; j < cols; ++j) gb[j] += grow[j];
        }
        return;
      }
      case Op::Transpose: {
        Tensor& ga = grad_of(n.a);
        for (std::size_t r = 0; r < ga.rows(); ++r)
          for (std::size_t j = 0; j < ga.cols(); ++j) ga(r, j) += g(j, r);
        return;
      }
      case Op::Sigmoid: {
        const Tensor& y = n.value;
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * (y[i] * (1.0 - y[i]));
        return;
      }
      case Op::Tanh: {
        const Tensor& y = n.value;
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * (1.0 - y[i] * y[i]);
        return;
      }
      case Op::Relu: {
        const Tensor& x = nodes_[n.a].value;
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > 0.0) ga[i] += g[i];
        return;
      }
      case Op::Log: {
        const Tensor& x = nodes_[n.a].value;
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
        return;
      }
      case Op::Square: {
        const Tensor& x = nodes_[n.a].value;
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (2.0 * x[i]);
        return;
      }
      case Op::Sqrt: {
        const Tensor& y = n.value;
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (2.0 * y[i]);
        return;
      }
      case Op::ClampMin: {
        const Tensor& x = nodes_[n.a].value;
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > n.c) ga[i] += g[i];
        return;
      }
      case Op::StepMask:
        return;  // derivative is zero almost everywhere
      case Op::Mean: {
        Tensor& ga = grad_of(n.a);
        const double s = g[0] * (1.0 / double(ga.size()));
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
        return;
      }
      case Op::Sum: {
        Tensor& ga = grad_of(n.a);
        const double s = g[0];
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
        return;
      }
      case Op::RowSum: {
        Tensor& ga = grad_of(n.a);
        for (std::size_t r = 0; r < ga.rows(); ++r) {
          double* garow = ga.row_ptr(r);
          const double gr = g[r];
          for (std::size_t j = 0; j < ga.cols(); ++j) garow[j] += gr;
        }
        return;
      }
      case Op::ScalarMul: {
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.c;
        return;
      }
    }
  }
};

}  // namespace cegan
