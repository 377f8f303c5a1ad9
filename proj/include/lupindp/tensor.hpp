#pragma once

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// A BasicTape owns every value produced during one forward pass. Tensors are
// lightweight handles (tape pointer + node index) into it. Each recorded
// primitive stores a closure that maps the upstream gradient of its output
// onto its inputs; backward() replays those closures in exact reverse
// recording order. Tapes are single use: build one per forward pass.

#include <Eigen/Core>

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>

#include "lupindp/errors.hpp"

namespace lupindp {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixX<double>;
using Index = Eigen::Index;

template <typename Scalar>
class BasicTape;

template <typename Scalar>
class BasicTensor {
 public:
  using Mat = MatrixX<Scalar>;

  BasicTensor() = default;
  BasicTensor(BasicTape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  BasicTape<Scalar>& tape() const {
    if (!tape_) throw ContractError("use of an unbound tensor");
    return *tape_;
  }
  std::size_t id() const { return id_; }

  const Mat& value() const { return tape().value(id_); }
  Mat grad() const { return tape().grad(id_); }
  bool requires_grad() const { return tape().requires_grad(id_); }

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }

  Scalar item() const {
    const Mat& v = value();
    if (v.size() != 1) throw ContractError("item() on a non-scalar tensor");
    return v(0, 0);
  }

 private:
  BasicTape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class BasicTape {
 public:
  using Mat = MatrixX<Scalar>;
  using Tensor = BasicTensor<Scalar>;
  // Receives the tape and the upstream gradient of the node's output.
  using BackwardFn = std::function<void(BasicTape&, const Mat&)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  // Leaf whose gradient is tracked.
  Tensor variable(Mat value) { return push(std::move(value), "variable", true, {}); }

  // Leaf treated as data.
  Tensor constant(Mat value) { return push(std::move(value), "constant", false, {}); }

  // Appends the output of a primitive. The closure is kept only when some
  // input requires a gradient.
  Tensor record(Mat value, const char* op, std::initializer_list<Tensor> inputs, BackwardFn fn) {
    bool needs_grad = false;
    for (const Tensor& in : inputs) {
      if (&in.tape() != this) throw ContractError(std::string(op) + ": operands live on different tapes");
      needs_grad = needs_grad || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), op, needs_grad, needs_grad ? std::move(fn) : BackwardFn{});
  }

  // Variadic-input form of record() for concatenations.
  template <typename Range>
  Tensor record_range(Mat value, const char* op, const Range& inputs, BackwardFn fn) {
    bool needs_grad = false;
    for (const Tensor& in : inputs) {
      if (&in.tape() != this) throw ContractError(std::string(op) + ": operands live on different tapes");
      needs_grad = needs_grad || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), op, needs_grad, needs_grad ? std::move(fn) : BackwardFn{});
  }

  const Mat& value(std::size_t id) const { return node(id).value; }

  // Zero-filled when nothing reached the node.
  Mat grad(std::size_t id) const {
    const Node& n = node(id);
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return node(id).requires_grad; }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::DenseBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (g.rows() != n.value.rows() || g.cols() != n.value.cols())
      throw DimensionError(std::string("gradient shape mismatch at node ") + n.op);
    if (n.grad.size() == 0)
      n.grad = g.derived().matrix();
    else
      n.grad += g.derived().matrix();
  }

  // Propagates d(loss)/d(node) to every node recorded before `loss`.
  // A tape supports exactly one backward pass; a second call throws.
  void backward(const Tensor& loss) {
    if (&loss.tape() != this) throw ContractError("backward: loss lives on a different tape");
    if (backward_done_) throw ContractError("backward called twice on the same tape");
    const Node& root = node(loss.id());
    if (root.value.size() != 1) throw ContractError("backward requires a scalar loss");
    backward_done_ = true;
    if (!root.requires_grad) return;
    nodes_[loss.id()].grad = Mat::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    BackwardFn backward;
    const char* op;
    bool requires_grad;
  };

  const Node& node(std::size_t id) const {
    if (id >= nodes_.size()) throw ContractError("tensor handle out of range");
    return nodes_[id];
  }

  Tensor push(Mat value, const char* op, bool requires_grad, BackwardFn fn) {
    if (!value.allFinite()) throw NumericError(std::string(op) + " produced a non-finite value");
    nodes_.push_back(Node{std::move(value), Mat{}, std::move(fn), op, requires_grad});
    return Tensor(this, nodes_.size() - 1);
  }

  // deque keeps node addresses stable while the tape grows.
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

using Tape = BasicTape<double>;
using Tensor = BasicTensor<double>;

}  // namespace lupindp
