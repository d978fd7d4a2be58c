#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mhsa/tensor.hpp"

namespace mhsa::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }

  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

// Receives the output value and gradient plus the input values; writes
// (accumulates) into the input gradients. An input gradient pointer is null
// when that input does not require grad.
using BackwardFn = std::function<void(const Tensor& out, const Tensor& out_grad,
                                      std::span<const Tensor* const> in_values, std::span<Tensor* const> in_grads)>;

/// Ordered record of executed operations.
///
/// Nodes are appended in execution order, so the reverse sweep in backward()
/// visits them in exact reverse order. Leaf gradients accumulate across
/// backward() calls until zero_grad(); interior gradients are scratch space
/// rebuilt on every sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  void backward(Var loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t i) const { return nodes_.at(i).value; }
  const Tensor& grad(std::size_t i) const;
  bool requires_grad(std::size_t i) const { return nodes_.at(i).requires_grad; }
  const std::string& op_name(std::size_t i) const { return nodes_.at(i).op; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  // deque: value()/grad() references stay valid while later ops are recorded.
  std::deque<Node> nodes_;
};

// --- Differentiable operations -------------------------------------------
// All operands must live on the same tape. Shapes are rank-2; a vector is a
// 1 x n row and a scalar is 1 x 1.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
Var mul_row(Var a, Var row);
Var scale(Var a, double s);
Var shift(Var a, double c);  // a + c elementwise

Var sum(Var a);       // -> 1 x 1
Var mean(Var a);      // -> 1 x 1
Var sum_rows(Var a);  // reduce axis 0 -> 1 x n
Var sum_cols(Var a);  // reduce axis 1 -> m x 1
Var mean_rows(Var a);

Var transpose(Var a);
Var reshape(Var a, std::size_t rows, std::size_t cols);
Var repeat_row(Var row, std::size_t times);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var stack_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var gather(Var a, std::span<const std::size_t> flat_indices);  // -> 1 x n

Var relu(Var a);
Var square(Var a);
Var min_const(Var a, double c);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
// (x - mean) / sqrt(var + eps) per row, biased variance, no affine.
Var normalize_rows(Var a, double eps);
Var layer_norm(Var x, Var gain, Var bias, double eps);
Var l2_normalize_rows(Var a);
Var pairwise_sqdist(Var a, Var b);
Var frobenius_norm(Var a);

// 3x3 patches with stride 2 and zero padding 1 over an (H*W) x C pixel grid,
// producing (H/2 * W/2) x (9*C) rows ready for a matmul with the kernel.
Var im2col_3x3_s2(Var a, std::size_t height, std::size_t width);

}  // namespace mhsa::ad
