#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tim/types.hpp"

namespace tim::ad {

/// A named tensor with persistent gradient storage. Parameters live
/// outside the tape; every tape that touches one accumulates into its
/// grad on backward().
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v)
      : name(std::move(n)), value(std::move(v)) {
    grad = Mat::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad.setZero(); }
  Index size() const { return value.size(); }
};

class Tape;

/// Lightweight handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat& val() const;
  Index rows() const { return val().rows(); }
  Index cols() const { return val().cols(); }
};

/// Reverse-mode autodiff over dense Eigen matrices. One tape holds one
/// forward graph; backward() runs once, in reverse node order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding a value. Gradients are tracked only when needs_grad.
  Var leaf(Mat value, bool needs_grad = false);

  /// Leaf bound to a Parameter; backward() adds into p.grad.
  Var param(Parameter& p);

  Var constant(Mat value) { return leaf(std::move(value), false); }

  /// Backpropagate from a 1x1 root seeded with 1.
  void backward(Var root);

  /// Gradient of a needs_grad leaf (or any node), valid after backward().
  const Mat& grad_of(Var v) const;

  // --- plumbing for op implementations ---
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, int)> back;  // adds own grad into parents
    Parameter* sink = nullptr;
    bool needs_grad = false;
  };

  Var push(Mat value, bool needs_grad,
           std::function<void(Tape&, int)> back);
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const {
    return nodes_[static_cast<std::size_t>(id)];
  }
  Mat& grad(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

// ---------------------------------------------------------------------
// Ops. All are free functions returning a new Var on the operands' tape.
// ---------------------------------------------------------------------

Var matmul(Var a, Var b);     // A * B
Var matmul_nt(Var a, Var b);  // A * B^T

/// Row-stable variants: the forward value of row i is computed through a
/// fixed per-row kernel, so it is bit-identical no matter how many other
/// rows the left operand carries. Query tokens go through these to keep a
/// query's output independent of its co-queries.
Var matmul_rows(Var a, Var b);     // A * B, row by row
Var matmul_nt_rows(Var a, Var b);  // A * B^T, row by row
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cmul(Var a, Var b);  // elementwise
Var add_rowvec(Var a, Var v);    // v is 1 x cols, broadcast over rows
Var cmul_rowvec(Var a, Var v);   // elementwise with row broadcast
Var scale_rows(Var a, Var s);    // s is rows x 1, scales each row
Var rowwise_dot(Var a, Var b);   // rows x 1 of per-row dot products
Var scalar_mul(Var a, Real c);
Var relu(Var a);
Var gelu(Var a);  // exact erf form
Var sigmoid(Var a);
Var abs(Var a);
Var layer_norm_rows(Var x, Var gamma, Var beta, Real eps = 1e-5);
Var softmax_rows(Var x);
/// Softmax per row over the entries where allow(i,j); others get 0.
Var softmax_rows_masked(Var x, const MatX<bool>& allow);
Var concat_cols(Var a, Var b);
Var concat_rows(Var a, Var b);
Var slice_rows(Var a, Index row0, Index n);
Var slice_cols(Var a, Index col0, Index n);
Var gather_rows(Var a, std::vector<int> idx);
Var sum_all(Var a);   // 1x1
Var mean_all(Var a);  // 1x1
Var rowwise_sum(Var a);  // rows x 1

/// Per-row softmax cross-entropy against integer class targets; returns
/// rows x 1 losses.
Var cross_entropy_rows(Var logits, std::vector<int> targets);

/// Per-class sigmoid focal terms for {0,1} targets; same shape as logits.
Var sigmoid_focal_terms(Var logits, Mat targets, Real gamma, Real alpha);

/// Rowwise (min, max) of a 2-column matrix.
Var sort2_cols(Var a);

/// Distance-IoU loss per row for 1-D spans. pred and gt are n x 2
/// (start, end). Returns n x 1 losses.
Var diou_rows(Var pred, Mat gt);

/// Inverted dropout as elementwise multiply with a precomputed mask.
Var apply_mask(Var a, Mat mask);

}  // namespace tim::ad
