#pragma once

// Dense f64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to an immutable graph node. Operations record
// their inputs and a backward closure when gradient tracking is enabled and
// at least one input is tracked. backward() walks the graph in reverse
// construction order, so gradient accumulation is deterministic.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "e2eload/kernels.hpp"

namespace e2eload {

class Tensor;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // allocated lazily, only for tracked nodes
  std::vector<Index> shape;
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Matrix& grad_buffer() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  /// Untracked rank-2 tensor.
  static Tensor constant(Matrix value);
  /// Tracked leaf (a trainable parameter or a grad-check input).
  static Tensor parameter(Matrix value);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Rank-1 tensor stored as a single row.
  static Tensor vector(const Vector& value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix& value() const { return node_->value; }
  const std::vector<Index>& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  /// Gradient accumulator; zeros of the value's shape when nothing has flowed yet.
  Matrix grad() const;
  void zero_grad();

  /// Leaf values may be updated in place (optimizer steps, finite differences).
  Matrix& mutable_leaf_value();

  /// Reverse pass from a rank-0 tensor; tracked leaves accumulate.
  void backward() const;

  const char* op_name() const { return node_->op; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// While alive, every op verifies its output is finite and throws NumericError
/// naming the op otherwise.
class FiniteCheckGuard {
 public:
  FiniteCheckGuard();
  ~FiniteCheckGuard();
  FiniteCheckGuard(const FiniteCheckGuard&) = delete;
  FiniteCheckGuard& operator=(const FiniteCheckGuard&) = delete;

 private:
  bool previous_;
};

// Arithmetic.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Adds a 1 x C row to every row of a.
Tensor add_row(const Tensor& a, const Tensor& row);

// Normalization and activations.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor masked_softmax_rows(const Tensor& x, const AdmissibilityMatrix* mask);
/// softmax(scores) * values with masked columns skipped in both steps.
Tensor attend(const Tensor& probabilities, const Tensor& values, const AdmissibilityMatrix* mask);

// Structure.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, Index begin, Index count);
Tensor gather_rows(const Tensor& x, std::span<const Index> rows);
Tensor sum(const Tensor& x);
Tensor element(const Tensor& x, Index row, Index col);

/// Forward identity; contributes nothing to anything upstream in the reverse pass.
Tensor stop_gradient(const Tensor& x);

enum class DownsampleMode { kConv, kPool };

/// Strided down-sampling of a token grid. Pool averages each stride block;
/// conv applies a learned depthwise kernel (stride volume x channels) plus bias.
Tensor strided_downsample(const Tensor& x, const GridExtents& grid, const Strides& strides,
                          DownsampleMode mode, const Tensor* kernel = nullptr,
                          const Tensor* bias = nullptr);

/// Sum over rows of -log softmax(logits)[label]; labels is one-hot per row.
Tensor cross_entropy_sum(const Tensor& logits, const Matrix& one_hot_labels);

/// Max over coordinates of |analytic - central difference| / max(1, |central difference|)
/// for the scalar function f at x.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Matrix& x, double eps);

}  // namespace e2eload
