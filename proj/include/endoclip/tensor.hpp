#pragma once

// Dense 2-D tensors with reverse-mode differentiation.
//
// Every value is a row-major double matrix; vectors are 1 x d rows and
// scalars are 1 x 1. Differentiable operations are free functions that take
// the Tape they record onto as their first argument. An operation is only
// recorded when at least one input is tracked (requires_grad, or derived
// from a tensor that does), so frozen sub-networks run without tape cost.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace endoclip {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

std::string shape_string(Index rows, Index cols);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  std::string shape_str() const { return shape_string(rows(), cols()); }

  const Matrix& value() const { return node_->value; }
  /// Direct write access for optimizers and checkpoint loading.
  Matrix& mutable_value() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  /// True when gradients flow to or through this tensor.
  bool tracked() const { return node_ && node_->tracked; }

  bool has_grad() const { return node_->grad.size() != 0; }
  const Matrix& grad() const { return node_->grad; }
  /// Grad buffer, zero-allocated on first access. Tensor is a handle, so
  /// this is callable on const handles like the rest of the graph state.
  Matrix& grad_buffer() const;
  void zero_grad();
  void clear_grad() { node_->grad.resize(0, 0); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  friend class Tape;

  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool tracked = false;
  };

  std::shared_ptr<Node> node_;
};

/// Ordered record of executed differentiable operations.
class Tape {
 public:
  /// Receives the output's gradient; accumulates into the inputs.
  using BackwardFn = std::function<void(const Matrix& out_grad)>;

  /// Creates the output tensor of an operation and records it when any input
  /// is tracked. `backward` is dropped otherwise.
  Tensor record(Matrix value, std::initializer_list<Tensor> inputs, BackwardFn backward);
  Tensor record(Matrix value, std::span<const Tensor> inputs, BackwardFn backward);

  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  /// Replays records in exact reverse execution order.
  void run_backward();

 private:
  struct Record {
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Record> records_;
};

/// Adds `g` to t's gradient when t is tracked.
template <typename Derived>
void accumulate_grad(const Tensor& t, const Eigen::MatrixBase<Derived>& g) {
  if (t.tracked()) t.grad_buffer() += g;
}

/// Seeds d(loss)/d(loss) = 1 and back-propagates through the tape.
void backward(const Tensor& loss, Tape& tape);

// Linear algebra
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
/// a * b^T, the shape of a linear layer with an (out x in) weight.
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);
/// Pairwise row dot products a_i . b_j, summed in ascending coordinate order,
/// so row_dots(a, b) is bitwise the transpose of row_dots(b, a).
Tensor row_dots(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);

// Elementwise
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
/// x (m x n) + bias (1 x n) broadcast over rows.
Tensor add_row(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor scale(Tape& tape, const Tensor& a, double s);
/// Elementwise product with a constant (e.g. a dropout mask).
Tensor mul_const(Tape& tape, const Tensor& a, const Matrix& c);
/// Adds a constant (e.g. an attention mask bias).
Tensor add_const(Tape& tape, const Tensor& a, const Matrix& c);
Tensor log(Tape& tape, const Tensor& a);
/// Exact (erf-based) GELU.
Tensor gelu(Tape& tape, const Tensor& a);

// Reductions
Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);

// Row-wise
Tensor row_softmax(Tape& tape, const Tensor& x);
inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor l2_normalize_rows(Tape& tape, const Tensor& x);
/// Mean negative log-likelihood of `labels` under row-softmax(logits),
/// computed with log-sum-exp stabilization.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels);

// Structural
Tensor slice_rows(Tape& tape, const Tensor& a, Index start, Index count);
Tensor slice_cols(Tape& tape, const Tensor& a, Index start, Index count);
Tensor vstack(Tape& tape, std::span<const Tensor> parts);
Tensor hstack(Tape& tape, std::span<const Tensor> parts);

/// Gradient verification by central differences.
///
/// Runs `f` once and back-propagates to get analytic gradients of every
/// tensor in `params`, then perturbs each coordinate by +-step and returns
///   max |analytic - (f(p+h) - f(p-h)) / 2h| / max(1, |analytic|).
/// `f` must be deterministic given the parameter values.
double finite_diff_check(const std::function<Tensor(Tape&)>& f, std::span<Tensor> params,
                         double step = 1e-5);

}  // namespace endoclip
