#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "sgembed/tensor.hpp"

namespace sgembed {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run recording of primitive operations for reverse-mode
/// differentiation. Nodes are appended in evaluation order, so the node list is
/// always topologically sorted.
///
/// A tape supports a single backward pass. Calling backward() a second time
/// throws instead of accumulating gradients twice.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const double>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to a parameter. backward() accumulates into `param.grad()` when
  /// the parameter requires grad. The tensor must outlive the tape.
  Var parameter(Tensor& param);
  /// Read-only leaf referencing an external tensor; never receives gradients.
  Var input(const Tensor& value);
  /// Leaf owning its value; never receives gradients.
  Var constant(Tensor value);

  /// Appends a node computed from `parents`. `backward` receives the gradient of
  /// the loss w.r.t. this node's value and must push parent gradients through
  /// grad_of().
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  const Tensor& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Gradient accumulator for node `id`, allocated on first use.
  std::vector<double>& grad_of(std::size_t id);

  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Rows left unnormalized by rowwise_l2_normalize because their norm was
  /// below the degenerate threshold.
  std::size_t degenerate_rows() const noexcept { return degenerate_rows_; }
  void note_degenerate_rows(std::size_t n) noexcept { degenerate_rows_ += n; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* param = nullptr;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool needs_grad = false;
    std::vector<double> grad;
  };

  std::deque<Node> nodes_;
  bool consumed_ = false;
  std::size_t degenerate_rows_ = 0;
};

enum class Mode { kTrain, kEval };

/// Per-feature running statistics of a batch-normalization layer.
struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t features = 0)
      : running_mean(features, 0.0), running_var(features, 1.0) {}
};

/// Behaviour of segment_mean for a segment that receives no rows.
enum class EmptySegment { kError, kZero };

/// Rows with an l2 norm below this are returned unchanged by
/// rowwise_l2_normalize.
inline constexpr double kDegenerateNorm = 1e-8;

namespace ops {

Var matmul(Var a, Var b);
/// Elementwise sum; `b` may also be a row vector broadcast over the rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Elementwise quotient; `b` may also be a one-element tensor.
Var div(Var a, Var b);
Var mul_scalar(Var a, double c);
Var add_scalar(Var a, double c);
/// Concatenation of rank-2 tensors along axis 0 (rows) or 1 (columns), or of
/// rank-1 tensors along axis 0.
Var concat(std::span<const Var> parts, std::size_t axis);
Var relu(Var a);
Var sigmoid(Var a);
Var log(Var a);
Var exp(Var a);
/// log(1 + exp(a)), evaluated without overflow.
Var softplus(Var a);
/// Sum of all elements (rank-0 result).
Var sum(Var a);
/// Sum of a rank-2 tensor along `axis`; the result is rank 1.
Var sum(Var a, std::size_t axis);
Var mean(Var a);
/// Per-row inner products of two equally shaped matrices.
Var row_dot(Var a, Var b);
Var rowwise_l2_normalize(Var a);
Var segment_mean(Var values, std::span<const std::size_t> segment_ids,
                 std::size_t num_segments, EmptySegment empty = EmptySegment::kError);
Var gather_rows(Var table, std::span<const std::size_t> indices);
/// Batch normalization over rows. Train mode normalizes with batch statistics
/// and updates `stats`; Eval mode applies the running statistics.
Var batchnorm(Var x, Var gamma, Var beta, BatchNormStats& stats, Mode mode);
/// Eval-mode batch normalization; never mutates `stats`.
Var batchnorm(Var x, Var gamma, Var beta, const BatchNormStats& stats);

}  // namespace ops

}  // namespace sgembed
