#include "sgembed/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "sgembed/error.hpp"

namespace sgembed {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kDimension: return "dimension_mismatch";
    case ErrorKind::kParse: return "parse_error";
    case ErrorKind::kUnknownLabel: return "unknown_label";
    case ErrorKind::kIo: return "io_error";
    case ErrorKind::kCheckpointCorrupt: return "checkpoint_corrupt";
    case ErrorKind::kCheckpointMismatch: return "checkpoint_mismatch";
    case ErrorKind::kSamplerExhausted: return "sampler_exhausted";
    case ErrorKind::kDegenerateDistribution: return "degenerate_distribution";
    case ErrorKind::kUndefinedMetric: return "undefined_metric";
    case ErrorKind::kNonFiniteLoss: return "non_finite_loss";
    case ErrorKind::kAutodiff: return "autodiff_error";
  }
  return "error";
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> values) {
  return Tensor(Shape{rows, cols}, std::vector<double>(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const noexcept {
  return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  return 1;
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw Error(ErrorKind::kAutodiff, "tensor has no gradient");
  return *grad_;
}

std::span<double> Tensor::grad() {
  if (!grad_) throw Error(ErrorKind::kAutodiff, "tensor has no gradient");
  return *grad_;
}

void Tensor::accumulate_grad(std::span<const double> delta) {
  if (delta.size() != data_.size()) {
    throw DimensionError("gradient of size " + std::to_string(delta.size()) +
                         " for tensor of shape " + shape_string(shape_));
  }
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  std::transform(grad_->begin(), grad_->end(), delta.begin(), grad_->begin(),
                 std::plus<>());
}

void Tensor::zero_grad() {
  if (grad_) {
    std::fill(grad_->begin(), grad_->end(), 0.0);
  } else {
    grad_.emplace(data_.size(), 0.0);
  }
}

}  // namespace sgembed
