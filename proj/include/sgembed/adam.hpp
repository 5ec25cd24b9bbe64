#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sgembed/tensor.hpp"

namespace sgembed {

struct NamedParameter {
  std::string name;
  Tensor* tensor;
};

/// Adam optimizer state. Moment buffers are created on the first step and are
/// congruent with the parameter list passed to every subsequent step.
struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient. Gradients are zeroed afterwards. Throws if a parameter has no
/// gradient. A positive `clip_norm` rescales the joint gradient to at most that
/// global l2 norm before the update.
void adam_step(std::span<const NamedParameter> params, AdamState& state, double clip_norm = 0.0);

}  // namespace sgembed
