#include "sgembed/adam.hpp"

#include <cmath>

#include "sgembed/error.hpp"

namespace sgembed {

void adam_step(std::span<const NamedParameter> params, AdamState& state, double clip_norm) {
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) {
      throw Error(ErrorKind::kAutodiff, "adam_step: parameter '" + p.name + "' has no gradient");
    }
  }
  if (state.step_count == 0) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor->size(), 0.0);
      state.second_moment.emplace_back(p.tensor->size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " +
                         std::to_string(state.first_moment.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.first_moment[k].size() != params[k].tensor->size()) {
      throw DimensionError("adam_step: moment buffer for '" + params[k].name +
                           "' does not match the parameter shape");
    }
  }

  double scale = 1.0;
  if (clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : params)
      for (double g : p.tensor->grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) scale = clip_norm / norm;
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& param = *params[k].tensor;
    auto grad = param.grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double g = grad[i] * scale;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      param[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
    param.zero_grad();
  }
}

}  // namespace sgembed
